"""
Spin-j angular momentum operators and Clebsch-Gordan coefficients.

Every matrix in the package uses the transmon ordering: row/column ``n``
is the transmon eigenstate ``|n>``, which carries the spin label
``|j, m = j - n>``.  Index 0 is therefore the highest-weight state
``|j, j>`` and index ``d - 1`` is ``|j, -j>``.

Half-integers are handled as integer "twice values" (``2j``, ``2m``) so
that parity checks never compare floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

__all__ = [
    "SpinDimension",
    "AngularMomentumSet",
    "build_angular_momentum",
    "clebsch_gordan",
    "spin_to_transmon_index",
    "transmon_to_spin_index",
    "as_dimension",
]

# log-factorial overflow is not an issue below this, cancellation in the
# Racah sum is.
MAX_TWO_J = 80


def _twice(x, name="value"):
    """Return ``2*x`` as an int, rejecting anything that is not a half-integer."""
    if isinstance(x, Fraction):
        tx = 2 * x
        if tx.denominator != 1:
            raise ValueError(f"{name}={x} is not a half-integer")
        return int(tx)
    tx = 2.0 * float(x)
    r = round(tx)
    if abs(tx - r) > 1e-9:
        raise ValueError(f"{name}={x} is not a half-integer")
    return int(r)


@dataclass(frozen=True)
class SpinDimension:
    """Qudit dimension ``d`` with its spin ``j = (d - 1) / 2``."""

    d: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"dimension must be an integer >= 2, got {self.d}")
        object.__setattr__(self, "d", int(self.d))

    @property
    def two_j(self) -> int:
        return self.d - 1

    @property
    def j(self) -> Fraction:
        return Fraction(self.d - 1, 2)

    @classmethod
    def from_spin(cls, j) -> "SpinDimension":
        two_j = _twice(j, "j")
        if two_j < 1:
            raise ValueError("spin must be at least 1/2")
        return cls(two_j + 1)


def as_dimension(dim) -> SpinDimension:
    """Accept either a :class:`SpinDimension` or a bare integer ``d``."""
    if isinstance(dim, SpinDimension):
        return dim
    return SpinDimension(dim)


@dataclass(frozen=True)
class AngularMomentumSet:
    """The five standard spin matrices for one dimension (hbar = 1)."""

    dim: SpinDimension
    jx: np.ndarray = field(repr=False)
    jy: np.ndarray = field(repr=False)
    jz: np.ndarray = field(repr=False)
    jplus: np.ndarray = field(repr=False)
    jminus: np.ndarray = field(repr=False)

    @property
    def j_squared(self) -> np.ndarray:
        return self.jx @ self.jx + self.jy @ self.jy + self.jz @ self.jz


@lru_cache(maxsize=64)
def _ladder(d: int) -> np.ndarray:
    n = np.arange(1, d)
    jp = np.zeros((d, d), dtype=complex)
    # J+ |n> = sqrt(n (d - n)) |n - 1>
    jp[n - 1, n] = np.sqrt(n * (d - n))
    jp.setflags(write=False)
    return jp


def build_angular_momentum(dim) -> AngularMomentumSet:
    """
    Build ``Jx, Jy, Jz, J+, J-`` for a spin of dimension ``d``.

    ``J+`` lowers the transmon excitation number:
    ``<n-1|J+|n> = sqrt(n (d - n))``; ``Jz = diag(j, j-1, ..., -j)``.

    Parameters
    ----------
    dim : int or SpinDimension
        Hilbert space dimension, at least 2.

    Returns
    -------
    AngularMomentumSet
    """
    dim = as_dimension(dim)
    d = dim.d
    jp = _ladder(d).copy()
    jm = jp.conj().T.copy()
    jx = (jp + jm) / 2
    jy = (jp - jm) / 2j
    jz = np.diag((d - 1) / 2 - np.arange(d)).astype(complex)
    mats = [jx, jy, jz, jp, jm]
    for m in mats:
        m.setflags(write=False)
    return AngularMomentumSet(dim, *mats)


def _log_fact(n: int) -> float:
    return math.lgamma(n + 1)


def clebsch_gordan(j1, m1, j2, m2, J, M) -> float:
    """
    Clebsch-Gordan coefficient ``<j1 m1; j2 m2 | J M>`` (Condon-Shortley).

    Evaluated with the Racah closed-form sum, accumulated in log-factorials.
    Arguments may be ints, floats or :class:`fractions.Fraction`.

    Raises
    ------
    ValueError
        If any argument is not a half-integer, if a projection does not
        match the parity of its spin, or if ``|m| > j``.
    """
    tj1, tm1 = _twice(j1, "j1"), _twice(m1, "m1")
    tj2, tm2 = _twice(j2, "j2"), _twice(m2, "m2")
    tJ, tM = _twice(J, "J"), _twice(M, "M")
    for tj, tm, name in ((tj1, tm1, "1"), (tj2, tm2, "2"), (tJ, tM, "")):
        if tj < 0:
            raise ValueError(f"j{name} must be non-negative")
        if (tj - tm) % 2:
            raise ValueError(f"m{name} does not match the parity of j{name}")
        if abs(tm) > tj:
            raise ValueError(f"|m{name}| exceeds j{name}")
    if max(tj1, tj2, tJ) > MAX_TWO_J:
        raise ValueError(f"spins above j={MAX_TWO_J // 2} are not supported")

    if tM != tm1 + tm2:
        return 0.0
    if tJ < abs(tj1 - tj2) or tJ > tj1 + tj2 or (tj1 + tj2 + tJ) % 2:
        return 0.0

    # all of these are integers once the triangle/parity checks pass
    a = (tj1 + tj2 - tJ) // 2
    b = (tj1 - tm1) // 2
    c = (tj2 + tm2) // 2
    e = (tJ - tj2 + tm1) // 2
    f = (tJ - tj1 - tm2) // 2

    log_pref = 0.5 * (
        math.log(tJ + 1)
        + _log_fact((tJ + tj1 - tj2) // 2)
        + _log_fact((tJ - tj1 + tj2) // 2)
        + _log_fact(a)
        - _log_fact((tj1 + tj2 + tJ) // 2 + 1)
        + _log_fact((tJ + tM) // 2)
        + _log_fact((tJ - tM) // 2)
        + _log_fact(b)
        + _log_fact((tj1 + tm1) // 2)
        + _log_fact((tj2 - tm2) // 2)
        + _log_fact(c)
    )

    k_min = max(0, -e, -f)
    k_max = min(a, b, c)
    total = 0.0
    for k in range(k_min, k_max + 1):
        log_den = (
            _log_fact(k)
            + _log_fact(a - k)
            + _log_fact(b - k)
            + _log_fact(c - k)
            + _log_fact(e + k)
            + _log_fact(f + k)
        )
        term = math.exp(log_pref - log_den)
        total += -term if k % 2 else term
    return total


def spin_to_transmon_index(j, m) -> int:
    """Map ``|j, m>`` to the transmon level ``n = j - m``."""
    tj, tm = _twice(j, "j"), _twice(m, "m")
    if tj < 1:
        raise ValueError("spin must be at least 1/2")
    if (tj - tm) % 2 or abs(tm) > tj:
        raise ValueError(f"m={m} is not a valid projection for j={j}")
    return (tj - tm) // 2


def transmon_to_spin_index(d: int, n: int) -> tuple[Fraction, Fraction]:
    """Inverse of :func:`spin_to_transmon_index`; returns exact fractions."""
    dim = as_dimension(d)
    if not 0 <= n < dim.d:
        raise ValueError(f"level {n} out of range for d={dim.d}")
    return dim.j, dim.j - n
