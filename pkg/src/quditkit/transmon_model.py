"""
Charge-basis transmon model.

``H = 4 EC (n - ng)^2 - EJ cos(phi)`` with ``cos(phi)`` acting as the
symmetric hop ``(|n><n+1| + |n+1><n|) / 2``.  Energies are in GHz
(ordinary frequency); the single factor of ``2 pi`` is applied by
:func:`angular_frequencies` when a Hamiltonian is assembled in rad/ns.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import least_squares

__all__ = [
    "TransmonSpec",
    "TransmonEigenSystem",
    "REFERENCE_DEVICE",
    "REFERENCE_TRANSITIONS",
    "diagonalize",
    "angular_frequencies",
    "transition_frequencies",
    "confined_levels",
    "charge_dispersion",
    "charge_dispersion_numeric",
    "fit_device",
    "load_spec",
    "dump_spec",
]

TWO_PI = 2 * np.pi
CONVERGENCE_TOL = 1e-9  # GHz
DEFAULT_CUTOFF = 40


@dataclass(frozen=True)
class TransmonSpec:
    """Transmon energies in GHz and the charge-basis truncation."""

    ej: float
    ec: float
    ng: float = 0.0
    charge_cutoff: int = DEFAULT_CUTOFF

    def __post_init__(self):
        if not (self.ej > 0 and self.ec > 0):
            raise ValueError("ej and ec must be positive")
        if int(self.charge_cutoff) < 1:
            raise ValueError("charge_cutoff must be a positive integer")
        object.__setattr__(self, "charge_cutoff", int(self.charge_cutoff))

    @property
    def ratio(self) -> float:
        return self.ej / self.ec


# Measured ladder f_{n,n+1}, n = 0..6 (GHz)
REFERENCE_TRANSITIONS = (4.896, 4.782, 4.664, 4.539, 4.407, 4.267, 4.116)
REFERENCE_DEVICE = {
    "ej": 29.09,
    "ec": 0.108,
    "ng": 0.0,
    "f_r": 6.410,
    "g": 0.028,
    "transitions": list(REFERENCE_TRANSITIONS),
    # T1 of |n> -> |n-1>, microseconds
    "t1_us": [46.0, 25.0, 26.0, 14.0, 16.0, 14.0, 13.0],
}


@dataclass(frozen=True)
class TransmonEigenSystem:
    """Lowest ``dim_kept`` levels: energies (GHz, ascending) and ``<i|n|j>``."""

    energies: np.ndarray
    charge_matrix: np.ndarray = field(repr=False)
    dim_kept: int
    spec: TransmonSpec

    @property
    def transitions(self) -> np.ndarray:
        return np.diff(self.energies)


def _solve(spec: TransmonSpec, cutoff: int, levels: int):
    n = np.arange(-cutoff, cutoff + 1) - spec.ng
    diag = 4 * spec.ec * n**2
    off = np.full(2 * cutoff, -spec.ej / 2)
    evals, evecs = eigh_tridiagonal(diag, off, select="i", select_range=(0, levels - 1))
    return evals, evecs, n


def diagonalize(spec: TransmonSpec, levels: int, check: bool = True) -> TransmonEigenSystem:
    """
    Lowest ``levels`` eigenstates of the charge-basis Hamiltonian.

    Eigenvector signs are fixed so that ``<k|n|k+1>`` is positive, which
    makes the charge matrix real with a deterministic sign pattern.

    Raises
    ------
    ValueError
        If ``levels`` exceeds the basis size, or if raising the cutoff by
        5 moves any kept energy by more than 1e-9 GHz.
    """
    levels = int(levels)
    if levels < 1 or levels > 2 * spec.charge_cutoff + 1:
        raise ValueError(f"cannot keep {levels} levels with cutoff {spec.charge_cutoff}")
    evals, evecs, n = _solve(spec, spec.charge_cutoff, levels)
    if check:
        ref, _, _ = _solve(spec, spec.charge_cutoff + 5, levels)
        shift = np.max(np.abs(ref - evals))
        if shift > CONVERGENCE_TOL:
            raise ValueError(
                f"charge cutoff {spec.charge_cutoff} not converged (shift {shift:.2e} GHz)"
            )
    nmat = evecs.T @ (n[:, None] * evecs)
    for k in range(levels - 1):
        if nmat[k, k + 1] < 0:
            evecs[:, k + 1] *= -1
            nmat[k + 1, :] *= -1
            nmat[:, k + 1] *= -1
    nmat = 0.5 * (nmat + nmat.T)
    return TransmonEigenSystem(evals, nmat, levels, spec)


def angular_frequencies(eig: TransmonEigenSystem) -> np.ndarray:
    """Level energies relative to the ground state, in rad/ns."""
    return TWO_PI * (eig.energies - eig.energies[0])


def transition_frequencies(spec: TransmonSpec, count: int) -> np.ndarray:
    return diagonalize(spec, count + 1).transitions


def confined_levels(spec: TransmonSpec) -> float:
    """Approximate number of levels bound in the cosine well, ``sqrt(EJ / 2EC)``."""
    return math.sqrt(spec.ej / (2 * spec.ec))


def charge_dispersion(spec: TransmonSpec, n: int) -> float:
    """
    Asymptotic peak-to-peak charge dispersion of level ``n`` (GHz).

    ``eps_n = (-1)^n EC 2^(4n+5) / n! sqrt(2/pi) (EJ/2EC)^(n/2+3/4) exp(-sqrt(8 EJ/EC))``
    """
    if n < 0:
        raise ValueError("level must be non-negative")
    r = spec.ej / spec.ec
    log_mag = (
        math.log(spec.ec)
        + (4 * n + 5) * math.log(2)
        - math.lgamma(n + 1)
        + 0.5 * math.log(2 / math.pi)
        + (n / 2 + 0.75) * math.log(r / 2)
        - math.sqrt(8 * r)
    )
    return (-1) ** n * math.exp(log_mag)


def charge_dispersion_numeric(spec: TransmonSpec, n: int) -> float:
    """``E_n(ng=1/2) - E_n(ng=0)`` from exact diagonalization (GHz)."""
    lo = TransmonSpec(spec.ej, spec.ec, 0.0, spec.charge_cutoff)
    hi = TransmonSpec(spec.ej, spec.ec, 0.5, spec.charge_cutoff)
    return float(diagonalize(hi, n + 1).energies[n] - diagonalize(lo, n + 1).energies[n])


def fit_device(transitions, guess: TransmonSpec | None = None) -> tuple[TransmonSpec, np.ndarray]:
    """
    Least-squares ``(EJ, EC)`` reproducing a measured transition ladder.

    Returns the fitted spec and the residuals ``model - measured`` in GHz.
    """
    meas = np.asarray(transitions, dtype=float)
    if meas.size < 2:
        raise ValueError("need at least two transitions to fit EJ and EC")
    guess = guess or TransmonSpec(REFERENCE_DEVICE["ej"], REFERENCE_DEVICE["ec"])
    levels = meas.size + 1

    def resid(p):
        s = TransmonSpec(p[0], p[1], guess.ng, guess.charge_cutoff)
        return diagonalize(s, levels, check=False).transitions - meas

    sol = least_squares(resid, [guess.ej, guess.ec], bounds=([1e-6, 1e-6], [np.inf, np.inf]),
                        x_scale=[guess.ej, guess.ec], xtol=1e-14, ftol=1e-14)
    spec = TransmonSpec(float(sol.x[0]), float(sol.x[1]), guess.ng, guess.charge_cutoff)
    return spec, resid(sol.x)


def load_spec(source) -> TransmonSpec:
    """Build a spec from a JSON path, JSON text or dict (extra keys such as transitions ignored)."""
    if isinstance(source, dict):
        data = source
    else:
        text = str(source)
        if text.lstrip().startswith("{"):
            data = json.loads(text)
        else:
            with open(text) as fh:
                data = json.load(fh)
    if "ej" not in data or "ec" not in data:
        if "transitions" in data:
            return fit_device(data["transitions"])[0]
        raise ValueError("device spec needs ej and ec, or transitions to fit them")
    return TransmonSpec(
        float(data["ej"]),
        float(data["ec"]),
        float(data.get("ng", 0.0)),
        int(data.get("charge_cutoff", DEFAULT_CUTOFF)),
    )


def dump_spec(spec: TransmonSpec) -> str:
    return json.dumps(asdict(spec), sort_keys=True)
