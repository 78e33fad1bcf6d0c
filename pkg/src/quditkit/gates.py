"""
Ideal qudit gates: spin displacements, SNAP gates and virtual Jz rotations.

Conventions
-----------
* ``D(theta, phi) = exp(alpha J+ - conj(alpha) J-)`` with
  ``alpha = -(theta / 2) exp(-i phi)``.  This equals
  ``exp(-i phi Jz) exp(-i theta Jy) exp(+i phi Jz)``; dropping the last
  factor (as the two-factor Euler form does) only changes the action on
  ``|0>`` by a global phase.
* ``S(phases) = diag(exp(+i phases))``.
* Virtual Jz rotation by ``lam``: ``exp(-i lam Jz)``, i.e. SNAP phases
  ``phases[n] = -lam * (j - n)``.  :func:`jz_rotation_phases` is the only
  place this sign is written down.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .spin_algebra import as_dimension, build_angular_momentum

__all__ = [
    "DisplacementParams",
    "SnapPhases",
    "displacement",
    "displacement_y",
    "snap",
    "jz_rotation_phases",
    "jz_rotation",
    "expectation_jz",
    "unitary_fidelity",
    "state_fidelity",
    "phase_aligned_distance",
    "is_unitary",
    "basis_state",
]

TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class DisplacementParams:
    """Rotation angles of a displacement, canonicalized to ``[0, 2 pi)``."""

    theta: float
    phi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", float(self.theta) % TWO_PI)
        object.__setattr__(self, "phi", float(self.phi) % TWO_PI)

    @property
    def alpha(self) -> complex:
        return -0.5 * self.theta * np.exp(-1j * self.phi)


@dataclass(frozen=True)
class SnapPhases:
    """Per-level phase vector of a SNAP gate (radians)."""

    phases: tuple

    def __init__(self, phases):
        object.__setattr__(self, "phases", tuple(float(p) for p in np.ravel(phases)))

    def __len__(self):
        return len(self.phases)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.phases)


def _hermitian_expm_i(h: np.ndarray) -> np.ndarray:
    """exp(i h) for Hermitian h via eigendecomposition."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(1j * w)) @ v.conj().T


def displacement(dim, theta, phi=0.0) -> np.ndarray:
    """
    Spin displacement operator ``D(theta, phi)``.

    Parameters
    ----------
    dim : int or SpinDimension
    theta, phi : float
        Polar and azimuthal rotation angles.  ``theta`` may be negative.
        A :class:`DisplacementParams` may be passed as ``theta``.

    Returns
    -------
    np.ndarray
        ``d x d`` unitary.
    """
    if isinstance(theta, DisplacementParams):
        theta, phi = theta.theta, theta.phi
    ops = build_angular_momentum(as_dimension(dim))
    alpha = -0.5 * theta * np.exp(-1j * phi)
    gen = alpha * ops.jplus - np.conj(alpha) * ops.jminus
    # gen is anti-Hermitian, so gen / i is Hermitian
    return _hermitian_expm_i(-1j * gen)


@lru_cache(maxsize=64)
def _jy_eig(d: int):
    w, v = np.linalg.eigh(build_angular_momentum(d).jy)
    return w, v


def displacement_y(d: int, theta: float) -> np.ndarray:
    """Fast path for ``D(theta, 0) = exp(-i theta Jy)`` using a cached eigenbasis."""
    w, v = _jy_eig(int(d))
    return (v * np.exp(-1j * theta * w)) @ v.conj().T


def snap(phases, dim=None) -> np.ndarray:
    """Diagonal SNAP gate ``diag(exp(i phases))``."""
    if isinstance(phases, SnapPhases):
        phases = phases.as_array()
    phases = np.asarray(phases, dtype=float).ravel()
    if dim is not None and len(phases) != as_dimension(dim).d:
        raise ValueError(f"expected {as_dimension(dim).d} phases, got {len(phases)}")
    return np.diag(np.exp(1j * phases))


def jz_rotation_phases(d: int, lam: float) -> np.ndarray:
    """SNAP phases realizing ``exp(-i lam Jz)`` exactly."""
    n = np.arange(d)
    return -lam * ((d - 1) / 2 - n)


def jz_rotation(d: int, lam: float) -> np.ndarray:
    return snap(jz_rotation_phases(d, lam))


def basis_state(d: int, n: int = 0) -> np.ndarray:
    psi = np.zeros(d, dtype=complex)
    psi[n] = 1.0
    return psi


def _as_density(state, tol=1e-9) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    if state.ndim == 1:
        norm = np.vdot(state, state).real
        if abs(norm - 1) > tol:
            raise ValueError(f"state vector norm {norm} is not 1")
        return np.outer(state, state.conj())
    if state.ndim != 2 or state.shape[0] != state.shape[1]:
        raise ValueError("expected a state vector or a square density matrix")
    tr = np.trace(state)
    if abs(tr - 1) > tol:
        raise ValueError(f"density matrix trace {tr} is not 1")
    return state


def expectation_jz(state) -> float:
    """``<Jz>`` of a normalized state vector or density matrix."""
    rho = _as_density(state)
    d = rho.shape[0]
    m = (d - 1) / 2 - np.arange(d)
    return float(np.real(np.diag(rho)) @ m)


def is_unitary(u, tol=1e-9) -> bool:
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        return False
    return np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) < tol


def unitary_fidelity(u, v, tol=1e-9) -> float:
    """Phase-insensitive gate fidelity ``|Tr(u^dag v)|^2 / d^2``."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    if not (is_unitary(u, tol) and is_unitary(v, tol)):
        raise ValueError("unitary_fidelity expects unitary matrices")
    d = u.shape[0]
    return float(abs(np.trace(u.conj().T @ v)) ** 2 / d**2)


def state_fidelity(a, b) -> float:
    """
    Fidelity between two states.

    For two pure states this is ``|<a|b>|^2``; if either is a density
    matrix the Uhlmann fidelity ``(Tr sqrt(sqrt(a) b sqrt(a)))^2`` is used.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.ndim == 1 and b.ndim == 1:
        return float(abs(np.vdot(a, b)) ** 2)
    if a.ndim == 1:
        return float(np.real(a.conj() @ b @ a))
    if b.ndim == 1:
        return float(np.real(b.conj() @ a @ b))
    w, v = np.linalg.eigh(a)
    sqrt_a = (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T
    inner = np.linalg.eigvalsh(sqrt_a @ b @ sqrt_a)
    return float(np.sum(np.sqrt(np.clip(inner, 0, None))) ** 2)


def phase_aligned_distance(u, v, tol=1e-12) -> float:
    """
    Max-norm distance between ``u`` and ``v`` after removing a global phase.

    The phase is fixed by the first element of ``u`` (row-major order)
    whose magnitude exceeds ``tol``.
    """
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {v.shape}")
    flat_u = u.ravel()
    idx = np.flatnonzero(np.abs(flat_u) > tol)
    if idx.size == 0:
        return float(np.max(np.abs(v))) if v.size else 0.0
    k = idx[0]
    vk = v.ravel()[k]
    phase = 1.0 if abs(vk) <= tol else np.exp(1j * (np.angle(flat_u[k]) - np.angle(vk)))
    return float(np.max(np.abs(u - phase * v)))
