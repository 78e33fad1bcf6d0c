"""
Spin Wigner functions on the sphere.

The kernel is ``Delta(theta, phi) = 2 D(theta, phi) Pi D(theta, phi)^dag``
with ``Pi`` diagonal; its entries come from a Clebsch-Gordan sum so that
``Tr Delta = 1`` and the kernel is self-dual.  Measuring ``W`` at a point
amounts to applying ``D(-alpha)`` and reading out ``<2 Pi>``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .gates import displacement
from .spin_algebra import as_dimension, clebsch_gordan

__all__ = [
    "SpinParityOperator",
    "PhaseSpaceGrid",
    "WignerScan",
    "Reconstruction",
    "build_parity",
    "make_grid",
    "kernel",
    "wigner_at",
    "wigner_scan",
    "reconstruct_density",
    "validate_density",
    "traciality_sum",
    "default_grid",
]


@dataclass(frozen=True)
class SpinParityOperator:
    d: int
    matrix: np.ndarray = field(repr=False)

    @property
    def diagonal(self) -> np.ndarray:
        return np.real(np.diag(self.matrix))


@lru_cache(maxsize=32)
def _parity_diag(d: int) -> np.ndarray:
    two_j = d - 1
    j = two_j / 2
    out = np.zeros(d)
    for n in range(d):
        m = j - n
        out[n] = sum(
            (2 * l + 1) / (two_j + 1) * clebsch_gordan(j, m, l, 0, j, m)
            for l in range(two_j + 1)
        )
    out /= 2
    out.setflags(write=False)
    return out


def build_parity(dim) -> SpinParityOperator:
    """Diagonal ``Pi`` with ``2 Pi_mm = sum_l (2l+1)/(2j+1) <j m; l 0|j m>``."""
    d = as_dimension(dim).d
    return SpinParityOperator(d, np.diag(_parity_diag(d)).astype(complex))


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Flattened sphere points with quadrature weights summing to ``4 pi``."""

    theta: np.ndarray
    phi: np.ndarray
    weights: np.ndarray
    shape: tuple = ()

    def __len__(self):
        return len(self.theta)


def make_grid(n_theta: int, n_phi: int) -> PhaseSpaceGrid:
    """
    Gauss-Legendre nodes in ``cos(theta)`` times uniform ``phi``.

    Integrates band-limited functions of degree below ``2 n_theta`` in
    ``cos(theta)`` and ``|m| < n_phi`` exactly.
    """
    x, wx = np.polynomial.legendre.leggauss(n_theta)
    theta = np.arccos(x[::-1])
    wx = wx[::-1]
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    ww = np.outer(wx, np.full(n_phi, 2 * np.pi / n_phi))
    return PhaseSpaceGrid(tt.ravel(), pp.ravel(), ww.ravel(), (n_theta, n_phi))


def default_grid(d: int) -> PhaseSpaceGrid:
    return make_grid(4 * d, 4 * d)


def kernel(dim, theta, phi) -> np.ndarray:
    """``Delta(theta, phi) = 2 D Pi D^dag``."""
    d = as_dimension(dim).d
    u = displacement(d, theta, phi)
    return 2 * (u * _parity_diag(d)) @ u.conj().T


def _kernels(d: int, theta, phi) -> np.ndarray:
    return np.stack([kernel(d, t, p) for t, p in zip(np.ravel(theta), np.ravel(phi))])


def validate_density(rho, tol=1e-9) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix must be square")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise ValueError("density matrix does not have unit trace")
    if np.min(np.linalg.eigvalsh(rho)) < -tol:
        raise ValueError("density matrix is not positive semidefinite")
    return rho


def wigner_at(rho, theta, phi) -> float:
    """Wigner function ``Tr[rho Delta(theta, phi)]`` of a density matrix."""
    rho = validate_density(rho)
    val = np.trace(rho @ kernel(rho.shape[0], theta, phi))
    if abs(val.imag) > 1e-10:
        raise ArithmeticError(f"Wigner value has imaginary part {val.imag}")
    return float(val.real)


@dataclass
class WignerScan:
    """Sampled ``(theta, phi, w)`` triples."""

    theta: np.ndarray
    phi: np.ndarray
    w: np.ndarray
    d: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["theta", "phi", "w"])
        for row in zip(self.theta, self.phi, self.w):
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, d: int) -> "WignerScan":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows or set(rows[0]) != {"theta", "phi", "w"}:
            raise ValueError("expected a CSV with header theta,phi,w")
        cols = {k: np.array([float(r[k]) for r in rows]) for k in ("theta", "phi", "w")}
        return cls(cols["theta"], cols["phi"], cols["w"], int(d))


def wigner_scan(rho, grid: PhaseSpaceGrid) -> WignerScan:
    """Evaluate the Wigner function of ``rho`` on every grid point."""
    rho = validate_density(rho)
    d = rho.shape[0]
    ks = _kernels(d, grid.theta, grid.phi)
    vals = np.einsum("kij,ji->k", ks, rho)
    if np.max(np.abs(vals.imag)) > 1e-10:
        raise ArithmeticError("Wigner scan produced complex values")
    return WignerScan(np.array(grid.theta), np.array(grid.phi), vals.real, d)


def traciality_sum(w_a, w_b, grid: PhaseSpaceGrid, d: int) -> float:
    """``(2j+1) / (4 pi) * sum_i w_i W_A W_B`` over the grid."""
    return float(d / (4 * np.pi) * np.sum(grid.weights * w_a * w_b))


def _traceless_basis(d: int) -> np.ndarray:
    """Orthonormal (Hilbert-Schmidt) Hermitian traceless basis, ``d^2 - 1`` elements."""
    basis = []
    for a in range(d):
        for b in range(a + 1, d):
            m = np.zeros((d, d), dtype=complex)
            m[a, b] = m[b, a] = 1 / np.sqrt(2)
            basis.append(m)
            m = np.zeros((d, d), dtype=complex)
            m[a, b] = -1j / np.sqrt(2)
            m[b, a] = 1j / np.sqrt(2)
            basis.append(m)
    for k in range(1, d):
        diag = np.zeros(d)
        diag[:k] = 1
        diag[k] = -k
        basis.append(np.diag(diag / np.sqrt(k * (k + 1))).astype(complex))
    return np.array(basis)


@dataclass
class Reconstruction:
    rho: np.ndarray
    residual: float
    psd_distance: float
    rank: int


def reconstruct_density(scan: WignerScan, rcond=1e-10) -> Reconstruction:
    """
    Least-squares density matrix from Wigner samples.

    Solves ``W_i = Tr[rho Delta_i]`` with ``rho = I/d + sum_k x_k B_k`` over
    a traceless Hermitian basis, so Hermiticity and unit trace hold by
    construction.  Positivity is not imposed; ``psd_distance`` is the
    Frobenius norm of the negative-eigenvalue part.

    Raises
    ------
    np.linalg.LinAlgError
        If the sampled kernels do not span the ``d^2 - 1`` traceless directions.
    """
    d = int(scan.d)
    ks = _kernels(d, scan.theta, scan.phi)
    basis = _traceless_basis(d)
    a = np.real(np.einsum("kij,bji->kb", ks, basis))
    # Tr(Delta) = 1 for every kernel
    rhs = np.asarray(scan.w, dtype=float) - 1.0 / d
    x, _, rank, sv = np.linalg.lstsq(a, rhs, rcond=None)
    if rank < d * d - 1 or sv[-1] < rcond * sv[0]:
        raise np.linalg.LinAlgError(
            f"grid is not informationally complete (rank {rank} < {d * d - 1})"
        )
    rho = np.eye(d) / d + np.einsum("b,bij->ij", x, basis)
    rho = 0.5 * (rho + rho.conj().T)
    residual = float(np.linalg.norm(a @ x - rhs))
    evals = np.linalg.eigvalsh(rho)
    psd = float(np.sqrt(np.sum(np.clip(evals, None, 0) ** 2)))
    return Reconstruction(rho, residual, psd, int(rank))
