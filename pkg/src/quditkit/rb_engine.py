"""
Randomized benchmarking of a spin-cat logical qubit.

The logical states are even/odd cat states of two antipodal spin coherent
states.  Logical Cliffords are compiled to SNAP-displacement programs;
noise enters only after physical displacement pulses through

    rho -> (1 - q) D rho D^dag + q A(D rho D^dag)

with ``A`` a random CPTP map.  Channels are propagated as superoperators
in row-major vectorization, ``vec(K rho K^dag) = (K kron conj(K)) vec(rho)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import curve_fit, least_squares

from .decomposer import (
    GENERAL,
    PI_HALF,
    SnapDisplacementProgram,
    fit_program,
    reconstruct,
)
from .gates import basis_state, displacement, displacement_y, jz_rotation_phases

__all__ = [
    "CatEncoding",
    "NoisyChannel",
    "RbResult",
    "N_PULSES_STATED",
    "build_cat_encoding",
    "clifford_group",
    "compile_logical_clifford",
    "compiled_cliffords",
    "pulses_per_clifford",
    "encoding_program",
    "invert_program",
    "random_cptp_map",
    "perturbed_displacement",
    "average_gate_fidelity",
    "superoperator",
    "program_superoperator",
    "run_rb",
    "fd_from_frb",
    "frb_from_survival_decay",
    "validate_relation",
    "fit_error_model",
]

N_PULSES_STATED = 5 / 3
DEFAULT_LENGTHS = (1, 2, 4, 8, 16, 32, 64)
DEFAULT_SEQUENCES = 30
COMPILE_TOL = 1e-10


# --------------------------------------------------------------------------
# encoding


@dataclass(frozen=True)
class CatEncoding:
    d: int
    logical0: np.ndarray = field(repr=False)
    logical1: np.ndarray = field(repr=False)

    @property
    def basis(self) -> np.ndarray:
        """``d x 2`` isometry ``[0_L, 1_L]``."""
        return np.stack([self.logical0, self.logical1], axis=1)

    def restrict(self, u) -> np.ndarray:
        """``B^dag U B``: the logical-subspace block of ``U``."""
        b = self.basis
        return b.conj().T @ u @ b


@lru_cache(maxsize=16)
def build_cat_encoding(d: int) -> CatEncoding:
    """
    Cat-state logical qubit ``0_L ~ |pi/2,0> + |-pi/2,0>``, ``1_L ~ |pi/2,0> - |-pi/2,0>``.

    Raises
    ------
    ArithmeticError
        If the constructed states violate orthogonality or parity support.
    """
    if d < 2:
        raise ValueError("d must be at least 2")
    z = basis_state(d)
    a = displacement(d, np.pi / 2) @ z
    b = displacement(d, -np.pi / 2) @ z
    l0 = a + b
    l1 = a - b
    l0 /= np.linalg.norm(l0)
    l1 /= np.linalg.norm(l1)
    n = np.arange(d)
    if abs(np.vdot(l0, l1)) > 1e-12:
        raise ArithmeticError("logical states are not orthogonal")
    if np.max(np.abs(l0[n % 2 == 1]), initial=0) > 1e-12 or np.max(np.abs(l1[n % 2 == 0]), initial=0) > 1e-12:
        raise ArithmeticError("logical states do not have definite parity")
    for v in (l0, l1):
        v.setflags(write=False)
    return CatEncoding(d, l0, l1)


# --------------------------------------------------------------------------
# Clifford group


def _canonical(u):
    flat = u.ravel()
    k = np.flatnonzero(np.abs(flat) > 1e-9)[0]
    return u * np.exp(-1j * np.angle(flat[k]))


@lru_cache(maxsize=1)
def clifford_group() -> tuple:
    """
    The 24 single-qubit Cliffords, phase-canonicalized, in breadth-first order
    over the generators ``H`` and ``S``; index 0 is the identity.
    """
    h = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
    s = np.diag([1, 1j])
    group = [np.eye(2, dtype=complex)]
    frontier = list(group)
    while frontier:
        nxt = []
        for g in frontier:
            for gen in (h, s):
                c = _canonical(gen @ g)
                if not any(np.allclose(c, x, atol=1e-9) for x in group):
                    group.append(c)
                    nxt.append(c)
        frontier = nxt
    for g in group:
        g.setflags(write=False)
    return tuple(group)


def clifford_index(u) -> int:
    """Index of the Clifford equal to ``u`` up to global phase."""
    for i, c in enumerate(clifford_group()):
        if abs(abs(np.trace(c.conj().T @ u)) - 2) < 1e-8:
            return i
    raise ValueError("matrix is not a single-qubit Clifford")


@lru_cache(maxsize=1)
def _multiplication_table() -> np.ndarray:
    g = clifford_group()
    return np.array([[clifford_index(a @ b) for b in g] for a in g])


def _is_diagonal(c) -> bool:
    return abs(c[0, 1]) < 1e-9 and abs(c[1, 0]) < 1e-9


@lru_cache(maxsize=64)
def _compile(d: int, index: int, restarts: int, seed: int):
    enc = build_cat_encoding(d)
    c = clifford_group()[index]
    if _is_diagonal(c):
        # logical states live on disjoint parity sectors
        n = np.arange(d)
        phases = np.where(n % 2 == 0, np.angle(c[0, 0]), np.angle(c[1, 1]))
        return SnapDisplacementProgram(d, (), (tuple(phases),), PI_HALF), 0.0
    b = enc.basis
    w = b @ c.conj().T @ b.conj().T
    res = fit_program(w, 2, 2, PI_HALF, restarts=restarts, seed=seed, tol=COMPILE_TOL)
    return res.program, res.infidelity


def compile_logical_clifford(index: int, encoding: CatEncoding, *, restarts: int = 50, seed: int = 0):
    """
    SNAP-displacement program realizing logical Clifford ``index``.

    Diagonal Cliffords become a single SNAP; the others use two ``pi/2``
    pulses.  Returns ``(program, infidelity)`` with the infidelity measured
    on the logical subspace.
    """
    if not 0 <= index < 24:
        raise ValueError("Clifford index must be in 0..23")
    return _compile(encoding.d, int(index), restarts, seed)


def compiled_cliffords(encoding: CatEncoding, **kw) -> list:
    return [compile_logical_clifford(i, encoding, **kw)[0] for i in range(24)]


def pulses_per_clifford(encoding: CatEncoding, **kw) -> float:
    """Average number of physical displacement pulses over the compiled group."""
    return float(np.mean([p.n_pulses for p in compiled_cliffords(encoding, **kw)]))


@lru_cache(maxsize=16)
def encoding_program(d: int, restarts: int = 20, seed: int = 0):
    """
    Shortest program found mapping ``|0>`` to ``0_L``.

    Tries two ``pi/2`` pulses, then two free-angle pulses, then deeper
    ``pi/2`` programs.  Returns ``(program, infidelity)``.
    """
    enc = build_cat_encoding(d)
    w = np.outer(basis_state(d), enc.logical0.conj())
    best = None
    for depth, mode in ((2, PI_HALF), (2, GENERAL), (3, PI_HALF), (4, PI_HALF), (5, PI_HALF)):
        res = fit_program(w, 1, depth, mode, restarts=restarts, seed=seed, tol=COMPILE_TOL)
        if best is None or res.infidelity < best.infidelity:
            best = res
        if res.infidelity < COMPILE_TOL:
            break
    return best.program, best.infidelity


def invert_program(program: SnapDisplacementProgram) -> SnapDisplacementProgram:
    """
    Program for ``U^dag`` with the same pulse count.

    ``D(-theta) = R D(theta) R^dag`` with ``R = exp(-i pi Jz)``, so each
    reversed pulse keeps a positive angle and the two ``R`` factors are
    absorbed into the neighbouring SNAP layers.
    """
    d = program.d
    r = jz_rotation_phases(d, np.pi)
    snaps = [-np.asarray(s) for s in program.snaps[::-1]]
    thetas = list(program.thetas[::-1])
    # U^dag = S(-p0) D(-t1) S(-p1) ... D(-tN) S(-pN); write D(-t) = R D(t) R^dag
    for k in range(len(thetas)):
        snaps[k] = snaps[k] - r
        snaps[k + 1] = snaps[k + 1] + r
    return SnapDisplacementProgram(d, tuple(thetas), tuple(tuple(s) for s in snaps), program.mode)


# --------------------------------------------------------------------------
# channels


@dataclass
class NoisyChannel:
    """Kraus representation of a channel; ``q`` is the error weight (if any)."""

    kraus_ops: list
    q: float = 1.0

    def __post_init__(self):
        self.kraus_ops = [np.asarray(k, dtype=complex) for k in self.kraus_ops]
        if not self.kraus_ops:
            raise ValueError("empty Kraus set")
        if not 0 <= self.q <= 1:
            raise ValueError("q must lie in [0, 1]")

    @property
    def d(self) -> int:
        return self.kraus_ops[0].shape[0]

    def completeness_error(self) -> float:
        s = sum(k.conj().T @ k for k in self.kraus_ops)
        return float(np.max(np.abs(s - np.eye(self.d))))

    def apply(self, rho) -> np.ndarray:
        return sum(k @ rho @ k.conj().T for k in self.kraus_ops)

    def superoperator(self) -> np.ndarray:
        return sum(np.kron(k, k.conj()) for k in self.kraus_ops)


def random_cptp_map(d: int, seed=None, rank: int | None = None) -> NoisyChannel:
    """
    Random channel from the Ginibre-Choi (BCSZ) ensemble.

    ``X = G G^dag`` with ``G`` a ``d^2 x rank`` complex Ginibre matrix is
    rescaled by ``(I kron Y^{-1/2})`` with ``Y = Tr_out X`` so the Choi
    matrix is trace preserving; Kraus operators are its scaled eigenvectors.
    """
    rng = np.random.default_rng(seed)
    rank = d * d if rank is None else int(rank)
    g = rng.standard_normal((d * d, rank)) + 1j * rng.standard_normal((d * d, rank))
    x = g @ g.conj().T
    # Choi index (out, in); partial trace over the output factor
    y = np.einsum("aiaj->ij", x.reshape(d, d, d, d))
    w, v = np.linalg.eigh(y)
    y_isqrt = (v / np.sqrt(w)) @ v.conj().T
    m = np.kron(np.eye(d), y_isqrt)
    choi = m @ x @ m
    choi = 0.5 * (choi + choi.conj().T)
    lam, vec = np.linalg.eigh(choi)
    kraus = [np.sqrt(l) * vec[:, i].reshape(d, d) for i, l in enumerate(lam) if l > 1e-14]
    return NoisyChannel(kraus, 1.0)


def perturbed_displacement(d: int, q: float, error_map: NoisyChannel, theta=np.pi / 2) -> NoisyChannel:
    """Kraus set ``{sqrt(1-q) D, sqrt(q) A_i D}``."""
    u = displacement_y(d, theta)
    kraus = [np.sqrt(1 - q) * u]
    if q > 0:
        kraus += [np.sqrt(q) * a @ u for a in error_map.kraus_ops]
    return NoisyChannel(kraus, q)


def average_gate_fidelity(channel: NoisyChannel, target) -> float:
    """``(sum_i |Tr(U^dag K_i)|^2 + d) / (d^2 + d)``."""
    err = channel.completeness_error()
    if err > 1e-9:
        raise ValueError(f"Kraus set is not trace preserving (error {err:.1e})")
    u = np.asarray(target)
    d = u.shape[0]
    s = sum(abs(np.trace(u.conj().T @ k)) ** 2 for k in channel.kraus_ops)
    return float((s + d) / (d * d + d))


def superoperator(u) -> np.ndarray:
    u = np.asarray(u)
    return np.kron(u, u.conj())


def program_superoperator(program: SnapDisplacementProgram, pulse_channels: dict | None = None) -> np.ndarray:
    """
    Superoperator of a program.

    ``pulse_channels`` maps a displacement angle to the superoperator used
    for that pulse; angles not present use the ideal unitary.
    """
    d = program.d
    pulse_channels = pulse_channels or {}
    sup = superoperator(np.diag(np.exp(1j * np.asarray(program.snaps[0]))))
    for theta, ph in zip(program.thetas, program.snaps[1:]):
        key = round(theta, 12)
        pulse = pulse_channels.get(key)
        if pulse is None:
            pulse = superoperator(displacement_y(d, theta))
        sup = pulse @ sup
        sup = superoperator(np.diag(np.exp(1j * np.asarray(ph)))) @ sup
    return sup


# --------------------------------------------------------------------------
# benchmarking


@dataclass
class RbResult:
    lengths: np.ndarray
    survival: np.ndarray
    survival_std: np.ndarray
    fit_params: tuple  # (A, p, B)
    fit_residual: float
    r_squared: float
    fit_ok: bool = True
    d: int = 2

    @property
    def p(self) -> float:
        return float(self.fit_params[1])

    @property
    def f_rb(self) -> float:
        """Logical Clifford fidelity ``1 - (1 - p) / 2``."""
        return 1 - (1 - self.p) / 2

    def to_dict(self) -> dict:
        return {
            "lengths": [int(m) for m in self.lengths],
            "survival": [float(s) for s in self.survival],
            "survival_std": [float(s) for s in self.survival_std],
            "A": float(self.fit_params[0]),
            "p": self.p,
            "B": float(self.fit_params[2]),
            "f_rb": self.f_rb,
            "fit_residual": self.fit_residual,
            "r_squared": self.r_squared,
            "fit_ok": self.fit_ok,
        }


def _fit_decay(lengths, survival):
    m = np.asarray(lengths, float)
    y = np.asarray(survival, float)
    if np.max(np.abs(y - 1)) < 1e-12:
        return (0.0, 1.0, 1.0), 0.0, 1.0, True

    def model(x, a, p, b):
        return a * p**x + b

    try:
        popt, _ = curve_fit(model, m, y, p0=[max(y[0] - y[-1], 1e-3), 0.98, y[-1]],
                            bounds=([-2, 0, -2], [2, 1, 2]), maxfev=20000)
        ok = True
    except RuntimeError:
        popt, ok = np.array([np.nan, np.nan, np.nan]), False
    resid = y - model(m, *popt)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return tuple(float(v) for v in popt), float(np.sqrt(np.mean(resid**2))), float(r2), ok


def run_rb(encoding: CatEncoding, channel: NoisyChannel | None, lengths=DEFAULT_LENGTHS,
           n_sequences: int = DEFAULT_SEQUENCES, seed=0, *, noisy_encoding: bool = True) -> RbResult:
    """
    Simulate logical randomized benchmarking.

    ``channel`` is the noisy ``pi/2`` pulse (``None`` for ideal pulses).
    Each sequence is encode, ``m`` random Cliffords, the inverting
    Clifford, decode, then the ``|0>`` population is recorded.
    """
    if not len(lengths):
        raise ValueError("lengths must be nonempty")
    if n_sequences < 1:
        raise ValueError("n_sequences must be at least 1")
    d = encoding.d
    rng = np.random.default_rng(seed)
    pulses = {}
    if channel is not None:
        pulses[round(np.pi / 2, 12)] = channel.superoperator()
    progs = compiled_cliffords(encoding)
    csup = [program_superoperator(p, pulses) for p in progs]
    enc_prog, _ = encoding_program(d)
    dec_prog = invert_program(enc_prog)
    enc_pulses = pulses if noisy_encoding else {}
    enc_sup = program_superoperator(enc_prog, _extend_pulses(enc_prog, channel, enc_pulses))
    dec_sup = program_superoperator(dec_prog, _extend_pulses(dec_prog, channel, enc_pulses))
    table = _multiplication_table()
    rho0 = np.zeros((d, d), complex)
    rho0[0, 0] = 1
    v0 = enc_sup @ rho0.ravel()
    means, stds = [], []
    for m in lengths:
        vals = []
        for _ in range(n_sequences):
            idx = rng.integers(24, size=int(m))
            v = v0.copy()
            total = 0
            for i in idx:
                v = csup[i] @ v
                total = table[i, total]
            inv = clifford_index(clifford_group()[total].conj().T)
            v = dec_sup @ (csup[inv] @ v)
            rho = v.reshape(d, d)
            tr_drift = abs(np.trace(rho) - 1)
            if tr_drift > 1e-9:
                raise ArithmeticError(f"trace drift {tr_drift:.1e}")
            vals.append(float(np.clip(rho[0, 0].real, 0, 1)))
        means.append(np.mean(vals))
        stds.append(np.std(vals))
    params, resid, r2, ok = _fit_decay(lengths, means)
    if ok and not 0 < params[1] <= 1:
        ok = False
    return RbResult(np.asarray(lengths), np.asarray(means), np.asarray(stds), params, resid, r2, ok, d)


def _extend_pulses(program, channel, pulses):
    """Noisy superoperators for any non-``pi/2`` angles in an encoding program."""
    if channel is None or not pulses:
        return pulses
    out = dict(pulses)
    for theta in program.thetas:
        key = round(theta, 12)
        if key not in out:
            ideal = displacement_y(program.d, np.pi / 2)
            # same error map, composed after a different rotation
            u = displacement_y(program.d, theta)
            kraus = [k @ ideal.conj().T @ u for k in channel.kraus_ops]
            out[key] = NoisyChannel(kraus, channel.q).superoperator()
    return out


def fd_from_frb(f_rb, n_pulses: float = N_PULSES_STATED):
    """``F_D = F_RB^(1/N)``."""
    f_rb = np.asarray(f_rb, dtype=float)
    if np.any(f_rb <= 0) or np.any(f_rb > 1):
        raise ValueError("F_RB must lie in (0, 1]")
    out = f_rb ** (1.0 / n_pulses)
    return float(out) if out.ndim == 0 else out


def frb_from_survival_decay(p, dim: int) -> float:
    """Average fidelity ``1 - (1 - p)(dim - 1)/dim`` for a decay constant in dimension ``dim``."""
    return 1 - (1 - p) * (dim - 1) / dim


def validate_relation(d: int, q_grid, seeds, *, lengths=DEFAULT_LENGTHS,
                      n_sequences: int = DEFAULT_SEQUENCES) -> list:
    """
    Simulated ``(F_RB, F_D)`` pairs for every ``(q, seed)``.

    Each row also carries the model prediction ``F_RB^(1/N)`` for the
    compiled pulse count and for ``N = 5/3``, plus the qudit-dimension
    variant ``1 - (1-p)(d-1)/d`` of the Clifford fidelity.
    """
    enc = build_cat_encoding(d)
    n_own = pulses_per_clifford(enc)
    target = displacement_y(d, np.pi / 2)
    rows = []
    for seed in seeds:
        error_map = random_cptp_map(d, seed=np.random.SeedSequence([d, int(seed)]))
        for q in q_grid:
            ch = perturbed_displacement(d, float(q), error_map)
            f_d = average_gate_fidelity(ch, target)
            rb = run_rb(enc, ch, lengths, n_sequences, seed=np.random.SeedSequence([d, int(seed), 1]))
            f_rb = rb.f_rb
            f_rb_d = frb_from_survival_decay(rb.p, d)
            rows.append({
                "d": d, "q": float(q), "seed": int(seed), "p": rb.p,
                "F_D": f_d, "F_RB": f_rb, "F_RB_qudit": f_rb_d,
                "N_own": n_own,
                "dev_own": f_d - fd_from_frb(f_rb, n_own),
                "dev_stated": f_d - fd_from_frb(f_rb, N_PULSES_STATED),
                "dev_qudit": f_d - fd_from_frb(f_rb_d, n_own),
                "r_squared": rb.r_squared,
            })
    return rows


def fit_error_model(points, *, groups=None):
    """
    Fit ``1 - F = a_g / T^2 + b T`` with ``b`` shared across groups.

    Parameters
    ----------
    points : sequence of (T, F)
    groups : sequence of labels, optional
        One coherent coefficient is fitted per distinct label.

    Returns
    -------
    (a, b) where ``a`` is a float for a single group or a dict otherwise.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise ValueError("need at least three (T, F) points")
    labels = np.zeros(len(pts), int) if groups is None else np.asarray(groups)
    keys = list(dict.fromkeys(labels.tolist()))
    t, e = pts[:, 0], 1 - pts[:, 1]
    if len(np.unique(t)) < 2:
        raise ValueError("degenerate fit: all durations equal")
    cols = [np.where(labels == k, 1 / t**2, 0.0) for k in keys] + [t]
    a_mat = np.stack(cols, axis=1)
    if np.linalg.matrix_rank(a_mat) < a_mat.shape[1]:
        raise ValueError("degenerate fit: design matrix is rank deficient")
    # relative residuals: infidelities span orders of magnitude
    wts = 1 / np.maximum(e, 1e-12)
    sol = least_squares(lambda x: (a_mat @ x - e) * wts, np.linalg.lstsq(a_mat, e, rcond=None)[0])
    coef = sol.x
    a = {k: float(coef[i]) for i, k in enumerate(keys)}
    b = float(coef[-1])
    if groups is None:
        return a[keys[0]], b
    return a, b
