"""
Pulse-level simulation of multi-tone displacement drives on a transmon.

The drive Hamiltonian is ``H(t) = H0 + s(t) n`` in the transmon eigenbasis,
with every tone coupling through the charge operator ``n``::

    s(t) = sum_k A_k [a(t) cos(arg_k) + w_k a'(t) / (2 pi EC) sin(arg_k)]
    arg_k = (omega_k + 2 pi delta_k) t + phi_k

No rotating-wave approximation is made.  Integration runs in the frame of
``H0`` (``M(t) = n * exp(i (E_m - E_n) t)``), which is an exact change of
variables that yields ``e^{i H0 T} U(T)`` directly and needs far fewer
steps than the lab frame.  Propagator derivatives with respect to the
detunings and DRAG weights are co-integrated (GOAT):
``dU_x/dt = -i M(t) (s U_x + s_x U)``.

Units: GHz for frequencies and energies, ns for times.  Angular
frequencies (rad/ns) are formed once via ``2 pi``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop
from scipy.optimize import minimize

from .gates import displacement, snap
from .transmon_model import (
    TransmonEigenSystem,
    TransmonSpec,
    angular_frequencies,
    diagonalize,
)

__all__ = [
    "PulseEnvelope",
    "Tone",
    "MultiToneDrive",
    "CorrectionSet",
    "PropagationResult",
    "IntegrationError",
    "GUARD_LEVELS",
    "build_drive",
    "propagate",
    "frame_transform",
    "leakage",
    "optimize_phase_corrections",
    "phase_fidelity",
    "goat_objective",
    "goat_optimize",
    "correction_hierarchy",
    "duration_sweep",
    "fit_inverse_square",
    "append_job_log",
]

TWO_PI = 2 * np.pi
GUARD_LEVELS = 3
DEFAULT_RTOL = 1e-10
DETUNING_UNIT = 1e-3  # GHz per internal unit


class IntegrationError(RuntimeError):
    """Step-size underflow or step budget exhausted."""


# --------------------------------------------------------------------------
# drive description


@dataclass(frozen=True)
class PulseEnvelope:
    """
    Flat-top envelope with cosine ramps.

    ``peak`` is in rad/ns and chosen so that ``int_0^T a(t) dt = theta``
    times ``amplitude_scale``; the per-transition factor ``sqrt(k(d-k))``
    lives in the tone amplitudes.
    """

    duration: float
    theta: float = np.pi / 2
    ramp_fraction: float = 0.25
    amplitude_scale: float = 1.0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("pulse duration must be positive")
        if not 0 < self.ramp_fraction <= 0.5:
            raise ValueError("ramp_fraction must lie in (0, 1/2]")

    @property
    def peak(self) -> float:
        return self.amplitude_scale * self.theta / (self.duration * (1 - self.ramp_fraction))

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.vectorize(lambda x: _envelope(x, self.duration, self.ramp_fraction, self.peak)[0])(t)

    def derivative(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.vectorize(lambda x: _envelope(x, self.duration, self.ramp_fraction, self.peak)[1])(t)

    def area(self) -> float:
        return self.peak * self.duration * (1 - self.ramp_fraction)


@dataclass(frozen=True)
class Tone:
    """One drive tone, resonant with transition ``level -> level + 1``."""

    level: int
    frequency: float  # GHz
    base_phase: float  # rad
    amplitude: float  # dimensionless multiplier of the envelope
    detuning: float = 0.0  # GHz
    drag_weight: float = 0.0


@dataclass(frozen=True)
class MultiToneDrive:
    d: int
    tones: tuple

    def __post_init__(self):
        if len(self.tones) != self.d - 1:
            raise ValueError(f"a d={self.d} displacement needs {self.d - 1} tones")

    def with_corrections(self, detunings=None, drag_weights=None) -> "MultiToneDrive":
        det = np.zeros(self.d - 1) if detunings is None else np.asarray(detunings, float)
        drg = np.zeros(self.d - 1) if drag_weights is None else np.asarray(drag_weights, float)
        if det.shape != (self.d - 1,) or drg.shape != (self.d - 1,):
            raise ValueError("correction vectors must have one entry per tone")
        tones = tuple(
            Tone(t.level, t.frequency, t.base_phase, t.amplitude, float(a), float(b))
            for t, a, b in zip(self.tones, det, drg)
        )
        return MultiToneDrive(self.d, tones)

    def arrays(self):
        freq = np.array([t.frequency for t in self.tones], float)
        return (
            np.array([t.amplitude for t in self.tones], float),
            np.array([t.base_phase for t in self.tones], float),
            TWO_PI * (freq + np.array([t.detuning for t in self.tones], float)),
            np.array([t.drag_weight for t in self.tones], float),
        )


@dataclass
class CorrectionSet:
    """Pre/post SNAP phases plus per-tone detunings (GHz) and DRAG weights."""

    pre_snap: np.ndarray
    post_snap: np.ndarray
    detunings: np.ndarray
    drag_weights: np.ndarray

    @classmethod
    def zeros(cls, d: int) -> "CorrectionSet":
        return cls(np.zeros(d), np.zeros(d), np.zeros(d - 1), np.zeros(d - 1))

    def __post_init__(self):
        self.pre_snap = np.asarray(self.pre_snap, float)
        self.post_snap = np.asarray(self.post_snap, float)
        self.detunings = np.asarray(self.detunings, float)
        self.drag_weights = np.asarray(self.drag_weights, float)
        d = self.pre_snap.size
        if self.post_snap.size != d or self.detunings.size != d - 1 or self.drag_weights.size != d - 1:
            raise ValueError("correction vector sizes do not match the tone count")

    def to_dict(self) -> dict:
        return {k: [float(x) for x in v] for k, v in asdict(self).items()}


def build_drive(eig: TransmonEigenSystem, d: int) -> MultiToneDrive:
    """
    Resonant multi-tone drive for ``D(theta, 0)`` on the lowest ``d`` levels.

    Tone ``k`` (transition ``k-1 -> k``) has amplitude
    ``sqrt(k(d-k)) / |n_{k-1,k}|`` and phase ``-pi/2 - arg n_{k-1,k}``, so in
    the rotating-wave limit it contributes ``a(t) <k-1|Jy|k>`` to the
    effective Hamiltonian.
    """
    if eig.dim_kept < d:
        raise ValueError("eigensystem keeps fewer levels than the qudit dimension")
    e = eig.energies
    tones = []
    for k in range(1, d):
        nel = eig.charge_matrix[k - 1, k]
        tones.append(
            Tone(
                level=k - 1,
                frequency=float(e[k] - e[k - 1]),
                base_phase=float(-np.pi / 2 - np.angle(nel)),
                amplitude=float(math.sqrt(k * (d - k)) / abs(nel)),
            )
        )
    return MultiToneDrive(d, tuple(tones))


# --------------------------------------------------------------------------
# numba integrator


@numba.njit(cache=True)
def _envelope(t, T, ramp_fraction, peak):
    r = ramp_fraction * T
    if t <= 0.0 or t >= T:
        return 0.0, 0.0
    if t < r:
        x = math.pi * t / r
        return peak * 0.5 * (1 - math.cos(x)), peak * 0.5 * math.pi / r * math.sin(x)
    if t > T - r:
        x = math.pi * (T - t) / r
        return peak * 0.5 * (1 - math.cos(x)), -peak * 0.5 * math.pi / r * math.sin(x)
    return peak, 0.0


@numba.njit(cache=True)
def _drive_signal(t, T, ramp_fraction, peak, amps, phases, wk, drag, ec, n_det, n_drag, ds):
    """Return s(t); fill ``ds`` with ds/d(delta_k) then ds/d(w_k)."""
    a, da = _envelope(t, T, ramp_fraction, peak)
    q = da / (2 * math.pi * ec)
    s = 0.0
    for k in range(amps.size):
        arg = wk[k] * t + phases[k]
        c = math.cos(arg)
        sn = math.sin(arg)
        s += amps[k] * (a * c + drag[k] * q * sn)
        if k < n_det:
            ds[k] = amps[k] * (-a * sn + drag[k] * q * c) * 2 * math.pi * t
        if k < n_drag:
            ds[n_det + k] = amps[k] * q * sn
    return s


@numba.njit(cache=True)
def _rhs(t, y, out, w, nmat, m_buf, ds, params, amps, phases, wk, drag, n_det, n_drag, d, lab):
    T, ramp_fraction, peak, ec = params[0], params[1], params[2], params[3]
    s = _drive_signal(t, T, ramp_fraction, peak, amps, phases, wk, drag, ec, n_det, n_drag, ds)
    dim = w.size
    if lab:
        for i in range(dim):
            for j in range(dim):
                m_buf[i, j] = nmat[i, j]
    else:
        for i in range(dim):
            for j in range(dim):
                ph = (w[i] - w[j]) * t
                m_buf[i, j] = nmat[i, j] * complex(math.cos(ph), math.sin(ph))
    z = np.dot(m_buf, y)
    n_par = n_det + n_drag
    for i in range(dim):
        for c in range(d):
            out[i, c] = -1j * s * z[i, c]
        for p in range(n_par):
            off = (p + 1) * d
            for c in range(d):
                out[i, off + c] = -1j * (s * z[i, off + c] + ds[p] * z[i, c])
    if lab:
        for i in range(dim):
            for c in range(y.shape[1]):
                out[i, c] += -1j * w[i] * y[i, c]


@numba.njit(cache=True)
def _rms(x):
    acc = 0.0
    for v in x.flat:
        acc += v.real * v.real + v.imag * v.imag
    return math.sqrt(acc / x.size)


@numba.njit(cache=True)
def _integrate(y0, w, nmat, params, amps, phases, wk, drag, n_det, n_drag, d, lab,
               A, B, C, E3, E5, rtol, atol, max_steps):
    T = params[0]
    dim, cols = y0.shape
    n_stages = B.size
    K = np.zeros((n_stages + 1, dim, cols), dtype=np.complex128)
    m_buf = np.zeros((dim, dim), dtype=np.complex128)
    ds = np.zeros(max(n_det + n_drag, 1))
    y = y0.copy()
    f0 = np.zeros((dim, cols), dtype=np.complex128)
    _rhs(0.0, y, f0, w, nmat, m_buf, ds, params, amps, phases, wk, drag, n_det, n_drag, d, lab)
    nfev = 1

    # initial step, as in Hairer-Norsett-Wanner
    scale = atol + np.abs(y) * rtol
    d0 = _rms(y / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, T)
    y1 = y + h0 * f0
    f1 = np.zeros((dim, cols), dtype=np.complex128)
    _rhs(h0, y1, f1, w, nmat, m_buf, ds, params, amps, phases, wk, drag, n_det, n_drag, d, lab)
    nfev += 1
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    h_abs = min(100 * h0, h1, T)

    t = 0.0
    f = f0
    steps = 0
    rejected = False
    ynew = np.zeros_like(y)
    while t < T:
        if steps >= max_steps:
            return y, nfev, steps, 2
        min_step = 10 * abs(np.nextafter(t, np.inf) - t)
        if h_abs < min_step:
            return y, nfev, steps, 1
        h = h_abs
        if t + h > T:
            h = T - t
        K[0] = f
        for s in range(1, n_stages):
            dy = np.zeros((dim, cols), dtype=np.complex128)
            for r in range(s):
                if A[s, r] != 0.0:
                    dy += A[s, r] * K[r]
            _rhs(t + C[s] * h, y + h * dy, K[s], w, nmat, m_buf, ds, params,
                 amps, phases, wk, drag, n_det, n_drag, d, lab)
        acc = np.zeros((dim, cols), dtype=np.complex128)
        for r in range(n_stages):
            acc += B[r] * K[r]
        ynew[:] = y + h * acc
        _rhs(t + h, ynew, K[n_stages], w, nmat, m_buf, ds, params,
             amps, phases, wk, drag, n_det, n_drag, d, lab)
        nfev += n_stages
        scale = atol + np.maximum(np.abs(y), np.abs(ynew)) * rtol
        e5 = np.zeros((dim, cols), dtype=np.complex128)
        e3 = np.zeros((dim, cols), dtype=np.complex128)
        for r in range(n_stages + 1):
            e5 += E5[r] * K[r]
            e3 += E3[r] * K[r]
        n5 = _rms(e5 / scale) ** 2
        n3 = _rms(e3 / scale) ** 2
        if n5 == 0.0 and n3 == 0.0:
            err = 0.0
        else:
            err = h * n5 / math.sqrt(n5 + 0.01 * n3)
        if err < 1.0:
            factor = 10.0 if err == 0.0 else min(10.0, 0.9 * err ** (-1.0 / 8.0))
            if rejected:
                factor = min(1.0, factor)
            t = t + h
            if T - t < 1e-12 * T:
                t = T
            y[:] = ynew
            f = K[n_stages].copy()
            h_abs = h * factor
            rejected = False
            steps += 1
        else:
            h_abs = h * max(0.2, 0.9 * err ** (-1.0 / 8.0))
            rejected = True
    return y, nfev, steps, 0


_A = np.ascontiguousarray(_dop.A[: _dop.N_STAGES, : _dop.N_STAGES])
_B = np.ascontiguousarray(_dop.B)
_C = np.ascontiguousarray(_dop.C[: _dop.N_STAGES])
_E3 = np.ascontiguousarray(_dop.E3)
_E5 = np.ascontiguousarray(_dop.E5)


# --------------------------------------------------------------------------
# propagation


@dataclass
class PropagationResult:
    """
    ``u_lab`` is the ``D x d`` lab-frame propagator on the computational
    columns; ``u_frame`` is its ``H0``-frame counterpart.  ``derivatives``
    holds ``d u_frame / d x`` stacked as detunings then DRAG weights.
    """

    u_lab: np.ndarray
    u_frame: np.ndarray
    derivatives: np.ndarray
    energies: np.ndarray = field(repr=False)
    nfev: int = 0
    steps: int = 0

    @property
    def d(self) -> int:
        return self.u_frame.shape[1]

    @property
    def leakage(self) -> float:
        return leakage(self.u_frame)


def _eigensystem(device, d, guard):
    if isinstance(device, TransmonEigenSystem):
        if device.dim_kept < d + 1:
            raise ValueError("eigensystem must keep at least one guard level")
        return device
    if not isinstance(device, TransmonSpec):
        raise TypeError("device must be a TransmonSpec or TransmonEigenSystem")
    return diagonalize(device, d + guard)


def propagate(device, drive: MultiToneDrive, envelope: PulseEnvelope, *,
              guard: int = GUARD_LEVELS, rtol: float = DEFAULT_RTOL, atol: float | None = None,
              derivatives: tuple = (), frame: str = "rotating",
              max_steps: int = 2_000_000) -> PropagationResult:
    """
    Propagator of the driven transmon over ``[0, T]``.

    Parameters
    ----------
    device : TransmonSpec or TransmonEigenSystem
        A spec is diagonalized keeping ``d + guard`` levels.
    derivatives : tuple of {"detuning", "drag"}
        Parameter families whose propagator derivatives are co-integrated.
    frame : {"rotating", "lab"}
        Integration variables; both give the same propagator.

    Raises
    ------
    IntegrationError
        On step-size underflow or when ``max_steps`` is exhausted.
    """
    d = drive.d
    eig = _eigensystem(device, d, guard)
    w = angular_frequencies(eig)
    dim = w.size
    nmat = np.ascontiguousarray(eig.charge_matrix, dtype=np.complex128)
    amps, phases, wk, drag = drive.arrays()
    n_det = d - 1 if "detuning" in derivatives else 0
    n_drag = d - 1 if "drag" in derivatives else 0
    unknown = set(derivatives) - {"detuning", "drag"}
    if unknown:
        raise ValueError(f"unknown derivative families {sorted(unknown)}")
    if frame not in ("rotating", "lab"):
        raise ValueError("frame must be 'rotating' or 'lab'")
    n_par = n_det + n_drag
    y0 = np.zeros((dim, d * (1 + n_par)), dtype=np.complex128)
    y0[:d, :d] = np.eye(d)
    params = np.array([envelope.duration, envelope.ramp_fraction, envelope.peak, eig.spec.ec])
    atol = rtol if atol is None else atol
    y, nfev, steps, status = _integrate(
        y0, w, nmat, params, amps, phases, wk, drag, n_det, n_drag, d, frame == "lab",
        _A, _B, _C, _E3, _E5, float(rtol), float(atol), int(max_steps),
    )
    if status == 1:
        raise IntegrationError("step size underflow")
    if status == 2:
        raise IntegrationError(f"integration did not finish within {max_steps} steps")
    if not np.all(np.isfinite(y)):
        raise IntegrationError("non-finite propagator")
    T = envelope.duration
    rot = np.exp(1j * w * T)[:, None]
    if frame == "lab":
        u_lab = y[:, :d]
        y = rot * y
    else:
        u_lab = np.conj(rot) * y[:, :d]
    ders = np.stack([y[:, (p + 1) * d:(p + 2) * d] for p in range(n_par)]) if n_par else np.zeros((0, dim, d))
    return PropagationResult(u_lab, y[:, :d], ders, eig.energies, int(nfev), int(steps))


def frame_transform(u_lab, eig, T: float):
    """
    Move a lab-frame propagator into the transmon frame.

    Returns the ``d x d`` computational block of ``e^{i H0 T} U`` and the
    leakage ``1 - sum |U_comp|^2 / d``.
    """
    u_lab = np.asarray(u_lab)
    energies = eig.energies if isinstance(eig, TransmonEigenSystem) else np.asarray(eig)
    w = TWO_PI * (energies - energies[0])
    dim, d = u_lab.shape[0], u_lab.shape[1]
    if dim > w.size:
        raise ValueError("propagator has more rows than known energies")
    u = np.exp(1j * w[:dim] * T)[:, None] * u_lab
    block = u[:d, :d]
    return block, leakage(u)


def leakage(u) -> float:
    """Mean population leaving the computational block, ``1 - ||U_comp||_F^2 / d``."""
    u = np.asarray(u)
    d = u.shape[1]
    return float(max(0.0, 1.0 - np.sum(np.abs(u[:d, :d]) ** 2) / d))


# --------------------------------------------------------------------------
# corrections


def phase_fidelity(u_frame, target, pre, post) -> float:
    """``|Tr[target^dag S(post) U S(pre)]|^2 / d^2`` on the computational block."""
    d = target.shape[0]
    u = np.asarray(u_frame)[:d, :d]
    return float(abs(np.trace(target.conj().T @ snap(post) @ u @ snap(pre))) ** 2 / d**2)


def _phase_cost(x, w):
    """1 - |sum_mn W_mn e^{i(post_m + pre_n)}|^2 / d^2 with gradient."""
    d = w.shape[0]
    pre, post = x[:d], x[d:]
    terms = w * np.exp(1j * (post[:, None] + pre[None, :]))
    tr = terms.sum()
    f = abs(tr) ** 2 / d**2
    # d|tr|^2/dx = 2 Re(conj(tr) d tr/dx), d tr/dx = i * partial sums
    g_pre = 2 * np.real(np.conj(tr) * 1j * terms.sum(axis=0)) / d**2
    g_post = 2 * np.real(np.conj(tr) * 1j * terms.sum(axis=1)) / d**2
    return 1 - f, -np.concatenate([g_pre, g_post])


def optimize_phase_corrections(u_frame, target, *, starts: int = 8, seed: int = 0):
    """
    Best pre/post SNAP phases around a fixed propagator.

    Returns ``(CorrectionSet, fidelity)``; the zero-phase start is always
    included so the result never falls below the uncorrected fidelity.
    """
    target = np.asarray(target)
    d = target.shape[0]
    u = np.asarray(u_frame)[:d, :d]
    # W_mn = conj(target_mn) u_mn, Tr = sum_mn W_mn e^{i(post_m + pre_n)}
    w = np.conj(target) * u
    rng = np.random.default_rng(seed)
    starts_x = [np.zeros(2 * d)]
    # diagonal phase estimate: align each column/row of u with target
    diag = np.angle(np.sum(np.conj(u) * target, axis=0))
    starts_x.append(np.concatenate([diag, np.zeros(d)]))
    starts_x += [rng.uniform(0, TWO_PI, 2 * d) for _ in range(max(0, starts - 2))]
    best = None
    for x0 in starts_x:
        res = minimize(_phase_cost, x0, args=(w,), jac=True, method="L-BFGS-B",
                       options={"ftol": 1e-16, "gtol": 1e-13, "maxiter": 2000})
        if best is None or res.fun < best.fun - 1e-15:
            best = res
    pre, post = best.x[:d], best.x[d:]
    cs = CorrectionSet(pre, post, np.zeros(d - 1), np.zeros(d - 1))
    return cs, 1.0 - float(best.fun)


def goat_objective(device, drive, envelope, target, x, *, families=("detuning", "drag"),
                   guard=GUARD_LEVELS, rtol=DEFAULT_RTOL):
    """
    Infidelity and exact gradient over ``x = [pre, post, detunings?, drag?]``.

    The pulse-parameter part of the gradient comes from the co-integrated
    propagator derivatives.
    """
    d = drive.d
    pre, post = x[:d], x[d:2 * d]
    rest = x[2 * d:]
    det = rest[: d - 1] if "detuning" in families else np.zeros(d - 1)
    drg = rest[-(d - 1):] if "drag" in families else np.zeros(d - 1)
    dr = drive.with_corrections(det, drg)
    res = propagate(device, dr, envelope, guard=guard, rtol=rtol, derivatives=families)
    u = res.u_frame[:d]
    a = np.conj(target) * np.exp(1j * post)[:, None]
    b = np.exp(1j * pre)
    tr = np.sum(a * u * b[None, :])
    f = abs(tr) ** 2 / d**2
    terms = a * u * b[None, :]
    g_pre = 2 * np.real(np.conj(tr) * 1j * terms.sum(axis=0)) / d**2
    g_post = 2 * np.real(np.conj(tr) * 1j * terms.sum(axis=1)) / d**2
    g_pulse = np.array([2 * np.real(np.conj(tr) * np.sum(a * du[:d] * b[None, :])) / d**2
                        for du in res.derivatives])
    grad = np.concatenate([g_pre, g_post, g_pulse])
    if not np.all(np.isfinite(grad)):
        raise IntegrationError("non-finite GOAT gradient")
    return 1 - f, -grad, res


def goat_optimize(device, drive, envelope, target, *, free_params=("detuning", "drag"),
                  initial: CorrectionSet | None = None, guard=GUARD_LEVELS,
                  rtol=DEFAULT_RTOL, max_iter=200, gtol=1e-7):
    """
    Jointly optimize SNAP phases and the chosen pulse parameters.

    Returns ``(CorrectionSet, fidelity, info)`` where ``info`` has the final
    gradient norm and the number of propagations.  Starting from
    ``initial`` (phase corrections, zero pulse parameters by default) the
    fidelity can only go up.
    """
    free_params = tuple(p for p in ("detuning", "drag") if p in free_params)
    if not free_params:
        raise ValueError("free_params must name at least one of detuning, drag")
    d = drive.d
    if initial is None:
        u0 = propagate(device, drive, envelope, guard=guard, rtol=rtol).u_frame
        initial, _ = optimize_phase_corrections(u0, target)
    x0 = [initial.pre_snap, initial.post_snap]
    if "detuning" in free_params:
        x0.append(initial.detunings)
    if "drag" in free_params:
        x0.append(initial.drag_weights)
    x0 = np.concatenate(x0)
    # detunings are optimized in MHz so all curvatures are of order one
    scale = np.ones_like(x0)
    if "detuning" in free_params:
        scale[2 * d:3 * d - 1] = DETUNING_UNIT
    cache = {}

    def fun(z):
        key = z.tobytes()
        if key not in cache:
            val, grad, _ = goat_objective(device, drive, envelope, target, z * scale,
                                          families=free_params, guard=guard, rtol=rtol)
            cache.clear()
            cache[key] = (val, grad * scale)
        return cache[key]

    z0 = x0 / scale
    f0, _ = fun(z0)
    res = minimize(fun, z0, jac=True, method="L-BFGS-B",
                   options={"ftol": 1e-15, "gtol": gtol, "maxiter": max_iter, "maxcor": 20})
    z = res.x if res.fun <= f0 else z0
    fval, grad = fun(z)
    x = z * scale
    grad = grad / scale
    rest = x[2 * d:]
    cs = CorrectionSet(
        x[:d], x[d:2 * d],
        rest[: d - 1] if "detuning" in free_params else initial.detunings,
        rest[-(d - 1):] if "drag" in free_params else initial.drag_weights,
    )
    info = {"grad_norm": float(np.linalg.norm(grad)), "nfev": int(res.nfev), "message": str(res.message)}
    return cs, 1.0 - float(fval), info


def correction_hierarchy(device, d, T, *, theta=np.pi / 2, guard=GUARD_LEVELS,
                         rtol=DEFAULT_RTOL, max_iter=200):
    """
    Fidelities at the four correction levels for one pulse.

    Each level is initialized from the previous level's optimum, so the
    ordering ``none <= phase <= phase+detuning <= all`` holds by construction
    up to integration noise.
    """
    eig = _eigensystem(device, d, guard)
    drive = build_drive(eig, d)
    env = PulseEnvelope(T, theta)
    target = displacement(d, theta, 0.0)
    res = propagate(eig, drive, env, rtol=rtol)
    f_none = phase_fidelity(res.u_frame, target, np.zeros(d), np.zeros(d))
    cs_phase, f_phase = optimize_phase_corrections(res.u_frame, target)
    cs_det, f_det, _ = goat_optimize(eig, drive, env, target, free_params=("detuning",),
                                     initial=cs_phase, rtol=rtol, max_iter=max_iter)
    cs_all, f_all, info = goat_optimize(eig, drive, env, target, free_params=("detuning", "drag"),
                                        initial=cs_det, rtol=rtol, max_iter=max_iter)
    return {
        "d": d,
        "T": float(T),
        "leakage": res.leakage,
        "F_none": f_none,
        "F_phase": f_phase,
        "F_phase_det": f_det,
        "F_all": f_all,
        "corrections": cs_all.to_dict(),
        "grad_norm": info["grad_norm"],
    }


def duration_sweep(device, d, durations, *, theta=np.pi / 2, guard=GUARD_LEVELS, rtol=DEFAULT_RTOL):
    """Uncorrected fidelity and leakage of ``D(theta)`` versus pulse duration."""
    eig = _eigensystem(device, d, guard)
    drive = build_drive(eig, d)
    target = displacement(d, theta, 0.0)
    rows = []
    for T in durations:
        res = propagate(eig, drive, PulseEnvelope(float(T), theta), rtol=rtol)
        f = phase_fidelity(res.u_frame, target, np.zeros(d), np.zeros(d))
        rows.append({"T": float(T), "fidelity": f, "leakage": res.leakage})
    return rows


def fit_inverse_square(durations, infidelities):
    """
    Least-squares ``1 - F = c / T^2``.

    Returns ``(c, r_squared)`` with R^2 computed on the infidelities.
    """
    t = np.asarray(durations, float)
    y = np.asarray(infidelities, float)
    x = 1 / t**2
    c = float(x @ y / (x @ x))
    ss_res = float(np.sum((y - c * x) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return c, 1 - ss_res / ss_tot if ss_tot > 0 else 1.0


def append_job_log(path, record: dict) -> None:
    """Append one JSON record (sorted keys) to a JSON-lines log."""
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialize {type(x)}")
