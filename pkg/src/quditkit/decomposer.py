"""
SNAP-displacement synthesis of qudit unitaries.

A program of depth ``N`` is the product (rightmost factor acts first)::

    U = S(phi_N) D(theta_N) ... S(phi_1) D(theta_1) S(phi_0)

with every displacement taken at zero phase, ``D(theta) = exp(-i theta Jy)``.
In ``pi_half_canonical`` mode all ``theta_k`` are pinned to ``pi / 2`` and
only the SNAP phases are free.

Parameters are found by L-BFGS on ``1 - |Tr(W U)|^2 / k^2`` with an exact
gradient, from a set of random restarts.  ``W = target^dag`` and ``k = d``
for full synthesis; other choices of ``W`` restrict the fit to a subspace
(used for logical-qubit compilation and state preparation).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .gates import _jy_eig, displacement_y, is_unitary
from .spin_algebra import as_dimension, build_angular_momentum

__all__ = [
    "GENERAL",
    "PI_HALF",
    "SnapDisplacementProgram",
    "DecompositionResult",
    "reconstruct",
    "decompose",
    "fit_program",
    "haar_random_unitary",
    "parameter_count",
    "minimal_depth",
    "snap_generator_commutator",
]

GENERAL = "general"
PI_HALF = "pi_half_canonical"
_MODES = (GENERAL, PI_HALF)

CONVERGED_INFIDELITY = 1e-10
MAX_ITER = 5000


@dataclass(frozen=True)
class SnapDisplacementProgram:
    """
    Interleaved SNAP/displacement sequence.

    ``thetas[k]`` and ``snaps[k + 1]`` form layer ``k``; ``snaps[0]`` is the
    trailing SNAP that acts first on the state.
    """

    d: int
    thetas: tuple
    snaps: tuple
    mode: str = GENERAL

    def __post_init__(self):
        d = as_dimension(self.d).d
        thetas = tuple(float(t) for t in np.ravel(self.thetas))
        snaps = tuple(tuple(float(p) for p in np.ravel(s)) for s in self.snaps)
        if self.mode not in _MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if len(snaps) != len(thetas) + 1:
            raise ValueError("a depth-N program needs N + 1 SNAP layers")
        if any(len(s) != d for s in snaps):
            raise ValueError(f"every SNAP layer must have {d} phases")
        if self.mode == PI_HALF and not np.allclose(thetas, np.pi / 2, atol=1e-12):
            raise ValueError("pi_half_canonical programs only contain pi/2 displacements")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "snaps", snaps)

    @property
    def depth(self) -> int:
        return len(self.thetas)

    @property
    def n_pulses(self) -> int:
        """Physical displacement pulses (layers with a nonzero angle)."""
        return sum(1 for t in self.thetas if abs(t) > 1e-12)

    @classmethod
    def identity(cls, d: int) -> "SnapDisplacementProgram":
        return cls(d, (), (np.zeros(d),))

    def parameter_vector(self) -> np.ndarray:
        parts = [] if self.mode == PI_HALF else [np.asarray(self.thetas)]
        parts += [np.asarray(s) for s in self.snaps]
        return np.concatenate(parts) if parts else np.zeros(0)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "mode": self.mode,
            "layers": [
                {"theta": t, "snap": list(s)} for t, s in zip(self.thetas, self.snaps[1:])
            ],
            "trailing_snap": list(self.snaps[0]),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "SnapDisplacementProgram":
        layers = doc["layers"]
        return cls(
            int(doc["d"]),
            tuple(layer["theta"] for layer in layers),
            (tuple(doc["trailing_snap"]),) + tuple(tuple(layer["snap"]) for layer in layers),
            doc.get("mode", GENERAL),
        )

    @classmethod
    def from_json(cls, text: str) -> "SnapDisplacementProgram":
        return cls.from_dict(json.loads(text))


@dataclass
class DecompositionResult:
    program: SnapDisplacementProgram
    infidelity: float
    restart: int
    restarts_run: int
    history: list = field(default_factory=list, repr=False)


def reconstruct(program: SnapDisplacementProgram) -> np.ndarray:
    """Multiply out a program into its ``d x d`` unitary."""
    d = program.d
    u = np.diag(np.exp(1j * np.asarray(program.snaps[0])))
    for theta, phases in zip(program.thetas, program.snaps[1:]):
        u = displacement_y(d, theta) @ u
        u = np.exp(1j * np.asarray(phases))[:, None] * u
    return u


def haar_random_unitary(d: int, seed=None) -> np.ndarray:
    """
    Haar-distributed ``d x d`` unitary.

    QR decomposition of a complex Ginibre matrix, with the phases of
    ``diag(R)`` moved into ``Q`` so the distribution is exactly uniform.
    """
    d = as_dimension(d).d
    rng = np.random.default_rng(seed)
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    diag = np.diag(r)
    return q * (diag / np.abs(diag))


def parameter_count(d: int, depth: int, mode: str = GENERAL) -> int:
    """Independent real parameters of a depth-``depth`` program."""
    d = as_dimension(d).d
    if depth < 0:
        raise ValueError("depth must be non-negative")
    snaps = (depth + 1) * (d - 1)
    return snaps if mode == PI_HALF else depth + snaps


def minimal_depth(d: int) -> int:
    """Smallest general-mode depth whose parameter count reaches ``d^2 - 1``."""
    d = as_dimension(d).d
    return d - 1


def snap_generator_commutator(d: int, n: int) -> np.ndarray:
    """
    ``i [Jy, Q_n]`` with ``Q_n`` the projector onto levels ``0..n``.

    This is the generator obtained by conjugating a displacement with the
    SNAP direction ``Q_n``; it couples only ``|n>`` and ``|n+1>``.
    """
    jy = build_angular_momentum(d).jy
    q = np.diag((np.arange(d) <= n).astype(float))
    return 1j * (jy @ q - q @ jy)


class _Cost:
    """
    ``1 - |Tr(W U(x))|^2 / k^2`` and its gradient.

    ``x`` holds the free displacement angles (general mode only) followed
    by ``d - 1`` phases per SNAP layer; each layer's phase on level 0 is
    pinned to zero because only relative phases matter.
    """

    def __init__(self, w: np.ndarray, norm: float, depth: int, mode: str):
        self.w = np.asarray(w, dtype=complex)
        self.d = self.w.shape[0]
        self.norm2 = float(norm) ** 2
        self.depth = depth
        self.mode = mode
        self.jy_t = build_angular_momentum(self.d).jy.T.copy()
        self.jy_w, self.jy_v = _jy_eig(self.d)
        self.n_theta = 0 if mode == PI_HALF else depth
        self.size = self.n_theta + (depth + 1) * (self.d - 1)
        if mode == PI_HALF:
            self._fixed = self._disp(np.pi / 2)

    def _disp(self, theta):
        v = self.jy_v
        return (v * np.exp(-1j * theta * self.jy_w)) @ v.conj().T

    def unpack(self, x):
        x = np.asarray(x, dtype=float)
        if self.mode == PI_HALF:
            thetas = np.full(self.depth, np.pi / 2)
        else:
            thetas = x[: self.n_theta]
        phases = np.zeros((self.depth + 1, self.d))
        phases[:, 1:] = x[self.n_theta :].reshape(self.depth + 1, self.d - 1)
        return thetas, phases

    def pack(self, thetas, phases):
        phases = np.asarray(phases, dtype=float)
        rel = (phases - phases[:, :1])[:, 1:]
        head = [] if self.mode == PI_HALF else [np.asarray(thetas, dtype=float)]
        return np.concatenate(head + [rel.ravel()])

    def program(self, x) -> SnapDisplacementProgram:
        thetas, phases = self.unpack(x)
        return SnapDisplacementProgram(self.d, tuple(thetas), tuple(map(tuple, phases)), self.mode)

    def __call__(self, x):
        thetas, phases = self.unpack(x)
        snaps = np.exp(1j * phases)
        if self.mode == PI_HALF:
            disps = [self._fixed] * self.depth
        else:
            disps = [self._disp(t) for t in thetas]

        # forward partial products R_i (right of factor i)
        rights = []
        r = np.eye(self.d, dtype=complex)
        for k in range(self.depth):
            rights.append(r)
            r = snaps[k][:, None] * r
            rights.append(r)
            r = disps[k] @ r
        rights.append(r)
        r = snaps[self.depth][:, None] * r
        g = np.sum(self.w.T * r)

        grad_snap = np.zeros((self.depth + 1, self.d), dtype=complex)
        grad_theta = np.zeros(self.depth, dtype=complex)
        b = self.w
        # walk factors from the left end; b = W * (everything left of factor)
        for k in range(self.depth, -1, -1):
            m_diag = np.einsum("ij,ji->i", rights[2 * k], b)
            grad_snap[k] = 1j * snaps[k] * m_diag
            b = b * snaps[k][None, :]
            if k == 0:
                break
            dk = disps[k - 1]
            if self.mode != PI_HALF:
                m = rights[2 * k - 1] @ b
                grad_theta[k - 1] = -1j * np.sum((dk @ m) * self.jy_t)
            b = b @ dk

        fid = abs(g) ** 2 / self.norm2
        scale = -2.0 / self.norm2
        gs = scale * np.real(np.conj(g) * grad_snap[:, 1:]).ravel()
        if self.mode == PI_HALF:
            grad = gs
        else:
            grad = np.concatenate([scale * np.real(np.conj(g) * grad_theta), gs])
        return 1.0 - fid, grad


def _random_start(rng, cost: _Cost):
    thetas = rng.uniform(0, np.pi, cost.n_theta)
    phases = rng.uniform(0, 2 * np.pi, (cost.depth + 1) * (cost.d - 1))
    return np.concatenate([thetas, phases])


def fit_program(
    w,
    norm,
    depth,
    mode=GENERAL,
    restarts=20,
    seed=0,
    tol=CONVERGED_INFIDELITY,
    max_iter=MAX_ITER,
    stop_early=True,
    initial=None,
) -> DecompositionResult:
    """
    Core optimizer: maximize ``|Tr(W U)|^2 / norm^2`` over programs.

    Restart ``i`` starts from a point drawn with the ``i``-th child of
    ``SeedSequence(seed)``, so results do not depend on how many restarts
    are run before it.  When ``stop_early`` is set the loop ends at the
    first restart whose infidelity is below ``tol``.  Ties are broken by
    infidelity, then parameter L2 norm, then restart index.
    """
    w = np.asarray(w, dtype=complex)
    d = w.shape[0]
    if mode not in _MODES:
        raise ValueError(f"unknown mode {mode!r}")
    cost = _Cost(w, norm, depth, mode)
    if cost.size == 0:
        x = np.zeros(0)
        value, _ = cost(x)
        return DecompositionResult(cost.program(x), float(max(value, 0.0)), 0, 1)

    children = np.random.SeedSequence(seed).spawn(restarts)
    best = None
    history = []
    for i, child in enumerate(children):
        if i == 0 and initial is not None:
            x0 = np.asarray(initial, dtype=float)
        else:
            x0 = _random_start(np.random.default_rng(child), cost)
        res = minimize(
            cost,
            x0,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": max_iter, "ftol": 1e-16, "gtol": 1e-14, "maxcor": 30},
        )
        infid = float(max(cost(res.x)[0], 0.0))
        history.append(infid)
        key = (infid, float(np.linalg.norm(res.x)), i)
        if best is None or key < best[0]:
            best = (key, res.x)
        if stop_early and infid < tol:
            break
    (infid, _, idx), x = best
    program = cost.program(x)
    return DecompositionResult(program, infid, idx, len(history), history)


def decompose(
    target,
    depth,
    mode=GENERAL,
    restarts=20,
    seed=0,
    tol=CONVERGED_INFIDELITY,
    max_iter=MAX_ITER,
    stop_early=True,
) -> DecompositionResult:
    """
    Find a depth-``depth`` SNAP-displacement program for ``target``.

    Parameters
    ----------
    target : (d, d) array
        Unitary to synthesize (global phase is ignored).
    depth : int
        Number of displacement layers ``N``.
    mode : {"general", "pi_half_canonical"}
    restarts : int
        Random restarts; the best is reported.
    seed : int
        Seeds the restart schedule; results are deterministic given it.

    Returns
    -------
    DecompositionResult
        Best program and its achieved infidelity.  A poor fit is reported
        through ``infidelity``, never raised.
    """
    target = np.asarray(target, dtype=complex)
    if not is_unitary(target, 1e-9):
        raise ValueError("target must be unitary")
    if depth < 0:
        raise ValueError("depth must be non-negative")
    d = target.shape[0]
    return fit_program(
        target.conj().T, d, depth, mode, restarts, seed, tol, max_iter, stop_early
    )
