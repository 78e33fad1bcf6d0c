"""
Synthetic multiplexed dispersive readout.

Each transmon state shifts the resonator to an effective frequency
``f_r + chi_n``.  Three probe tones see a steady-state Lorentzian response
``gain / (1 + 2 i (f - f_n) / kappa)``; one shot is the 6-vector
``(I1, Q1, I2, Q2, I3, Q3)`` plus isotropic Gaussian noise.  Shots are
classified with a full-covariance Gaussian mixture.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment, nnls
from sklearn.mixture import GaussianMixture

from .transmon_model import REFERENCE_DEVICE, REFERENCE_TRANSITIONS, diagonalize, fit_device

__all__ = [
    "ResonatorModel",
    "IqDataset",
    "AssignmentMatrix",
    "MixtureClassifier",
    "dispersive_shifts",
    "default_model",
    "choose_tones",
    "mean_response",
    "simulate_iq",
    "simulate_calibration",
    "fit_gmm",
    "classify",
    "assignment_matrix",
    "correct_populations",
    "corrected_standard_errors",
    "tune_noise",
    "gmm_assignment",
    "ideal_assignment_fidelity",
    "mahalanobis_separation",
]


@dataclass(frozen=True)
class ResonatorModel:
    """
    Phenomenological resonator response (synthetic).

    Frequencies in GHz, ``kappa`` and ``chi`` in MHz, ``sigma`` in units of
    ``gain``.
    """

    f_r: float
    kappa: float
    chi: tuple
    tones: tuple
    gain: float = 1.0
    sigma: float = 0.1

    def __post_init__(self):
        if len(self.tones) != 3:
            raise ValueError("the readout uses exactly three tones")
        if self.kappa <= 0 or self.sigma < 0:
            raise ValueError("kappa must be positive and sigma non-negative")
        object.__setattr__(self, "chi", tuple(float(c) for c in self.chi))
        object.__setattr__(self, "tones", tuple(float(t) for t in self.tones))

    @property
    def d(self) -> int:
        return len(self.chi)

    @property
    def state_frequencies(self) -> np.ndarray:
        return self.f_r + 1e-3 * np.asarray(self.chi)


@dataclass
class IqDataset:
    samples: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, float)
        self.labels = np.asarray(self.labels, int)
        if self.samples.ndim != 2 or self.samples.shape[1] != 6:
            raise ValueError("samples must be an N x 6 array")
        if len(self.labels) != len(self.samples):
            raise ValueError("one label per sample is required")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["I1", "Q1", "I2", "Q2", "I3", "Q3", "label"])
        for row, lab in zip(self.samples, self.labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "IqDataset":
        rows = list(csv.reader(io.StringIO(text)))
        data = np.array([[float(v) for v in r[:6]] for r in rows[1:]])
        labels = np.array([int(r[6]) for r in rows[1:]])
        return cls(data, labels)


@dataclass
class AssignmentMatrix:
    """``matrix[a, p] = P(assigned a | prepared p)``; columns sum to one."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, float)
        if np.max(np.abs(self.matrix.sum(axis=0) - 1)) > 1e-9:
            raise ValueError("assignment matrix must be column-stochastic")

    @property
    def fidelities(self) -> np.ndarray:
        return np.diag(self.matrix).copy()

    @property
    def average_fidelity(self) -> float:
        return float(np.mean(np.diag(self.matrix)))

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.matrix))

    def to_json(self) -> str:
        return json.dumps({"matrix": self.matrix.tolist(), "average_fidelity": self.average_fidelity},
                          sort_keys=True)


def dispersive_shifts(transitions, f_r: float, g: float) -> np.ndarray:
    """
    Multilevel dispersive pulls of the resonator (MHz), one per level.

    ``chi_n = g^2 [(n+1) / (f_{n,n+1} - f_r) - n / (f_{n-1,n} - f_r)]`` with
    ladder couplings ``g sqrt(n+1)``; used only to shape the synthetic
    spectrum.
    """
    f = np.asarray(transitions, float)
    d = f.size
    # the top level's upward transition is needed too, so d levels use d transitions
    chi = np.zeros(d)
    for n in range(d):
        up = (n + 1) / (f[n] - f_r)
        down = n / (f[n - 1] - f_r) if n > 0 else 0.0
        chi[n] = g**2 * (up - down)
    return 1e3 * chi


def mean_response(model: ResonatorModel) -> np.ndarray:
    """``d x 6`` matrix of noiseless IQ vectors."""
    fn = model.state_frequencies[:, None]
    tones = np.asarray(model.tones)[None, :]
    kappa = 1e-3 * model.kappa
    s = model.gain / (1 + 2j * (tones - fn) / kappa)
    out = np.empty((model.d, 6))
    out[:, 0::2] = s.real
    out[:, 1::2] = s.imag
    return out


def choose_tones(f_r: float, kappa: float, chi, grid_points: int = 25) -> tuple:
    """
    Tone triple maximizing the smallest pairwise distance between state means.

    Candidates lie on a uniform grid spanning the shifted frequencies plus
    one linewidth on either side.
    """
    fn = f_r + 1e-3 * np.asarray(chi)
    lo, hi = fn.min() - 1e-3 * kappa, fn.max() + 1e-3 * kappa
    grid = np.linspace(lo, hi, grid_points)
    k = 1e-3 * kappa
    resp = 1 / (1 + 2j * (grid[None, :] - fn[:, None]) / k)  # states x grid
    pair_i, pair_j = np.triu_indices(len(fn), 1)
    # squared separation contributed by each candidate tone, per state pair
    contrib = np.abs(resp[pair_i] - resp[pair_j]) ** 2
    best, best_val = None, -1.0
    for combo in itertools.combinations(range(grid_points), 3):
        val = contrib[:, combo].sum(axis=1).min()
        if val > best_val + 1e-15:
            best, best_val = combo, val
    return tuple(float(grid[c]) for c in best)


def default_model(d: int = 8, sigma: float = 0.1, kappa: float = 0.25) -> ResonatorModel:
    """Synthetic model built from the reference device's ladder, ``f_r`` and ``g``."""
    spec, _ = fit_device(REFERENCE_TRANSITIONS)
    ladder = diagonalize(spec, d + 1).transitions
    chi = dispersive_shifts(ladder, REFERENCE_DEVICE["f_r"], REFERENCE_DEVICE["g"])
    tones = choose_tones(REFERENCE_DEVICE["f_r"], kappa, chi)
    return ResonatorModel(REFERENCE_DEVICE["f_r"], kappa, tuple(chi), tones, 1.0, sigma)


def simulate_iq(model: ResonatorModel, prepared: int, shots: int, seed=None) -> IqDataset:
    if shots < 1:
        raise ValueError("shots must be at least 1")
    if not 0 <= prepared < model.d:
        raise ValueError("prepared state out of range")
    rng = np.random.default_rng(seed)
    mu = mean_response(model)[prepared]
    x = mu + model.sigma * rng.standard_normal((shots, 6))
    return IqDataset(x, np.full(shots, prepared))


def simulate_calibration(model: ResonatorModel, shots: int, seed=None) -> IqDataset:
    """``shots`` labelled samples for every state, one RNG stream per state."""
    seeds = _seed_seq(seed).spawn(model.d)
    parts = [simulate_iq(model, n, shots, seeds[n]) for n in range(model.d)]
    return IqDataset(np.concatenate([p.samples for p in parts]), np.concatenate([p.labels for p in parts]))


@dataclass
class MixtureClassifier:
    mixture: GaussianMixture = field(repr=False)
    component_to_state: np.ndarray
    converged: bool
    regularization: float

    @property
    def means(self) -> np.ndarray:
        """Component means reordered by state."""
        order = np.argsort(self.component_to_state)
        return self.mixture.means_[order]


def fit_gmm(dataset: IqDataset, components: int | None = None, seed=0) -> MixtureClassifier:
    """
    EM fit of a full-covariance Gaussian mixture.

    EM starts from the per-label sample means, which the labelled
    calibration shots provide; random k-means++ starts can merge adjacent
    clusters when neighbouring states overlap.  Components are then
    matched to states by the one-to-one assignment maximizing the number
    of agreeing labelled samples.
    """
    labels = dataset.labels
    k = int(labels.max()) + 1 if components is None else int(components)
    if len(labels) < 50 * k:
        raise ValueError(f"need at least {50 * k} samples for {k} components")
    x = dataset.samples
    if components is None or k == int(labels.max()) + 1:
        means_init = np.array([x[labels == c].mean(axis=0) for c in range(k)])
    else:
        means_init = None
    reg = 1e-6 * float(np.trace(np.cov(x.T))) / 6
    gmm = GaussianMixture(n_components=k, covariance_type="full", tol=1e-8, reg_covar=reg,
                          max_iter=1000, n_init=1 if means_init is not None else 3,
                          means_init=means_init, random_state=_seed_int(seed))
    gmm.fit(x)
    comp = gmm.predict(x)
    counts = np.zeros((k, k))
    np.add.at(counts, (comp, labels), 1)
    rows, cols = linear_sum_assignment(-counts)
    mapping = np.empty(k, int)
    mapping[rows] = cols
    return MixtureClassifier(gmm, mapping, bool(gmm.converged_), reg)


def _seed_seq(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def _seed_int(seed) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed) % (2**32)
    return int(_seed_seq(seed).generate_state(1)[0])


def classify(model: MixtureClassifier, samples) -> np.ndarray:
    """Maximum-posterior state index for each shot."""
    return model.component_to_state[model.mixture.predict(np.asarray(samples, float))]


def assignment_matrix(model: MixtureClassifier, calibration: IqDataset) -> AssignmentMatrix:
    pred = classify(model, calibration.samples)
    k = len(model.component_to_state)
    counts = np.zeros((k, k))
    np.add.at(counts, (pred, calibration.labels), 1)
    col = counts.sum(axis=0)
    if np.any(col == 0):
        raise ValueError("every prepared state needs calibration shots")
    return AssignmentMatrix(counts / col)


def correct_populations(raw, a: AssignmentMatrix, sum_weight: float = 1e4) -> np.ndarray:
    """
    Populations ``p >= 0`` with ``sum p = 1`` minimizing ``||A p - raw||``.

    The simplex constraint is imposed through NNLS with a heavily weighted
    sum row.

    Raises
    ------
    np.linalg.LinAlgError
        If the assignment matrix is singular.
    """
    m = a.matrix
    raw = np.asarray(raw, float)
    if not np.isfinite(a.condition_number) or a.condition_number > 1e12:
        raise np.linalg.LinAlgError("assignment matrix is singular")
    aug = np.vstack([m, sum_weight * np.ones(m.shape[1])])
    rhs = np.concatenate([raw, [sum_weight]])
    p, _ = nnls(aug, rhs, maxiter=50 * m.shape[1])
    return p / p.sum()


def corrected_standard_errors(p_true, a: AssignmentMatrix, shots: int) -> np.ndarray:
    """Multinomial standard errors of measured frequencies propagated through ``A^-1``."""
    q = a.matrix @ np.asarray(p_true, float)
    cov = (np.diag(q) - np.outer(q, q)) / shots
    inv = np.linalg.inv(a.matrix)
    return np.sqrt(np.clip(np.diag(inv @ cov @ inv.T), 0, None))


def mahalanobis_separation(model: ResonatorModel) -> np.ndarray:
    """Pairwise distances between state means in units of the noise ``sigma``."""
    mu = mean_response(model)
    diff = mu[:, None, :] - mu[None, :, :]
    return np.linalg.norm(diff, axis=-1) / model.sigma


def gmm_assignment(model: ResonatorModel, shots: int, seed=0) -> tuple:
    """Train a mixture on fresh shots, then score it on an independent set."""
    ss = _seed_seq(seed).spawn(3)
    train = simulate_calibration(model, shots, ss[0])
    clf = fit_gmm(train, model.d, seed=ss[1])
    return clf, assignment_matrix(clf, simulate_calibration(model, shots, ss[2]))


def ideal_assignment_fidelity(model: ResonatorModel, shots: int = 4000, seed=0) -> float:
    """
    Average fidelity of the nearest-mean rule, which is Bayes optimal for
    isotropic noise and equal priors.  Common random numbers make it a
    smooth function of ``sigma``.
    """
    mu = mean_response(model)
    z = np.random.default_rng(_seed_int(seed)).standard_normal((model.d, shots, 6))
    x = mu[:, None, :] + model.sigma * z
    dist = np.linalg.norm(x[:, :, None, :] - mu[None, None, :, :], axis=-1)
    pred = np.argmin(dist, axis=-1)
    return float(np.mean(pred == np.arange(model.d)[:, None]))


def tune_noise(model: ResonatorModel, target: float = 0.883, shots: int = 4000, seed=0,
               tol: float = 1e-4, max_iter: int = 60) -> tuple:
    """
    Bisect on ``log sigma`` until the nearest-mean assignment fidelity hits ``target``.

    Returns ``(model, fidelity)``.
    """
    lo, hi = 1e-4, 10.0
    mid, f = hi, 0.0
    for _ in range(max_iter):
        mid = float(np.sqrt(lo * hi))
        f = ideal_assignment_fidelity(replace(model, sigma=mid), shots, seed)
        if abs(f - target) < tol:
            break
        if f > target:
            lo = mid
        else:
            hi = mid
    return replace(model, sigma=mid), f
