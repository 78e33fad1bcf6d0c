"""
Closed-form error budget for a displacement pulse of duration ``T``.

    E_inc = f01 d T / (2 Q)
    E_coh = (sqrt(8 r) - 1)^2 A / (f01^2 T^2)

with ``r = EJ/EC`` and ``Q = T1 f01``.  ``A`` is a dimensionless
coherent-error coefficient per qudit dimension, extracted from the pulse
simulation.  Frequencies in GHz, times in ns.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.optimize import brentq

from .pulse_engine import duration_sweep, fit_inverse_square
from .transmon_model import TransmonSpec, diagonalize

__all__ = [
    "BudgetInputs",
    "DEFAULT_RATIO",
    "incoherent_error",
    "coherent_error",
    "total_error",
    "optimal_duration",
    "minimum_infidelity",
    "numerical_optimum",
    "coherent_coefficient",
    "extract_coefficient",
    "calibrate",
    "load_calibration",
    "budget_curve_csv",
    "CALIBRATION_DURATIONS",
]

DEFAULT_RATIO = 270.0

# durations (ns) over which the uncorrected infidelity is fitted to c / T^2
CALIBRATION_DURATIONS = {
    3: (30.0, 40.0, 48.0, 60.0, 80.0, 100.0),
    5: (50.0, 60.0, 80.0, 100.0, 120.0, 150.0),
    8: (60.0, 80.0, 100.0, 120.0, 140.0, 170.0, 200.0),
}


@dataclass(frozen=True)
class BudgetInputs:
    f01: float
    d: int
    q_factor: float
    a_d: float | None = None
    ej_over_ec: float = DEFAULT_RATIO

    def __post_init__(self):
        if self.f01 <= 0 or self.q_factor <= 0 or self.ej_over_ec <= 0 or self.d < 2:
            raise ValueError("budget inputs must be positive (d >= 2)")
        if self.a_d is not None and self.a_d <= 0:
            raise ValueError("A_d must be positive")

    @classmethod
    def from_t1(cls, f01, d, t1_ns, a_d=None, ej_over_ec=DEFAULT_RATIO) -> "BudgetInputs":
        return cls(f01, d, f01 * t1_ns, a_d, ej_over_ec)

    @property
    def plasma_factor(self) -> float:
        """``(sqrt(8 r) - 1)^2``."""
        return (math.sqrt(8 * self.ej_over_ec) - 1) ** 2

    def _a(self) -> float:
        if self.a_d is None:
            raise ValueError(f"no coherent-error coefficient A for d={self.d}")
        return self.a_d


def incoherent_error(inputs: BudgetInputs, T):
    return inputs.f01 * inputs.d * np.asarray(T) / (2 * inputs.q_factor)


def coherent_error(inputs: BudgetInputs, T):
    T = np.asarray(T)
    return inputs.plasma_factor * inputs._a() / (inputs.f01**2 * T**2)


def total_error(inputs: BudgetInputs, T):
    return coherent_error(inputs, T) + incoherent_error(inputs, T)


def optimal_duration(inputs: BudgetInputs) -> float:
    """``T_opt = (1/f01) [4 (sqrt(8r) - 1)^2 Q A / d]^(1/3)``."""
    return (4 * inputs.plasma_factor * inputs.q_factor * inputs._a() / inputs.d) ** (1 / 3) / inputs.f01


def minimum_infidelity(inputs: BudgetInputs) -> float:
    """``E_min = 1.5 (A/2)^(1/3) (d/Q)^(2/3) (sqrt(8r) - 1)^(2/3)``."""
    return (
        1.5
        * (inputs._a() / 2) ** (1 / 3)
        * (inputs.d / inputs.q_factor) ** (2 / 3)
        * inputs.plasma_factor ** (1 / 3)
    )


def numerical_optimum(inputs: BudgetInputs) -> tuple[float, float]:
    """
    Minimize ``E_coh + E_inc`` numerically; returns ``(T, E)``.

    A log-spaced scan brackets the minimum, then ``dE/dT = 0`` is solved
    with Brent's method on a complex-step derivative, which is exact to
    rounding for this analytic ``E`` and so locates ``T`` to ~1e-15.
    """
    def deriv(t):
        h = 1e-20 * t
        return float(np.imag(total_error(inputs, complex(t, h))) / h)

    grid = np.logspace(-3, 9, 241)
    e = np.array([float(total_error(inputs, t)) for t in grid])
    k = int(np.argmin(e))
    if k == 0 or k == grid.size - 1:
        raise ArithmeticError("minimum lies outside the scanned duration range")
    t = brentq(deriv, grid[k - 1], grid[k + 1], xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return t, float(total_error(inputs, t))


def coherent_coefficient(c: float, f01: float, ej_over_ec: float) -> float:
    """Convert a fitted ``1 - F = c / T^2`` into ``A``."""
    return c * f01**2 / (math.sqrt(8 * ej_over_ec) - 1) ** 2


def extract_coefficient(spec: TransmonSpec, d: int, durations=None, rtol: float = 1e-10) -> dict:
    """
    Run an uncorrected duration sweep and return ``A`` with the fit quality.
    """
    durations = CALIBRATION_DURATIONS.get(d) if durations is None else durations
    if durations is None:
        raise ValueError(f"no default calibration durations for d={d}")
    rows = duration_sweep(spec, d, durations, rtol=rtol)
    c, r2 = fit_inverse_square([r["T"] for r in rows], [1 - r["fidelity"] for r in rows])
    f01 = float(diagonalize(spec, 2).transitions[0])
    return {
        "d": d,
        "A": coherent_coefficient(c, f01, spec.ej / spec.ec),
        "c": c,
        "r_squared": r2,
        "f01": f01,
        "ej_over_ec": spec.ej / spec.ec,
        "sweep": rows,
    }


def calibrate(spec: TransmonSpec, dims=(3, 5, 8), rtol: float = 1e-10) -> dict:
    """Calibration document with ``A(d)`` for each dimension."""
    out = {"version": 1, "device": {"ej": spec.ej, "ec": spec.ec, "ng": spec.ng}, "A": {}, "fits": {}}
    for d in dims:
        res = extract_coefficient(spec, d, rtol=rtol)
        out["A"][str(d)] = res["A"]
        out["fits"][str(d)] = {k: res[k] for k in ("c", "r_squared", "f01", "ej_over_ec")}
    return out


def load_calibration(path=None) -> dict:
    """``{d: A}`` from a calibration file (the packaged one by default)."""
    if path is None:
        text = resources.files("quditkit").joinpath("data/budget_calibration.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    doc = json.loads(text)
    return {int(k): float(v) for k, v in doc["A"].items()}


def budget_curve_csv(f01: float, q_values, a_by_d: dict, ej_over_ec=DEFAULT_RATIO) -> str:
    """CSV rows ``Q, d, T_opt, E_min`` for every ``Q`` and calibrated ``d``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Q", "d", "T_opt", "E_min"])
    for q in q_values:
        for d in sorted(a_by_d):
            inp = BudgetInputs(f01, d, float(q), a_by_d[d], ej_over_ec)
            w.writerow([repr(float(q)), d, repr(optimal_duration(inp)), repr(minimum_infidelity(inp))])
    return buf.getvalue()
