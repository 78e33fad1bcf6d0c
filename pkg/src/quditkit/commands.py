"""
Subcommand implementations for the command-line interface.

Each ``cmd_*`` function takes a validated config and a seed and returns
``{filename: text}``; nothing is written here, so a failure leaves no
partial outputs.
"""

from __future__ import annotations

import csv
import io
import json
import logging

import numpy as np

from .cli import ConfigError

log = logging.getLogger("quditkit")


# --------------------------------------------------------------------------
# helpers


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, default=_plain) + "\n"


def _plain(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialize {type(x)}")


def _device(cfg):
    from .transmon_model import REFERENCE_DEVICE, load_spec

    path = cfg.get("device_spec_path")
    try:
        return load_spec(path if path else REFERENCE_DEVICE)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad device spec: {exc}") from exc


def _derived_seed(*entropy) -> int:
    """Deterministic 32-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def _manifest(entries) -> str:
    return _json({"plots": entries})


# --------------------------------------------------------------------------
# subcommands; each returns {filename: text}


def cmd_displace_scan(cfg, seed):
    from .gates import basis_state, displacement, expectation_jz

    d = cfg["d"]
    phi = cfg.get("phi", 0.0)
    thetas = np.linspace(0, cfg.get("theta_max", 2 * np.pi), cfg.get("points", 101))
    rows = []
    for th in thetas:
        psi = displacement(d, th, phi) @ basis_state(d)
        rows.append([th, *np.abs(psi) ** 2, expectation_jz(psi)])
    header = ["theta"] + [f"p{n}" for n in range(d)] + ["jz"]
    return {
        "displace_scan.csv": _csv(header, rows),
        "plot_manifest.json": _manifest([{
            "kind": "populations_vs_area", "data": "displace_scan.csv",
            "x": "theta", "y": [f"p{n}" for n in range(d)],
        }]),
    }


def _wigner_state(cfg, seed):
    from .gates import basis_state, displacement
    from .rb_engine import build_cat_encoding

    d = cfg["d"]
    kind = cfg.get("state", "coherent")
    if kind == "fock":
        lvl = cfg.get("level", 0)
        if lvl >= d:
            raise ConfigError("level must be below d")
        psi = basis_state(d, lvl)
    elif kind == "coherent":
        psi = displacement(d, cfg.get("theta", np.pi / 2), cfg.get("phi", 0.0)) @ basis_state(d)
    elif kind == "cat":
        psi = build_cat_encoding(d).logical0
    elif kind == "superposition":
        lvl = cfg.get("level", 1)
        if not 0 < lvl < d:
            raise ConfigError("superposition level must lie in 1..d-1")
        psi = (basis_state(d, 0) + basis_state(d, lvl)) / np.sqrt(2)
    else:
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        rho = g @ g.conj().T
        return rho / np.trace(rho).real
    return np.outer(psi, psi.conj())


def cmd_wigner_scan(cfg, seed):
    from .wigner import make_grid, reconstruct_density, wigner_scan
    from .gates import state_fidelity

    d = cfg["d"]
    rho = _wigner_state(cfg, seed)
    grid = make_grid(cfg.get("n_theta", 4 * d), cfg.get("n_phi", 4 * d))
    scan = wigner_scan(rho, grid)
    out = {"wigner.csv": scan.to_csv()}
    if cfg.get("reconstruct", True):
        rec = reconstruct_density(scan)
        out["reconstruction.json"] = _json({
            "d": d,
            "rho_real": rec.rho.real,
            "rho_imag": rec.rho.imag,
            "residual": rec.residual,
            "psd_distance": rec.psd_distance,
            "rank": rec.rank,
            "trace_distance": 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(rec.rho - rho)))),
            "fidelity": state_fidelity(rho, rec.rho),
        })
    out["plot_manifest.json"] = _manifest([{
        "kind": "polar_projection", "data": "wigner.csv", "radius": "theta", "angle": "phi", "value": "w",
    }])
    return out


def cmd_decompose(cfg, seed):
    from .decomposer import decompose, haar_random_unitary

    d = cfg["d"]
    depth = cfg.get("depth", d)
    mode = cfg.get("mode", "general")
    n = cfg.get("n_targets", 100)
    restarts = cfg.get("restarts", 20)
    rows, programs = [], []
    for i in range(n):
        target = haar_random_unitary(d, np.random.SeedSequence([seed, d, i]))
        res = decompose(target, depth, mode=mode, restarts=restarts, seed=_derived_seed(seed, d, i))
        rows.append([i, res.infidelity, res.restart, res.restarts_run])
        programs.append(res.program.to_dict())
        log.info("target %d infidelity %.3e", i, res.infidelity)
    inf = np.array([r[1] for r in rows])
    summary = {
        "d": d, "depth": depth, "mode": mode, "n_targets": n, "restarts": restarts,
        "median_infidelity": float(np.median(inf)),
        "max_infidelity": float(np.max(inf)),
        "fraction_below_1e-6": float(np.mean(inf < 1e-6)),
    }
    return {
        "decompose.csv": _csv(["target", "infidelity", "best_restart", "restarts_run"], rows),
        "programs.json": _json(programs),
        "summary.json": _json(summary),
        "plot_manifest.json": _manifest([{
            "kind": "infidelity_scatter", "data": "decompose.csv", "x": "target", "y": "infidelity",
            "log_y": True,
        }]),
    }


def cmd_pulse_optimize(cfg, seed):
    from .gates import displacement
    from .pulse_engine import (
        GUARD_LEVELS, PulseEnvelope, build_drive, goat_optimize, optimize_phase_corrections,
        phase_fidelity, propagate,
    )
    from .transmon_model import diagonalize

    spec = _device(cfg)
    d = cfg["d"]
    T = float(cfg["T_ns"])
    theta = cfg.get("theta", np.pi / 2)
    corr = cfg.get("corrections", ["phase", "detuning", "drag"])
    rtol = cfg.get("rtol", 1e-10)
    max_iter = cfg.get("max_iter", 30)
    eig = diagonalize(spec, d + GUARD_LEVELS)
    drive = build_drive(eig, d)
    env = PulseEnvelope(T, theta)
    target = displacement(d, theta, 0.0)
    res = propagate(eig, drive, env, rtol=rtol)
    records = [{"stage": "none", "fidelity": phase_fidelity(res.u_frame, target, np.zeros(d), np.zeros(d)),
                "leakage": res.leakage}]
    # pulse-parameter corrections are always seeded from the phase optimum
    cs, f = optimize_phase_corrections(res.u_frame, target, seed=seed)
    records.append({"stage": "phase", "fidelity": f, "corrections": cs.to_dict()})
    free = tuple(c for c in ("detuning", "drag") if c in corr)
    if "detuning" in free:
        cs, f, info = goat_optimize(eig, drive, env, target, free_params=("detuning",), initial=cs,
                                    rtol=rtol, max_iter=max_iter)
        records.append({"stage": "phase+detuning", "fidelity": f, "corrections": cs.to_dict(),
                        "grad_norm": info["grad_norm"]})
    if "drag" in free:
        cs, f, info = goat_optimize(eig, drive, env, target, free_params=free, initial=cs,
                                    rtol=rtol, max_iter=max_iter)
        records.append({"stage": "+".join(("phase",) + free), "fidelity": f, "corrections": cs.to_dict(),
                        "grad_norm": info["grad_norm"]})
    job = {"device_spec": {"ej": spec.ej, "ec": spec.ec, "ng": spec.ng}, "d": d, "T_ns": T,
           "theta": theta, "corrections": corr, "seed": seed}
    lines = "".join(json.dumps({**job, **r}, sort_keys=True, default=_plain) + "\n" for r in records)
    return {
        "pulse_jobs.jsonl": lines,
        "plot_manifest.json": _manifest([{
            "kind": "fidelity_by_correction", "data": "pulse_jobs.jsonl", "x": "stage", "y": "fidelity",
        }]),
    }


def cmd_rb(cfg, seed):
    from .rb_engine import (
        DEFAULT_LENGTHS, DEFAULT_SEQUENCES, average_gate_fidelity, build_cat_encoding,
        perturbed_displacement, random_cptp_map, run_rb,
    )
    from .gates import displacement_y

    d, q = cfg["d"], float(cfg["q"])
    seeds = cfg.get("seeds", [seed])
    lengths = cfg.get("lengths", list(DEFAULT_LENGTHS))
    nseq = cfg.get("n_sequences", DEFAULT_SEQUENCES)
    enc = build_cat_encoding(d)
    lines, rows = [], []
    for s in seeds:
        amap = random_cptp_map(d, seed=np.random.SeedSequence([d, s]))
        ch = perturbed_displacement(d, q, amap)
        res = run_rb(enc, ch, lengths, nseq, seed=np.random.SeedSequence([d, s, 1]))
        f_d = average_gate_fidelity(ch, displacement_y(d, np.pi / 2))
        lines.append(json.dumps({"d": d, "q": q, "seed": s, "F_D": f_d, **res.to_dict()}, sort_keys=True) + "\n")
        rows += [[s, m, v, e] for m, v, e in zip(res.lengths, res.survival, res.survival_std)]
    return {
        "rb.jsonl": "".join(lines),
        "rb.csv": _csv(["seed", "length", "survival", "std"], rows),
        "plot_manifest.json": _manifest([{
            "kind": "rb_decay", "data": "rb.csv", "x": "length", "y": "survival", "group": "seed",
        }]),
    }


def cmd_rb_validate(cfg, seed):
    from .rb_engine import DEFAULT_LENGTHS, DEFAULT_SEQUENCES, N_PULSES_STATED, validate_relation

    dims = cfg.get("dims", [3, 5, 8])
    q_grid = cfg.get("q_grid", [0.0, 0.02, 0.04, 0.06, 0.08, 0.1])
    seeds = cfg.get("seeds", list(range(10)))
    lengths = cfg.get("lengths", list(DEFAULT_LENGTHS))
    nseq = cfg.get("n_sequences", DEFAULT_SEQUENCES)
    rows = []
    for d in dims:
        rows += validate_relation(d, q_grid, [seed * 1000 + s for s in seeds], lengths=lengths, n_sequences=nseq)
    keys = list(rows[0])
    summary = {
        "N_own": rows[0]["N_own"],
        "N_stated": N_PULSES_STATED,
        "max_abs_dev_own": max(abs(r["dev_own"]) for r in rows),
        "max_abs_dev_stated": max(abs(r["dev_stated"]) for r in rows),
        "max_abs_dev_qudit_conversion": max(abs(r["dev_qudit"]) for r in rows),
    }
    return {
        "rb_validate.csv": _csv(keys, [[r[k] for k in keys] for r in rows]),
        "summary.json": _json(summary),
        "plot_manifest.json": _manifest([{
            "kind": "relation_cloud", "data": "rb_validate.csv", "x": "F_RB", "y": "F_D", "group": "d",
            "model": "F_D = F_RB^(1/N)",
        }]),
    }


def cmd_readout(cfg, seed):
    from dataclasses import replace

    from .readout_sim import (
        correct_populations, default_model, gmm_assignment, simulate_calibration, tune_noise,
    )

    d = cfg.get("d", 8)
    shots = cfg.get("shots", 5000)
    model = default_model(d, kappa=cfg.get("kappa_mhz", 0.25))
    if "sigma" in cfg:
        model = replace(model, sigma=cfg["sigma"])
    else:
        model, _ = tune_noise(model, cfg.get("target_fidelity", 0.883), seed=seed)
    clf, a = gmm_assignment(model, shots, seed)
    rng = np.random.default_rng(seed)
    p_true = rng.dirichlet(np.ones(d))
    raw = rng.multinomial(shots, a.matrix @ p_true) / shots
    p_hat = correct_populations(raw, a)
    iq = simulate_calibration(model, min(shots, 500), np.random.SeedSequence([seed, 9]))
    return {
        "assignment.json": _json({
            "matrix": a.matrix, "average_fidelity": a.average_fidelity,
            "condition_number": a.condition_number, "sigma": model.sigma, "tones_ghz": model.tones,
            "chi_mhz": model.chi, "gmm_converged": clf.converged,
        }),
        "population_correction.json": _json({"p_true": p_true, "raw": raw, "corrected": p_hat}),
        "iq.csv": iq.to_csv(),
        "plot_manifest.json": _manifest([
            {"kind": "iq_scatter", "data": "iq.csv", "x": "I1", "y": "Q1", "group": "label"},
            {"kind": "confusion_matrix", "data": "assignment.json", "field": "matrix"},
        ]),
    }


def cmd_budget(cfg, seed):
    from .budget import BudgetInputs, budget_curve_csv, load_calibration, minimum_infidelity, optimal_duration

    try:
        a_by_d = load_calibration(cfg.get("calibration_path"))
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad calibration file: {exc}") from exc
    f01 = cfg.get("f01", 4.896)
    t1 = cfg.get("t1_us", 46.0) * 1e3 * cfg.get("q_scale", 10.0)
    ratio = cfg.get("ej_over_ec", 270.0)
    pred = {}
    for d, a in sorted(a_by_d.items()):
        inp = BudgetInputs.from_t1(f01, d, t1, a, ratio)
        pred[str(d)] = {"T_opt_ns": optimal_duration(inp), "E_min": minimum_infidelity(inp),
                        "F_pred": 1 - minimum_infidelity(inp), "A": a}
    q_values = cfg.get("q_values", list(np.logspace(5, 7, 21)))
    return {
        "budget.csv": budget_curve_csv(f01, q_values, a_by_d, ratio),
        "prediction.json": _json({"f01": f01, "Q": f01 * t1, "by_d": pred}),
        "plot_manifest.json": _manifest([{
            "kind": "budget_curves", "data": "budget.csv", "x": "Q", "y": "E_min", "group": "d", "log_x": True,
        }]),
    }


def cmd_calibrate_budget(cfg, seed):
    from .budget import calibrate

    spec = _device(cfg)
    doc = calibrate(spec, tuple(cfg.get("dims", [3, 5, 8])), rtol=cfg.get("rtol", 1e-10))
    return {
        "budget_calibration.json": _json(doc),
        "plot_manifest.json": _manifest([{
            "kind": "coherent_error_fit", "data": "budget_calibration.json", "field": "fits",
        }]),
    }


COMMANDS = {
    "displace-scan": cmd_displace_scan,
    "wigner-scan": cmd_wigner_scan,
    "decompose": cmd_decompose,
    "pulse-optimize": cmd_pulse_optimize,
    "rb": cmd_rb,
    "rb-validate": cmd_rb_validate,
    "readout": cmd_readout,
    "budget": cmd_budget,
    "calibrate-budget": cmd_calibrate_budget,
}
