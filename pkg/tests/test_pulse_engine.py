import json

import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp

from quditkit.gates import displacement, snap
from quditkit.pulse_engine import (
    CorrectionSet,
    IntegrationError,
    MultiToneDrive,
    PulseEnvelope,
    append_job_log,
    build_drive,
    fit_inverse_square,
    frame_transform,
    goat_objective,
    optimize_phase_corrections,
    phase_fidelity,
    propagate,
)
from quditkit.transmon_model import REFERENCE_DEVICE, TransmonSpec, angular_frequencies, diagonalize

SPEC = TransmonSpec(REFERENCE_DEVICE["ej"], REFERENCE_DEVICE["ec"])


@pytest.fixture(scope="module")
def eig3():
    return diagonalize(SPEC, 6)


def test_envelope_area_and_derivative():
    env = PulseEnvelope(40.0, theta=1.3, ramp_fraction=0.2)
    area, _ = quad(env, 0, 40.0, points=[8.0, 32.0], epsabs=1e-13)
    assert area == pytest.approx(1.3, rel=1e-10)
    assert env.area() == pytest.approx(1.3)
    t = np.array([3.0, 20.0, 37.0])
    h = 1e-6
    fd = (env(t + h) - env(t - h)) / (2 * h)
    assert np.allclose(env.derivative(t), fd, atol=1e-7)
    assert env(0.0) == 0 and env(40.0) == 0


def test_envelope_validation():
    with pytest.raises(ValueError):
        PulseEnvelope(-1.0)
    with pytest.raises(ValueError):
        PulseEnvelope(10.0, ramp_fraction=0.7)


def test_drive_tones(eig3):
    drive = build_drive(eig3, 3)
    assert len(drive.tones) == 2
    assert drive.tones[0].frequency == pytest.approx(eig3.transitions[0])
    amps, _, wk, _ = drive.with_corrections([1e-3, 0.0], [0.5, 0.0]).arrays()
    assert wk[0] == pytest.approx(2 * np.pi * (eig3.transitions[0] + 1e-3))
    with pytest.raises(ValueError):
        MultiToneDrive(3, drive.tones[:1])
    with pytest.raises(ValueError):
        drive.with_corrections([0.0])


def _signal(t, env, drive, ec):
    # plain-Python copy of the drive waveform for the oracle integration
    amps, phases, wk, drag = drive.arrays()
    a = float(env(t))
    q = float(env.derivative(t)) / (2 * np.pi * ec)
    return float(np.sum(amps * (a * np.cos(wk * t + phases) + drag * q * np.sin(wk * t + phases))))


def test_propagator_matches_scipy_lab_frame(eig3):
    drive = build_drive(eig3, 3).with_corrections([2e-3, -1e-3], [0.3, -0.2])
    env = PulseEnvelope(12.0, np.pi / 2)
    w = angular_frequencies(eig3)
    n = eig3.charge_matrix
    dim = w.size

    def rhs(t, y):
        u = y.reshape(dim, 3)
        h = np.diag(w) + _signal(t, env, drive, SPEC.ec) * n
        return (-1j * h @ u).ravel()

    y0 = np.eye(dim, 3, dtype=complex).ravel()
    sol = solve_ivp(rhs, (0, 12.0), y0, method="DOP853", rtol=1e-11, atol=1e-12)
    ref = sol.y[:, -1].reshape(dim, 3)
    ours = propagate(eig3, drive, env, rtol=1e-11)
    assert np.max(np.abs(ours.u_lab - ref)) < 1e-7


def test_frames_agree(eig3):
    drive = build_drive(eig3, 3)
    env = PulseEnvelope(20.0)
    rot = propagate(eig3, drive, env)
    lab = propagate(eig3, drive, env, frame="lab")
    assert np.max(np.abs(rot.u_frame - lab.u_frame)) < 1e-6
    block, leak = frame_transform(rot.u_lab, eig3, 20.0)
    assert np.allclose(block, rot.u_frame[:3], atol=1e-12)
    assert leak == pytest.approx(rot.leakage, abs=1e-12)


def test_propagator_is_unitary_with_guard(eig3):
    res = propagate(eig3, build_drive(eig3, 3), PulseEnvelope(30.0))
    assert np.allclose(res.u_frame.conj().T @ res.u_frame, np.eye(3), atol=1e-8)


def test_slow_pulse_error_falls_as_inverse_square(eig3):
    # off-resonant errors scale with the squared drive amplitude, i.e. 1/T^2
    target = displacement(3, np.pi / 2)
    infid = []
    for T in (160.0, 320.0, 640.0):
        res = propagate(eig3, build_drive(eig3, 3), PulseEnvelope(T))
        infid.append(1 - optimize_phase_corrections(res.u_frame, target)[1])
    assert 3.0 < infid[0] / infid[1] < 5.0
    assert 3.0 < infid[1] / infid[2] < 5.0


def test_phase_corrections_never_hurt(eig3):
    target = displacement(3, np.pi / 2)
    res = propagate(eig3, build_drive(eig3, 3), PulseEnvelope(30.0))
    f0 = phase_fidelity(res.u_frame, target, np.zeros(3), np.zeros(3))
    cs, f = optimize_phase_corrections(res.u_frame, target)
    assert f >= f0
    assert phase_fidelity(res.u_frame, target, cs.pre_snap, cs.post_snap) == pytest.approx(f, abs=1e-12)


def test_phase_corrections_recover_known_snaps(rng):
    d = 4
    target = displacement(d, 0.9)
    pre, post = rng.uniform(0, 2 * np.pi, (2, d))
    u = snap(-post) @ target @ snap(-pre)
    _, f = optimize_phase_corrections(u, target, starts=16)
    assert f == pytest.approx(1.0, abs=1e-10)


def test_goat_gradient_matches_finite_differences(eig3, rng):
    drive = build_drive(eig3, 3)
    env = PulseEnvelope(40.0)
    target = displacement(3, np.pi / 2)
    x = np.concatenate([rng.uniform(-0.3, 0.3, 6), rng.uniform(-2e-3, 2e-3, 2), rng.uniform(-0.5, 0.5, 2)])
    _, grad, _ = goat_objective(eig3, drive, env, target, x, rtol=1e-12)
    fd = np.zeros_like(x)
    for i in range(x.size):
        h = 1e-6 if 6 <= i < 8 else 1e-5
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fp = goat_objective(eig3, drive, env, target, xp, rtol=1e-12)[0]
        fm = goat_objective(eig3, drive, env, target, xm, rtol=1e-12)[0]
        fd[i] = (fp - fm) / (2 * h)
    assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) < 1e-5


def test_integration_failure_is_reported(eig3):
    with pytest.raises(IntegrationError):
        propagate(eig3, build_drive(eig3, 3), PulseEnvelope(40.0), max_steps=3)


def test_unknown_derivative_family(eig3):
    with pytest.raises(ValueError):
        propagate(eig3, build_drive(eig3, 3), PulseEnvelope(40.0), derivatives=("amplitude",))


def test_inverse_square_fit():
    t = np.array([40.0, 60.0, 80.0, 120.0])
    c, r2 = fit_inverse_square(t, 7.0 / t**2)
    assert c == pytest.approx(7.0)
    assert r2 == pytest.approx(1.0)


def test_correction_set_and_job_log(tmp_path):
    cs = CorrectionSet.zeros(3)
    assert cs.to_dict()["detunings"] == [0.0, 0.0]
    with pytest.raises(ValueError):
        CorrectionSet(np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(2))
    log = tmp_path / "jobs.jsonl"
    append_job_log(log, {"b": np.float64(1.5), "a": np.arange(2)})
    append_job_log(log, {"c": 1})
    lines = log.read_text().splitlines()
    assert json.loads(lines[0]) == {"a": [0, 1], "b": 1.5}
    assert len(lines) == 2
