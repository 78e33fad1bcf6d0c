import numpy as np
import pytest

from quditkit.decomposer import (
    GENERAL,
    PI_HALF,
    SnapDisplacementProgram,
    decompose,
    haar_random_unitary,
    minimal_depth,
    parameter_count,
    reconstruct,
    snap_generator_commutator,
)
from quditkit.gates import displacement, is_unitary, snap, unitary_fidelity


def _explicit_product(program):
    # independent oracle: generic displacement() and explicit matrix products
    u = snap(program.snaps[0])
    for theta, phases in zip(program.thetas, program.snaps[1:]):
        u = snap(phases) @ displacement(program.d, theta, 0.0) @ u
    return u


def test_reconstruct_matches_explicit_product(rng):
    d, depth = 5, 4
    prog = SnapDisplacementProgram(
        d, list(rng.uniform(-np.pi, np.pi, depth)), [list(rng.uniform(-np.pi, np.pi, d)) for _ in range(depth + 1)]
    )
    assert np.allclose(reconstruct(prog), _explicit_product(prog), atol=1e-12)


def test_program_validation():
    with pytest.raises(ValueError):
        SnapDisplacementProgram(3, [0.1], [[0, 0, 0]])
    with pytest.raises(ValueError):
        SnapDisplacementProgram(3, [0.3], [[0, 0, 0], [0, 0, 0]], PI_HALF)


def test_program_json_round_trip(rng):
    prog = SnapDisplacementProgram(3, [0.2, 1.1], [list(rng.uniform(size=3)) for _ in range(3)])
    back = SnapDisplacementProgram.from_json(prog.to_json())
    assert np.allclose(reconstruct(back), reconstruct(prog))
    assert back.depth == 2 and back.n_pulses == 2


def test_identity_program():
    assert np.allclose(reconstruct(SnapDisplacementProgram.identity(4)), np.eye(4))


def test_haar_unitary_is_seeded_and_unitary():
    a = haar_random_unitary(6, 11)
    assert is_unitary(a, 1e-12)
    assert np.array_equal(a, haar_random_unitary(6, 11))
    assert not np.array_equal(a, haar_random_unitary(6, 12))


def test_haar_spectrum_statistics():
    # eigenphase density of Haar unitaries is uniform: mean of e^{i k phi} vanishes
    phases = np.concatenate([np.angle(np.linalg.eigvals(haar_random_unitary(4, s))) for s in range(400)])
    assert abs(np.mean(np.exp(1j * phases))) < 0.05
    assert abs(np.mean(np.exp(2j * phases))) < 0.05


def test_parameter_counting():
    assert parameter_count(4, 3, GENERAL) == 3 + 4 * 3
    assert parameter_count(4, 3, PI_HALF) == 4 * 3
    for d in range(2, 9):
        assert parameter_count(d, minimal_depth(d)) >= d * d - 1
        assert parameter_count(d, minimal_depth(d) - 1) < d * d - 1


def test_commutator_couples_neighbours_only():
    d, n = 6, 2
    g = snap_generator_commutator(d, n)
    mask = np.zeros((d, d), bool)
    mask[n, n + 1] = mask[n + 1, n] = True
    assert np.allclose(g[~mask], 0)
    assert np.allclose(g, g.conj().T)


def test_recovers_known_program(rng):
    d, depth = 4, 4
    prog = SnapDisplacementProgram(
        d, list(rng.uniform(0.2, 2.5, depth)), [list(rng.uniform(-np.pi, np.pi, d)) for _ in range(depth + 1)]
    )
    target = reconstruct(prog)
    res = decompose(target, depth, restarts=20, seed=3)
    assert res.infidelity < 1e-8
    assert 1 - unitary_fidelity(reconstruct(res.program), target) < 1e-8


def test_decompose_is_deterministic():
    target = haar_random_unitary(3, 5)
    a = decompose(target, 3, restarts=4, seed=9, stop_early=False)
    b = decompose(target, 3, restarts=4, seed=9, stop_early=False)
    assert a.infidelity == b.infidelity
    assert a.program.to_dict() == b.program.to_dict()
    assert len(a.history) == 4


def test_pi_half_mode_keeps_fixed_angles():
    target = haar_random_unitary(3, 2)
    res = decompose(target, 4, mode=PI_HALF, restarts=10, seed=0)
    assert np.allclose(res.program.thetas, np.pi / 2)
    assert res.infidelity < 1e-6


def test_too_shallow_cannot_reach_generic_target():
    res = decompose(haar_random_unitary(4, 1), 1, restarts=5, seed=0)
    assert res.infidelity > 1e-3
