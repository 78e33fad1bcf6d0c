from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import norm

from quditkit.readout_sim import (
    AssignmentMatrix,
    IqDataset,
    ResonatorModel,
    assignment_matrix,
    choose_tones,
    classify,
    correct_populations,
    corrected_standard_errors,
    default_model,
    dispersive_shifts,
    fit_gmm,
    gmm_assignment,
    ideal_assignment_fidelity,
    mahalanobis_separation,
    mean_response,
    simulate_calibration,
    simulate_iq,
    tune_noise,
)


@pytest.fixture(scope="module")
def model8():
    return default_model(8)


def test_two_level_shift_matches_jaynes_cummings():
    # ground state pull of a qubit: chi_0 = g^2 / (f01 - f_r)
    g, f01, fr = 0.05, 5.0, 6.0
    chi = dispersive_shifts([f01, 4.8], fr, g)
    assert chi[0] == pytest.approx(1e3 * g**2 / (f01 - fr))
    assert chi[1] == pytest.approx(1e3 * g**2 * (2 / (4.8 - fr) - 1 / (f01 - fr)))


def test_default_model_shape(model8):
    assert model8.d == 8
    assert np.all(np.diff(model8.chi) > 0)  # pulls shrink monotonically up the ladder
    sep = mahalanobis_separation(model8)
    assert np.allclose(sep, sep.T) and np.all(np.diag(sep) == 0)


def test_model_validation():
    with pytest.raises(ValueError):
        ResonatorModel(6.0, 0.25, (0.1, 0.2), (6.0, 6.1))
    with pytest.raises(ValueError):
        ResonatorModel(6.0, -1.0, (0.1, 0.2), (6.0, 6.1, 6.2))


def test_lorentzian_response_on_resonance():
    m = ResonatorModel(6.0, 0.5, (0.0,), (6.0, 6.00025, 6.0), gain=2.0)
    mu = mean_response(m)[0]
    assert mu[0] == pytest.approx(2.0) and mu[1] == pytest.approx(0.0)
    # half a linewidth off resonance: 1 / (1 + i)
    assert mu[2] + 1j * mu[3] == pytest.approx(2.0 / (1 + 1j))


def test_choose_tones_beats_a_naive_triple(model8):
    fn = model8.state_frequencies

    def min_sep(tones):
        return np.min(mahalanobis_separation(replace(model8, tones=tones, sigma=1.0))[np.triu_indices(8, 1)])

    naive = (fn.min(), fn.mean(), fn.max())
    assert min_sep(choose_tones(model8.f_r, model8.kappa, model8.chi)) >= min_sep(naive)


def test_nearest_mean_matches_gaussian_error_function():
    # two states along one axis: error probability Phi(-Delta / 2 sigma)
    m = ResonatorModel(6.0, 0.25, (0.0, 0.25), (6.0, 6.0, 6.0), sigma=0.3)
    delta = np.linalg.norm(np.diff(mean_response(m), axis=0))
    expected = 1 - norm.cdf(-delta / (2 * m.sigma))
    assert ideal_assignment_fidelity(m, shots=200_000, seed=1) == pytest.approx(expected, abs=3e-3)


def test_simulation_is_seeded(model8):
    a = simulate_calibration(model8, 20, 3)
    b = simulate_calibration(model8, 20, 3)
    assert np.array_equal(a.samples, b.samples)
    assert np.bincount(a.labels).tolist() == [20] * 8
    with pytest.raises(ValueError):
        simulate_iq(model8, 9, 10)


def test_iq_csv_round_trip(model8):
    ds = simulate_calibration(model8, 5, 0)
    back = IqDataset.from_csv(ds.to_csv())
    assert np.array_equal(back.samples, ds.samples) and np.array_equal(back.labels, ds.labels)
    with pytest.raises(ValueError):
        IqDataset(np.zeros((3, 5)), np.zeros(3))


def test_gmm_separable_clusters_are_perfect():
    m = ResonatorModel(6.41, 0.25, (-0.5, -0.3, -0.1), (6.4095, 6.4097, 6.4099), sigma=0.02)
    clf = fit_gmm(simulate_calibration(m, 400, 0), seed=0)
    test = simulate_calibration(m, 400, 1)
    assert np.mean(classify(clf, test.samples) == test.labels) > 0.999
    assert clf.converged


def test_gmm_needs_enough_samples(model8):
    with pytest.raises(ValueError):
        fit_gmm(simulate_calibration(model8, 10, 0))


def test_assignment_matrix_columns(model8):
    tuned, _ = tune_noise(model8)
    clf, a = gmm_assignment(tuned, 2000, 0)
    assert np.allclose(a.matrix.sum(axis=0), 1)
    assert abs(a.average_fidelity - 0.883) < 0.01
    assert np.array_equal(assignment_matrix(clf, simulate_calibration(tuned, 2000, np.random.SeedSequence(0).spawn(3)[2])).matrix, a.matrix)
    with pytest.raises(ValueError):
        AssignmentMatrix(np.ones((2, 2)))


def test_tune_noise_hits_target(model8):
    tuned, f = tune_noise(model8, target=0.9)
    assert abs(f - 0.9) < 1e-3
    assert ideal_assignment_fidelity(replace(tuned, sigma=2 * tuned.sigma)) < f


def test_population_correction_exact_inversion(rng):
    a = AssignmentMatrix(np.array([[0.9, 0.1, 0.0], [0.1, 0.8, 0.15], [0.0, 0.1, 0.85]]))
    p = rng.dirichlet(np.ones(3))
    assert np.allclose(correct_populations(a.matrix @ p, a), p, atol=1e-8)
    # negative raw inversion is projected onto the simplex
    out = correct_populations(np.array([0.0, 0.05, 0.95]), a)
    assert np.all(out >= 0) and out.sum() == pytest.approx(1.0)
    with pytest.raises(np.linalg.LinAlgError):
        correct_populations([0.5, 0.5], AssignmentMatrix(np.array([[0.5, 0.5], [0.5, 0.5]])))


def test_standard_errors_match_monte_carlo(rng):
    a = AssignmentMatrix(np.array([[0.9, 0.2], [0.1, 0.8]]))
    p = np.array([0.3, 0.7])
    shots = 2000
    est = [np.linalg.solve(a.matrix, rng.multinomial(shots, a.matrix @ p) / shots) for _ in range(4000)]
    assert np.allclose(np.std(est, axis=0), corrected_standard_errors(p, a, shots), rtol=0.05)
