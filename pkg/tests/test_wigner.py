import numpy as np
import pytest
from scipy.special import sph_harm_y
from sympy import Rational
from sympy.physics.quantum.cg import CG

from quditkit.gates import basis_state, displacement
from quditkit.wigner import (
    WignerScan,
    build_parity,
    default_grid,
    kernel,
    make_grid,
    reconstruct_density,
    traciality_sum,
    validate_density,
    wigner_at,
    wigner_scan,
)

from conftest import random_density


def _parity_oracle(d):
    # direct sympy evaluation of 2 Pi_mm = sum_l (2l+1)/(2j+1) <j m; l 0|j m>
    tj = d - 1
    out = []
    for n in range(d):
        tm = tj - 2 * n
        s = sum(
            Rational(2 * l + 1, tj + 1) * CG(Rational(tj, 2), Rational(tm, 2), l, 0, Rational(tj, 2), Rational(tm, 2)).doit()
            for l in range(tj + 1)
        )
        out.append(float(s) / 2)
    return np.array(out)


def test_qubit_parity_closed_form():
    assert np.allclose(build_parity(2).diagonal, [(1 + np.sqrt(3)) / 4, (1 - np.sqrt(3)) / 4], atol=1e-14)


@pytest.mark.parametrize("d", [3, 4, 6, 8])
def test_parity_matches_oracle(d):
    assert np.allclose(build_parity(d).diagonal, _parity_oracle(d), atol=1e-12)


@pytest.mark.parametrize("d", [2, 3, 5, 8])
def test_kernel_unit_trace_and_hermitian(d, rng):
    k = kernel(d, *rng.uniform(0, np.pi, 2))
    assert np.trace(k).real == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(k, k.conj().T, atol=1e-13)


def test_grid_integrates_spherical_harmonics():
    g = make_grid(10, 20)
    assert np.sum(g.weights) == pytest.approx(4 * np.pi)
    for l in range(8):
        for m in range(-l, l + 1):
            val = np.sum(g.weights * sph_harm_y(l, m, g.theta, g.phi))
            assert abs(val - (np.sqrt(4 * np.pi) if l == 0 else 0)) < 1e-12


@pytest.mark.parametrize("d", [2, 3, 5, 8])
def test_traciality(d, rng):
    g = default_grid(d)
    a = random_density(d, rng)
    b = random_density(d, rng)
    wa = wigner_scan(a, g).w
    wb = wigner_scan(b, g).w
    assert traciality_sum(wa, wb, g, d) == pytest.approx(np.trace(a @ b).real, abs=1e-12)
    # normalization: d/(4 pi) * integral of W is the trace
    assert d / (4 * np.pi) * np.sum(g.weights * wa) == pytest.approx(1.0, abs=1e-12)


def test_coherent_state_peak():
    d, theta, phi = 6, 1.0, 2.2
    psi = displacement(d, theta, phi) @ basis_state(d)
    rho = np.outer(psi, psi.conj())
    peak = wigner_at(rho, theta, phi)
    assert peak == pytest.approx(2 * build_parity(d).diagonal[0], abs=1e-12)
    assert peak >= wigner_scan(rho, default_grid(d)).w.max() - 1e-12


@pytest.mark.parametrize("d", [3, 5, 8])
def test_round_trip(d, rng):
    rho = random_density(d, rng)
    rec = reconstruct_density(wigner_scan(rho, default_grid(d)))
    assert 0.5 * np.sum(np.abs(np.linalg.eigvalsh(rec.rho - rho))) < 1e-10
    assert rec.psd_distance < 1e-10
    assert rec.rank == d * d - 1


def test_csv_round_trip(rng):
    scan = wigner_scan(random_density(3, rng), make_grid(6, 6))
    back = WignerScan.from_csv(scan.to_csv(), 3)
    assert np.array_equal(back.w, scan.w) and np.array_equal(back.theta, scan.theta)
    with pytest.raises(ValueError):
        WignerScan.from_csv("a,b\n1,2\n", 3)


def test_sparse_grid_is_rejected(rng):
    scan = wigner_scan(random_density(4, rng), make_grid(2, 2))
    with pytest.raises(np.linalg.LinAlgError):
        reconstruct_density(scan)


def test_validate_density_errors():
    with pytest.raises(ValueError):
        validate_density(np.eye(3))
    with pytest.raises(ValueError):
        validate_density(np.diag([1.5, -0.5]))
    with pytest.raises(ValueError):
        validate_density(np.array([[0.5, 0.1], [0.3, 0.5]]))
