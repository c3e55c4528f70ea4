import csv

import numpy as np
import pytest

from bohmlab.dirac import SIGMA_X, DiracField, Foliation, current_density
from bohmlab.grid import GridSpec
from bohmlab.multitime import MultiTimeWF
from bohmlab.relativistic import (
    bell_pair_state,
    bmf_velocities,
    integrate_bmf,
    leaf_density,
    leaf_matrices,
    leaf_timeline,
    pair_currents,
    run_bmf_equivariance,
    write_worldlines_csv,
)
from bohmlab.rng import RngStream

SPEC = GridSpec.centered(1, 64, 24.0)


def spinor_packet(x, x0, k, spin):
    return np.exp(-((x - x0) ** 2) / 2 + 1j * k * x)[:, None] * np.asarray(spin, dtype=complex)


def test_single_particle_reduces_to_dirac_current():
    x = SPEC.axis()
    f = DiracField(SPEC, spinor_packet(x, 0.0, 0.6, [1.0, 0.4 + 0.2j])).normalized()
    (j,) = bmf_velocities(f, None, 0.0, x[20:40])
    j0, j1 = current_density(f.amplitudes[20:40])
    assert np.allclose(j[:, 0], j0, rtol=1e-12, atol=1e-14)
    assert np.allclose(j[:, 1], j1, rtol=1e-12, atol=1e-14)


def _brute(psi, fx1, fx2):
    # explicit 4x4 Kronecker products on the flattened spin index 2a + b
    v = psi.reshape(4)
    m1, m2 = np.eye(2) - fx1 * SIGMA_X, np.eye(2) - fx2 * SIGMA_X
    q = lambda A: float(np.real(np.vdot(v, A @ v)))
    return (
        q(np.kron(m1, m2)),
        (q(np.kron(np.eye(2), m2)), q(np.kron(SIGMA_X, m2))),
        (q(np.kron(m1, np.eye(2))), q(np.kron(m1, SIGMA_X))),
    )


def test_pair_currents_match_kronecker_oracle(rng_np):
    for _ in range(20):
        psi = rng_np.normal(size=(2, 2)) + 1j * rng_np.normal(size=(2, 2))
        fx1, fx2 = rng_np.uniform(-0.9, 0.9, 2)
        rho, j1, j2 = pair_currents(psi, fx1, fx2)
        b_rho, b1, b2 = _brute(psi, fx1, fx2)
        assert rho == pytest.approx(b_rho, rel=1e-12)
        assert j1 == pytest.approx(b1, rel=1e-12, abs=1e-12)
        assert j2 == pytest.approx(b2, rel=1e-12, abs=1e-12)
        assert rho > 0 and j1[0] >= abs(j1[1]) - 1e-12


def test_leaf_matrices_positive_for_spacelike_slopes():
    w = np.linalg.eigvalsh(leaf_matrices(np.linspace(-0.99, 0.99, 11)))
    assert np.all(w > 0)


def test_product_state_factorizes_on_flat_leaf():
    x = SPEC.axis()
    a = spinor_packet(x, -3.0, 0.5, [1.0, 0.3j])
    b = spinor_packet(x, 2.0, -0.2, [0.4, 1.0])
    phi = MultiTimeWF.product(SPEC, a, b)
    flat = Foliation.flat((0.0, 1.0), (-12.0, 12.0))
    i, j = 28, 36
    t1, t2 = bmf_velocities(phi, flat, 0.0, (x[i], x[j]))
    ja0, ja1 = current_density(a[i])
    jb0, jb1 = current_density(b[j])
    assert t1 == pytest.approx([ja0 * jb0, ja1 * jb0], rel=1e-8)
    assert t2 == pytest.approx([ja0 * jb0, ja0 * jb1], rel=1e-8)
    rho = leaf_density(phi.phi0, np.zeros(64))
    assert np.allclose(rho, np.outer(current_density(a)[0], current_density(b)[0]), rtol=1e-12)


def test_foliation_changes_tangents():
    phi = bell_pair_state(SPEC, separation=2.0)
    x = SPEC.axis()
    config = (x[30], x[34])
    flat = bmf_velocities(phi, Foliation.flat((0.0, 1.0), (-12.0, 12.0)), 0.5, config)
    tilted = bmf_velocities(phi, Foliation.flat((0.0, 1.0), (-12.0, 12.0), velocity=0.5), 0.5, config)
    r_flat = flat[0][1] / flat[0][0]
    r_tilt = tilted[0][1] / tilted[0][0]
    assert abs(r_flat - r_tilt) > 1e-3


def test_zero_length_run_is_null_experiment():
    phi = bell_pair_state(SPEC)
    fol = Foliation.tanh(0.4, (0.0, 1.0), (-12.0, 12.0))
    report, run = run_bmf_equivariance(phi, fol, 4000, RngStream(5, 0), 0.0, 0.0, bins=8, hist_range=(-8.0, 8.0))
    assert np.array_equal(run.final, run.initial)
    assert report.distance_metrics["chi_square_p_value"] > 0.01


def test_leaf_parametrization_does_not_matter():
    phi = bell_pair_state(SPEC)
    fast = Foliation(lambda s, x: 2 * s + 0.2 * np.tanh(x), (0.0, 0.5), (-12.0, 12.0), name="fast")
    slow = Foliation(lambda s, x: s + 0.2 * np.tanh(x), (0.0, 1.0), (-12.0, 12.0), name="slow")
    q0 = np.array([[-3.0, 3.0], [-2.5, 3.4], [-3.3, 2.2]])
    ds = 0.02
    a = integrate_bmf(leaf_timeline(phi, fast, 0.0, 0.5, ds / 2), fast, q0, ds / 2, 0.5)
    b = integrate_bmf(leaf_timeline(phi, slow, 0.0, 1.0, ds), slow, q0, ds, 1.0)
    assert np.all(a.status == 0) and np.all(b.status == 0)
    assert np.max(np.abs(a.final - b.final)) < 1e-6


def test_small_ensemble_equivariance_on_curved_leaves():
    spec = GridSpec.centered(1, 96, 32.0)
    phi = bell_pair_state(spec)
    fol = Foliation.tanh(0.4, (0.0, 1.0), (-16.0, 16.0))
    report, run = run_bmf_equivariance(phi, fol, 3000, RngStream(11, 0), 0.0, 1.0, bins=8, hist_range=(-8.0, 8.0))
    assert report.distance_metrics["chi_square_p_value"] > 0.01
    assert run.max_speed <= 1 + 1e-9
    assert run.excluded_fraction <= 0.01


def test_worldlines_csv(tmp_path):
    phi = bell_pair_state(SPEC)
    fol = Foliation.tanh(0.4, (0.0, 0.5), (-12.0, 12.0))
    ds = 0.05
    run = integrate_bmf(leaf_timeline(phi, fol, 0.0, 0.5, ds), fol, np.array([[-3.0, 3.0], [-2.0, 2.5]]), ds, 0.5, record=2)
    path = tmp_path / "w.csv"
    write_worldlines_csv(path, run, fol)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["trajectory_id", "s", "t1", "x1", "t2", "x2"]
    assert len(rows) == 1 + 2 * 11
    for r in rows[1:]:
        s, t1, x1 = float(r[1]), float(r[2]), float(r[3])
        assert t1 == pytest.approx(s + 0.4 * np.tanh(x1), abs=1e-12)
    run.paths = None
    with pytest.raises(ValueError):
        write_worldlines_csv(path, run, fol)
