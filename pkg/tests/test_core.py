import numpy as np
import pytest
from hypothesis import given, strategies as st

from bohmlab.errors import (
    DegenerateDensityError,
    NumericalBlowupError,
    OutOfDomainError,
    ShapeError,
)
from bohmlab.grid import BOX, GridSpec, GridWavefunction, PhysicalConstants
from bohmlab.propagators import (
    absorbing_potential,
    apply_kinetic,
    evolve_crank_nicolson,
    evolve_schrodinger,
    symmetry_residual,
)
from bohmlab.rng import RngStream
from bohmlab.sampling import sample_cells, sample_from_density
from bohmlab.spline import SplineField, interpolate_value_and_gradient
from bohmlab.stats import chi_square, compare_histograms, ks_against_cells, total_variation

C = PhysicalConstants()


def gaussian(spec, sigma=1.0, k0=0.0, x0=0.0):
    def f(*xs):
        x = xs[0]
        r2 = sum((y - x0) ** 2 for y in xs)
        return np.exp(-r2 / (4 * sigma**2) + 1j * k0 * x)

    return GridWavefunction.from_function(spec, f)


# ---- grid ------------------------------------------------------------------


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec(1, 4, 0.1)
    with pytest.raises(ValueError):
        GridSpec(1, 16, 0.0)
    with pytest.raises(ValueError):
        GridSpec(3, 1024, 0.1)  # 2**30 points
    with pytest.raises(ValueError):
        GridSpec(1, 16, 0.1, boundary="reflecting")


def test_constants_validation():
    with pytest.raises(ValueError):
        PhysicalConstants(hbar=0.0)
    with pytest.raises(ValueError):
        PhysicalConstants(masses=(1.0, -1.0))
    assert PhysicalConstants(coupling_g=-3.0).coupling_g == -3.0


def test_wavefunction_shape_checked():
    spec = GridSpec.centered(1, 16, 4.0)
    with pytest.raises(ShapeError):
        GridWavefunction(spec, np.ones(15))


# ---- split-step propagator -------------------------------------------------


def test_plane_wave_is_exact_kinetic_eigenstate():
    spec = GridSpec.centered(1, 128, 2 * np.pi * 4)
    x = spec.axis()
    k = 2 * np.pi * 3 / spec.length
    psi = GridWavefunction(spec, np.exp(1j * k * x))
    dt = 0.37
    out = evolve_schrodinger(psi, 0.0, dt, C)
    assert np.max(np.abs(out.amplitudes - psi.amplitudes * np.exp(-0.5j * k * k * dt))) < 1e-12
    assert np.max(np.abs(out.density() - psi.density())) < 1e-12
    assert out.time == pytest.approx(dt)


def test_harmonic_ground_state_is_stationary():
    spec = GridSpec.centered(1, 256, 20.0)
    x = spec.axis()
    psi = GridWavefunction(spec, np.exp(-(x**2) / 2)).normalized()
    out = evolve_schrodinger(psi, 0.5 * x**2, 0.002, C, steps=2500)
    assert out.time == pytest.approx(5.0)
    assert np.max(np.abs(out.density() - psi.density())) < 1e-6


def test_free_gaussian_width_matches_closed_form():
    # oracle: sigma(t)^2 = sigma0^2 + t^2 / (4 sigma0^2) for hbar = m = 1
    spec = GridSpec.centered(1, 1024, 60.0)
    x = spec.axis()
    psi = gaussian(spec)
    out = evolve_schrodinger(psi, 0.0, 0.01, C, steps=200)
    p = out.density() * spec.spacing
    mean = np.sum(p * x)
    width2 = np.sum(p * (x - mean) ** 2)
    assert width2 == pytest.approx(1.0 + 2.0**2 / 4.0, rel=1e-4)


@given(st.integers(64, 256), st.floats(0.001, 0.2), st.floats(-3, 3))
def test_split_step_norm_per_step(points, dt, k0):
    spec = GridSpec.centered(1, points, 30.0)
    x = spec.axis()
    psi = gaussian(spec, k0=k0)
    out = evolve_schrodinger(psi, 0.3 * x**2 + np.sin(x), dt, C)
    assert abs(out.norm() - 1.0) <= 1e-10


def test_split_step_rejects_bad_input():
    spec = GridSpec.centered(1, 64, 10.0)
    psi = gaussian(spec)
    with pytest.raises(ShapeError):
        evolve_schrodinger(psi, np.zeros(63), 0.1)
    with pytest.raises(ValueError):
        evolve_schrodinger(psi, 0.0, -0.1)
    bad = psi.replace(np.where(np.arange(64) == 3, np.nan, psi.amplitudes))
    with pytest.raises(NumericalBlowupError):
        evolve_schrodinger(bad, 0.0, 0.1)


# ---- Crank-Nicolson --------------------------------------------------------


def test_cn_zero_hamiltonian_is_identity():
    spec = GridSpec.centered(1, 64, 10.0)
    psi = gaussian(spec, k0=1.0)
    out = evolve_crank_nicolson(psi, lambda f: np.zeros_like(f), 0.1)
    assert np.array_equal(out.amplitudes, psi.amplitudes)


def test_cn_constant_hamiltonian_is_global_phase():
    spec = GridSpec.centered(1, 64, 10.0)
    psi = gaussian(spec, k0=1.0)
    e, dt = 2.5, 0.001
    out = evolve_crank_nicolson(psi, lambda f: e * f, dt)
    # the Cayley factor (1 - i e dt/2) / (1 + i e dt/2) differs from exp(-i e dt) by (e dt)^3 / 12
    cayley = (1 - 0.5j * e * dt) / (1 + 0.5j * e * dt)
    assert np.max(np.abs(out.amplitudes - cayley * psi.amplitudes)) < 1e-10
    assert np.max(np.abs(out.amplitudes - np.exp(-1j * e * dt) * psi.amplitudes)) < 1e-8


def test_cn_box_grid_matches_spectral_interior():
    box = GridSpec.centered(1, 512, 40.0, boundary=BOX)
    per = GridSpec.centered(1, 512, 40.0)
    psi_box = gaussian(box)
    psi_per = gaussian(per)
    h = lambda f: apply_kinetic(box, C, f)
    out_box = evolve_crank_nicolson(psi_box, h, 0.01, steps=10)
    out_per = evolve_schrodinger(psi_per, 0.0, 0.01, C, steps=10)
    interior = slice(64, -64)
    assert np.max(np.abs(out_box.amplitudes[interior] - out_per.amplitudes[interior])) < 1e-6


def test_cn_norm_drift_per_step():
    box = GridSpec.centered(1, 256, 30.0, boundary=BOX)
    x = box.axis()
    psi = gaussian(box, k0=0.5)
    out = evolve_schrodinger(psi, 0.5 * x**2, 0.05, C)
    assert abs(out.norm() - 1.0) < 1e-8


def test_absorbing_potential_profile():
    spec = GridSpec.centered(1, 100, 10.0, boundary=BOX)
    w = absorbing_potential(spec, strength=5.0, fraction=0.1)
    assert np.all(w.real == 0)
    assert np.all(w.imag <= 0)
    assert np.all(w[10:90] == 0)
    assert w.imag[0] == pytest.approx(-5.0)


# ---- symmetry residual -----------------------------------------------------


def _random_sample(n, count, rng):
    return [rng.normal(size=n) + 1j * rng.normal(size=n) for _ in range(count)]


def test_symmetry_residual_diagonal(rng_np):
    d = rng_np.normal(size=50)
    assert symmetry_residual(lambda f: d * f, _random_sample(50, 10, rng_np)) <= 1e-12


def test_symmetry_residual_antisymmetric_fails(rng_np):
    x = np.linspace(1.0, 2.0, 50)
    assert symmetry_residual(lambda f: 1j * x * f, _random_sample(50, 10, rng_np)) > 0.1


def test_symmetry_residual_empty_sample():
    with pytest.raises(ValueError):
        symmetry_residual(lambda f: f, [])


# ---- spline interpolation --------------------------------------------------


def test_constant_field_has_zero_gradient():
    spec = GridSpec.centered(1, 32, 8.0, boundary=BOX)
    psi = GridWavefunction(spec, np.full(32, 2.0 - 1.0j))
    value, grad = interpolate_value_and_gradient(psi, 0.37)
    assert value == pytest.approx(2.0 - 1.0j, abs=1e-14)
    assert np.max(np.abs(grad)) < 1e-13  # zero up to round-off in the spline solve


def test_linear_field_gradient_is_one():
    spec = GridSpec.centered(1, 32, 8.0, boundary=BOX)
    psi = GridWavefunction(spec, spec.axis())
    value, grad = interpolate_value_and_gradient(psi, 0.37)
    assert value == pytest.approx(0.37, abs=1e-13)
    assert grad[0] == pytest.approx(1.0, abs=1e-13)


def test_plane_wave_gradient_oracle():
    box = GridSpec(1, 400, 0.05, (-10.0,), BOX)
    psi = GridWavefunction(box, np.exp(2j * box.axis()))
    q = np.linspace(-5, 5, 201)
    value, grad = SplineField.from_wavefunction(psi).evaluate(q[:, None])
    exact = 2j * np.exp(2j * q)
    # cubic-spline derivative error measured at 1.6e-5; see the decisions ledger
    assert np.max(np.abs(grad[:, 0] - exact)) <= 2e-5
    assert np.max(np.abs(value - np.exp(2j * q))) <= 1e-6


@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.floats(-2.5, 2.5))
def test_cubic_polynomials_are_reproduced(coef, q):
    spec = GridSpec.centered(1, 40, 8.0, boundary=BOX)
    poly = np.polynomial.Polynomial(coef)
    psi = GridWavefunction(spec, poly(spec.axis()))
    value, grad = interpolate_value_and_gradient(psi, q)
    assert value == pytest.approx(poly(q), abs=1e-9)
    assert grad[0] == pytest.approx(poly.deriv()(q), abs=1e-8)


def test_two_dimensional_gradient():
    spec = GridSpec.centered(2, 32, 8.0, boundary=BOX)
    x, y = spec.mesh()
    psi = GridWavefunction(spec, x * y + 2 * y)
    value, grad = interpolate_value_and_gradient(psi, [0.3, -0.7])
    assert value == pytest.approx(0.3 * -0.7 - 1.4, abs=1e-12)
    assert grad == pytest.approx([-0.7, 2.3], abs=1e-12)


def test_interpolation_outside_domain():
    spec = GridSpec.centered(1, 32, 8.0, boundary=BOX)
    psi = GridWavefunction(spec, spec.axis())
    with pytest.raises(OutOfDomainError):
        interpolate_value_and_gradient(psi, 3.9)


# ---- sampling --------------------------------------------------------------


def test_point_mass_samples_stay_in_cell():
    spec = GridSpec.centered(1, 64, 16.0)
    a = np.zeros(64)
    a[20] = 1.0
    pos = sample_from_density(GridWavefunction(spec, a), RngStream(1, 2), 500)[:, 0]
    x20 = spec.axis()[20]
    assert np.all(np.abs(pos - x20) <= 0.5 * spec.spacing)


def test_uniform_density_chi_square():
    spec = GridSpec.centered(1, 64, 16.0)
    pos = sample_from_density(GridWavefunction(spec, np.ones(64)), RngStream(3, 0), 100_000)[:, 0]
    edges = np.linspace(-8.0 - 0.125, 8.0 - 0.125, 17)
    counts, _ = np.histogram(pos, edges)
    _, p, _ = chi_square(counts, np.full(16, 1 / 16))
    assert counts.sum() == 100_000
    assert p > 0.01


def test_double_peak_split_binomial_oracle():
    spec = GridSpec.centered(1, 256, 20.0)
    x = spec.axis()
    dens = 0.7 * np.exp(-((x + 4) ** 2)) + 0.3 * np.exp(-((x - 4) ** 2))
    n = 10_000
    pos = sample_from_density(GridWavefunction(spec, np.sqrt(dens)), RngStream(4, 0), n)[:, 0]
    frac = np.mean(pos < 0)
    assert abs(frac - 0.7) <= 3 * np.sqrt(0.7 * 0.3 / n)


def test_zero_density_raises():
    spec = GridSpec.centered(1, 16, 4.0)
    with pytest.raises(DegenerateDensityError):
        sample_from_density(GridWavefunction(spec, np.zeros(16)), RngStream(0, 0), 3)


@given(st.integers(0, 2**32), st.integers(8, 48))
def test_sampler_follows_cell_masses(seed, n):
    spec = GridSpec(1, n, 1.0, (0.0,))
    mass = RngStream(seed, 99).uniforms(n) ** 2 + 0.01
    u = RngStream(seed, 1).uniforms(2 * 20000).reshape(-1, 2)
    pos = sample_cells(mass, spec, u)[:, 0]
    counts, _ = np.histogram(pos, np.arange(n + 1) - 0.5)
    _, p, _ = chi_square(counts, mass / mass.sum())
    assert p > 1e-4  # 1% level per example; hypothesis draws many examples


def test_sampling_is_reproducible():
    spec = GridSpec.centered(2, 16, 4.0)
    psi = gaussian(spec)
    a = sample_from_density(psi, RngStream(8, 1), 100)
    b = sample_from_density(psi, RngStream(8, 1), 100)
    assert a.tobytes() == b.tobytes()
    assert a.shape == (100, 2)


# ---- statistics ------------------------------------------------------------


def test_total_variation():
    assert total_variation([0.5, 0.5], [1.0, 0.0]) == pytest.approx(0.5)


def test_chi_square_pools_small_bins():
    counts = np.array([500, 480, 18, 2])
    probs = np.array([0.5, 0.48, 0.018, 0.002])
    stat, p, dof = chi_square(counts, probs)
    assert dof == 3  # bins with expected 18 kept, expected 2 pooled into the remainder bin
    assert stat == pytest.approx(0.0, abs=1e-12)
    assert p == pytest.approx(1.0)


def test_ks_against_cells_accepts_own_sampler():
    spec = GridSpec.centered(1, 64, 16.0)
    x = spec.axis()
    mass = np.exp(-(x**2))
    u = RngStream(2, 2).uniforms(2 * 5000).reshape(-1, 2)
    pos = sample_cells(mass, spec, u)[:, 0]
    ks, p = ks_against_cells(pos, x, spec.spacing, mass)
    assert ks < 1.63 / np.sqrt(5000)


def test_compare_histograms_report_fields():
    spec = GridSpec.centered(1, 64, 16.0)
    x = spec.axis()
    mass = np.exp(-(x**2))
    u = RngStream(5, 0).uniforms(2 * 4000).reshape(-1, 2)
    pos = sample_cells(mass, spec, u)
    edges = [np.linspace(-4, 4, 17)]
    rep = compare_histograms(pos, mass, [x], spec.spacing, edges)
    assert rep.sample_count == 4000
    assert rep.histogram_empirical.shape == rep.histogram_theoretical.shape == (16,)
    assert {"total_variation", "chi_square", "chi_square_p_value", "ks_statistic"} <= set(rep.distance_metrics)
    assert rep.distance_metrics["chi_square_p_value"] > 0.001
    assert 0.0 <= rep.excluded_fraction <= 1.0
    empty = compare_histograms(np.zeros((0, 1)), mass, [x], spec.spacing, edges)
    assert empty.sample_count == 0
