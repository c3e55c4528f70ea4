"""Bohm's guidance law, trajectory integration and the equivariance harness."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ExperimentInvalidError, NodeProximityError, OutOfDomainError
from .grid import GridSpec, GridWavefunction, PhysicalConstants
from .propagators import evolve_schrodinger
from .rng import RngStream
from .sampling import sample_ensemble
from .spline import SplineField
from .stats import EnsembleReport, compare_histograms
from .timeline import Timeline, wavefunction_field

__all__ = [
    "NODE_EPSILON",
    "COMPLETED",
    "HIT_NODE",
    "LEFT_DOMAIN",
    "Configuration",
    "JumpEvent",
    "TrajectoryRecord",
    "EnsembleRun",
    "guidance_velocity",
    "bohm_velocity",
    "integrate_ensemble",
    "integrate_trajectory",
    "BohmScenario",
    "run_equivariance_experiment",
    "harmonic_superposition_scenario",
    "double_slit_scenario",
    "free_gaussian_scenario",
    "worker_count",
]

NODE_EPSILON = 1e-12
COMPLETED, HIT_NODE, LEFT_DOMAIN = "completed", "hit-node-region", "left-domain"
STATUS_NAMES = (COMPLETED, HIT_NODE, LEFT_DOMAIN)
MAX_EXCLUDED = 0.01


@dataclass(frozen=True)
class Configuration:
    """``sector`` particles, each with a ``d``-dimensional position."""

    sector: int
    positions: tuple = ()

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if self.sector < 0:
            raise ValueError("sector must be non-negative")
        pos = pos.reshape(self.sector, -1) if pos.size else np.zeros((self.sector, 0))
        if pos.shape[0] != self.sector:
            raise ValueError("number of positions must equal the sector")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        object.__setattr__(self, "positions", tuple(map(tuple, pos)))

    @classmethod
    def empty(cls) -> "Configuration":
        return cls(0, ())

    def flat(self) -> np.ndarray:
        return np.asarray(self.positions, dtype=float).ravel()


@dataclass(frozen=True)
class JumpEvent:
    time: float
    kind: str
    source: Configuration
    destination: Configuration

    def __post_init__(self):
        if self.kind not in ("emission", "absorption"):
            raise ValueError(f"unknown jump kind {self.kind!r}")
        step = self.destination.sector - self.source.sector
        if step != (1 if self.kind == "emission" else -1):
            raise ValueError(f"{self.kind} must change the sector by {'+1' if self.kind == 'emission' else '-1'}")


@dataclass
class TrajectoryRecord:
    samples: list = field(default_factory=list)  # (time, Configuration)
    jumps: list = field(default_factory=list)
    status: str = COMPLETED
    capped_steps: int = 0

    def validate(self) -> None:
        times = [t for t, _ in self.samples]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("sample times must increase strictly")
        for j in self.jumps:
            if not np.any(np.isclose(times, j.time, rtol=0, atol=1e-12)):
                raise ValueError("jump time does not coincide with a sample time")
        jump_times = [j.time for j in self.jumps]
        for (t0, c0), (t1, c1) in zip(self.samples, self.samples[1:]):
            if c0.sector != c1.sector and not any(np.isclose(t1, jt, atol=1e-12) for jt in jump_times):
                raise ValueError("sector changed without a jump")

    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.samples])

    def final(self) -> Configuration:
        return self.samples[-1][1]


def worker_count(default: int = 1) -> int:
    """Worker count from ``BOHMLAB_WORKERS``; never affects results."""
    try:
        return max(1, int(os.environ.get("BOHMLAB_WORKERS", default)))
    except ValueError:
        return default


def guidance_velocity(
    field: SplineField,
    points: np.ndarray,
    axis_masses: np.ndarray,
    hbar: float = 1.0,
    node_threshold: float = 0.0,
    margin: float | None = 1.0,
):
    """Vectorized ``(hbar/m) Im(psi* grad psi) / |psi|^2``.

    Returns ``(velocity, code)``; ``code`` is 0 where the velocity is
    defined, 1 where the density is at or below ``node_threshold`` and 2
    where the point lies outside the interpolation domain.  Component axes
    of ``field`` (spinor indices) are summed in the inner products.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, field.spec.dim)
    m = pts.shape[0]
    vel = np.zeros((m, field.spec.dim))
    code = np.zeros(m, dtype=np.int8)
    if margin is not None:
        inside = field.in_domain(pts, margin)
        code[~inside] = 2
    ok = code == 0
    if not np.any(ok):
        return vel, code
    value, grad = field.evaluate(pts[ok], gradient=True, margin=None)
    comp_axes = tuple(range(1, value.ndim))
    dens = np.sum(np.abs(value) ** 2, axis=comp_axes) if comp_axes else np.abs(value) ** 2
    if comp_axes:
        current = np.sum(np.conj(value)[:, None] * grad, axis=tuple(range(2, grad.ndim))).imag
    else:
        current = (np.conj(value)[:, None] * grad).imag
    node = dens <= node_threshold
    safe = np.where(node, 1.0, dens)
    v = hbar * current / (np.asarray(axis_masses)[None, :] * safe[:, None])
    v[node] = 0.0
    sub = np.flatnonzero(ok)
    vel[sub] = v
    code[sub[node]] = 1
    return vel, code


def bohm_velocity(
    psi: GridWavefunction,
    q,
    constants: PhysicalConstants = PhysicalConstants(),
    node_epsilon: float = NODE_EPSILON,
    particle_dim: int = 1,
) -> np.ndarray:
    """Velocity of every coordinate of configuration ``q`` (flattened)."""
    field = wavefunction_field(psi)
    q = np.asarray(q.flat() if isinstance(q, Configuration) else q, dtype=float).reshape(1, -1)
    masses = np.array([constants.mass(a // particle_dim) for a in range(psi.spec.dim)])
    v, code = guidance_velocity(field, q, masses, constants.hbar, node_epsilon * field.mean_density)
    if code[0] == 2:
        raise OutOfDomainError("configuration outside the interpolation domain")
    if code[0] == 1:
        raise NodeProximityError("density below node threshold at configuration")
    return v[0]


@dataclass
class EnsembleRun:
    """Array form of many trajectories integrated together."""

    initial: np.ndarray
    final: np.ndarray
    status: np.ndarray
    capped: np.ndarray
    times: np.ndarray
    paths: np.ndarray | None = None  # (recorded, len(path_times), D)
    path_times: np.ndarray | None = None

    @property
    def excluded_fraction(self) -> float:
        return float(np.mean(self.status != 0)) if self.status.size else 0.0

    def status_names(self) -> list:
        return [STATUS_NAMES[s] for s in self.status]


def _rk4_block(field_at, q, t, dt, masses, hbar, node_eps, v_max, margin):
    def vel(tt, pts):
        f = field_at(tt)
        v, code = guidance_velocity(f, pts, masses, hbar, node_eps * getattr(f, "mean_density", 0.0), margin)
        speed = np.sqrt(np.sum(v * v, axis=1))
        over = speed > v_max
        if np.any(over):
            v[over] *= (v_max / speed[over])[:, None]
        return v, code, over

    k1, c1, o1 = vel(t, q)
    k2, c2, o2 = vel(t + 0.5 * dt, q + 0.5 * dt * k1)
    k3, c3, o3 = vel(t + 0.5 * dt, q + 0.5 * dt * k2)
    k4, c4, o4 = vel(t + dt, q + dt * k3)
    code = np.maximum.reduce([c1, c2, c3, c4])
    capped = o1 | o2 | o3 | o4
    return q + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), code, capped


def integrate_ensemble(
    timeline: Timeline,
    q0: np.ndarray,
    dt: float,
    t_end: float | None = None,
    axis_masses=None,
    hbar: float = 1.0,
    v_max: float = np.inf,
    node_epsilon: float = NODE_EPSILON,
    margin: float | None = 1.0,
    record: int = 0,
    record_every: int = 1,
    observer: Callable | None = None,
    t_start: float | None = None,
) -> EnsembleRun:
    """RK4 for all rows of ``q0`` at once against ``timeline``.

    Trajectories that hit a node region or leave the domain are frozen at
    their last good position and flagged.  ``observer(step, t, q, status)``
    is called after every step.
    """
    q = np.array(q0, dtype=float, copy=True)
    if q.ndim == 1:
        q = q[:, None]
    t0 = timeline.t0 if t_start is None else t_start
    t_end = timeline.horizon if t_end is None else t_end
    nsteps = int(round((t_end - t0) / dt))
    if nsteps < 0 or abs(nsteps * dt - (t_end - t0)) > 1e-9 * max(1.0, abs(t_end)):
        raise ValueError("dt must divide the integration interval")
    masses = np.ones(q.shape[1]) if axis_masses is None else np.asarray(axis_masses, dtype=float)
    status = np.zeros(q.shape[0], dtype=np.int8)
    capped = np.zeros(q.shape[0], dtype=bool)
    record = min(record, q.shape[0])
    paths, path_times = None, None
    if record:
        path_idx = list(range(0, nsteps + 1, record_every))
        if path_idx[-1] != nsteps:
            path_idx.append(nsteps)
        paths = np.full((record, len(path_idx), q.shape[1]), np.nan)
        path_times = t0 + dt * np.array(path_idx)
        paths[:, 0] = q[:record]
        slot = {k: i for i, k in enumerate(path_idx)}
    for k in range(nsteps):
        t = t0 + k * dt
        active = np.flatnonzero(status == 0)
        if active.size:
            new, code, cap = _rk4_block(timeline.field, q[active], t, dt, masses, hbar, node_epsilon, v_max, margin)
            good = code == 0
            q[active[good]] = new[good]
            status[active[~good]] = code[~good]
            capped[active] |= cap
        if observer is not None:
            observer(k + 1, t + dt, q, status)
        if record and (k + 1) in slot:
            paths[:, slot[k + 1]] = np.where(status[:record, None] == 0, q[:record], np.nan)
    return EnsembleRun(np.array(q0, dtype=float).reshape(q.shape), q, status, capped, t0 + dt * np.arange(nsteps + 1), paths, path_times)


def integrate_trajectory(
    psi_timeline: Timeline,
    q0,
    dt: float,
    constants: PhysicalConstants = PhysicalConstants(),
    t_end: float | None = None,
    v_max: float = np.inf,
    node_epsilon: float = NODE_EPSILON,
    particle_dim: int = 1,
) -> TrajectoryRecord:
    """One Bohmian trajectory as a :class:`TrajectoryRecord`."""
    config = q0 if isinstance(q0, Configuration) else None
    flat = config.flat() if config is not None else np.atleast_1d(np.asarray(q0, dtype=float))
    dim = flat.size
    masses = np.array([constants.mass(a // particle_dim) for a in range(dim)])
    run = integrate_ensemble(
        psi_timeline, flat[None, :], dt, t_end, masses, constants.hbar, v_max, node_epsilon, record=1
    )
    n = dim // particle_dim
    rec = TrajectoryRecord(status=STATUS_NAMES[run.status[0]], capped_steps=int(run.capped[0]))
    for t, pos in zip(run.path_times, run.paths[0]):
        if np.all(np.isfinite(pos)):
            rec.samples.append((float(t), Configuration(n, pos.reshape(n, particle_dim))))
    return rec


@dataclass
class BohmScenario:
    """Everything a single-sector equivariance experiment needs."""

    psi0: GridWavefunction
    potential: np.ndarray | float
    constants: PhysicalConstants
    horizon: float
    dt: float
    bins: int = 32
    hist_axes: tuple = (0,)
    hist_range: tuple | None = None
    particle_dim: int = 1
    v_max: float | None = None
    symmetry_axis: int | None = None
    name: str = "custom"
    metadata: dict = field(default_factory=dict)

    def steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def timeline(self, precompute_limit: float = 2e8) -> Timeline:
        """ψ snapshots every half step so every RK4 stage hits a snapshot."""
        n = max(self.steps(), 1)
        dt = self.horizon / n if self.horizon > 0 else self.dt
        step = 0.5 * dt
        advance = lambda psi: evolve_schrodinger(psi, self.potential, step, self.constants)
        tl = Timeline(self.psi0, advance, step, self.horizon if self.horizon > 0 else step, cache_size=8)
        size = self.psi0.amplitudes.nbytes * 3 * tl.count
        if size <= precompute_limit:
            snaps = [self.psi0]
            for _ in range(tl.count - 1):
                snaps.append(advance(snaps[-1]))
            tl = Timeline.from_snapshots(snaps, step)
        return tl

    def axis_masses(self) -> np.ndarray:
        return np.array([self.constants.mass(a // self.particle_dim) for a in range(self.psi0.spec.dim)])

    def default_v_max(self) -> float:
        if self.v_max is not None:
            return self.v_max
        extent = self.psi0.spec.length
        return 10.0 * extent / self.horizon if self.horizon > 0 else np.inf

    def edges(self) -> list:
        spec = self.psi0.spec
        out = []
        for a in self.hist_axes:
            if self.hist_range is not None:
                lo, hi = self.hist_range
            else:
                ax = spec.axis(a)
                lo, hi = ax[0] - 0.5 * spec.spacing, ax[-1] + 0.5 * spec.spacing
            out.append(np.linspace(lo, hi, self.bins + 1))
        return out


def _chunks(n: int, workers: int) -> list:
    bounds = np.linspace(0, n, workers + 1).astype(int)
    return [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def run_equivariance_experiment(
    scenario: BohmScenario,
    ensemble_size: int,
    rng: RngStream,
    workers: int | None = None,
    timeline: Timeline | None = None,
    record: int = 0,
    record_every: int = 10,
    max_excluded: float = MAX_EXCLUDED,
):
    """Sample Q(0) from |psi_0|^2, integrate to the horizon, compare with |psi_T|^2.

    Returns ``(report, run)``.  Raises :class:`ExperimentInvalidError` when
    more than ``max_excluded`` of the trajectories are excluded.
    """
    if ensemble_size < 0:
        raise ValueError("ensemble_size must be non-negative")
    spec = scenario.psi0.spec
    workers = worker_count() if workers is None else max(1, int(workers))
    tl = scenario.timeline() if timeline is None else timeline
    ids = rng.child_ids(ensemble_size)
    q0 = sample_ensemble(scenario.psi0.density(), spec, rng, ids) if ensemble_size else np.zeros((0, spec.dim))
    masses = scenario.axis_masses()
    v_max = scenario.default_v_max()
    sym = scenario.symmetry_axis
    crossings = np.zeros(ensemble_size, dtype=bool)

    def run_chunk(lo, hi, timeline_copy):
        sign0 = np.sign(q0[lo:hi, sym]) if sym is not None else None

        def watch(step, t, q, status):
            if sym is not None:
                crossings[lo:hi] |= (np.sign(q[:, sym]) != sign0) & (sign0 != 0)

        return integrate_ensemble(
            timeline_copy, q0[lo:hi], scenario.dt if scenario.horizon > 0 else 1.0,
            t_end=scenario.horizon, axis_masses=masses, hbar=scenario.constants.hbar, v_max=v_max,
            record=max(0, min(record - lo, hi - lo)), record_every=record_every,
            observer=watch if sym is not None else None,
        )

    chunks = _chunks(ensemble_size, workers)
    if len(chunks) <= 1:
        runs = [run_chunk(lo, hi, tl) for lo, hi in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_chunk, lo, hi, tl.fresh() if i else tl) for i, (lo, hi) in enumerate(chunks)]
            runs = [f.result() for f in futures]
    run = _merge_runs(runs, q0, scenario)
    excluded = run.excluded_fraction
    if excluded > max_excluded:
        raise ExperimentInvalidError(f"{excluded:.2%} of trajectories excluded (limit {max_excluded:.0%})")
    psi_t = tl.state(tl.count - 1) if scenario.horizon > 0 else scenario.psi0
    ok = run.status == 0
    final = run.final[ok][:, list(scenario.hist_axes)]
    if spec.periodic:
        origin = np.asarray(spec.origin_offset)[list(scenario.hist_axes)]
        final = origin + np.mod(final - origin, spec.length)
    marginal = psi_t.density()
    drop = tuple(a for a in range(spec.dim) if a not in scenario.hist_axes)
    if drop:
        marginal = marginal.sum(axis=drop)
    axes = [spec.axis(a) for a in scenario.hist_axes]
    report = compare_histograms(final, marginal, axes, spec.spacing, scenario.edges(), excluded, int(ok.sum()))
    report.metadata.update(
        {
            "scenario": scenario.name,
            "horizon": scenario.horizon,
            "dt": scenario.dt,
            "grid_points": spec.points_per_axis,
            "grid_spacing": spec.spacing,
            "boundary": spec.boundary,
            "v_max": v_max,
            "capped_trajectories": int(run.capped.sum()),
            "excluded": {n: int(np.sum(run.status == i)) for i, n in enumerate(STATUS_NAMES) if i},
            "norm_T": psi_t.norm(),
        }
    )
    report.metadata.update(scenario.metadata)
    if sym is not None:
        report.metadata["symmetry_axis_crossings"] = int(crossings.sum())
    return report, run


def _merge_runs(runs, q0, scenario) -> EnsembleRun:
    if not runs:
        empty = np.zeros((0, q0.shape[1]))
        return EnsembleRun(empty, empty, np.zeros(0, np.int8), np.zeros(0, bool), np.zeros(1))
    paths = [r.paths for r in runs if r.paths is not None]
    return EnsembleRun(
        np.concatenate([r.initial for r in runs]),
        np.concatenate([r.final for r in runs]),
        np.concatenate([r.status for r in runs]),
        np.concatenate([r.capped for r in runs]),
        runs[0].times,
        np.concatenate(paths) if paths else None,
        runs[0].path_times,
    )


def harmonic_eigenstate(x: np.ndarray, n: int, mass=1.0, omega=1.0, hbar=1.0) -> np.ndarray:
    from numpy.polynomial.hermite import hermval
    from math import factorial, pi, sqrt

    xi = np.sqrt(mass * omega / hbar) * x
    coef = np.zeros(n + 1)
    coef[n] = 1.0
    norm = (mass * omega / (pi * hbar)) ** 0.25 / sqrt(2.0**n * factorial(n))
    return norm * hermval(xi, coef) * np.exp(-0.5 * xi * xi)


def harmonic_superposition_scenario(
    points: int = 256, length: float = 20.0, dt: float = 0.02, omega: float = 1.0, bins: int = 32
) -> BohmScenario:
    """(phi_0 + phi_1)/sqrt 2 in V = x^2/2; the density is periodic with period 2 pi / omega."""
    spec = GridSpec.centered(1, points, length)
    x = spec.axis()
    c = PhysicalConstants()
    psi0 = GridWavefunction(spec, (harmonic_eigenstate(x, 0, omega=omega) + harmonic_eigenstate(x, 1, omega=omega)) / np.sqrt(2))
    period = 2 * np.pi / omega
    n = int(round(period / dt))
    return BohmScenario(
        psi0.normalized(), 0.5 * omega**2 * x**2, c, period, period / n, bins=bins,
        hist_range=(-5.0, 5.0), name="equivariance-nr",
    )


def free_gaussian_scenario(points: int = 512, length: float = 40.0, sigma: float = 1.0, k0: float = 0.0,
                           horizon: float = 0.0, dt: float = 0.01, bins: int = 32) -> BohmScenario:
    spec = GridSpec.centered(1, points, length)
    x = spec.axis()
    psi0 = GridWavefunction(spec, np.exp(-x**2 / (4 * sigma**2) + 1j * k0 * x)).normalized()
    return BohmScenario(psi0, 0.0, PhysicalConstants(), horizon, dt, bins=bins, hist_range=(-6 * sigma, 6 * sigma),
                        name="free-gaussian")


def double_slit_scenario(
    points: int = 512,
    length: float = 48.0,
    slit_separation: float = 4.0,
    slit_width: float = 0.5,
    momentum: float = 2.0,
    longitudinal_width: float = 1.0,
    start: float = -8.0,
    horizon: float = 4.0,
    dt: float = 0.02,
    bins: int = 32,
    screen_half_width: float = 16.0,
) -> BohmScenario:
    """Two Gaussian beamlets emerging from slits at ``y = +-slit_separation/2``.

    Axis 0 is the propagation direction ``x``; axis 1 the transverse ``y``.
    The arrival pattern is the ``y`` marginal at the horizon (screen time).
    """
    spec = GridSpec.centered(2, points, length)
    x, y = spec.mesh()
    a = 0.5 * slit_separation
    envelope = np.exp(-((x - start) ** 2) / (4 * longitudinal_width**2) + 1j * momentum * x)
    transverse = np.exp(-((y - a) ** 2) / (4 * slit_width**2)) + np.exp(-((y + a) ** 2) / (4 * slit_width**2))
    psi0 = GridWavefunction(spec, envelope * transverse).normalized()
    return BohmScenario(
        psi0, 0.0, PhysicalConstants(), horizon, dt, bins=bins, hist_axes=(1,),
        hist_range=(-screen_half_width, screen_half_width), particle_dim=2, symmetry_axis=1,
        name="double-slit",
        metadata={
            "slit_separation": slit_separation,
            "slit_width": slit_width,
            "momentum": momentum,
            "absorbing_margin": "none (periodic grid sized so no amplitude wraps before the horizon)",
        },
    )
