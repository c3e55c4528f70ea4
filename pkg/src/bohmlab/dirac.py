"""Free Dirac equation in 1+1 dimensions, its current and Bohm-Dirac worldlines.

Units ``c = 1``.  Gamma matrices are fixed repo-wide::

    gamma0 = [[1, 0], [0, -1]],  gamma1 = [[0, 1], [-1, 0]],  gamma0 gamma1 = sigma_x

so ``i hbar d_t psi = (-i hbar sigma_x d_x + m sigma_z) psi`` and per Fourier
mode ``h(k) = hbar k sigma_x + m sigma_z`` with ``E(k) = sqrt(hbar^2 k^2 + m^2)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import FoliationError, NodeProximityError, OutOfDomainError, ShapeError, StepSizeError
from .grid import GridSpec
from .rng import RngStream
from .sampling import sample_ensemble
from .spline import SplineField
from .stats import EnsembleReport, compare_histograms
from .timeline import Timeline

__all__ = [
    "GAMMA0",
    "GAMMA1",
    "SIGMA_X",
    "SIGMA_Z",
    "DiracField",
    "dirac_symbol",
    "mode_propagator",
    "evolve_dirac",
    "dirac_current",
    "current_density",
    "continuity_residual",
    "Foliation",
    "Worldline",
    "DiracRun",
    "dirac_timeline",
    "integrate_worldline",
    "integrate_worldlines",
    "run_dirac_equivariance",
]

GAMMA0 = np.array([[1, 0], [0, -1]], dtype=complex)
GAMMA1 = np.array([[0, 1], [-1, 0]], dtype=complex)
SIGMA_X = GAMMA0 @ GAMMA1
SIGMA_Z = GAMMA0.copy()
NODE_EPSILON = 1e-12
SPEED_SLACK = 1e-9


@dataclass(frozen=True)
class DiracField:
    """Two-component spinor on a periodic 1D grid; ``amplitudes`` has shape ``(N, 2)``."""

    spec: GridSpec
    amplitudes: np.ndarray
    time: float = 0.0
    mass: float = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        if self.spec.dim != 1 or not self.spec.periodic:
            raise ShapeError("Dirac fields live on a periodic 1D grid")
        a = np.array(self.amplitudes, dtype=complex)
        if a.shape != (self.spec.points_per_axis, 2):
            raise ShapeError(f"expected amplitudes of shape {(self.spec.points_per_axis, 2)}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("amplitudes must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)

    @classmethod
    def from_function(cls, spec: GridSpec, func, mass=1.0, hbar=1.0, normalize=True) -> "DiracField":
        f = cls(spec, np.asarray(func(spec.axis())), 0.0, mass, hbar)
        return f.normalized() if normalize else f

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2) * self.spec.spacing))

    def normalized(self) -> "DiracField":
        return self.replace(self.amplitudes / self.norm())

    def replace(self, amplitudes=None, time=None) -> "DiracField":
        return DiracField(
            self.spec, self.amplitudes if amplitudes is None else amplitudes, self.time if time is None else time,
            self.mass, self.hbar,
        )

    def density(self) -> np.ndarray:
        return np.sum(np.abs(self.amplitudes) ** 2, axis=1)

    def mean_position(self) -> float:
        x = self.spec.axis()
        rho = self.density()
        return float(np.sum(x * rho) / np.sum(rho))


def dirac_symbol(k: np.ndarray, mass: float, hbar: float = 1.0) -> np.ndarray:
    """``h(k)`` with shape ``k.shape + (2, 2)``."""
    k = np.asarray(k, dtype=float)
    return hbar * k[..., None, None] * SIGMA_X + mass * SIGMA_Z


def mode_propagator(k: np.ndarray, tau, mass: float, hbar: float = 1.0) -> np.ndarray:
    """``exp(-i h(k) tau / hbar) = cos(E tau/hbar) - i sin(E tau/hbar) h(k)/E``.

    ``tau`` broadcasts against ``k``.
    """
    k = np.asarray(k, dtype=float)
    tau = np.asarray(tau, dtype=float)
    energy = np.sqrt((hbar * k) ** 2 + mass**2)
    safe = np.where(energy > 0, energy, 1.0)
    phase = energy * tau / hbar
    c = np.cos(phase)[..., None, None]
    s = np.where(energy > 0, np.sin(phase) / safe, tau / hbar)[..., None, None]
    kk = np.broadcast_to(k, np.broadcast(k, tau).shape)
    h = hbar * kk[..., None, None] * SIGMA_X + mass * SIGMA_Z
    return c * np.eye(2) - 1j * s * h


def evolve_dirac(field: DiracField, dt: float, check_step: bool = True) -> DiracField:
    """Exact spectral step of length ``dt`` (any sign).

    ``|dt|`` may not exceed the grid spacing when ``check_step`` is set.
    """
    if check_step and abs(dt) > field.spec.spacing * (1 + 1e-12):
        raise StepSizeError(f"|dt| = {abs(dt)} exceeds the grid spacing {field.spec.spacing}")
    k = field.spec.wavenumbers()
    u = mode_propagator(k, dt, field.mass, field.hbar)
    spec_amp = np.fft.fft(field.amplitudes, axis=0)
    out = np.fft.ifft(np.einsum("kab,kb->ka", u, spec_amp), axis=0)
    return field.replace(out, field.time + dt)


def dirac_current(field: DiracField, x=None):
    """``(j0, j1)`` at grid index/indices ``x`` (all points when None)."""
    a = field.amplitudes if x is None else field.amplitudes[np.asarray(x)]
    return current_density(a)


def current_density(spinors: np.ndarray):
    """``j0 = psi^dagger psi`` and ``j1 = psi^dagger sigma_x psi = 2 Re(conj(psi_1) psi_2)``."""
    s = np.asarray(spinors)
    j0 = np.abs(s[..., 0]) ** 2 + np.abs(s[..., 1]) ** 2
    j1 = 2.0 * np.real(np.conj(s[..., 0]) * s[..., 1])
    return j0, j1


def continuity_residual(field: DiracField, dt: float) -> float:
    """Max of ``|d_t j0 + d_x j1|`` with centered differences in ``t`` and ``x``."""
    back = evolve_dirac(field, -dt, check_step=False)
    fwd = evolve_dirac(field, dt, check_step=False)
    j0p, _ = dirac_current(fwd)
    j0m, _ = dirac_current(back)
    _, j1 = dirac_current(field)
    h = field.spec.spacing
    dtj0 = (j0p - j0m) / (2 * dt)
    dxj1 = (np.roll(j1, -1) - np.roll(j1, 1)) / (2 * h)
    return float(np.max(np.abs(dtj0 + dxj1)))


@dataclass(frozen=True)
class Foliation:
    """Leaves ``t = f(s, x)``; checked spacelike and monotone on a sample grid.

    ``f`` must accept broadcasting arrays.  Partial derivatives default to
    centered differences.
    """

    f: Callable
    s_range: tuple = (0.0, 1.0)
    x_range: tuple = (-10.0, 10.0)
    f_x: Callable | None = None
    f_s: Callable | None = None
    delta: float = 0.05
    epsilon: float = 1e-6
    name: str = "custom"

    def __post_init__(self):
        s = np.linspace(*self.s_range, 41)[:, None]
        x = np.linspace(*self.x_range, 401)[None, :]
        fx = self.dfdx(s, x)
        fs = self.dfds(s, x)
        if not np.all(np.isfinite(fx)) or np.max(np.abs(fx)) > 1 - self.delta:
            raise FoliationError(f"leaves not spacelike: max |df/dx| = {np.max(np.abs(fx)):.4f} > {1 - self.delta}")
        if np.min(fs) < self.epsilon:
            raise FoliationError(f"leaves do not advance: min df/ds = {np.min(fs):.3g}")

    @classmethod
    def flat(cls, s_range=(0.0, 1.0), x_range=(-10.0, 10.0), velocity: float = 0.0) -> "Foliation":
        """``t = s + v x`` (a boosted frame's simultaneity leaves when ``v != 0``)."""
        return cls(
            lambda s, x: s + velocity * np.asarray(x), s_range, x_range,
            f_x=lambda s, x: np.full(np.broadcast(s, x).shape, float(velocity)),
            f_s=lambda s, x: np.ones(np.broadcast(s, x).shape),
            name="flat" if velocity == 0 else f"boosted({velocity})",
        )

    @classmethod
    def tanh(cls, amplitude=0.4, s_range=(0.0, 1.0), x_range=(-10.0, 10.0)) -> "Foliation":
        """``t = s + a tanh(x)``."""
        return cls(
            lambda s, x: s + amplitude * np.tanh(x), s_range, x_range,
            f_x=lambda s, x: np.broadcast_to(amplitude / np.cosh(x) ** 2, np.broadcast(s, x).shape),
            f_s=lambda s, x: np.ones(np.broadcast(s, x).shape),
            name=f"tanh({amplitude})",
        )

    def __call__(self, s, x):
        return self.f(s, x)

    def dfdx(self, s, x):
        if self.f_x is not None:
            return self.f_x(s, x)
        e = 1e-6
        return (self.f(s, np.asarray(x) + e) - self.f(s, np.asarray(x) - e)) / (2 * e)

    def dfds(self, s, x):
        if self.f_s is not None:
            return self.f_s(s, x)
        e = 1e-6
        return (self.f(np.asarray(s) + e, x) - self.f(np.asarray(s) - e, x)) / (2 * e)

    def leaf(self, s: float) -> Callable:
        return lambda x: self.f(s, x)


@dataclass
class Worldline:
    events: list = field(default_factory=list)  # (t, x)
    velocities: list = field(default_factory=list)
    status: str = "completed"

    def validate(self) -> None:
        if any(abs(v) > 1 + SPEED_SLACK for v in self.velocities):
            raise ValueError("worldline is spacelike somewhere")


def _spinor_field(f: DiracField) -> SplineField:
    s = SplineField(f.spec, f.amplitudes)
    s.mean_density = float(np.mean(f.density()))
    return s


def dirac_timeline(initial: DiracField, horizon: float, dt: float) -> Timeline:
    """Snapshots every ``dt/2`` (precomputed)."""
    step = 0.5 * dt
    count = int(round(horizon / step))
    snaps = [initial]
    for _ in range(count):
        snaps.append(evolve_dirac(snaps[-1], step))
    return Timeline.from_snapshots(snaps, step, to_field=_spinor_field, t0=initial.time)


def _velocity(field: SplineField, x: np.ndarray):
    value = field.evaluate(x[:, None], gradient=False, margin=None)
    j0, j1 = current_density(value)
    node = j0 <= NODE_EPSILON * field.mean_density
    v = np.where(node, 0.0, j1 / np.where(node, 1.0, j0))
    return np.clip(v, -1.0, 1.0), node


@dataclass
class DiracRun:
    initial: np.ndarray
    final: np.ndarray
    status: np.ndarray
    max_speed: float
    paths: np.ndarray | None = None
    times: np.ndarray | None = None

    @property
    def excluded_fraction(self) -> float:
        return float(np.mean(self.status != 0)) if self.status.size else 0.0


def integrate_worldlines(timeline: Timeline, x0, dt: float, t_end: float | None = None, record: int = 0) -> DiracRun:
    """RK4 for ``dx/dt = j1/j0`` for all starting points at once."""
    x = np.array(x0, dtype=float).ravel()
    start = x.copy()
    t0 = timeline.t0
    t_end = timeline.horizon if t_end is None else t_end
    steps = int(round((t_end - t0) / dt))
    status = np.zeros(x.size, dtype=np.int8)
    vmax = 0.0
    paths = np.full((min(record, x.size), steps + 1), np.nan) if record else None
    if record:
        paths[:, 0] = x[: paths.shape[0]]
    for k in range(steps):
        t = t0 + k * dt
        act = np.flatnonzero(status == 0)
        if act.size:
            q = x[act]
            k1, n1 = _velocity(timeline.field(t), q)
            k2, n2 = _velocity(timeline.field(t + dt / 2), q + dt / 2 * k1)
            k3, n3 = _velocity(timeline.field(t + dt / 2), q + dt / 2 * k2)
            k4, n4 = _velocity(timeline.field(t + dt), q + dt * k3)
            vel = (k1 + 2 * k2 + 2 * k3 + k4) / 6
            node = n1 | n2 | n3 | n4
            vmax = max(vmax, float(np.max(np.abs(np.concatenate([k1, k2, k3, k4, vel])))))
            x[act[~node]] = q[~node] + dt * vel[~node]
            status[act[node]] = 1
        if record:
            paths[:, k + 1] = x[: paths.shape[0]]
    times = t0 + dt * np.arange(steps + 1)
    return DiracRun(start, x, status, vmax, paths, times)


def integrate_worldline(field_timeline: Timeline, x0: float, dt: float, t_end: float | None = None) -> Worldline:
    """One Bohm-Dirac worldline from ``x0`` on the initial leaf."""
    f0 = field_timeline.field(field_timeline.t0)
    v0, node = _velocity(f0, np.array([float(x0)]))
    if node[0]:
        raise NodeProximityError("j0 below the node threshold at the starting point")
    run = integrate_worldlines(field_timeline, [x0], dt, t_end, record=1)
    wl = Worldline(status="completed" if run.status[0] == 0 else "hit-node-region")
    for t, x in zip(run.times, run.paths[0]):
        v, _ = _velocity(field_timeline.field(t), np.array([x]))
        wl.events.append((float(t), float(x)))
        wl.velocities.append(float(v[0]))
    return wl


def run_dirac_equivariance(
    initial: DiracField, horizon: float, dt: float, ensemble_size: int, rng: RngStream, bins: int = 32,
    hist_range: tuple | None = None, timeline: Timeline | None = None, record: int = 0,
):
    """Seed worldlines from ``j0`` at ``t0`` and compare ``x(T)`` with ``j0(T)``."""
    tl = dirac_timeline(initial, horizon, dt) if timeline is None else timeline
    spec = initial.spec
    ids = rng.child_ids(ensemble_size)
    x0 = sample_ensemble(initial.density(), spec, rng, ids)[:, 0]
    run = integrate_worldlines(tl, x0, dt, record=record)
    final_field = tl.state(tl.count - 1)
    ok = run.status == 0
    lo = spec.origin_offset[0]
    xs = lo + np.mod(run.final[ok] - lo, spec.length)
    if hist_range is None:
        hist_range = (lo - 0.5 * spec.spacing, lo + spec.length - 0.5 * spec.spacing)
    edges = [np.linspace(hist_range[0], hist_range[1], bins + 1)]
    report = compare_histograms(xs[:, None], final_field.density(), [spec.axis()], spec.spacing, edges,
                                run.excluded_fraction, int(ok.sum()))
    report.metadata.update({"max_speed": run.max_speed, "horizon": horizon, "dt": dt, "mass": initial.mass})
    return report, run
