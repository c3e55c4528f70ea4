"""Fixed point source with an interior-boundary condition, s-wave reduction.

States are ``(c0, u)`` with ``u(r) = r psi1(r)`` sampled at ``r_i = i h``,
``i = 1..M``; the outer wall sits at ``R = (M+1) h`` with ``u(R) = 0``.  The
boundary value at the source follows from the vacuum amplitude,
``u(0) = c_s c0``.

Sign convention: with the sector-0 term ``+g u'(0)`` the operator is
symmetric only for ``c_s = -g m / (2 pi hbar^2)``; that is the coefficient
used throughout (``ibc_coefficient``).  Its magnitude is the textbook one.

Two discretizations are provided:

* the *strong form* (:func:`apply_ibc_hamiltonian`): three-point ``u''``
  with the ghost value ``u_0 = c_s c0`` and a second-order one-sided
  ``u'(0)``;
* the *variational form* (:class:`IbcModel`): ``H = W^{-1} A`` from the
  energy ``(4 pi hbar^2 / 2m) sum |u_{i+1} - u_i|^2 / h`` and the
  trapezoid norm.  It is exactly symmetric in the ``W`` inner product and
  positive, and is what evolution and eigen-solves use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .bohm import HIT_NODE, STATUS_NAMES, Configuration, JumpEvent, TrajectoryRecord
from .errors import (
    ConvergenceError,
    DomainViolationError,
    ExperimentInvalidError,
    ResolutionError,
    StiffnessError,
    UndefinedRateError,
)
from .fock import CutoffProfile, GAUSSIAN_BUMP
from .grid import BOX, GridSpec, PhysicalConstants
from .rng import RngStream, stream_uniforms
from .sampling import sample_cells
from .spline import SplineField
from .timeline import Timeline

__all__ = [
    "IBC_TOL",
    "MIN_RADIAL_POINTS",
    "ibc_coefficient",
    "RadialIbcState",
    "IbcModel",
    "check_ibc",
    "ibc_tolerance",
    "apply_ibc_hamiltonian",
    "evolve_ibc",
    "emission_rate",
    "boundary_flux",
    "ibc_exact_energies",
    "IbcRun",
    "simulate_ibc_ensemble",
    "simulate_ibc_process",
    "RadialCutoffModel",
    "renormalization_study",
    "free_self_energy",
]

IBC_TOL = 1e-6
IBC_ABS_TOL = 1e-9
MIN_RADIAL_POINTS = 32


def ibc_coefficient(constants: PhysicalConstants) -> float:
    """``c_s`` in ``u(0+) = c_s c0``."""
    return -constants.coupling_g * constants.mass(0) / (2 * math.pi * constants.hbar**2)


@dataclass(frozen=True)
class RadialIbcState:
    c0: complex
    u: np.ndarray
    spacing: float
    constants: PhysicalConstants = PhysicalConstants()
    time: float = 0.0

    def __post_init__(self):
        u = np.array(self.u, dtype=complex)
        if u.ndim != 1:
            raise ValueError("u must be one-dimensional")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "c0", complex(self.c0))

    @classmethod
    def from_function(cls, c0, func, radius: float, points: int, constants=PhysicalConstants(), normalize=True):
        """Sample ``u = func(r)`` at ``points`` interior nodes of ``(0, radius)``."""
        h = radius / (points + 1)
        r = h * np.arange(1, points + 1)
        s = cls(c0, func(r), h, constants)
        return s.normalized() if normalize else s

    @property
    def points(self) -> int:
        return self.u.size

    @property
    def radius(self) -> float:
        return (self.points + 1) * self.spacing

    def radii(self) -> np.ndarray:
        return self.spacing * np.arange(1, self.points + 1)

    @property
    def boundary_value(self) -> complex:
        return ibc_coefficient(self.constants) * self.c0

    def full_u(self) -> np.ndarray:
        """``u`` at ``r = 0, h, ..., R`` including the two boundary values."""
        return np.concatenate([[self.boundary_value], self.u, [0.0]])

    def sector_norms(self) -> np.ndarray:
        """``(|c0|^2, 4 pi int |u|^2 dr)`` with the trapezoid rule."""
        h = self.spacing
        one = 4 * math.pi * h * (0.5 * abs(self.boundary_value) ** 2 + float(np.sum(np.abs(self.u) ** 2)))
        return np.array([abs(self.c0) ** 2, one])

    def norm(self) -> float:
        return float(np.sqrt(self.sector_norms().sum()))

    def normalized(self) -> "RadialIbcState":
        n = self.norm()
        return self.replace(self.c0 / n, self.u / n)

    def replace(self, c0=None, u=None, time=None) -> "RadialIbcState":
        return RadialIbcState(
            self.c0 if c0 is None else c0, self.u if u is None else u, self.spacing, self.constants,
            self.time if time is None else time,
        )

    def pack(self) -> np.ndarray:
        return np.concatenate([[self.c0], self.u])

    def unpack(self, vector, time=None) -> "RadialIbcState":
        return self.replace(vector[0], vector[1:], time)


def _extrapolate_origin(r: np.ndarray, u: np.ndarray):
    """Quadratic least-squares fit through the first four points, value and slope at 0."""
    coef = np.polyfit(r[:4], u[:4], 2)
    return coef[-1], coef[-2], coef


def check_ibc(state: RadialIbcState) -> float:
    """``|u(0+) - c_s c0|`` with ``u(0+)`` from a quadratic fit on the first four points."""
    if state.points < MIN_RADIAL_POINTS:
        raise ResolutionError(f"need at least {MIN_RADIAL_POINTS} radial points, got {state.points}")
    value, _, _ = _extrapolate_origin(state.radii(), state.u)
    return float(abs(value - state.boundary_value))


def ibc_tolerance(state: RadialIbcState, rel: float = IBC_TOL) -> float:
    scale = abs(state.boundary_value)
    return rel * scale if scale > IBC_ABS_TOL / rel else IBC_ABS_TOL


def _slope_at_origin(state: RadialIbcState) -> complex:
    u0 = state.boundary_value
    u1, u2 = state.u[0], state.u[1]
    return (-3 * u0 + 4 * u1 - u2) / (2 * state.spacing)


def apply_ibc_hamiltonian(state: RadialIbcState, check: bool = True) -> RadialIbcState:
    """Strong-form ``H_IBC``: ``-(hbar^2/2m) u''`` and ``g u'(0+)``."""
    if check:
        res = check_ibc(state)
        if res > ibc_tolerance(state):
            raise DomainViolationError(f"state violates the IBC (residual {res:.3e})")
    c = state.constants
    h = state.spacing
    full = state.full_u()
    lap = (full[2:] - 2 * full[1:-1] + full[:-2]) / h**2
    out_u = -(c.hbar**2 / (2 * c.mass(0))) * lap
    out_c0 = c.coupling_g * _slope_at_origin(state)
    return state.replace(out_c0, out_u)


def emission_rate(state: RadialIbcState) -> float:
    """Total rate of leaving the vacuum, ``4 pi (hbar/m) max{0, Im[u* u'](0+)} / |c0|^2``."""
    dens = abs(state.c0) ** 2
    if not dens > 0:
        raise UndefinedRateError("vacuum amplitude vanishes")
    c = state.constants
    flux = float(np.imag(np.conj(state.boundary_value) * _slope_at_origin(state)))
    return 4 * math.pi * c.hbar / c.mass(0) * max(0.0, flux) / dens


def boundary_flux(state: RadialIbcState) -> float:
    """``-4 pi (hbar/m) Im[u* u'](0+)``, the predicted ``d|c0|^2/dt``."""
    c = state.constants
    return -4 * math.pi * c.hbar / c.mass(0) * float(np.imag(np.conj(state.boundary_value) * _slope_at_origin(state)))


class IbcModel:
    """Variational ``H_IBC`` on ``M`` interior radial points."""

    def __init__(self, points: int, spacing: float, constants: PhysicalConstants):
        if points < MIN_RADIAL_POINTS:
            raise ResolutionError(f"need at least {MIN_RADIAL_POINTS} radial points")
        self.points = points
        self.h = spacing
        self.constants = constants
        self.cs = ibc_coefficient(constants)
        k = 4 * math.pi * constants.hbar**2 / (2 * constants.mass(0) * spacing)
        n = points + 1
        # energy matrix A in the unknowns (c0, u_1..u_M); tridiagonal
        diag = np.full(n, 2 * k)
        diag[0] = k * self.cs**2
        off = np.full(n - 1, -k)
        off[0] = -k * self.cs
        self.diag, self.off = diag, off
        self.w = np.full(n, 4 * math.pi * spacing)
        self.w[0] = 1.0 + 2 * math.pi * spacing * self.cs**2
        self._cache = {}

    @classmethod
    def for_state(cls, state: RadialIbcState) -> "IbcModel":
        return cls(state.points, state.spacing, state.constants)

    def energy_matrix(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)

    def apply_vector(self, x: np.ndarray) -> np.ndarray:
        y = self.diag * x
        y[:-1] += self.off * x[1:]
        y[1:] += self.off * x[:-1]
        return y / self.w

    def apply(self, state: RadialIbcState) -> RadialIbcState:
        return state.unpack(self.apply_vector(state.pack()))

    def inner(self, a: np.ndarray, b: np.ndarray) -> complex:
        return complex(np.vdot(a, self.w * b))

    def _banded(self, dt: float):
        key = round(dt, 15)
        if key not in self._cache:
            c = 0.5j * dt / self.constants.hbar
            ab = np.zeros((3, self.diag.size), dtype=complex)
            ab[0, 1:] = c * self.off
            ab[1] = self.w + c * self.diag
            ab[2, :-1] = c * self.off
            self._cache[key] = (c, ab)
        return self._cache[key]

    def step(self, state: RadialIbcState, dt: float) -> RadialIbcState:
        """One Crank-Nicolson step ``(W + i dt A/2) x' = (W - i dt A/2) x``."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        c, ab = self._banded(dt)
        x = state.pack()
        ax = self.diag * x
        ax[:-1] += self.off * x[1:]
        ax[1:] += self.off * x[:-1]
        rhs = self.w * x - c * ax
        new = linalg.solve_banded((1, 1), ab, rhs)
        if not np.all(np.isfinite(new)):
            raise ConvergenceError("banded Crank-Nicolson solve produced non-finite values")
        return state.unpack(new, state.time + dt)

    def evolve(self, state: RadialIbcState, dt: float, steps: int = 1) -> RadialIbcState:
        for _ in range(steps):
            state = self.step(state, dt)
        return state

    def eigen(self, count: int | None = None):
        """Lowest eigenvalues/eigenstates of the symmetric pencil ``(A, W)``."""
        s = 1.0 / np.sqrt(self.w)
        d = self.diag * s * s
        e = self.off * s[:-1] * s[1:]
        sel = (0, count - 1) if count else None
        vals, vecs = linalg.eigh_tridiagonal(d, e, select="i" if count else "a", select_range=sel)
        return vals, vecs * s[:, None]

    def ground_state(self, time: float = 0.0) -> tuple:
        vals, vecs = self.eigen(1)
        x = vecs[:, 0]
        x = x / np.sqrt(self.inner(x, x).real)
        if x[0].real < 0:
            x = -x
        state = RadialIbcState(x[0], x[1:], self.h, self.constants, time)
        return float(vals[0]), state

    def nonsymmetric_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of ``W^{-1} A`` from a general (non-Hermitian) solver."""
        return linalg.eigvals(self.energy_matrix() / self.w[:, None])

    def timeline(self, initial: RadialIbcState, step: float, horizon: float) -> Timeline:
        count = int(round(horizon / step))
        snaps = [initial]
        for _ in range(count):
            snaps.append(self.step(snaps[-1], step))
        return Timeline.from_snapshots(snaps, step, to_field=RadialField.from_state, t0=initial.time)


def evolve_ibc(state: RadialIbcState, dt: float, steps: int = 1) -> RadialIbcState:
    return IbcModel.for_state(state).evolve(state, dt, steps)


def ibc_exact_energies(constants: PhysicalConstants, radius: float, count: int) -> np.ndarray:
    """Lowest ``count`` eigenvalues of the continuum IBC operator on ``(0, R)``.

    Eigenfunctions are ``u = sin(k (R - r))`` in sector 1, and the boundary
    condition reduces to ``k tan(k R) = g^2 m / (pi hbar^2)``;
    ``E = hbar^2 k^2 / 2m``.  At ``g = 0`` the vacuum (``E = 0``) is followed
    by the Dirichlet modes.
    """
    from scipy.optimize import brentq

    m, hb, g = constants.mass(0), constants.hbar, constants.coupling_g
    rhs = g * g * m / (math.pi * hb * hb)
    out = []
    for n in range(count):
        if rhs == 0:
            out.append(0.0 if n == 0 else hb * hb * (n * math.pi / radius) ** 2 / (2 * m))
            continue
        lo = n * math.pi / radius
        hi = (n + 0.5) * math.pi / radius
        k = brentq(lambda k: k * math.tan(k * radius) - rhs, lo + 1e-14, hi - 1e-12)
        out.append(hb * hb * k * k / (2 * m))
    return np.array(out)


class RadialField:
    """Spline of ``u`` on ``[0, R]`` including the boundary values (time-combinable)."""

    def __init__(self, c0: complex, spline: SplineField, spacing: float, constants: PhysicalConstants):
        self.c0 = c0
        self.spline = spline
        self.spacing = spacing
        self.constants = constants

    @classmethod
    def from_state(cls, state: RadialIbcState) -> "RadialField":
        full = state.full_u()
        spec = GridSpec(1, full.size, state.spacing, (0.0,), BOX)
        return cls(state.c0, SplineField(spec, full), state.spacing, state.constants)

    def combine(self, other: "RadialField", a: float, b: float) -> "RadialField":
        return RadialField(a * self.c0 + b * other.c0, self.spline.combine(other.spline, a, b), self.spacing, self.constants)

    @property
    def radius(self) -> float:
        return self.spline.spec.length - self.spacing

    def slope_at_origin(self) -> complex:
        # one-sided second-order difference on the nodal values
        vals = self.spline.evaluate(np.array([[0.0], [self.spacing], [2 * self.spacing]]), gradient=False, margin=0.0)
        return (-3 * vals[0] + 4 * vals[1] - vals[2]) / (2 * self.spacing)

    def emission_rate(self) -> float:
        dens = abs(self.c0) ** 2
        if not dens > 0:
            raise UndefinedRateError("vacuum amplitude vanishes")
        u0 = ibc_coefficient(self.constants) * self.c0
        c = self.constants
        return 4 * math.pi * c.hbar / c.mass(0) * max(0.0, float(np.imag(np.conj(u0) * self.slope_at_origin()))) / dens

    def velocity(self, r: np.ndarray):
        """Radial Bohm velocity and a node flag at radii ``r``."""
        c = self.constants
        rr = np.clip(r, 0.0, self.radius)[:, None]
        value, grad = self.spline.evaluate(rr, gradient=True, margin=None)
        dens = np.abs(value) ** 2
        node = dens <= 1e-300
        v = c.hbar / c.mass(0) * (np.conj(value) * grad[:, 0]).imag / np.where(node, 1.0, dens)
        v[node] = 0.0
        return v, node


@dataclass
class IbcRun:
    times: np.ndarray
    sectors: np.ndarray  # (M, checkpoints)
    radii: np.ndarray  # (M, checkpoints), NaN in sector 0
    status: np.ndarray
    emissions: np.ndarray
    absorptions: np.ndarray
    records: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def excluded_fraction(self) -> float:
        return float(np.mean(self.status != 0)) if self.status.size else 0.0


def _sample_initial(state: RadialIbcState, rng: RngStream, ids: np.ndarray):
    u = stream_uniforms(rng.master_seed, ids, 0, 3)
    norms = state.sector_norms()
    p1 = norms[1] / norms.sum()
    sector = (u[:, 0] < p1).astype(np.int64)
    r = np.full(ids.size, np.nan)
    rows = np.flatnonzero(sector == 1)
    if rows.size:
        full = state.full_u()
        mass = np.abs(full) ** 2
        mass[0] *= 0.5  # trapezoid end weights
        mass[-1] = 0.0
        spec = GridSpec(1, full.size, state.spacing, (0.0,), BOX)
        r[rows] = np.abs(sample_cells(mass, spec, u[rows, 1:3])[:, 0])
    return sector, r


def simulate_ibc_ensemble(
    timeline: Timeline,
    ensemble_size: int,
    rng: RngStream,
    dt: float,
    checkpoints=None,
    record: int = 0,
    r_min: float | None = None,
    r_start: float | None = None,
    max_sigma_dt: float = 0.05,
    min_substep_fraction: float = 1.0 / 64,
    initial=None,
    max_excluded: float = 0.01,
) -> IbcRun:
    """Emission/absorption process against an IBC timeline.

    Sector 1 moves radially with RK4; crossing ``r_min`` is an absorption at
    the linearly interpolated crossing time.  Sector 0 emits with
    probability ``1 - exp(-sigma dt)`` at step midpoints, placing the new
    particle at ``r_start`` and moving it for the rest of the step.
    """
    field0 = timeline.field_at_index(0)
    h = field0.spacing
    r_min = 0.5 * h if r_min is None else r_min
    r_start = h if r_start is None else r_start
    t0 = timeline.t0
    steps = int(round((timeline.horizon - t0) / dt))
    ids = rng.child_ids(ensemble_size)
    if initial is None:
        sector, r = _sample_initial(timeline.state(0), rng, ids)
    else:
        sector, r = (np.array(a, dtype=float) for a in initial)
        sector = sector.astype(np.int64)
    status = np.zeros(ensemble_size, dtype=np.int8)
    emissions = np.zeros(ensemble_size, dtype=np.int64)
    absorptions = np.zeros(ensemble_size, dtype=np.int64)
    cps = list(range(steps + 1)) if checkpoints is None else sorted(set(int(c) for c in checkpoints))
    seen_sector = np.zeros((ensemble_size, len(cps)), dtype=np.int64)
    seen_r = np.full((ensemble_size, len(cps)), np.nan)
    samples = [[] for _ in range(min(record, ensemble_size))]
    events = [[] for _ in range(min(record, ensemble_size))]
    dt_min = dt * min_substep_fraction
    worst = 0.0
    wall = field0.radius

    def conf(i):
        return Configuration(1, [[r[i]]]) if sector[i] == 1 else Configuration.empty()

    def move(idx, t, step):
        idx = idx[(sector[idx] == 1) & (status[idx] == 0)]
        if not idx.size:
            return
        q = r[idx]

        def vel(tt, x):
            return timeline.field(tt).velocity(x)

        k1, n1 = vel(t, q)
        k2, n2 = vel(t + 0.5 * step, q + 0.5 * step * k1)
        k3, n3 = vel(t + 0.5 * step, q + 0.5 * step * k2)
        k4, n4 = vel(t + step, q + step * k3)
        new = q + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        node = n1 | n2 | n3 | n4
        status[idx[node]] = 1
        out = (new > wall) & ~node
        status[idx[out]] = 2
        hit = (new <= r_min) & ~node
        for j in np.flatnonzero(hit):
            i = idx[j]
            frac = (q[j] - r_min) / (q[j] - new[j]) if q[j] != new[j] else 0.0
            tc = t + np.clip(frac, 0.0, 1.0) * step
            before = Configuration(1, [[r_min]])
            sector[i] = 0
            r[i] = np.nan
            absorptions[i] += 1
            if i < len(events):
                events[i].append((tc, "absorption", before, Configuration.empty()))
        keep = ~(node | out | hit)
        r[idx[keep]] = new[keep]

    def emit(idx, t, step):
        nonlocal worst
        idx = idx[(sector[idx] == 0) & (status[idx] == 0)]
        if not idx.size:
            return
        sigma = timeline.field(t + 0.5 * step).emission_rate()
        worst = max(worst, sigma * step)
        slot = int(round((t - t0) / dt_min))
        u = stream_uniforms(rng.master_seed, ids[idx], 8 + 2 * slot, 1)[:, 0]
        fire = idx[u < -np.expm1(-sigma * step)]
        for i in fire:
            sector[i] = 1
            r[i] = r_start
            emissions[i] += 1
            if i < len(events):
                events[i].append((t + 0.5 * step, "emission", Configuration.empty(), Configuration(1, [[r_start]])))

    def advance(idx, t, step):
        # the emission rate is shared by every vacuum trajectory, so sub-steps are global
        sigma = max(timeline.field(t).emission_rate(), timeline.field(t + 0.5 * step).emission_rate())
        if sigma * step > max_sigma_dt:
            if step / 2 < dt_min * (1 - 1e-9):
                raise StiffnessError(
                    f"emission rate {sigma:.4g} gives sigma*dt = {sigma * step:.3g} at the minimum sub-step {step:.3g}"
                )
            advance(idx, t, step / 2)
            advance(idx, t + step / 2, step / 2)
            return
        move(idx, t, 0.5 * step)
        emit(idx, t, step)
        move(idx, t + 0.5 * step, 0.5 * step)

    def snapshot(k, t):
        if k in cps:
            j = cps.index(k)
            seen_sector[:, j] = sector
            seen_r[:, j] = np.where(sector == 1, r, np.nan)
        for i in range(len(samples)):
            samples[i].append((t, conf(i)))

    idx_all = np.arange(ensemble_size)
    snapshot(0, t0)
    for k in range(steps):
        t = t0 + k * dt
        advance(idx_all, t, dt)
        snapshot(k + 1, t + dt)
    records = []
    for i in range(len(samples)):
        rec = TrajectoryRecord(status=STATUS_NAMES[status[i]])
        merged = {round(t, 12): c for t, c in samples[i]}
        for tc, kind, a, b in events[i]:
            merged[round(tc, 12)] = b
            rec.jumps.append(JumpEvent(round(tc, 12), kind, a, b))
        rec.samples = sorted(merged.items())
        records.append(rec)
    run = IbcRun(
        t0 + dt * np.array(cps), seen_sector, seen_r, status, emissions, absorptions, records,
        {"r_min": r_min, "r_start": r_start, "max_sigma_dt": worst},
    )
    if ensemble_size and run.excluded_fraction > max_excluded:
        raise ExperimentInvalidError(f"{run.excluded_fraction:.2%} of IBC trajectories excluded")
    return run


def simulate_ibc_process(state_timeline: Timeline, q0: Configuration, dt: float, rng: RngStream, **kwargs) -> TrajectoryRecord:
    """One trajectory of the IBC process from ``q0`` (empty or one radius)."""
    if q0.sector > 1:
        raise ValueError("the IBC process has sectors 0 and 1 only")
    if q0.sector == 1 and not q0.positions[0][0] > 0:
        raise ValueError("initial radius must be positive")
    r = np.array([q0.positions[0][0] if q0.sector else np.nan])
    run = simulate_ibc_ensemble(
        state_timeline, 1, rng, dt, record=1, initial=(np.array([q0.sector]), r), max_excluded=1.0, **kwargs
    )
    return run.records[0]


def free_self_energy(profile: CutoffProfile, constants: PhysicalConstants, samples: int = 40001) -> float:
    """``g^2 <phi, K^{-1} phi>`` in free three-dimensional space, ``K = -hbar^2 Laplacian / 2m``.

    Uses the radial potential ``Phi(r) = r^{-1} int_0^r phi s^2 ds + int_r^inf phi s ds``
    of the charge distribution ``phi``.
    """
    from scipy.integrate import cumulative_trapezoid, trapezoid

    if profile.dim != 3:
        raise ValueError("self-energy needs a three-dimensional profile")
    top = 4.0 * profile.radius
    r = np.linspace(0.0, top, samples)
    phi = profile.radial(r)
    inner = cumulative_trapezoid(phi * r * r, r, initial=0.0)
    outer = trapezoid(phi * r, r) - cumulative_trapezoid(phi * r, r, initial=0.0)
    pot = np.where(r > 0, inner / np.where(r > 0, r, 1.0), 0.0) + outer
    coulomb = 4 * math.pi * trapezoid(r * r * phi * pot, r)
    g = constants.coupling_g
    return g * g * 2 * constants.mass(0) / constants.hbar**2 * coulomb


class RadialCutoffModel:
    """s-wave ``H_cutoff`` with truncation 1 on the same radial grid.

    ``u_0 = 0`` (regular at the source).  The vacuum couples to
    ``4 pi g int r phi(r) u(r) dr`` and creation adds ``g r phi(r) c0`` to the
    ``u`` equation.  ``phi`` is normalized in three dimensions.
    """

    def __init__(self, points: int, spacing: float, constants: PhysicalConstants, profile: CutoffProfile):
        if profile.dim != 3:
            raise ValueError("the radial cutoff model needs a three-dimensional profile")
        self.points = points
        self.h = spacing
        self.constants = constants
        self.profile = profile
        r = spacing * np.arange(1, points + 1)
        kin = constants.hbar**2 / (2 * constants.mass(0) * spacing**2)
        n = points + 1
        a = np.zeros((n, n))
        w = np.full(n, 4 * math.pi * spacing)
        w[0] = 1.0
        idx = np.arange(1, n)
        a[idx, idx] = w[1:] * 2 * kin
        a[idx[:-1], idx[:-1] + 1] = -w[1] * kin
        a[idx[:-1] + 1, idx[:-1]] = -w[1] * kin
        coupling = constants.coupling_g * 4 * math.pi * spacing * r * profile.radial(r)
        a[0, 1:] = coupling
        a[1:, 0] = coupling
        self.a = a
        self.w = w

    def symmetric_matrix(self, renormalized: bool = True) -> np.ndarray:
        s = 1.0 / np.sqrt(self.w)
        sym = self.a * s[:, None] * s[None, :]
        if renormalized:
            sym[0, 0] += self.self_energy()
        return sym

    def self_energy(self) -> float:
        """Vacuum shift ``g^2 <phi, K^{-1} phi>`` of the grid operator, referred to free space.

        With one sector above the vacuum only the vacuum is dressed, so the
        divergent constant sits entirely in sector 0 and is removed there.
        The Dirichlet wall at ``R`` lowers the shift of a radial profile by
        exactly ``g^2 m / (2 pi hbar^2 R)``; adding it back makes the
        constant independent of the box (compare :func:`free_self_energy`).
        """
        s = 1.0 / np.sqrt(self.w)
        sym = self.a * s[:, None] * s[None, :]
        b = sym[0, 1:]
        ab = np.zeros((2, b.size))
        ab[0, 1:] = np.diag(sym, 1)[1:]
        ab[1] = np.diag(sym)[1:]
        lattice = float(b @ linalg.solveh_banded(ab, b))
        c = self.constants
        wall = (self.points + 1) * self.h
        return lattice + c.coupling_g**2 * c.mass(0) / (2 * math.pi * c.hbar**2 * wall)

    def eigenvalues(self, count: int, renormalized: bool = True) -> np.ndarray:
        sym = self.symmetric_matrix(renormalized)
        try:
            return linalg.eigh(sym, eigvals_only=True, subset_by_index=[0, count - 1])
        except linalg.LinAlgError as exc:
            raise ConvergenceError(f"eigen-solver failed: {exc}") from exc


def renormalization_study(
    radii,
    k_eigenvalues: int,
    points: int,
    spacing: float,
    constants: PhysicalConstants,
    shape: str = GAUSSIAN_BUMP,
) -> list:
    """Eigenvalue gaps of ``H_cutoff`` for shrinking cutoff radii against ``H_IBC``.

    Returns rows ``{profile_radius, gap_index, cutoff_gap, ibc_gap, rel_error}``.
    """
    radii = [float(x) for x in radii]
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise ValueError("profile radii must be strictly decreasing")
    if k_eigenvalues < 2:
        raise ValueError("need at least two eigenvalues for a gap")
    ibc_vals, _ = IbcModel(points, spacing, constants).eigen(k_eigenvalues)
    ibc_gaps = ibc_vals[1:] - ibc_vals[0]
    rows = []
    for rad in radii:
        vals = RadialCutoffModel(points, spacing, constants, CutoffProfile(shape, rad, 3)).eigenvalues(k_eigenvalues)
        gaps = vals[1:] - vals[0]
        for i, (cg, ig) in enumerate(zip(gaps, ibc_gaps), start=1):
            rows.append(
                {
                    "profile_radius": rad,
                    "gap_index": i,
                    "cutoff_gap": float(cg),
                    "ibc_gap": float(ig),
                    "rel_error": float(abs(cg - ig) / abs(ig)) if ig else float(abs(cg - ig)),
                }
            )
    return rows
