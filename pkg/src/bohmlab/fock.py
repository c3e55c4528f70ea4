"""Truncated bosonic Fock space, the cutoff Hamiltonian and Bell's jump process.

One source particle sits fixed at the origin and creates or absorbs
``y``-particles.  Sector ``n`` lives on the ``n*d``-dimensional product grid
of a ``d``-dimensional single-particle grid; particle ``j`` owns axes
``j*d .. j*d + d - 1``.  Sector 0 is a single complex amplitude.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .bohm import COMPLETED, HIT_NODE, LEFT_DOMAIN, STATUS_NAMES, Configuration, JumpEvent, TrajectoryRecord
from .errors import (
    ExperimentInvalidError,
    ShapeError,
    StiffnessError,
    TruncationError,
    UndefinedRateError,
)
from .grid import GridSpec, GridWavefunction, PhysicalConstants
from .propagators import crank_nicolson_step, kinetic_symbol
from .rng import RngStream, stream_uniforms
from .sampling import sample_cells
from .spline import SplineField
from .timeline import Timeline

__all__ = [
    "GAUSSIAN_BUMP",
    "COMPACT_BUMP",
    "CutoffProfile",
    "FockState",
    "FockModel",
    "FockField",
    "apply_cutoff_hamiltonian",
    "bell_jump_rate_density",
    "jump_rates",
    "BellRun",
    "simulate_bell_process",
    "simulate_bell_ensemble",
    "sector_flux",
    "MAX_SIGMA_DT",
    "TRUNCATION_LIMIT",
]

GAUSSIAN_BUMP = "gaussian-bump"
COMPACT_BUMP = "compact-smooth-bump"
MAX_SIGMA_DT = 0.05
TRUNCATION_LIMIT = 0.01
MAX_SUBSTEP_DEPTH = 8


@dataclass(frozen=True)
class CutoffProfile:
    """Smooth, normalized stand-in for a delta function in ``dim`` dimensions.

    ``gaussian-bump`` has standard deviation ``radius/2`` and is set to zero
    beyond ``4*radius`` (where it is already below 1e-12 of its peak);
    ``compact-smooth-bump`` is ``exp(-1/(1 - r^2/radius^2))`` inside ``radius``.
    """

    shape: str = GAUSSIAN_BUMP
    radius: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if self.shape not in (GAUSSIAN_BUMP, COMPACT_BUMP):
            raise ValueError(f"unknown profile shape {self.shape!r}")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.dim < 1:
            raise ValueError("dim must be at least 1")

    def _radial(self, r):
        r = np.asarray(r, dtype=float)
        if self.shape == GAUSSIAN_BUMP:
            s = 0.5 * self.radius
            return np.where(r <= 4 * self.radius, np.exp(-0.5 * (r / s) ** 2), 0.0)
        x = np.clip(r / self.radius, 0.0, 1.0)
        with np.errstate(divide="ignore", over="ignore"):
            out = np.where(x < 1.0, np.exp(-1.0 / np.maximum(1.0 - x * x, 1e-300)), 0.0)
        return out

    @property
    def normalization(self) -> float:
        """``1 / integral`` of the unnormalized radial shape over ``R^dim``."""
        d = self.dim
        surface = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
        if self.shape == GAUSSIAN_BUMP:
            s = 0.5 * self.radius
            total = (2 * math.pi * s * s) ** (d / 2)
        else:
            total, _ = integrate.quad(lambda r: surface * r ** (d - 1) * float(self._radial(r)), 0, self.radius)
        return 1.0 / total

    def radial(self, r) -> np.ndarray:
        return self.normalization * self._radial(r)

    def values(self, points) -> np.ndarray:
        """phi at points of shape ``(..., dim)`` (or ``(...)`` when dim is 1)."""
        p = np.asarray(points, dtype=float)
        r = np.abs(p) if self.dim == 1 and (p.ndim == 0 or p.shape[-1] != 1) else np.linalg.norm(p, axis=-1)
        return self.radial(r)

    def on_grid(self, spec: GridSpec) -> np.ndarray:
        if spec.dim != self.dim:
            raise ShapeError("profile and grid dimensions differ")
        r = np.sqrt(sum(x * x for x in spec.mesh()))
        return self.radial(r)


@dataclass(frozen=True)
class FockState:
    """Amplitudes for sectors ``0..N_max`` over a single-particle grid ``spec``."""

    spec: GridSpec
    sectors: tuple
    time: float = 0.0
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.sectors) < 1:
            raise ValueError("at least the vacuum sector is required")
        out = [complex(self.sectors[0])]
        for n, s in enumerate(self.sectors[1:], start=1):
            a = np.array(s.amplitudes if isinstance(s, GridWavefunction) else s, dtype=complex)
            if a.shape != self.sector_shape(n):
                raise ShapeError(f"sector {n} has shape {a.shape}, expected {self.sector_shape(n)}")
            a.setflags(write=False)
            out.append(a)
        object.__setattr__(self, "sectors", tuple(out))

    @property
    def truncation(self) -> int:
        return len(self.sectors) - 1

    @property
    def symmetry(self) -> str:
        return "bosonic"

    def sector_shape(self, n: int) -> tuple:
        return (self.spec.points_per_axis,) * (n * self.spec.dim)

    def sector_spec(self, n: int) -> GridSpec:
        return sector_spec(self.spec, n)

    def sector(self, n: int):
        """Sector ``n`` as a :class:`GridWavefunction` (complex for ``n = 0``)."""
        if n == 0:
            return self.sectors[0]
        return GridWavefunction(self.sector_spec(n), self.sectors[n], self.time)

    @classmethod
    def vacuum(cls, spec: GridSpec, truncation: int) -> "FockState":
        return cls(spec, (1.0,) + tuple(np.zeros((spec.points_per_axis,) * (n * spec.dim)) for n in range(1, truncation + 1)))

    @classmethod
    def zeros(cls, spec: GridSpec, truncation: int) -> "FockState":
        s = cls.vacuum(spec, truncation)
        return s.replace((0.0,) + s.sectors[1:])

    def replace(self, sectors=None, time=None, metadata=None) -> "FockState":
        return FockState(
            self.spec, self.sectors if sectors is None else tuple(sectors),
            self.time if time is None else time, self.metadata if metadata is None else metadata,
        )

    def sector_norms(self) -> np.ndarray:
        """``||psi^(n)||^2`` per sector."""
        out = [abs(self.sectors[0]) ** 2]
        for n in range(1, self.truncation + 1):
            out.append(float(np.sum(np.abs(self.sectors[n]) ** 2)) * self.spec.cell_volume**n)
        return np.array(out)

    def norm(self) -> float:
        return float(np.sqrt(self.sector_norms().sum()))

    def normalized(self) -> "FockState":
        n = self.norm()
        if n == 0:
            raise ValueError("cannot normalize the zero state")
        return self.replace([s / n for s in self.sectors])

    def symmetrized(self) -> "FockState":
        return self.replace([self.sectors[0]] + [symmetrize(self.sectors[n], n, self.spec.dim) for n in range(1, self.truncation + 1)])

    def symmetry_defect(self) -> float:
        """Largest ``max|psi - P psi| / max|psi|`` over sectors and swaps."""
        worst = 0.0
        d = self.spec.dim
        for n in range(2, self.truncation + 1):
            a = self.sectors[n]
            scale = np.max(np.abs(a)) or 1.0
            for j in range(n - 1):
                worst = max(worst, float(np.max(np.abs(a - swap_particles(a, j, j + 1, d)))) / scale)
        return worst

    def inner(self, other: "FockState") -> complex:
        v = self.spec.cell_volume
        total = np.conj(self.sectors[0]) * other.sectors[0]
        for n in range(1, self.truncation + 1):
            total += np.vdot(self.sectors[n], other.sectors[n]) * v**n
        return complex(total)

    def pack(self) -> np.ndarray:
        return np.concatenate([np.atleast_1d(self.sectors[0])] + [s.ravel() for s in self.sectors[1:]]).astype(complex)

    def unpack(self, vector: np.ndarray, time=None) -> "FockState":
        out, pos = [complex(vector[0])], 1
        for n in range(1, self.truncation + 1):
            size = self.spec.points_per_axis ** (n * self.spec.dim)
            out.append(np.asarray(vector[pos : pos + size]).reshape(self.sector_shape(n)))
            pos += size
        return self.replace(out, time=time)


def sector_spec(spec: GridSpec, n: int) -> GridSpec:
    return GridSpec(n * spec.dim, spec.points_per_axis, spec.spacing, tuple(spec.origin_offset) * n, spec.boundary)


def _particle_axes(j: int, d: int) -> list:
    return list(range(j * d, (j + 1) * d))


def swap_particles(a: np.ndarray, i: int, j: int, d: int) -> np.ndarray:
    order = list(range(a.ndim))
    for k in range(d):
        order[i * d + k], order[j * d + k] = order[j * d + k], order[i * d + k]
    return np.transpose(a, order)


def symmetrize(a: np.ndarray, n: int, d: int) -> np.ndarray:
    if n < 2:
        return np.asarray(a)
    from itertools import permutations

    perms = list(permutations(range(n)))
    total = np.zeros_like(a, dtype=complex)
    for p in perms:
        order = [p[j] * d + k for j in range(n) for k in range(d)]
        total += np.transpose(a, order)
    return total / len(perms)


def _insert(phi: np.ndarray, lower: np.ndarray, j: int, n: int, d: int) -> np.ndarray:
    """``phi(y_j) * lower(y without y_j)`` as an array on the sector-``n`` grid."""
    axes = _particle_axes(j, d)
    base = lower if np.ndim(lower) else np.asarray(lower)
    base = np.expand_dims(base, axis=tuple(axes)) if base.ndim else base.reshape((1,) * (n * d))
    shape = [1] * (n * d)
    for k, a in enumerate(axes):
        shape[a] = phi.shape[k]
    return phi.reshape(shape) * base


def _remove(phi_conj: np.ndarray, upper: np.ndarray, j: int, d: int, cell: float) -> np.ndarray:
    """``integral phi*(y) upper(..., y at slot j, ...) dy`` on the grid."""
    return np.tensordot(upper, phi_conj, axes=(_particle_axes(j, d), list(range(d)))) * cell


class FockModel:
    """The cutoff Hamiltonian on a fixed single-particle grid.

    ``H = K + g (a(phi) + a^dagger(phi))`` with a symmetrized annihilation
    term so that ``H`` is Hermitian on the full (not only symmetric)
    truncated space.
    """

    def __init__(self, spec: GridSpec, truncation: int, profile: CutoffProfile, constants: PhysicalConstants):
        if truncation < 1:
            raise ValueError("truncation must be at least 1")
        if profile.dim != spec.dim:
            raise ShapeError("cutoff profile dimension differs from the particle grid")
        self.spec = spec
        self.truncation = truncation
        self.profile = profile
        self.constants = constants
        self.g = constants.coupling_g
        self.phi = profile.on_grid(spec)
        self.kinetic = [None] + [kinetic_symbol(sector_spec(spec, n), constants) for n in range(1, truncation + 1)]
        self.size = 1 + sum(spec.points_per_axis ** (n * spec.dim) for n in range(1, truncation + 1))

    def state(self, sectors, time=0.0) -> FockState:
        return FockState(self.spec, tuple(sectors), time)

    def vacuum(self) -> FockState:
        return FockState.vacuum(self.spec, self.truncation)

    def _kin(self, n, a):
        fft_axes = tuple(range(a.ndim))
        return np.fft.ifftn(self.kinetic[n] * np.fft.fftn(a, axes=fft_axes), axes=fft_axes)

    def creation_out(self, lower: np.ndarray, n: int) -> np.ndarray:
        """``(g/sqrt n) sum_j phi(y_j) lower(...)`` into sector ``n``."""
        d = self.spec.dim
        return (self.g / math.sqrt(n)) * sum(_insert(self.phi, lower, j, n, d) for j in range(n))

    def annihilation_out(self, upper: np.ndarray, n: int) -> np.ndarray:
        """Symmetrized ``g sqrt(n+1) integral phi* upper`` into sector ``n``."""
        d = self.spec.dim
        cell = self.spec.cell_volume
        phic = np.conj(self.phi)
        return (self.g / math.sqrt(n + 1)) * sum(_remove(phic, upper, j, d, cell) for j in range(n + 1))

    def apply_sectors(self, sectors) -> list:
        N = self.truncation
        out = []
        for n in range(N + 1):
            term = 0.0 if n == 0 else self._kin(n, sectors[n])
            if self.g != 0:
                if n < N:
                    term = term + self.annihilation_out(sectors[n + 1], n)
                if n > 0:
                    term = term + self.creation_out(sectors[n - 1], n)
            if n == 0:
                term = complex(term)
            out.append(term)
        return out

    def truncation_loss(self, top: np.ndarray) -> float:
        """Norm of the creation term that would leave the top sector.

        Uses the closed form for a symmetric top sector, so the
        ``(N_max+1)``-particle array is never formed.
        """
        n = self.truncation + 1
        d = self.spec.dim
        cell = self.spec.cell_volume
        sym = symmetrize(top, n - 1, d)
        phi2 = float(np.sum(np.abs(self.phi) ** 2)) * cell
        top2 = float(np.sum(np.abs(sym) ** 2)) * cell ** (n - 1)
        a = _remove(np.conj(self.phi), sym, 0, d, cell) if n > 1 else np.asarray(0.0)
        a2 = float(np.sum(np.abs(a) ** 2)) * cell ** (n - 2) if n > 1 else 0.0
        val = self.g**2 / n * (n * phi2 * top2 + n * (n - 1) * a2)
        return math.sqrt(max(val, 0.0))

    def apply(self, state: FockState) -> FockState:
        out = self.apply_sectors(state.sectors)
        meta = {"truncation_loss": self.truncation_loss(state.sectors[-1]) if self.g else 0.0}
        return state.replace(out, metadata=meta)

    def apply_vector(self, vector: np.ndarray) -> np.ndarray:
        s = self.vacuum().unpack(vector)
        return self.vacuum().replace(self.apply_sectors(s.sectors)).pack()

    def preconditioner(self, dt: float) -> Callable:
        c = 0.5j * dt / self.constants.hbar
        denoms = [None] + [1.0 + c * k for k in self.kinetic[1:]]
        template = self.vacuum()

        def apply(vec):
            s = template.unpack(vec)
            out = [s.sectors[0]]
            for n in range(1, self.truncation + 1):
                axes = tuple(range(s.sectors[n].ndim))
                out.append(np.fft.ifftn(np.fft.fftn(s.sectors[n], axes=axes) / denoms[n], axes=axes))
            return template.replace(out).pack()

        return apply

    def weights(self) -> np.ndarray:
        """Quadrature weight of every packed coordinate (inner-product metric)."""
        w = [np.ones(1)]
        for n in range(1, self.truncation + 1):
            w.append(np.full(self.spec.points_per_axis ** (n * self.spec.dim), self.spec.cell_volume**n))
        return np.concatenate(w)

    def step(self, state: FockState, dt: float) -> FockState:
        """One Crank-Nicolson step."""
        vec = crank_nicolson_step(state.pack(), self.apply_vector, dt, self.constants.hbar, self.preconditioner(dt))
        return state.unpack(vec, time=state.time + dt)

    def evolve(self, state: FockState, dt: float, steps: int = 1, check_truncation: bool = False) -> FockState:
        for _ in range(steps):
            state = self.step(state, dt)
            if check_truncation:
                self.check_truncation(state)
        return state

    def check_truncation(self, state: FockState, limit: float = TRUNCATION_LIMIT) -> None:
        top = state.sector_norms()[-1] / max(state.norm() ** 2, 1e-300)
        if top >= limit:
            raise TruncationError(f"top sector carries {top:.3g} of the norm at t={state.time:.4g} (limit {limit})")

    def matrix(self) -> np.ndarray:
        """Dense symmetric form ``W^(1/2) H W^(-1/2)`` (small truncations only)."""
        if self.size > 6000:
            raise ValueError("state space too large for a dense matrix")
        w = np.sqrt(self.weights())
        eye = np.eye(self.size, dtype=complex)
        cols = np.stack([self.apply_vector(eye[:, k] / w[k]) for k in range(self.size)], axis=1)
        return w[:, None] * cols

    def eigenstates(self, count: int = 1):
        """Lowest ``count`` eigenvalues and normalized eigenstates."""
        from scipy.linalg import eigh

        mat = self.matrix()
        mat = 0.5 * (mat + mat.conj().T)
        vals, vecs = eigh(mat, subset_by_index=[0, count - 1])
        w = np.sqrt(self.weights())
        states = [self.vacuum().unpack(vecs[:, k] / w).normalized() for k in range(count)]
        return vals, states

    def timeline(self, initial: FockState, dt: float, horizon: float, snapshots_per_step: int = 4,
                 check_truncation: bool = True) -> Timeline:
        """Precomputed snapshots every ``dt / snapshots_per_step``."""
        step = dt / snapshots_per_step
        count = int(round(horizon / step))
        snaps = [initial]
        for _ in range(count):
            snaps.append(self.step(snaps[-1], step))
            if check_truncation:
                self.check_truncation(snaps[-1])
        return Timeline.from_snapshots(snaps, step, to_field=FockField.from_state, t0=initial.time)


def apply_cutoff_hamiltonian(state: FockState, profile: CutoffProfile, constants: PhysicalConstants) -> FockState:
    """``H_cutoff psi``; the norm of the term dropped above the truncation is in ``metadata``."""
    if state.truncation < 1:
        raise ValueError("truncation must be at least 1")
    return FockModel(state.spec, state.truncation, profile, constants).apply(state)


class FockField:
    """Per-sector spline interpolants of a :class:`FockState` (time-combinable)."""

    def __init__(self, spec: GridSpec, vacuum: complex, fields: list, mean_density: list):
        self.spec = spec
        self.vacuum = vacuum
        self.fields = fields
        self.mean_density = mean_density

    @classmethod
    def from_state(cls, state: FockState) -> "FockField":
        fields = [None] + [SplineField(state.sector_spec(n), state.sectors[n]) for n in range(1, state.truncation + 1)]
        total = max(state.norm() ** 2, 1e-300)
        # mean density of each sector relative to its own cells, for node thresholds
        means = [abs(state.sectors[0]) ** 2] + [float(np.mean(np.abs(state.sectors[n]) ** 2)) for n in range(1, state.truncation + 1)]
        return cls(state.spec, state.sectors[0], fields, [m / total for m in means])

    def combine(self, other: "FockField", a: float, b: float) -> "FockField":
        return FockField(
            self.spec,
            a * self.vacuum + b * other.vacuum,
            [None] + [f.combine(g, a, b) for f, g in zip(self.fields[1:], other.fields[1:])],
            [a * x + b * y for x, y in zip(self.mean_density, other.mean_density)],
        )

    @property
    def truncation(self) -> int:
        return len(self.fields) - 1

    def value(self, n: int, points: np.ndarray, gradient: bool = False):
        """Sector-``n`` amplitude at flattened configurations ``(M, n*d)``."""
        m = points.shape[0]
        if n == 0:
            v = np.full(m, self.vacuum, dtype=complex)
            return (v, np.zeros((m, 0), complex)) if gradient else v
        return self.fields[n].evaluate(points, gradient=gradient, margin=None)


def bell_jump_rate_density(
    state: FockState,
    q_from: Configuration,
    q_to: Configuration,
    H_I_kernel,
    constants: PhysicalConstants = PhysicalConstants(),
) -> float:
    """``max{0, (2/hbar) Im[psi*(q_to) H_I(q_to, q_from) psi(q_from)]} / |psi(q_from)|^2``.

    ``state`` is anything callable as ``state(configuration) -> complex``
    (or a :class:`FockState`, evaluated by spline interpolation);
    ``H_I_kernel(q_to, q_from)`` returns the interaction kernel.
    """
    if abs(q_to.sector - q_from.sector) != 1:
        raise ValueError("jumps link adjacent sectors only")
    amp = _amplitude_function(state)
    psi_from = amp(q_from)
    dens = abs(psi_from) ** 2
    if not dens > 0:
        raise UndefinedRateError("zero density at the departure configuration")
    z = np.conj(amp(q_to)) * H_I_kernel(q_to, q_from) * psi_from
    return max(0.0, 2.0 / constants.hbar * float(np.imag(z))) / dens


def _amplitude_function(state):
    if callable(state) and not isinstance(state, FockState):
        return state
    field = FockField.from_state(state)

    def amp(q: Configuration) -> complex:
        if q.sector == 0:
            return complex(field.vacuum)
        return complex(field.value(q.sector, q.flat()[None, :])[0])

    return amp


def _phi_at(profile: CutoffProfile, pts: np.ndarray) -> np.ndarray:
    return profile.values(pts)


def jump_rates(field: FockField, n: int, q: np.ndarray, profile: CutoffProfile, g: float, hbar: float,
               cell_axis: np.ndarray, cell: float):
    """Jump rates out of sector ``n`` for configurations ``q`` of shape ``(M, n*d)``.

    Returns ``(up, down, dens)``: ``up`` has shape ``(M, cells)`` with the
    rate density of creating a particle in each destination cell (already
    summed over insertion slots and multiplied by the cell volume), ``down``
    has shape ``(M, n)`` with the rate of removing particle ``j``, and
    ``dens`` is ``|psi^(n)(q)|^2``.
    """
    d = field.spec.dim
    m = q.shape[0]
    psi = field.value(n, q)
    dens = np.abs(psi) ** 2
    safe = np.where(dens > 0, dens, 1.0)
    up = np.zeros((m, cell_axis.shape[0]))
    down = np.zeros((m, n))
    if g == 0:
        return up, down, dens
    if n < field.truncation:
        cells = cell_axis.shape[0]
        # destination: new particle in every cell, appended as the last slot
        dest = np.concatenate([np.repeat(q, cells, axis=0), np.tile(cell_axis, (m, 1))], axis=1)
        psi_up = field.value(n + 1, dest).reshape(m, cells)
        kern = g / math.sqrt(n + 1) * _phi_at(profile, cell_axis)
        z = np.conj(psi_up) * kern[None, :] * psi[:, None]
        # every insertion slot gives the same value for a symmetric upper sector
        up = (n + 1) * np.maximum(0.0, 2.0 / hbar * z.imag) * cell / safe[:, None]
    if n > 0:
        for j in range(n):
            rest = np.delete(q.reshape(m, n, d), j, axis=1).reshape(m, (n - 1) * d)
            psi_down = field.value(n - 1, rest)
            kern = g / math.sqrt(n) * np.conj(_phi_at(profile, q[:, j * d : (j + 1) * d] if d > 1 else q[:, j]))
            z = np.conj(psi_down) * kern * psi
            down[:, j] = np.maximum(0.0, 2.0 / hbar * z.imag) / safe
    return up, down, dens


def sector_flux(model: FockModel, state: FockState) -> np.ndarray:
    """Expected net probability flow into each sector from the rate law.

    Entry ``n`` is ``sum_{n'} integral (|psi^(n')|^2 sigma(n' -> n) - |psi^(n)|^2 sigma(n -> n'))``,
    evaluated on the grid.  For a Bell process this equals
    ``d/dt ||psi^(n)||^2``.
    """
    hbar = model.constants.hbar
    N = model.truncation
    d = model.spec.dim
    cell = model.spec.cell_volume
    flux_up = np.zeros(N)  # n -> n+1
    for n in range(N):
        lower = state.sectors[n]
        upper = state.sectors[n + 1]
        created = model.creation_out(lower, n + 1)
        z = np.conj(upper) * created
        # net signed flow n -> n+1; max{0,.} splits it into the two one-way rates
        flux_up[n] = 2.0 / hbar * float(np.sum(z.imag)) * cell ** (n + 1)
    net = np.zeros(N + 1)
    for n in range(N):
        net[n] -= flux_up[n]
        net[n + 1] += flux_up[n]
    return net


@dataclass
class BellRun:
    """Array form of many Bell-process trajectories."""

    times: np.ndarray
    sectors: np.ndarray  # (M, len(times)) sector at every checkpoint
    final_positions: np.ndarray  # (M, N_max*d), NaN padded
    status: np.ndarray
    jump_count: np.ndarray
    records: list = field(default_factory=list)
    max_sigma_dt: float = 0.0

    @property
    def excluded_fraction(self) -> float:
        return float(np.mean(self.status != 0)) if self.status.size else 0.0


class _BellIntegrator:
    """Vectorized Strang-split Bell process: motion, jump at midpoint, motion."""

    DRAWS = 4

    def __init__(self, timeline: Timeline, profile: CutoffProfile, constants: PhysicalConstants, rng: RngStream,
                 stream_ids: np.ndarray, dt_min: float, max_sigma_dt: float = MAX_SIGMA_DT, record: int = 0,
                 node_epsilon: float = 1e-12):
        self.tl = timeline
        self.profile = profile
        self.hbar = constants.hbar
        self.mass = constants.mass(0)
        self.g = constants.coupling_g
        self.rng = rng
        self.ids = np.asarray(stream_ids, dtype=np.uint64)
        self.dt_min = dt_min
        self.max_sigma_dt = max_sigma_dt
        field0 = timeline.field_at_index(0)
        self.spec = field0.spec
        self.d = self.spec.dim
        self.N = field0.truncation
        axes = [self.spec.axis(a) for a in range(self.d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        self.cell_axis = np.stack([m.ravel() for m in mesh], axis=1) if self.d > 1 else axes[0][:, None]
        self.cell = self.spec.cell_volume
        self.node_epsilon = node_epsilon
        self.record = record
        self.events = [[] for _ in range(record)]
        self.samples = [[] for _ in range(record)]
        self.worst = 0.0

    # -- motion -------------------------------------------------------------
    def _velocity(self, t, n, q):
        f = self.tl.field(t)
        value, grad = f.value(n, q, gradient=True)
        dens = np.abs(value) ** 2
        thresh = self.node_epsilon * f.mean_density[n]
        node = dens <= thresh
        v = self.hbar / self.mass * (np.conj(value)[:, None] * grad).imag / np.where(node, 1.0, dens)[:, None]
        v[node] = 0.0
        return v, node

    def move(self, idx, t, h, sector, pos, status):
        """RK4 over ``[t, t+h]`` for trajectories ``idx`` (grouped by sector)."""
        for n in range(1, self.N + 1):
            sub = idx[(sector[idx] == n) & (status[idx] == 0)]
            if not sub.size:
                continue
            q = pos[sub, : n * self.d]
            k1, b1 = self._velocity(t, n, q)
            k2, b2 = self._velocity(t + 0.5 * h, n, q + 0.5 * h * k1)
            k3, b3 = self._velocity(t + 0.5 * h, n, q + 0.5 * h * k2)
            k4, b4 = self._velocity(t + h, n, q + h * k3)
            bad = b1 | b2 | b3 | b4
            new = q + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if self.spec.periodic:
                lo = np.asarray(self.spec.origin_offset[0])
                new = lo + np.mod(new - lo, self.spec.length)
            pos[sub[~bad], : n * self.d] = new[~bad]
            status[sub[bad]] = 1

    # -- jumps --------------------------------------------------------------
    def rates(self, t, idx, sector, pos):
        """Total rate per trajectory in ``idx`` plus the per-destination rates."""
        f = self.tl.field(t)
        total = np.zeros(idx.size)
        detail = {}
        for n in range(self.N + 1):
            where = np.flatnonzero(sector[idx] == n)
            if not where.size:
                continue
            q = pos[idx[where], : n * self.d]
            up, down, dens = jump_rates(f, n, q, self.profile, self.g, self.hbar, self.cell_axis, self.cell)
            zero = dens <= 0
            if np.any(zero & (self.g != 0)):
                raise UndefinedRateError(f"zero density in sector {n} at t={t:.6g}")
            total[where] = up.sum(axis=1) + down.sum(axis=1)
            detail[n] = (where, up, down)
        return total, detail

    def jump(self, t, h, idx, sector, pos, status, counts):
        total, detail = self.rates(t + 0.5 * h, idx, sector, pos)
        self.worst = max(self.worst, float(np.max(total, initial=0.0)) * h)
        slot = int(round((t - self.tl.t0) / self.dt_min))
        u = stream_uniforms(self.rng.master_seed, self.ids[idx], slot * self.DRAWS, self.DRAWS)
        p_jump = -np.expm1(-total * h)
        for n, (where, up, down) in detail.items():
            fire = where[u[where, 0] < p_jump[where]]
            if not fire.size:
                continue
            rows = np.searchsorted(where, fire)
            up_f, down_f = up[rows], down[rows]
            cum = np.concatenate([up_f, down_f], axis=1)
            cum = np.cumsum(cum, axis=1)
            target = u[fire, 1] * cum[:, -1]
            choice = np.minimum((cum < target[:, None]).sum(axis=1), cum.shape[1] - 1)
            for k, i in enumerate(idx[fire]):
                c = choice[k]
                before = Configuration(n, pos[i, : n * self.d].reshape(n, self.d))
                if c < up_f.shape[1]:
                    y = self.cell_axis[c] + (u[fire[k], 2] - 0.5) * self.spec.spacing
                    parts = list(pos[i, : n * self.d].reshape(n, self.d).copy())
                    slot_j = min(int(u[fire[k], 3] * (n + 1)), n)
                    parts.insert(slot_j, y)
                    new_n, kind = n + 1, "emission"
                else:
                    j = c - up_f.shape[1]
                    parts = list(pos[i, : n * self.d].reshape(n, self.d).copy())
                    parts.pop(j)
                    new_n, kind = n - 1, "absorption"
                pos[i] = np.nan
                if new_n:
                    pos[i, : new_n * self.d] = np.concatenate(parts)
                sector[i] = new_n
                counts[i] += 1
                if i < self.record:
                    after = Configuration(new_n, np.asarray(parts).reshape(new_n, self.d) if new_n else ())
                    self.events[i].append((t + 0.5 * h, kind, before, after))

    # -- stepping -----------------------------------------------------------
    def advance(self, idx, t, h, sector, pos, status, counts, depth=0):
        active = idx[status[idx] == 0]
        if not active.size:
            return
        total, _ = self.rates(t, active, sector, pos)
        stiff = total * h > self.max_sigma_dt
        if np.any(stiff):
            if h / 2 < self.dt_min * (1 - 1e-9) or depth >= MAX_SUBSTEP_DEPTH:
                worst = float(np.max(total)) * h
                raise StiffnessError(
                    f"jump rate {np.max(total):.4g} gives sigma*dt = {worst:.3g} > {self.max_sigma_dt} "
                    f"at the minimum sub-step {h:.3g} (t={t:.6g})"
                )
            sub = active[stiff]
            self.advance(sub, t, h / 2, sector, pos, status, counts, depth + 1)
            self.advance(sub, t + h / 2, h / 2, sector, pos, status, counts, depth + 1)
            active = active[~stiff]
            if not active.size:
                return
        self.move(active, t, 0.5 * h, sector, pos, status)
        self.jump(t, h, active[status[active] == 0], sector, pos, status, counts)
        self.move(active, t + 0.5 * h, 0.5 * h, sector, pos, status)


def _initial_configurations(state: FockState, rng: RngStream, ids: np.ndarray):
    """Sector by |psi^(n)|^2 mass, then position within the sector."""
    d = state.spec.dim
    norms = state.sector_norms()
    probs = norms / norms.sum()
    u = stream_uniforms(rng.master_seed, ids, 0, 1 + state.truncation * d + 1)
    sector = np.minimum(np.searchsorted(np.cumsum(probs), u[:, 0] * np.cumsum(probs)[-1], side="right"), state.truncation)
    pos = np.full((ids.size, max(state.truncation * d, 1)), np.nan)
    for n in range(1, state.truncation + 1):
        rows = np.flatnonzero(sector == n)
        if rows.size:
            spec_n = state.sector_spec(n)
            cols = np.concatenate([u[rows, -1:], u[rows, 1 : 1 + n * d]], axis=1)
            pos[rows, : n * d] = sample_cells(np.abs(state.sectors[n]) ** 2, spec_n, cols)
    return sector.astype(np.int64), pos


def simulate_bell_ensemble(
    timeline: Timeline,
    profile: CutoffProfile,
    constants: PhysicalConstants,
    ensemble_size: int,
    rng: RngStream,
    dt: float,
    checkpoints=None,
    record: int = 0,
    min_substep_fraction: float = 1.0 / 64,
    max_excluded: float = 0.01,
    initial=None,
) -> BellRun:
    """Run ``ensemble_size`` Bell trajectories with ``Q(0) ~ |psi_0|^2``.

    ``timeline`` must provide :class:`FockField` interpolants with snapshots
    at least every ``dt/4``.  ``checkpoints`` are step indices at which the
    sector of every trajectory is recorded (default: every step).
    """
    ids = rng.child_ids(ensemble_size)
    state0 = timeline.state(0)
    t0 = timeline.t0
    steps = int(round((timeline.horizon - t0) / dt))
    if abs(steps * dt - (timeline.horizon - t0)) > 1e-9 * max(1.0, timeline.horizon):
        raise ValueError("dt must divide the timeline interval")
    if initial is None:
        sector, pos = _initial_configurations(state0, rng, ids)
    else:
        sector, pos = (np.array(a) for a in initial)
    status = np.zeros(ensemble_size, dtype=np.int8)
    counts = np.zeros(ensemble_size, dtype=np.int64)
    integ = _BellIntegrator(timeline, profile, constants, rng, ids, dt * min_substep_fraction, record=record)
    cps = list(range(steps + 1)) if checkpoints is None else sorted(set(int(c) for c in checkpoints))
    seen = np.zeros((ensemble_size, len(cps)), dtype=np.int64)
    idx_all = np.arange(ensemble_size)
    d = state0.spec.dim

    def snapshot(k, t):
        if k in cps:
            seen[:, cps.index(k)] = sector
        for i in range(integ.record):
            n = int(sector[i])
            conf = Configuration(n, pos[i, : n * d].reshape(n, d) if n else ())
            integ.samples[i].append((t, conf))

    snapshot(0, t0)
    for k in range(steps):
        t = t0 + k * dt
        integ.advance(idx_all, t, dt, sector, pos, status, counts)
        snapshot(k + 1, t + dt)
    records = []
    for i in range(integ.record):
        rec = TrajectoryRecord(status=STATUS_NAMES[status[i]])
        rec.samples = list(integ.samples[i])
        jump_times = []
        for (tj, kind, a, b) in integ.events[i]:
            jump_times.append(tj)
            rec.jumps.append(JumpEvent(tj, kind, a, b))
        # jumps happen at step midpoints; add those instants as samples
        merged = {round(t, 12): c for t, c in rec.samples}
        for (tj, kind, a, b) in integ.events[i]:
            merged[round(tj, 12)] = b
        rec.samples = sorted(merged.items())
        rec.jumps = [JumpEvent(round(j.time, 12), j.kind, j.source, j.destination) for j in rec.jumps]
        records.append(rec)
    run = BellRun(t0 + dt * np.array(cps), seen, pos, status, counts, records, integ.worst)
    if ensemble_size and run.excluded_fraction > max_excluded:
        raise ExperimentInvalidError(f"{run.excluded_fraction:.2%} of Bell trajectories excluded")
    return run


def simulate_bell_process(
    state_timeline: Timeline,
    q0: Configuration,
    dt: float,
    rng: RngStream,
    profile: CutoffProfile,
    constants: PhysicalConstants,
) -> TrajectoryRecord:
    """A single Bell trajectory from configuration ``q0``."""
    N = state_timeline.field_at_index(0).truncation
    if q0.sector > N:
        raise ValueError("initial sector exceeds the truncation")
    d = state_timeline.field_at_index(0).spec.dim
    pos = np.full((1, max(N * d, 1)), np.nan)
    if q0.sector:
        pos[0, : q0.sector * d] = q0.flat()
    run = simulate_bell_ensemble(
        state_timeline, profile, constants, 1, rng, dt, record=1,
        initial=(np.array([q0.sector]), pos), max_excluded=1.0,
    )
    return run.records[0]
