"""Uniform grids, physical constants and grid wave functions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeError

__all__ = ["GridSpec", "PhysicalConstants", "GridWavefunction", "PERIODIC", "BOX"]

PERIODIC = "periodic"
BOX = "box-with-absorbing-margin"
_MAX_POINTS = 2**28


@dataclass(frozen=True)
class GridSpec:
    """Uniform rectangular grid with the same point count on every axis.

    Axis ``a`` has points ``origin_offset[a] + i * spacing`` for
    ``i = 0 .. points_per_axis - 1``.
    """

    dim: int
    points_per_axis: int
    spacing: float
    origin_offset: tuple = None
    boundary: str = PERIODIC

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError("dim must be positive")
        if int(self.points_per_axis) < 8:
            raise ValueError("points_per_axis must be at least 8")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if self.boundary not in (PERIODIC, BOX):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if int(self.points_per_axis) ** int(self.dim) > _MAX_POINTS:
            raise ValueError("grid exceeds 2**28 points")
        origin = self.origin_offset
        if origin is None:
            origin = (-0.5 * self.points_per_axis * self.spacing,) * self.dim
        origin = tuple(float(o) for o in np.broadcast_to(origin, (self.dim,)))
        object.__setattr__(self, "origin_offset", origin)
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "points_per_axis", int(self.points_per_axis))
        object.__setattr__(self, "spacing", float(self.spacing))

    @classmethod
    def centered(cls, dim, points_per_axis, length, boundary=PERIODIC):
        """Grid of total side ``length`` centred on the origin."""
        spacing = length / points_per_axis
        return cls(dim, points_per_axis, spacing, (-0.5 * length,) * dim, boundary)

    @property
    def shape(self) -> tuple:
        return (self.points_per_axis,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def length(self) -> float:
        return self.points_per_axis * self.spacing

    @property
    def periodic(self) -> bool:
        return self.boundary == PERIODIC

    def axis(self, a: int = 0) -> np.ndarray:
        return self.origin_offset[a] + self.spacing * np.arange(self.points_per_axis)

    def mesh(self) -> list:
        return np.meshgrid(*(self.axis(a) for a in range(self.dim)), indexing="ij")

    def wavenumbers(self, a: int = 0) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.points_per_axis, d=self.spacing)

    def compatible(self, other: "GridSpec") -> bool:
        return (
            self.points_per_axis == other.points_per_axis
            and np.isclose(self.spacing, other.spacing, rtol=1e-12, atol=0)
            and np.allclose(self.origin_offset[0], other.origin_offset[0], rtol=0, atol=1e-12 * self.spacing)
            and self.boundary == other.boundary
        )

    def with_dim(self, dim: int) -> "GridSpec":
        """Same axis geometry in another dimension (used for Fock sectors)."""
        return GridSpec(dim, self.points_per_axis, self.spacing, (self.origin_offset[0],) * dim, self.boundary)


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = 1.0
    masses: tuple = (1.0,)
    coupling_g: float = 0.0

    def __post_init__(self):
        masses = tuple(float(m) for m in np.atleast_1d(self.masses))
        if not self.hbar > 0:
            raise ValueError("hbar must be positive")
        if not masses or min(masses) <= 0:
            raise ValueError("masses must be positive")
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "hbar", float(self.hbar))
        object.__setattr__(self, "coupling_g", float(self.coupling_g))

    def mass(self, j: int = 0) -> float:
        """Mass of particle ``j``; a single mass applies to all particles."""
        return self.masses[j] if j < len(self.masses) else self.masses[-1]

    def axis_masses(self, ndim: int) -> np.ndarray:
        return np.array([self.mass(j) for j in range(ndim)])


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.complex128, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GridWavefunction:
    spec: GridSpec
    amplitudes: np.ndarray = field(repr=False)
    time: float = 0.0

    def __post_init__(self):
        amps = _frozen(self.amplitudes)
        if amps.shape != self.spec.shape:
            raise ShapeError(f"amplitudes shape {amps.shape} != grid shape {self.spec.shape}")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "time", float(self.time))

    @classmethod
    def from_function(cls, spec: GridSpec, func, time=0.0, normalize=True):
        amps = np.asarray(func(*spec.mesh()), dtype=complex)
        psi = cls(spec, np.broadcast_to(amps, spec.shape), time)
        return psi.normalized() if normalize else psi

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2) * self.spec.cell_volume))

    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def normalized(self) -> "GridWavefunction":
        n = self.norm()
        if n == 0:
            raise ValueError("cannot normalize the zero wave function")
        return GridWavefunction(self.spec, self.amplitudes / n, self.time)

    def replace(self, amplitudes=None, time=None) -> "GridWavefunction":
        return GridWavefunction(
            self.spec,
            self.amplitudes if amplitudes is None else amplitudes,
            self.time if time is None else time,
        )

    def inner(self, other: "GridWavefunction") -> complex:
        if not self.spec.compatible(other.spec) or self.spec.dim != other.spec.dim:
            raise ShapeError("inner product of wave functions on different grids")
        return complex(np.vdot(self.amplitudes, other.amplitudes) * self.spec.cell_volume)


def check_same_grid(spec: GridSpec, array: np.ndarray, what: str = "field") -> np.ndarray:
    array = np.asarray(array)
    if array.shape != spec.shape:
        raise ShapeError(f"{what} shape {array.shape} does not match grid {spec.shape}")
    return array


def as_positions(q: Sequence | np.ndarray, dim: int) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim == 0:
        q = q[None]
    if q.shape[-1] != dim:
        raise ShapeError(f"position has {q.shape[-1]} coordinates, grid has {dim}")
    return q
