"""Drawing configurations from |psi|^2 on a grid."""
from __future__ import annotations

import numpy as np

from .errors import DegenerateDensityError
from .grid import GridSpec, GridWavefunction
from .rng import RngStream, stream_uniforms

__all__ = ["sample_cells", "sample_from_density", "sample_ensemble"]


def sample_cells(density: np.ndarray, spec: GridSpec, uniforms: np.ndarray) -> np.ndarray:
    """Map uniforms of shape ``(count, 1 + dim)`` to positions.

    The first column picks a cell by inverse CDF of the per-cell masses; the
    remaining columns jitter uniformly inside the cell ``x_i +- h/2``.
    """
    mass = np.asarray(density, dtype=float).ravel()
    if np.any(mass < 0) or not np.all(np.isfinite(mass)):
        raise ValueError("density must be finite and non-negative")
    cdf = np.cumsum(mass)
    total = cdf[-1] if cdf.size else 0.0
    if not total > 0:
        raise DegenerateDensityError("density has zero total mass")
    u = np.asarray(uniforms, dtype=float)
    cells = np.searchsorted(cdf, u[:, 0] * total, side="right")
    cells = np.minimum(cells, mass.size - 1)
    # a uniform landing exactly on a zero-mass plateau edge must not pick an empty cell
    empty = mass[cells] == 0
    if np.any(empty):
        nonzero = np.flatnonzero(mass)
        cells[empty] = nonzero[np.minimum(np.searchsorted(nonzero, cells[empty]), nonzero.size - 1)]
    index = np.unravel_index(cells, spec.shape)
    origin = np.asarray(spec.origin_offset)
    pos = np.stack(index, axis=1) * spec.spacing + origin
    return pos + (u[:, 1 : 1 + spec.dim] - 0.5) * spec.spacing


def sample_from_density(psi: GridWavefunction, rng: RngStream, count: int) -> np.ndarray:
    """``count`` i.i.d. positions from the normalized ``|psi|^2``; shape ``(count, dim)``."""
    if count < 0:
        raise ValueError("count must be non-negative")
    dim = psi.spec.dim
    u = rng.uniforms(count * (1 + dim)).reshape(count, 1 + dim)
    return sample_cells(psi.density(), psi.spec, u)


def sample_ensemble(density: np.ndarray, spec: GridSpec, rng: RngStream, stream_ids, first: int = 0) -> np.ndarray:
    """One position per trajectory stream, reproducible per trajectory."""
    u = stream_uniforms(rng.master_seed, stream_ids, first, 1 + spec.dim)
    return sample_cells(density, spec, u)
