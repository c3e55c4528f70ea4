"""Two-particle multi-time Dirac wave functions in 1+1 dimensions.

``phi(t1, x1, t2, x2) = (U(t1) (x) U(t2)) phi0`` for the free model, stored
as ``phi0`` with shape ``(N, N, 2, 2)`` (axes ``x1, x2, spin1, spin2``).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dirac import dirac_symbol, mode_propagator
from .errors import DomainViolationError, FoliationError, ShapeError
from .grid import GridSpec

__all__ = [
    "SPACELIKE_MARGIN",
    "MultiTimeWF",
    "is_spacelike",
    "evaluate",
    "restrict_to_leaf",
    "equal_time_state",
    "two_particle_propagate",
    "dirac_apply",
    "consistency_commutator",
]

SPACELIKE_MARGIN = 1e-9


def is_spacelike(t1, x1, t2, x2) -> np.ndarray:
    """Pairwise spacelike separation or identical points (broadcasting)."""
    dt = np.abs(np.asarray(t1, float) - np.asarray(t2, float))
    dx = np.abs(np.asarray(x1, float) - np.asarray(x2, float))
    same = (dt == 0) & (dx == 0)
    return same | (dt <= dx * (1 - SPACELIKE_MARGIN))


@dataclass(frozen=True)
class MultiTimeWF:
    spec: GridSpec
    phi0: np.ndarray
    mass: float = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        n = self.spec.points_per_axis
        if self.spec.dim != 1 or not self.spec.periodic:
            raise ShapeError("multi-time wave functions use a periodic 1D single-particle grid")
        a = np.array(self.phi0, dtype=complex)
        if a.shape != (n, n, 2, 2):
            raise ShapeError(f"phi0 must have shape {(n, n, 2, 2)}, got {a.shape}")
        a.setflags(write=False)
        object.__setattr__(self, "phi0", a)

    @classmethod
    def product(cls, spec, a: np.ndarray, b: np.ndarray, mass=1.0, hbar=1.0) -> "MultiTimeWF":
        """``a (x) b`` for single-particle spinor arrays of shape ``(N, 2)``."""
        return cls(spec, np.einsum("ia,jb->ijab", a, b), mass, hbar)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.phi0) ** 2) * self.spec.spacing**2))

    def normalized(self) -> "MultiTimeWF":
        return MultiTimeWF(self.spec, self.phi0 / self.norm(), self.mass, self.hbar)

    def slot_evolve(self, array: np.ndarray, slot: int, t: float) -> np.ndarray:
        """Apply ``U(t)`` on particle ``slot`` (0 or 1) of a full-grid array."""
        k = self.spec.wavenumbers()
        u = mode_propagator(k, t, self.mass, self.hbar)
        spec_amp = np.fft.fft(array, axis=slot)
        if slot == 0:
            out = np.einsum("kab,kjbc->kjac", u, spec_amp)
        else:
            out = np.einsum("kcb,ikab->ikac", u, spec_amp)
        return np.fft.ifft(out, axis=slot)

    def at_times(self, t1: float, t2: float, order: str = "12") -> np.ndarray:
        """Full grid ``phi(t1, ., t2, .)`` ignoring the domain (internal use)."""
        a = self.phi0
        for slot in order:
            a = self.slot_evolve(a, int(slot) - 1, t1 if slot == "1" else t2)
        return a


def evaluate(phi: MultiTimeWF, t1: float, x1_index, t2: float, x2_index, order: str = "12") -> np.ndarray:
    """``phi(t1, x1, t2, x2)`` on the index slices; every pair must lie in S."""
    x = phi.spec.axis()
    i1 = np.atleast_1d(np.arange(phi.spec.points_per_axis)[x1_index])
    i2 = np.atleast_1d(np.arange(phi.spec.points_per_axis)[x2_index])
    ok = is_spacelike(t1, x[i1][:, None], t2, x[i2][None, :])
    if not np.all(ok):
        raise DomainViolationError(f"{np.count_nonzero(~ok)} requested configuration(s) are not spacelike")
    full = phi.at_times(t1, t2, order)
    return full[np.ix_(i1, i2)]


def _leaf_synthesis(k: np.ndarray, x: np.ndarray, times: np.ndarray, mass, hbar):
    """Kernels of the per-point-time inverse transform.

    ``out[i] = sum_k (cos[i, k] - 1j sin[i, k] h(k)) a[k]`` reproduces
    ``U(times_i)`` followed by the inverse FFT evaluated at ``x_i``.
    """
    n = k.size
    energy = np.sqrt((hbar * k) ** 2 + mass**2)
    phase = np.exp(1j * np.outer(x - x[0], k)) / n  # (i, k), FFT indices start at x[0]
    arg = np.outer(times, energy) / hbar
    cos = phase * np.cos(arg)
    sin = phase * np.sin(arg) / energy[None, :]
    return cos, sin


def restrict_to_leaf(phi: MultiTimeWF, leaf: Callable, check: bool = True, derivative: Callable | None = None) -> np.ndarray:
    """``psi_Sigma(x1, x2) = phi((f(x1), x1), (f(x2), x2))`` on the grid.

    ``leaf`` maps positions to times.  Each particle slot is synthesized
    with its own point-dependent time, so no intermediate full evolution
    is needed.
    """
    spec = phi.spec
    x = spec.axis()
    times = np.asarray(leaf(x), dtype=float) * np.ones_like(x)
    if check:
        slope = derivative(x) if derivative is not None else np.gradient(times, x)
        if np.max(np.abs(slope)) >= 1.0:
            raise FoliationError("leaf is not spacelike on the grid")
    k = spec.wavenumbers()
    h = dirac_symbol(k, phi.mass, phi.hbar)
    cos, sin = _leaf_synthesis(k, x, times, phi.mass, phi.hbar)
    a = np.fft.fft(phi.phi0, axis=0)  # (k, j, a, b)
    ha = np.einsum("kac,kjcb->kjab", h, a)
    # x1 slot: sum over k with point-dependent times
    a = np.einsum("ik,kjab->ijab", cos, a) - 1j * np.einsum("ik,kjab->ijab", sin, ha)
    a = np.fft.fft(a, axis=1)  # (i, k, a, b)
    hb = np.einsum("kbc,ikac->ikab", h, a)
    a = np.einsum("jk,ikab->ijab", cos, a) - 1j * np.einsum("jk,ikab->ijab", sin, hb)
    return a


def equal_time_state(phi: MultiTimeWF, t: float) -> np.ndarray:
    return phi.at_times(t, t)


def two_particle_propagate(phi0: np.ndarray, spec: GridSpec, t: float, mass=1.0, hbar=1.0) -> np.ndarray:
    """Independent oracle: exponentiate ``h(k1) (x) 1 + 1 (x) h(k2)`` per mode pair with ``eigh``."""
    k = spec.wavenumbers()
    n = k.size
    h = dirac_symbol(k, mass, hbar)
    eye = np.eye(2)
    big = np.einsum("iab,cd->iacbd", h, eye)[:, None] + np.einsum("ab,jcd->jacbd", eye, h)[None, :]
    big = big.reshape(n, n, 4, 4)
    w, v = np.linalg.eigh(big)
    prop = np.einsum("ijab,ijb,ijcb->ijac", v, np.exp(-1j * w * t / hbar), np.conj(v))
    spec_amp = np.fft.fft2(phi0, axes=(0, 1)).reshape(n, n, 4)
    out = np.einsum("ijab,ijb->ija", prop, spec_amp).reshape(n, n, 2, 2)
    return np.fft.ifft2(out, axes=(0, 1))


def dirac_apply(spec: GridSpec, mass=1.0, hbar=1.0, slot: int = 0, scale: float = 1.0) -> Callable:
    """Matrix-free ``h`` acting on one slot of an ``(N, N, 2, 2)`` array."""
    k = spec.wavenumbers()
    h = scale * dirac_symbol(k, mass, hbar)

    def apply(a):
        s = np.fft.fft(a, axis=slot)
        if slot == 0:
            out = np.einsum("kac,kjcb->kjab", h, s)
        else:
            out = np.einsum("kbc,ikac->ikab", h, s)
        return np.fft.ifft(out, axis=slot)

    return apply


def consistency_commutator(
    H1_apply: Callable,
    H2_apply: Callable,
    sample_states: Sequence[np.ndarray],
    dt_probe: float | None = None,
    scaled: bool = True,
    hbar: float = 1.0,
) -> float:
    """Largest commutator defect ``||(H1 H2 - H2 H1) chi||`` over the sample.

    With ``scaled`` (default) each defect is divided by
    ``max(||H1 H2 chi||, ||H2 H1 chi||)``, which makes it dimensionless and
    grid independent for commuting slot operators.  Otherwise it is divided
    by ``||chi||``; a given ``dt_probe`` then turns it into the leading
    order-swap error ``dt^2 ||[H1, H2] chi|| / hbar^2`` of one step.
    """
    states = list(sample_states)
    if not states:
        raise ValueError("sample_states must not be empty")
    worst = 0.0
    for chi in states:
        a = H1_apply(H2_apply(chi))
        b = H2_apply(H1_apply(chi))
        diff = np.linalg.norm(a - b)
        if scaled:
            denom = max(np.linalg.norm(a), np.linalg.norm(b))
        else:
            denom = np.linalg.norm(chi)
        val = diff / denom if denom > 0 else 0.0
        if not scaled and dt_probe is not None:
            val *= dt_probe**2 / hbar**2
        worst = max(worst, float(val))
    return worst
