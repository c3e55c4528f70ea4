"""Tensor-product cubic B-spline interpolation on uniform grids.

Periodic axes use the periodic interpolating spline (coefficients by FFT);
box axes use the not-a-knot spline, which reproduces cubic polynomials
exactly.  Gradients are derivatives of the interpolant itself.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import OutOfDomainError, ShapeError
from .grid import GridSpec, GridWavefunction, as_positions

__all__ = ["SplineField", "spline_coefficients", "interpolate_value_and_gradient"]


@lru_cache(maxsize=32)
def _not_a_knot_lu(n: int):
    m = np.zeros((n + 2, n + 2))
    m[0, 0:5] = (1.0, -4.0, 6.0, -4.0, 1.0)
    m[n + 1, n - 3 : n + 2] = (1.0, -4.0, 6.0, -4.0, 1.0)
    for i in range(n):
        m[i + 1, i : i + 3] = (1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0)
    return lu_factor(m)


def _coefficients_along(values: np.ndarray, axis: int, periodic: bool) -> np.ndarray:
    n = values.shape[axis]
    if periodic:
        lam = (4.0 + 2.0 * np.cos(2 * np.pi * np.arange(n) / n)) / 6.0
        shape = [1] * values.ndim
        shape[axis] = n
        out = np.fft.ifft(np.fft.fft(values, axis=axis) / lam.reshape(shape), axis=axis)
        return out if np.iscomplexobj(values) else out.real
    moved = np.moveaxis(values, axis, 0)
    flat = moved.reshape(n, -1)
    rhs = np.zeros((n + 2, flat.shape[1]), dtype=flat.dtype)
    rhs[1:-1] = flat
    lu = _not_a_knot_lu(n)
    if np.iscomplexobj(rhs):
        sol = lu_solve(lu, rhs.real) + 1j * lu_solve(lu, rhs.imag)
    else:
        sol = lu_solve(lu, rhs)
    return np.moveaxis(sol.reshape((n + 2,) + moved.shape[1:]), 0, axis)


def spline_coefficients(values: np.ndarray, dim: int, periodic: bool) -> np.ndarray:
    """B-spline coefficients over the leading ``dim`` axes of ``values``."""
    coeffs = np.asarray(values)
    for axis in range(dim):
        coeffs = _coefficients_along(coeffs, axis, periodic)
    return coeffs


def _weights(u: np.ndarray):
    """Uniform cubic B-spline weights and their derivatives at offsets ``u``."""
    w = np.empty((4,) + u.shape)
    dw = np.empty((4,) + u.shape)
    v = 1.0 - u
    u2 = u * u
    w[3] = u2 * u / 6.0
    w[0] = v * v * v / 6.0
    w[1] = 0.5 * w[3] * 6.0 - u2 + 2.0 / 3.0
    w[2] = 1.0 - w[0] - w[1] - w[3]
    dw[3] = 0.5 * u2
    dw[0] = -0.5 * v * v
    dw[1] = 1.5 * u2 - 2.0 * u
    dw[2] = -dw[0] - dw[1] - dw[3]
    return w, dw


class SplineField:
    """Interpolant of a (possibly multi-component) field on a :class:`GridSpec`.

    ``values`` has shape ``spec.shape + component_shape``.  Component axes
    are carried along untouched, so a spinor field or a whole column of a
    higher-dimensional array can be interpolated in one call.
    """

    def __init__(self, spec: GridSpec, values=None, coefficients=None):
        self.spec = spec
        if coefficients is None:
            values = np.asarray(values)
            if values.shape[: spec.dim] != spec.shape:
                raise ShapeError(f"values shape {values.shape} does not start with {spec.shape}")
            coefficients = spline_coefficients(values, spec.dim, spec.periodic)
        self.coefficients = coefficients
        self.component_shape = coefficients.shape[spec.dim :]

    @classmethod
    def from_wavefunction(cls, psi: GridWavefunction) -> "SplineField":
        return cls(psi.spec, psi.amplitudes)

    def combine(self, other: "SplineField", a: float, b: float) -> "SplineField":
        """Spline of ``a * self + b * other`` (linearity of the coefficient map)."""
        return SplineField(self.spec, coefficients=a * self.coefficients + b * other.coefficients)

    def in_domain(self, points, margin: float = 1.0) -> np.ndarray:
        """Mask of points at least ``margin`` cells inside a box grid."""
        spec = self.spec
        pts = as_positions(points, spec.dim).reshape(-1, spec.dim)
        if spec.periodic:
            return np.all(np.isfinite(pts), axis=1)
        s = (pts - np.asarray(spec.origin_offset)) / spec.spacing
        lo, hi = margin, spec.points_per_axis - 1 - margin
        return np.all((s >= lo) & (s <= hi), axis=1)

    def evaluate(self, points, gradient: bool = True, margin: float | None = 1.0):
        """Value (and gradient) at off-grid points.

        Returns ``value`` with shape ``(M,) + component_shape`` and, when
        requested, ``grad`` with shape ``(M, dim) + component_shape``.
        Points outside the valid region raise :class:`OutOfDomainError`
        unless ``margin`` is None (then box coordinates are clamped).
        """
        spec = self.spec
        pts = as_positions(points, spec.dim).reshape(-1, spec.dim)
        if margin is not None:
            ok = self.in_domain(pts, margin)
            if not np.all(ok):
                raise OutOfDomainError(f"{np.count_nonzero(~ok)} point(s) outside the interpolation domain")
        n = spec.points_per_axis
        d = spec.dim
        m = pts.shape[0]
        offsets = np.arange(-1, 3) if spec.periodic else np.arange(4)
        stride = n if spec.periodic else n + 2
        flat = np.zeros((4,) * d + (m,), dtype=np.int64)
        w_axes, dw_axes = [], []
        for a in range(d):
            s = (pts[:, a] - spec.origin_offset[a]) / spec.spacing
            if not spec.periodic:
                s = np.clip(s, 0.0, n - 1.0)
                i = np.minimum(np.floor(s), n - 2)
            else:
                i = np.floor(s)
            u = s - i
            idx = i.astype(np.int64)[None, :] + offsets[:, None]
            if spec.periodic:
                idx %= n
            flat = flat * stride + idx.reshape((1,) * a + (4,) + (1,) * (d - a - 1) + (m,))
            w, dw = _weights(u)
            w_axes.append(w)
            dw_axes.append(dw / spec.spacing)
        comp = self.component_shape
        block = np.take(self.coefficients.reshape((-1,) + comp), flat, axis=0)
        extra = (1,) * len(comp)

        def contract_all(which):
            arr = block
            for a in range(d):
                arr = np.einsum("k...,k...->...", arr, which[a].reshape((4,) + (1,) * (d - a - 1) + (m,) + extra))
            return arr

        value = contract_all(w_axes)
        grad = None
        if gradient:
            grad = np.stack(
                [contract_all([dw_axes[a] if a == b else w_axes[a] for a in range(d)]) for b in range(d)], axis=1
            )
        return (value, grad) if gradient else value


def interpolate_value_and_gradient(psi: GridWavefunction, q):
    """Cubic-spline value and gradient of ``psi`` at one off-grid position."""
    value, grad = SplineField.from_wavefunction(psi).evaluate(np.atleast_1d(np.asarray(q, float))[None, :])
    return complex(value[0]), grad[0]
