"""Unitary propagators and the numerical symmetry check.

Two routes:

* :func:`evolve_schrodinger` - Strang splitting, half potential phase /
  spectral kinetic step / half potential phase.  Periodic grids only use FFTs;
  box grids are routed to Crank-Nicolson with a sine-spectral (Dirichlet)
  kinetic operator.
* :func:`evolve_crank_nicolson` - generic Cayley step for any symmetric
  Hamiltonian given as a callable, solved with preconditioned GMRES.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.fft import dstn, idstn
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import ConvergenceError, NumericalBlowupError, ShapeError
from .grid import GridSpec, GridWavefunction, PhysicalConstants, check_same_grid

__all__ = [
    "kinetic_symbol",
    "apply_kinetic",
    "kinetic_propagator",
    "evolve_schrodinger",
    "crank_nicolson_step",
    "evolve_crank_nicolson",
    "absorbing_potential",
    "symmetry_residual",
]

CN_RESIDUAL = 1e-10


def _axis_wavenumbers(spec: GridSpec, a: int) -> np.ndarray:
    if spec.periodic:
        return spec.wavenumbers(a)
    n = spec.points_per_axis
    return np.pi * np.arange(1, n + 1) / ((n + 1) * spec.spacing)


def kinetic_symbol(spec: GridSpec, constants: PhysicalConstants) -> np.ndarray:
    """Kinetic energy per spectral mode, ``sum_a hbar^2 k_a^2 / 2 m_a``.

    Periodic axes use Fourier modes, box axes use Dirichlet sine modes.
    """
    total = np.zeros(spec.shape)
    for a in range(spec.dim):
        k = _axis_wavenumbers(spec, a)
        shape = [1] * spec.dim
        shape[a] = -1
        total = total + (constants.hbar**2 * k**2 / (2 * constants.mass(a))).reshape(shape)
    return total


def _forward(spec, f):
    return np.fft.fftn(f) if spec.periodic else dstn(f, type=1)


def _backward(spec, f):
    return np.fft.ifftn(f) if spec.periodic else idstn(f, type=1)


def apply_kinetic(spec: GridSpec, constants: PhysicalConstants, f: np.ndarray) -> np.ndarray:
    return _backward(spec, kinetic_symbol(spec, constants) * _forward(spec, f))


def kinetic_propagator(spec: GridSpec, constants: PhysicalConstants, dt: float) -> np.ndarray:
    return np.exp(-1j * kinetic_symbol(spec, constants) * dt / constants.hbar)


def _check_finite(a: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericalBlowupError("non-finite amplitude after propagation step")
    return a


def evolve_schrodinger(
    psi: GridWavefunction,
    potential,
    dt: float,
    constants: PhysicalConstants = PhysicalConstants(),
    steps: int = 1,
) -> GridWavefunction:
    """Advance ``psi`` by ``steps`` Strang steps of length ``dt``.

    ``potential`` may be complex (absorbing margins) but must be finite.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    spec = psi.spec
    v = np.asarray(potential if potential is not None else 0.0)
    if v.ndim:
        check_same_grid(spec, v, "potential")
    v = np.broadcast_to(v, spec.shape)
    if not np.all(np.isfinite(v)):
        raise ValueError("potential must be finite on the grid")
    if not spec.periodic:
        h = lambda f: apply_kinetic(spec, constants, f) + v * f
        pre = _kinetic_preconditioner(spec, constants, dt)
        out = psi
        for _ in range(steps):
            out = evolve_crank_nicolson(out, h, dt, constants.hbar, preconditioner=pre)
        return out
    half = np.exp(-0.5j * v * dt / constants.hbar)
    kin = kinetic_propagator(spec, constants, dt)
    a = psi.amplitudes
    for _ in range(steps):
        a = half * np.fft.ifftn(kin * np.fft.fftn(half * a))
    return psi.replace(_check_finite(a), psi.time + steps * dt)


def _kinetic_preconditioner(spec, constants, dt):
    denom = 1.0 + 0.5j * dt * kinetic_symbol(spec, constants) / constants.hbar
    return lambda f: _backward(spec, _forward(spec, f) / denom)


def crank_nicolson_step(
    vector: np.ndarray,
    hamiltonian_apply: Callable[[np.ndarray], np.ndarray],
    dt: float,
    hbar: float = 1.0,
    preconditioner: Callable | None = None,
    tol: float = CN_RESIDUAL,
    maxiter: int = 200,
) -> np.ndarray:
    """Solve ``(1 + i dt H / 2hbar) x = (1 - i dt H / 2hbar) vector``.

    ``hamiltonian_apply`` and ``preconditioner`` act on arrays shaped like
    ``vector``.  The true relative residual is checked after GMRES returns.
    """
    shape = vector.shape
    b0 = np.asarray(vector, dtype=complex).ravel()
    c = 0.5j * dt / hbar

    def hflat(x):
        return np.asarray(hamiltonian_apply(x.reshape(shape)), dtype=complex).ravel()

    hb = hflat(b0)
    rhs = b0 - c * hb
    if not np.any(hb):
        return b0.reshape(shape).copy()
    a_op = LinearOperator((b0.size, b0.size), matvec=lambda x: x + c * hflat(x), dtype=complex)
    m_op = None
    if preconditioner is not None:
        m_op = LinearOperator(
            (b0.size, b0.size),
            matvec=lambda x: np.asarray(preconditioner(x.reshape(shape)), dtype=complex).ravel(),
            dtype=complex,
        )
    x0 = b0 - 2 * c * hb
    x, info = gmres(a_op, rhs, x0=x0, rtol=0.01 * tol, atol=0.0, restart=60, maxiter=maxiter, M=m_op)
    resid = np.linalg.norm(a_op.matvec(x) - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if resid > tol:
        raise ConvergenceError(f"Crank-Nicolson solve stalled at relative residual {resid:.2e}")
    return _check_finite(x).reshape(shape)


def evolve_crank_nicolson(
    psi: GridWavefunction,
    hamiltonian_apply: Callable[[np.ndarray], np.ndarray],
    dt: float,
    hbar: float = 1.0,
    preconditioner: Callable | None = None,
    steps: int = 1,
) -> GridWavefunction:
    if not dt > 0:
        raise ValueError("dt must be positive")
    a = psi.amplitudes
    for _ in range(steps):
        a = crank_nicolson_step(a, hamiltonian_apply, dt, hbar, preconditioner)
    return psi.replace(a, psi.time + steps * dt)


def absorbing_potential(spec: GridSpec, strength: float = 5.0, fraction: float = 0.1) -> np.ndarray:
    """Smooth ``-i W`` ramp over the outer ``fraction`` of every axis.

    ``W`` rises as ``sin^2`` from zero at the inner edge of the margin to
    ``strength`` at the grid boundary.
    """
    n = spec.points_per_axis
    width = max(1, int(round(fraction * n)))
    ramp = np.zeros(n)
    depth = np.arange(width, 0, -1) / width
    ramp[:width] = np.sin(0.5 * np.pi * depth) ** 2
    ramp[n - width :] = np.maximum(ramp[n - width :], ramp[:width][::-1])
    w = np.zeros(spec.shape)
    for a in range(spec.dim):
        shape = [1] * spec.dim
        shape[a] = n
        w = np.maximum(w, ramp.reshape(shape))
    return -1j * strength * w


def symmetry_residual(
    hamiltonian_apply: Callable[[np.ndarray], np.ndarray],
    basis_sample: Sequence[np.ndarray],
    inner: Callable[[np.ndarray, np.ndarray], complex] | None = None,
) -> float:
    """Largest normalized asymmetry ``|<f,Hg> - <Hf,g>|`` over sample pairs.

    Each pair is divided by ``|f| |g| |H|_sample`` where ``|H|_sample`` is
    the largest ``|Hf| / |f|`` seen on the sample.
    """
    sample = [np.asarray(f) for f in basis_sample]
    if not sample:
        raise ValueError("basis_sample must not be empty")
    if inner is None:
        inner = lambda f, g: np.vdot(f, g)
    shapes = {f.shape for f in sample}
    if len(shapes) != 1:
        raise ShapeError("basis functions have different shapes")
    images = [np.asarray(hamiltonian_apply(f)) for f in sample]
    norms = [np.sqrt(abs(inner(f, f))) for f in sample]
    op_norm = max(np.sqrt(abs(inner(hf, hf))) / n for hf, n in zip(images, norms) if n > 0)
    if op_norm == 0:
        return 0.0
    worst = 0.0
    for i, (f, hf) in enumerate(zip(sample, images)):
        for g, hg, ng in zip(sample[i:], images[i:], norms[i:]):
            diff = abs(inner(f, hg) - inner(hf, g))
            worst = max(worst, diff / (norms[i] * ng * op_norm))
    return float(worst)
