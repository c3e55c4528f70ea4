"""Two-particle Bohm-Dirac dynamics along a foliation, and leaf equivariance.

A configuration on leaf ``t = f(s, x)`` is ``(x1, x2)``; the wave function
there is the multi-time one restricted to the leaf.  With the covector
``N(x) = (1, -f_x)`` (unnormalized, so only directions are meaningful)

    M(x)     = gamma0 N-slash(x) = 1 - f_x sigma_x          (positive definite)
    rho      = Psi^dagger (M(x1) (x) M(x2)) Psi             (per dx1 dx2)
    J1^mu    = Psi^dagger (gamma0 gamma^mu (x) M(x2)) Psi    (particle-1 tangent)

and each particle follows ``dx_k/ds = V_k f_s / (1 - f_x V_k)`` with
``V_k = J_k^1 / J_k^0``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dirac import (
    SIGMA_X,
    DiracField,
    Foliation,
    current_density,
)
from .errors import ExperimentInvalidError, NodeProximityError
from .grid import GridSpec
from .multitime import MultiTimeWF, restrict_to_leaf
from .rng import RngStream
from .sampling import sample_ensemble
from .spline import SplineField
from .stats import compare_histograms
from .timeline import Timeline

__all__ = [
    "leaf_matrices",
    "leaf_density",
    "pair_currents",
    "bmf_velocities",
    "leaf_field",
    "leaf_timeline",
    "leaf_step",
    "BmfRun",
    "integrate_bmf",
    "run_bmf_equivariance",
    "bell_pair_state",
    "write_worldlines_csv",
]

NODE_EPSILON = 1e-12
MAX_EXCLUDED = 0.01


def leaf_matrices(fx) -> np.ndarray:
    """``1 - f_x sigma_x`` with shape ``fx.shape + (2, 2)``."""
    fx = np.asarray(fx, dtype=float)
    return np.eye(2) - fx[..., None, None] * SIGMA_X


def pair_currents(psi: np.ndarray, fx1, fx2):
    """Density and tangents from spinor-spinor values ``psi[..., a, b]``.

    Returns ``rho, (J1^0, J1^1), (J2^0, J2^1)``.
    """
    m1 = leaf_matrices(fx1)
    m2 = leaf_matrices(fx2)
    conj = np.conj(psi)
    m2psi = np.einsum("...bc,...ac->...ab", m2, psi)
    rho = np.real(np.einsum("...ab,...ac,...cb->...", conj, m1, m2psi))
    j10 = np.real(np.sum(conj * m2psi, axis=(-2, -1)))
    j11 = np.real(np.sum(conj * np.einsum("ac,...cb->...ab", SIGMA_X, m2psi), axis=(-2, -1)))
    m1psi = np.einsum("...ac,...cb->...ab", m1, psi)
    j20 = np.real(np.sum(conj * m1psi, axis=(-2, -1)))
    j21 = np.real(np.sum(conj * np.einsum("bc,...ac->...ab", SIGMA_X, m1psi), axis=(-2, -1)))
    return rho, (j10, j11), (j20, j21)


def leaf_density(psi_sigma: np.ndarray, fx: np.ndarray, induced: bool = False) -> np.ndarray:
    """``rho`` on a leaf grid from ``psi_sigma`` with shape ``(N, N, 2, 2)``.

    Per ``dx1 dx2`` by default; ``induced`` divides by the length factors
    ``sqrt(1 - f_x^2)`` of both points (density per induced measure).
    """
    rho, _, _ = pair_currents(psi_sigma, fx[:, None], fx[None, :])
    if induced:
        g = np.sqrt(1 - np.asarray(fx) ** 2)
        rho = rho / (g[:, None] * g[None, :])
    return rho


def _tangent_speed(j0, j1, fx, fs):
    v = np.clip(j1 / j0, -1.0, 1.0)
    return v, v * fs / (1.0 - fx * v)


def bmf_velocities(phi, foliation: Foliation | None, s: float, config, node_epsilon: float = NODE_EPSILON):
    """Worldline tangents ``(J_k^0, J_k^1)`` at a leaf configuration.

    ``phi`` is a :class:`MultiTimeWF` (two particles, ``config = (x1, x2)``
    on grid indices or positions) or a :class:`DiracField` (one particle,
    no foliation needed).  Positions off the grid are spline-interpolated.
    """
    if isinstance(phi, DiracField):
        x = np.atleast_1d(np.asarray(config, dtype=float))
        value = SplineField(phi.spec, phi.amplitudes).evaluate(x[:, None], gradient=False, margin=None)
        j0, j1 = current_density(value)
        if np.any(j0 <= node_epsilon * np.mean(phi.density())):
            raise NodeProximityError("j0 below the node threshold")
        return (np.stack([j0, j1], axis=-1),)
    x1, x2 = (float(c) for c in config)
    psi = leaf_field(phi, foliation, s)
    value = psi.evaluate(np.array([[x1, x2]]), gradient=False, margin=None)[0]
    fx1, fx2 = foliation.dfdx(s, x1), foliation.dfdx(s, x2)
    rho, j1, j2 = pair_currents(value, fx1, fx2)
    if rho <= node_epsilon * psi.mean_density:
        raise NodeProximityError("leaf density below the node threshold")
    return np.array([j1[0], j1[1]], dtype=float), np.array([j2[0], j2[1]], dtype=float)


def _pair_spec(spec: GridSpec) -> GridSpec:
    return GridSpec(2, spec.points_per_axis, spec.spacing, (spec.origin_offset[0],) * 2, spec.boundary)


def leaf_field(phi: MultiTimeWF, foliation: Foliation, s: float) -> SplineField:
    x = phi.spec.axis()
    psi = restrict_to_leaf(phi, foliation.leaf(s), derivative=lambda x: foliation.dfdx(s, x))
    fx = foliation.dfdx(s, x)
    out = SplineField(_pair_spec(phi.spec), psi)
    out.mean_density = float(np.mean(leaf_density(psi, fx)))
    out.leaf_values = psi
    return out


def leaf_step(phi: MultiTimeWF, foliation: Foliation, s0: float, s1: float, fraction: float = 0.5) -> float:
    """Leaf-parameter step keeping displacements below ``fraction * spacing``."""
    s = np.linspace(s0, s1, 21)[:, None]
    x = phi.spec.axis()[None, :]
    speed = np.max(foliation.dfds(s, x) / (1 - np.abs(foliation.dfdx(s, x))))
    span = abs(s1 - s0)
    if span == 0:
        return 0.0
    steps = max(1, int(np.ceil(span * speed / (fraction * phi.spec.spacing))))
    return (s1 - s0) / steps


def leaf_timeline(phi: MultiTimeWF, foliation: Foliation, s0: float, s1: float, ds: float) -> Timeline:
    """Leaf fields every ``ds/2`` from ``s0`` to ``s1`` (precomputed)."""
    count = int(round((s1 - s0) / (0.5 * ds))) if ds else 0
    snaps = [leaf_field(phi, foliation, s0 + 0.5 * ds * i) for i in range(count + 1)]
    step = 0.5 * ds if ds else 1.0
    return Timeline.from_snapshots(snaps, step, to_field=lambda f: f, t0=s0)


def _pair_rate(field: SplineField, foliation: Foliation, s: float, q: np.ndarray):
    value = field.evaluate(q, gradient=False, margin=None)
    fx1, fx2 = foliation.dfdx(s, q[:, 0]), foliation.dfdx(s, q[:, 1])
    fs1, fs2 = foliation.dfds(s, q[:, 0]), foliation.dfds(s, q[:, 1])
    rho, j1, j2 = pair_currents(value, fx1, fx2)
    node = (rho <= NODE_EPSILON * field.mean_density) | (j1[0] <= 0) | (j2[0] <= 0)
    safe = lambda a: np.where(node, 1.0, a)
    v1, r1 = _tangent_speed(safe(j1[0]), j1[1], fx1, fs1)
    v2, r2 = _tangent_speed(safe(j2[0]), j2[1], fx2, fs2)
    rate = np.where(node[:, None], 0.0, np.stack([r1, r2], axis=1))
    return rate, np.stack([v1, v2], axis=1), node


@dataclass
class BmfRun:
    initial: np.ndarray
    final: np.ndarray
    status: np.ndarray
    max_speed: float
    ds: float
    paths: np.ndarray | None = None  # (record, steps + 1, 2)
    leaves: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def excluded_fraction(self) -> float:
        return float(np.mean(self.status != 0)) if self.status.size else 0.0


def integrate_bmf(timeline: Timeline, foliation: Foliation, q0: np.ndarray, ds: float, s1: float, record: int = 0) -> BmfRun:
    """RK4 in the leaf parameter for all configurations at once."""
    q = np.array(q0, dtype=float).reshape(-1, 2)
    start = q.copy()
    s0 = timeline.t0
    steps = int(round((s1 - s0) / ds)) if ds else 0
    status = np.zeros(q.shape[0], dtype=np.int8)
    vmax = 0.0
    keep = min(record, q.shape[0])
    paths = np.full((keep, steps + 1, 2), np.nan) if keep else None
    if keep:
        paths[:, 0] = q[:keep]
    for k in range(steps):
        s = s0 + k * ds
        act = np.flatnonzero(status == 0)
        if act.size:
            p = q[act]
            k1, v1, n1 = _pair_rate(timeline.field(s), foliation, s, p)
            k2, v2, n2 = _pair_rate(timeline.field(s + ds / 2), foliation, s + ds / 2, p + ds / 2 * k1)
            k3, v3, n3 = _pair_rate(timeline.field(s + ds / 2), foliation, s + ds / 2, p + ds / 2 * k2)
            k4, v4, n4 = _pair_rate(timeline.field(s + ds), foliation, s + ds, p + ds * k3)
            node = n1 | n2 | n3 | n4
            vmax = max(vmax, float(np.max(np.abs(np.concatenate([v1, v2, v3, v4])))))
            good = act[~node]
            q[good] = p[~node] + ds / 6 * (k1 + 2 * k2 + 2 * k3 + k4)[~node]
            status[act[node]] = 1
        if keep:
            paths[:, k + 1] = q[:keep]
    leaves = s0 + ds * np.arange(steps + 1)
    return BmfRun(start, q, status, vmax, ds, paths, leaves)


def run_bmf_equivariance(
    phi0: MultiTimeWF,
    foliation: Foliation,
    ensemble_size: int,
    rng: RngStream,
    s0: float = 0.0,
    s1: float = 1.0,
    bins: int = 16,
    hist_range: tuple | None = None,
    ds: float | None = None,
    record: int = 0,
    max_excluded: float = MAX_EXCLUDED,
):
    """Sample ``rho`` on leaf ``s0``, move along the foliation, compare on leaf ``s1``."""
    spec = phi0.spec
    x = spec.axis()
    ds = leaf_step(phi0, foliation, s0, s1) if ds is None else ds
    tl = leaf_timeline(phi0, foliation, s0, s1, ds)
    first = tl.field(s0)
    rho0 = leaf_density(first.leaf_values, foliation.dfdx(s0, x))
    pair = _pair_spec(spec)
    ids = rng.child_ids(ensemble_size)
    q0 = sample_ensemble(rho0, pair, rng, ids)
    run = integrate_bmf(tl, foliation, q0, ds, s1, record=record)
    last = tl.field(s1) if ds else first
    rho1 = leaf_density(last.leaf_values, foliation.dfdx(s1, x))
    ok = run.status == 0
    if hist_range is None:
        hist_range = (x[0] - 0.5 * spec.spacing, x[-1] + 0.5 * spec.spacing)
    edges = [np.linspace(hist_range[0], hist_range[1], bins + 1)] * 2
    report = compare_histograms(run.final[ok], rho1, [x, x], spec.spacing, edges, run.excluded_fraction, int(ok.sum()))
    report.metadata.update(
        {"foliation": foliation.name, "s0": s0, "s1": s1, "ds": ds, "max_speed": run.max_speed, "mass": phi0.mass}
    )
    if run.excluded_fraction > max_excluded:
        raise ExperimentInvalidError(f"excluded fraction {run.excluded_fraction:.4f} exceeds {max_excluded}")
    return report, run


def bell_pair_state(spec: GridSpec, separation: float = 6.0, width: float = 1.0, momentum: float = 1.0, mass: float = 1.0) -> MultiTimeWF:
    """Entangled spinor pair built from two counter-propagating packets.

    ``a`` sits at ``-separation/2`` moving right, ``b`` at ``+separation/2``
    moving left; ``phi0 = a (x) b |up, down> + b (x) a |down, up>``.
    """
    x = spec.axis()
    a = np.exp(-((x + separation / 2) ** 2) / (4 * width**2) + 1j * momentum * x)
    b = np.exp(-((x - separation / 2) ** 2) / (4 * width**2) - 1j * momentum * x)
    up, down = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    phi = np.einsum("i,j,a,b->ijab", a, b, up, down) + np.einsum("i,j,a,b->ijab", b, a, down, up)
    return MultiTimeWF(spec, phi, mass).normalized()


def write_worldlines_csv(path, run: BmfRun, foliation: Foliation) -> None:
    """Columns ``trajectory_id, s, t1, x1, t2, x2`` for the recorded paths."""
    if run.paths is None:
        raise ValueError("run has no recorded paths")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory_id", "s", "t1", "x1", "t2", "x2"])
        for i, path in enumerate(run.paths):
            for s, (x1, x2) in zip(run.leaves, path):
                w.writerow([i] + [f"{v:.16e}" for v in (s, foliation(s, x1), x1, foliation(s, x2), x2)])
