"""Histogram comparison between Monte Carlo ensembles and |psi|^2."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

__all__ = [
    "KS_CRITICAL_1PCT",
    "EnsembleReport",
    "overlap_matrix",
    "bin_masses",
    "chi_square",
    "ks_against_cells",
    "total_variation",
    "compare_histograms",
]

KS_CRITICAL_1PCT = 1.63  # asymptotic one-sample KS critical value at the 1% level, times sqrt(N)
MIN_EXPECTED = 5.0


def overlap_matrix(cell_centers: np.ndarray, spacing: float, edges: np.ndarray) -> np.ndarray:
    """Fraction of each cell ``[c - h/2, c + h/2]`` falling in each bin."""
    lo = cell_centers - 0.5 * spacing
    hi = cell_centers + 0.5 * spacing
    left = np.maximum(lo[None, :], edges[:-1, None])
    right = np.minimum(hi[None, :], edges[1:, None])
    return np.clip(right - left, 0.0, None) / spacing


def bin_masses(cell_mass: np.ndarray, axes: list, spacing: float, edges: list) -> np.ndarray:
    """Aggregate per-cell masses (piecewise constant in each cell) into bins."""
    out = np.asarray(cell_mass, dtype=float)
    for a, (centers, e) in enumerate(zip(axes, edges)):
        mat = overlap_matrix(np.asarray(centers), spacing, np.asarray(e))
        out = np.moveaxis(np.tensordot(mat, out, axes=([1], [a])), 0, a)
    return out


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def chi_square(counts: np.ndarray, probabilities: np.ndarray, min_expected: float = MIN_EXPECTED):
    """Pearson chi-square of observed counts against bin probabilities.

    Bins whose expected count is below ``min_expected`` are pooled into a
    single extra bin, together with any probability not covered by the bins
    (counts outside the binning must be included by the caller as the
    difference between the sample count and ``counts.sum()``).

    Returns ``(statistic, p_value, dof)``.
    """
    counts = np.asarray(counts, dtype=float).ravel()
    probs = np.asarray(probabilities, dtype=float).ravel()
    n = counts.sum()
    return _chi_square(counts, probs, n, min_expected)


def _chi_square(counts, probs, n_total, min_expected):
    if n_total <= 0:
        return 0.0, 1.0, 0
    expected = probs * n_total
    keep = expected >= min_expected
    obs = list(counts[keep])
    exp = list(expected[keep])
    pooled_exp = n_total - sum(exp)
    pooled_obs = n_total - sum(obs)
    if pooled_exp > 1e-9 * n_total or pooled_obs > 0:
        obs.append(pooled_obs)
        exp.append(max(pooled_exp, 1e-300))
    obs = np.array(obs)
    exp = np.array(exp)
    dof = max(len(obs) - 1, 1)
    stat = float(np.sum((obs - exp) ** 2 / exp))
    return stat, float(stats.chi2.sf(stat, dof)), dof


def chi_square_total(counts, probabilities, n_total, min_expected: float = MIN_EXPECTED):
    """Like :func:`chi_square` but with explicit total so out-of-range samples count."""
    return _chi_square(
        np.asarray(counts, float).ravel(), np.asarray(probabilities, float).ravel(), float(n_total), min_expected
    )


def ks_against_cells(samples: np.ndarray, cell_centers: np.ndarray, spacing: float, cell_mass: np.ndarray):
    """One-sample KS test against the piecewise-constant density of cell masses.

    Returns ``(statistic, p_value)``.
    """
    mass = np.asarray(cell_mass, dtype=float)
    mass = mass / mass.sum()
    edges = np.concatenate([cell_centers - 0.5 * spacing, [cell_centers[-1] + 0.5 * spacing]])
    cdf_vals = np.concatenate([[0.0], np.cumsum(mass)])
    cdf = lambda x: np.interp(x, edges, cdf_vals)
    res = stats.kstest(np.asarray(samples, dtype=float), cdf)
    return float(res.statistic), float(res.pvalue)


@dataclass
class EnsembleReport:
    sample_count: int
    bin_edges: list
    histogram_empirical: np.ndarray
    histogram_theoretical: np.ndarray
    distance_metrics: dict
    excluded_fraction: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.excluded_fraction <= 1.0:
            raise ValueError("excluded_fraction must lie in [0, 1]")
        if np.shape(self.histogram_empirical) != np.shape(self.histogram_theoretical):
            raise ValueError("empirical and theoretical histograms must share binning")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bin_edges"] = [np.asarray(e).tolist() for e in self.bin_edges]
        d["histogram_empirical"] = np.asarray(self.histogram_empirical).tolist()
        d["histogram_theoretical"] = np.asarray(self.histogram_theoretical).tolist()
        return d


def compare_histograms(
    positions: np.ndarray,
    cell_mass: np.ndarray,
    axes: list,
    spacing: float,
    edges: list,
    excluded_fraction: float = 0.0,
    total: int | None = None,
) -> EnsembleReport:
    """Bin ``positions`` (shape ``(N, dim)``) and compare with ``cell_mass``.

    Histograms are stored as probabilities.  The KS entry is present only for
    one-dimensional data.
    """
    positions = np.asarray(positions, dtype=float)
    if positions.ndim == 1:
        positions = positions[:, None]
    n = positions.shape[0] if total is None else total
    mass = np.asarray(cell_mass, dtype=float)
    mass = mass / mass.sum()
    theo = bin_masses(mass, axes, spacing, edges)
    if positions.shape[0]:
        counts, _ = np.histogramdd(positions, bins=[np.asarray(e) for e in edges])
    else:
        counts = np.zeros(theo.shape)
    emp = counts / n if n else counts
    stat, pval, dof = chi_square_total(counts, theo, n)
    metrics = {
        "total_variation": total_variation(emp, theo),
        "chi_square": stat,
        "chi_square_p_value": pval,
        "chi_square_dof": dof,
    }
    if positions.shape[1] == 1 and positions.shape[0]:
        ks, ks_p = ks_against_cells(positions[:, 0], np.asarray(axes[0]), spacing, mass)
        metrics["ks_statistic"] = ks
        metrics["ks_p_value"] = ks_p
    return EnsembleReport(int(n), [np.asarray(e) for e in edges], emp, theo, metrics, float(excluded_fraction))
