"""
Latent data step: impute missing blocks and redraw truncated coordinates
given the current regime, component and parameter assignment.
"""
import numpy as np
from scipy import linalg, stats

from .data_model import LatentLayout, LatentMatrix
from .gwishart import upper_cholesky
from .logger import get_logger
from .state import SamplerState

logger = get_logger(__name__)


def _impute_missing(z: np.ndarray, missing: np.ndarray, rows: np.ndarray, mean: np.ndarray, precision: np.ndarray, rng: np.random.Generator) -> None:
    """Joint conditional-normal draw of each row's missing block, grouped by pattern."""
    if rows.size == 0:
        return
    patterns, inverse = np.unique(missing[rows], axis=0, return_inverse=True)
    for p, pattern in enumerate(patterns):
        mine = rows[inverse.ravel() == p]
        m_idx = np.flatnonzero(pattern)
        o_idx = np.flatnonzero(~pattern)
        u = upper_cholesky(precision[np.ix_(m_idx, m_idx)])
        center = np.broadcast_to(mean[m_idx], (mine.size, m_idx.size)).copy()
        if o_idx.size:
            shift = (z[np.ix_(mine, o_idx)] - mean[o_idx]) @ precision[np.ix_(o_idx, m_idx)]
            center -= linalg.cho_solve((u, False), shift.T).T
        noise = rng.standard_normal((mine.size, m_idx.size))
        z[np.ix_(mine, m_idx)] = center + linalg.solve_triangular(u, noise.T, lower=False).T


def _univariate_conditional(z_rows: np.ndarray, k: int, mean: np.ndarray, precision: np.ndarray):
    """Mean and sd of z_k given the other coordinates."""
    dev = z_rows - mean
    lam_kk = precision[k, k]
    cond_mean = mean[k] - (dev @ precision[:, k] - lam_kk * dev[:, k]) / lam_kk
    return cond_mean, 1.0 / np.sqrt(lam_kk)


def _truncated_draw(lower: np.ndarray, upper: np.ndarray, loc: np.ndarray, scale: float, rng: np.random.Generator) -> np.ndarray:
    a = (lower - loc) / scale
    b = (upper - loc) / scale
    return stats.truncnorm.rvs(a, b, loc=loc, scale=scale, random_state=rng)


def _redraw_constrained(z: np.ndarray, layout: LatentLayout, rows: np.ndarray, mean: np.ndarray, precision: np.ndarray, rng: np.random.Generator) -> None:
    for k in range(layout.n_cols):
        sel = rows[layout.constrained[rows, k]]
        if sel.size == 0:
            continue
        loc, scale = _univariate_conditional(z[sel], k, mean, precision)
        z[sel, k] = _truncated_draw(layout.lower[sel, k], layout.upper[sel, k], loc, scale, rng)


def _redraw_nominal(z: np.ndarray, layout: LatentLayout, rows: np.ndarray, mean: np.ndarray, precision: np.ndarray, rng: np.random.Generator) -> None:
    """Element-wise draws that keep the observed level's coordinate the block maximum."""
    for cols, observed_level in layout.nominal:
        sel = rows[observed_level[rows] >= 0]
        if sel.size == 0:
            continue
        level = observed_level[sel]
        for i, c in enumerate(cols):
            block = z[np.ix_(sel, cols)]
            is_top = level == i
            others = np.delete(block, i, axis=1)
            top_value = block[np.arange(sel.size), level]
            lower = np.where(is_top, others.max(axis=1), -np.inf)
            upper = np.where(is_top, np.inf, top_value)
            loc, scale = _univariate_conditional(z[sel], c, mean, precision)
            z[sel, c] = _truncated_draw(lower, upper, loc, scale, rng)


def draw_latent(state: SamplerState, rng: np.random.Generator) -> LatentMatrix:
    """One Gibbs pass over every latent entry that is not a plain observed value."""
    layout = state.latent.layout
    if not (layout.missing.any() or layout.constrained.any() or layout.nominal):
        return state.latent

    z = state.latent.values.copy()
    has_missing = layout.missing.any(axis=1)
    for r in range(state.n_regimes):
        start = state.regime_slice(r).start
        labels = state.components[r].labels
        params = state.params[r]
        for q in np.unique(labels):
            rows = start + np.flatnonzero(labels == q)
            mean, precision = params.means[q], params.precisions[q]
            _impute_missing(z, layout.missing, rows[has_missing[rows]], mean, precision, rng)
            _redraw_constrained(z, layout, rows, mean, precision, rng)
            _redraw_nominal(z, layout, rows, mean, precision, rng)
    return state.latent.replace(z)
