"""
Moves on the regime vector: data-driven split points, split-merge, and the
boundary swap sweep.
"""
import math
from typing import List, Sequence, Tuple

import numpy as np
from scipy import special

from .config import SamplerConfig
from .graph import Graph
from .gwishart import NormalizingConstants, logdet_pd
from .logger import get_logger
from .mixture import (
    LOG_2PI,
    NGWHyper,
    SuffStats,
    component_stats,
    draw_sticks,
    log_marginal_likelihood,
    log_weights,
    loglik_matrix,
    mixture_logpdf,
    sample_component,
    sample_regime_params,
    stick_log_marginal,
)
from .regimes import RegimeVector, log_regime_prior
from .state import SamplerState, split_labels, with_updates
from .utils import mh_accept

logger = get_logger(__name__)

ANCHOR_STRATUM = 10


def day_stats(state: SamplerState) -> List[SuffStats]:
    offsets = state.latent.layout.offsets
    values = state.latent.values
    return [SuffStats.from_rows(values[offsets[t]:offsets[t + 1]]) for t in range(state.n_days)]


def loglik_from_stats(stats: SuffStats, mean: np.ndarray, precision: np.ndarray) -> float:
    """Gaussian log likelihood of the rows summarised by `stats`."""
    if stats.n == 0:
        return 0.0
    quad = (
        float(np.sum(precision * stats.outer))
        - 2.0 * float(mean @ precision @ stats.total)
        + stats.n * float(mean @ precision @ mean)
    )
    return 0.5 * stats.n * logdet_pd(precision) - 0.5 * stats.n * mean.size * LOG_2PI - 0.5 * quad


def split_anchors(n_days: int, rng: np.random.Generator) -> np.ndarray:
    """Stratified split offsets: both ends plus one random offset per further block of ten days."""
    last = n_days - 1
    anchors = [1]
    for j in range(2, n_days // ANCHOR_STRATUM + 1):
        lo, hi = (j - 1) * ANCHOR_STRATUM + 1, min(j * ANCHOR_STRATUM, last)
        if lo <= hi:
            anchors.append(int(rng.integers(lo, hi + 1)))
    anchors.append(last)
    return np.unique(anchors)


def _fitted_loglik(stats: SuffStats, hyper: NGWHyper, graph: Graph, rng: np.random.Generator) -> float:
    mean, precision = sample_component(hyper, graph, stats, rng)
    return loglik_from_stats(stats, mean, precision)


def split_point_distribution(
    regime_days: Sequence[SuffStats],
    hyper: NGWHyper,
    graph: Graph,
    rng: np.random.Generator,
    exhaustive_max: int = 30,
) -> np.ndarray:
    """Mass function over the r - 1 split offsets of an r-day regime.

    Entry i is the probability of keeping the first i + 1 days on the left.
    Each side is fitted with a single Gaussian drawn from its NG-W posterior and
    scored by its likelihood. Long regimes are scored at stratified anchors only
    and the log scores are linearly interpolated in between.
    """
    n_days = len(regime_days)
    if n_days < 2:
        raise ValueError(f"a regime needs at least two days to split, got {n_days}")
    if n_days == 2:
        return np.ones(1)

    offsets = np.arange(1, n_days)
    anchors = offsets if offsets.size <= exhaustive_max else split_anchors(n_days, rng)

    prefix = [regime_days[0]]
    for stats in regime_days[1:]:
        prefix.append(prefix[-1] + stats)
    total = prefix[-1]

    scores = np.array([
        _fitted_loglik(prefix[s - 1], hyper, graph, rng) + _fitted_loglik(total - prefix[s - 1], hyper, graph, rng)
        for s in anchors
    ])
    log_mass = np.interp(offsets, anchors, scores)
    return np.exp(log_mass - special.logsumexp(log_mass))


def regime_evidence(
    rows: np.ndarray,
    labels: np.ndarray,
    n_components: int,
    alpha: float,
    hyper: NGWHyper,
    graph: Graph,
    constants: NormalizingConstants,
) -> float:
    """log p(rows, labels) with component parameters and sticks integrated out."""
    stats = component_stats(rows, labels, n_components)
    counts = np.array([s.n for s in stats])
    return sum(log_marginal_likelihood(hyper, s, graph, constants) for s in stats) + stick_log_marginal(counts, alpha)


def _move_odds(phi: RegimeVector, max_regimes: int) -> Tuple[float, int]:
    """Probability of proposing a split, and the number of regimes that can split."""
    n_splittable = int(np.sum(phi.sizes() >= 2)) if phi.n_regimes < max_regimes else 0
    can_merge = phi.n_regimes >= 2
    if n_splittable and can_merge:
        return 0.5, n_splittable
    return (1.0 if n_splittable else 0.0), n_splittable


def _log_mass(mass: np.ndarray, offset: int) -> float:
    with np.errstate(divide="ignore"):
        return float(np.log(mass[offset - 1]))


def _evidence_of_days(state: SamplerState, labels: np.ndarray, first: int, last: int) -> float:
    s = state.day_range_slice(first, last)
    comp = state.components[0]
    return regime_evidence(
        state.latent.values[s], labels[s], comp.n_components, comp.alpha, state.hyper, state.graph, state.constants,
    )


def split_merge_phi(state: SamplerState, config: SamplerConfig, rng: np.random.Generator) -> SamplerState:
    """One split-or-merge proposal on the regime vector, labels carried over."""
    phi = state.phi
    p_split, n_splittable = _move_odds(phi, state.max_regimes)
    if p_split == 0.0 and phi.n_regimes < 2:
        return state

    stats = day_stats(state)
    labels = state.all_labels()
    bounds = phi.bounds()
    n_regimes = phi.n_regimes

    if rng.random() < p_split:
        candidates = np.flatnonzero(phi.sizes() >= 2)
        regime = int(candidates[rng.integers(candidates.size)])
        first, last = bounds[regime]
        mass = split_point_distribution(stats[first:last + 1], state.hyper, state.graph, rng, config.split_exhaustive_max)
        offset = int(rng.choice(mass.size, p=mass)) + 1
        proposal = phi.split(regime, offset)
        p_split_rev, _ = _move_odds(proposal, state.max_regimes)
        log_alpha = (
            _evidence_of_days(state, labels, first, first + offset - 1)
            + _evidence_of_days(state, labels, first + offset, last)
            - _evidence_of_days(state, labels, first, last)
            + log_regime_prior(proposal, state.transitions) - log_regime_prior(phi, state.transitions)
            + math.log1p(-p_split_rev) - math.log(n_regimes)
            - math.log(p_split) + math.log(n_splittable) - _log_mass(mass, offset)
        )
        move, detail = "split", f"regime {regime + 1} after day {first + offset}"
    else:
        regime = int(rng.integers(n_regimes - 1))
        first, middle = bounds[regime]
        last = bounds[regime + 1][1]
        proposal = phi.merge(regime)
        mass = split_point_distribution(stats[first:last + 1], state.hyper, state.graph, rng, config.split_exhaustive_max)
        offset = middle - first + 1
        p_split_rev, n_splittable_rev = _move_odds(proposal, state.max_regimes)
        log_alpha = (
            _evidence_of_days(state, labels, first, last)
            - _evidence_of_days(state, labels, first, middle)
            - _evidence_of_days(state, labels, middle + 1, last)
            + log_regime_prior(proposal, state.transitions) - log_regime_prior(phi, state.transitions)
            + math.log(p_split_rev) - math.log(n_splittable_rev) + _log_mass(mass, offset)
            - math.log1p(-p_split) + math.log(n_regimes - 1)
        )
        move, detail = "merge", f"regimes {regime + 1} and {regime + 2}"

    if not mh_accept(log_alpha, rng):
        return state
    logger.debug(f"Accepted {move} of {detail} (log alpha {log_alpha:.3f})")
    return _rebuild(state, proposal, labels, rng)


def _rebuild(state: SamplerState, phi: RegimeVector, labels: np.ndarray, rng: np.random.Generator) -> SamplerState:
    """Re-slice labels under a new regime vector and redraw parameters of changed regimes."""
    old = {bound: r for r, bound in enumerate(state.phi.bounds())}
    n_comp = state.components[0].n_components
    alpha = state.components[0].alpha
    sticks, params = [], []
    for first, last in phi.bounds():
        if (first, last) in old:
            r = old[(first, last)]
            sticks.append(state.components[r].sticks)
            params.append(state.params[r])
            continue
        s = state.day_range_slice(first, last)
        mine = labels[s]
        sticks.append(draw_sticks(mine, n_comp, alpha, rng))
        params.append(sample_regime_params(state.hyper, state.graph, component_stats(state.latent.values[s], mine, n_comp), rng))
    return with_updates(state, phi=phi, params=params, components=split_labels(state, phi, labels, sticks))


def swap_phi(state: SamplerState, rng: np.random.Generator) -> SamplerState:
    """Resample each interior day whose neighbours sit in different regimes.

    The day joins the earlier regime a with weight stay_a f_a(day) or the later
    regime b with weight stay_b f_b(day), where f is the regime mixture density
    with labels summed out. Moves that would empty a regime are skipped.
    """
    phi = state.phi
    if phi.n_regimes < 2:
        return state
    offsets = state.latent.layout.offsets
    values = state.latent.values
    labels = state.all_labels()
    current = phi.labels.copy()
    sizes = phi.sizes()
    tm = state.transitions
    moved = 0

    for day in range(1, state.n_days - 1):
        a, b = int(current[day - 1]), int(current[day + 1])
        here = int(current[day])
        if a == b or sizes[here] <= 1:
            continue
        rows = values[offsets[day]:offsets[day + 1]]
        f_a = float(mixture_logpdf(rows, state.params[a], state.components[a].mixing_weights()).sum())
        f_b = float(mixture_logpdf(rows, state.params[b], state.components[b].mixing_weights()).sum())
        w_a = tm.log_stay(a) + f_a
        w_b = tm.log_stay(b) + f_b
        p_b = math.exp(w_b - np.logaddexp(w_a, w_b))
        target = b if rng.random() < p_b else a
        if target == here:
            continue
        current[day] = target
        sizes[here] -= 1
        sizes[target] += 1
        logits = log_weights(state.components[target]) + loglik_matrix(rows, state.params[target])
        labels[offsets[day]:offsets[day + 1]] = np.argmax(logits + rng.gumbel(size=logits.shape), axis=1)
        moved += 1

    if not moved:
        return state
    new_phi = RegimeVector(current)
    sticks = [c.sticks for c in state.components]
    logger.debug(f"Swap moved {moved} day(s)")
    return with_updates(state, phi=new_phi, components=split_labels(state, new_phi, labels, sticks))
