"""
Gibbs sweep over every unknown, the mean-hyperparameter update, and the
chain driver that turns sweeps into a posterior log.
"""
import asyncio
import time
from dataclasses import replace
from typing import List, Sequence

import numpy as np

from .config import SamplerConfig
from .data_model import DataStream, daily_means
from .graph_update import drj_update_graph
from .latent import draw_latent
from .logger import get_logger
from .mixture import NGWHyper, RegimeParams, gibbs_components, sample_regime_params, split_merge_swap_components
from .moves import split_merge_phi, swap_phi
from .posterior import PosteriorLog, RegimeSnapshot, Snapshot, merge_logs
from .regimes import update_transitions
from .state import SamplerState, init_state, with_updates
from .utils import gather_bounded, spawn_seeds

logger = get_logger(__name__)


def update_mean_hyper(hyper: NGWHyper, all_params: Sequence[RegimeParams], rng: np.random.Generator) -> NGWHyper:
    """Draw m, then lambda, from their full conditionals given every component mean and precision.

    m | . ~ N(A^-1 (m0 + lam sum L mu), A^-1) with A = I + lam sum L.
    lam | . ~ Gamma(c + n_means J / 2, rate d + sum (mu - m)' L (mu - m) / 2).
    """
    dim = hyper.dim
    precision_sum = np.zeros((dim, dim))
    weighted = np.zeros(dim)
    for params in all_params:
        precision_sum += params.precisions.sum(axis=0)
        weighted += np.einsum("qij,qj->i", params.precisions, params.means)
    a = np.eye(dim) + hyper.lam * precision_sum
    cov = np.linalg.inv(a)
    cov = 0.5 * (cov + cov.T)
    m = rng.multivariate_normal(cov @ (hyper.m0 + hyper.lam * weighted), cov)

    n_means = sum(p.n_components for p in all_params)
    quad = 0.0
    for params in all_params:
        dev = params.means - m
        quad += float(np.einsum("qi,qij,qj->", dev, params.precisions, dev))
    lam = rng.gamma(hyper.c + 0.5 * n_means * dim, 1.0 / (hyper.d + 0.5 * quad))
    return replace(hyper, m=m, lam=float(lam))


def gibbs_sweep(state: SamplerState, config: SamplerConfig, rng: np.random.Generator) -> SamplerState:
    """Z, component labels, transitions, (m, lambda), phi split-merge, phi swap, Theta, G."""
    state = with_updates(state, latent=draw_latent(state, rng))

    components = []
    for r in range(state.n_regimes):
        rows = state.regime_rows(r)
        comp = gibbs_components(state.components[r], state.params[r], rows, rng)
        if config.components > 1:
            comp = split_merge_swap_components(comp, state.params[r], rows, rng)
        components.append(comp)
    state = with_updates(state, components=components)

    state = with_updates(state, transitions=update_transitions(state.transitions, state.phi, rng, config.mh_step))
    if config.learn_mean_hyper:
        state = with_updates(state, hyper=update_mean_hyper(state.hyper, state.params, rng))

    state = split_merge_phi(state, config, rng)
    state = swap_phi(state, rng)

    state = with_updates(state, params=[
        sample_regime_params(state.hyper, state.graph, state.regime_component_stats(r), rng)
        for r in range(state.n_regimes)
    ])
    state = drj_update_graph(state, config, rng, refresh=False)
    return with_updates(state, iteration=state.iteration + 1)


def regime_snapshot(state: SamplerState, regime: int) -> RegimeSnapshot:
    first, last = state.phi.bounds()[regime]
    params = state.params[regime]
    return RegimeSnapshot(
        regime=regime,
        first_day=first,
        last_day=last,
        weights=state.components[regime].mixing_weights(),
        means=params.means.copy(),
        precisions=params.precisions.copy(),
    )


def take_snapshot(state: SamplerState, last_only: bool = True) -> Snapshot:
    """Parameters of the last two regimes (or of every regime)."""
    n = state.n_regimes
    regimes = range(max(0, n - 2), n) if last_only else range(n)
    return Snapshot(
        iteration=state.iteration,
        graph=state.graph,
        regimes=tuple(regime_snapshot(state, r) for r in regimes),
    )


def run_chain(ds: DataStream, config: SamplerConfig) -> PosteriorLog:
    """Burn-in plus sampling sweeps, recording phi every sweep and snapshots every stride."""
    if ds.n_days < 2:
        raise ValueError(f"need at least two days, got {ds.n_days}")
    started = time.time()
    rng = np.random.default_rng(config.seed)
    state = init_state(ds, config, rng)
    layout = state.latent.layout

    n_iter = config.n_iterations
    burn_in = config.burn_in
    trace = np.zeros((n_iter, ds.n_days), dtype=int)
    snapshots: List[Snapshot] = []
    report_every = max(1, n_iter // 10)
    logger.info(f"Chain started: seed={config.seed}, {n_iter} sweeps ({burn_in} burn-in)")

    for i in range(n_iter):
        state = gibbs_sweep(state, config, rng)
        trace[i] = state.phi.labels
        if state.iteration > burn_in and (state.iteration - burn_in) % config.snapshot_stride == 0:
            snapshots.append(take_snapshot(state))
        if (i + 1) % report_every == 0:
            logger.info(
                f"Sweep {i + 1}/{n_iter}: {state.n_regimes} regime(s), changes after days "
                f"{state.phi.changepoints().tolist()}, {state.graph.n_edges} edges"
            )
        if __debug__:
            state.check_invariants()

    elapsed = time.time() - started
    logger.info(f"Chain completed in {elapsed:.2f}s")
    return PosteriorLog(
        n_days=ds.n_days,
        burn_in=burn_in,
        iterations=np.arange(1, n_iter + 1),
        phi_trace=trace,
        snapshots=snapshots,
        variables=ds.variables,
        column_groups={spec.name: layout.groups[j].tolist() for j, spec in enumerate(ds.variables)},
        day_counts=ds.counts,
        daily_means=daily_means(ds),
        final_state=take_snapshot(state, last_only=False),
        meta={
            "seed": config.seed,
            "config": config.model_dump(mode="json"),
            "days": ds.day_indices,
            "seconds": round(elapsed, 3),
        },
    )


async def run_chains(ds: DataStream, config: SamplerConfig, threads: int = 1) -> PosteriorLog:
    """Independent chains with spawned seeds; one chain returns its own log unchanged."""
    if config.n_chains == 1:
        return await asyncio.to_thread(run_chain, ds, config)
    seeds = spawn_seeds(config.seed, config.n_chains)
    jobs = [lambda s=s: run_chain(ds, config.model_copy(update={"seed": s})) for s in seeds]
    logs = await gather_bounded(jobs, threads)
    logger.info(f"Merging {len(logs)} chains (seeds {seeds})")
    return merge_logs(logs)
