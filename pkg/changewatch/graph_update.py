"""
Graph step: double reversible jump over one-edge neighbours, shared by every
regime and component precision.
"""
import math
from typing import List, Tuple

import numpy as np

from .config import SamplerConfig
from .graph import Graph
from .gwishart import complete_cholesky, sample_gwishart, upper_cholesky
from .logger import get_logger
from .mixture import RegimeParams, draw_mean, ngw_posterior, sample_regime_params
from .state import SamplerState, with_updates
from .utils import mh_accept, pairs_upper

logger = get_logger(__name__)


def propose_edge(n_vertices: int, rng: np.random.Generator) -> Tuple[int, int]:
    """Uniform choice among the J(J-1)/2 vertex pairs."""
    pairs = pairs_upper(n_vertices)
    return pairs[int(rng.integers(len(pairs)))]


def rj_add(psi: np.ndarray, target: Graph, edge: Tuple[int, int], sigma: float, rng: np.random.Generator) -> Tuple[np.ndarray, float]:
    """Perturb the new free entry and complete on the larger graph.

    Returns the new factor and the log of (Jacobian / proposal density), up to
    the sigma*sqrt(2 pi) constant that cancels against the paired removal.
    """
    l, m = edge
    moved = psi.copy()
    moved[l, m] = psi[l, m] + sigma * rng.standard_normal()
    moved = complete_cholesky(moved, target)
    return moved, (moved[l, m] - psi[l, m]) ** 2 / (2.0 * sigma ** 2) + math.log(psi[l, l])


def rj_remove(psi: np.ndarray, target: Graph, edge: Tuple[int, int], sigma: float) -> Tuple[np.ndarray, float]:
    """Deterministic completion on the smaller graph; inverse of `rj_add`."""
    l, m = edge
    moved = complete_cholesky(psi, target)
    return moved, -((psi[l, m] - moved[l, m]) ** 2) / (2.0 * sigma ** 2) - math.log(psi[l, l])


def _precision_on(psi: np.ndarray, graph: Graph) -> np.ndarray:
    lam = psi.T @ psi
    lam[~graph.adjacency & ~np.eye(graph.n_vertices, dtype=bool)] = 0.0
    return lam


def _component_log_ratio(
    precision: np.ndarray,
    D_post: np.ndarray,
    D_prior: np.ndarray,
    nu: float,
    current: Graph,
    proposed: Graph,
    edge: Tuple[int, int],
    sigma: float,
    rng: np.random.Generator,
) -> Tuple[float, np.ndarray]:
    adding = proposed.has_edge(*edge)
    psi = upper_cholesky(precision)
    if adding:
        psi_new, log_main = rj_add(psi, proposed, edge, sigma, rng)
    else:
        psi_new, log_main = rj_remove(psi, proposed, edge, sigma)
    moved = _precision_on(psi_new, proposed)

    aux = sample_gwishart(proposed, D_prior, nu, rng).matrix
    psi_aux = upper_cholesky(aux)
    if adding:
        psi_aux_new, log_aux = rj_remove(psi_aux, current, edge, sigma)
    else:
        psi_aux_new, log_aux = rj_add(psi_aux, current, edge, sigma, rng)
    aux_moved = _precision_on(psi_aux_new, current)

    log_ratio = (
        -0.5 * float(np.sum((moved - precision) * D_post)) + log_main
        - 0.5 * float(np.sum((aux_moved - aux) * D_prior)) + log_aux
    )
    return log_ratio, moved


def drj_update_graph(state: SamplerState, config: SamplerConfig, rng: np.random.Generator, refresh: bool = True) -> SamplerState:
    """One exchange move per `drj_moves_per_sweep` on the shared graph.

    With `refresh` the component parameters are first redrawn from their
    conjugate posterior on the current graph. Accepted moves redraw each mean
    from its posterior given the new precision.
    """
    if config.graph_mode == "full" or state.graph.n_vertices < 2:
        return state
    hyper = state.hyper
    if refresh:
        state = with_updates(state, params=[
            sample_regime_params(hyper, state.graph, state.regime_component_stats(r), rng)
            for r in range(state.n_regimes)
        ])

    for _ in range(config.drj_moves_per_sweep):
        current = state.graph
        edge = propose_edge(current.n_vertices, rng)
        proposed = current.toggle(*edge)
        if config.graph_mode == "decomposable" and not proposed.is_decomposable():
            continue

        sign = 1.0 if proposed.n_edges > current.n_edges else -1.0
        log_alpha = sign * (math.log(config.rho) - math.log1p(-config.rho))
        posts = []
        moved: List[np.ndarray] = []
        for r in range(state.n_regimes):
            params = state.params[r]
            for q, stats in enumerate(state.regime_component_stats(r)):
                post = ngw_posterior(hyper, stats)
                term, precision = _component_log_ratio(
                    params.precisions[q], post.D, hyper.D, hyper.nu, current, proposed, edge, config.sigma_g, rng,
                )
                log_alpha += term
                posts.append(post)
                moved.append(precision)

        if not mh_accept(log_alpha, rng):
            continue

        new_params = []
        k = 0
        for r in range(state.n_regimes):
            n_comp = state.params[r].n_components
            precisions = np.array(moved[k:k + n_comp])
            means = np.array([draw_mean(posts[k + q].m, posts[k + q].lam, precisions[q], rng) for q in range(n_comp)])
            new_params.append(RegimeParams(means, precisions, proposed))
            k += n_comp
        logger.debug(f"Graph move {'adds' if sign > 0 else 'removes'} edge {edge}: now {proposed.n_edges} edges")
        state = with_updates(state, graph=proposed, params=new_params)
    return state
