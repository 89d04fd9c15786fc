"""
Sampler state: everything a Gibbs sweep reads and replaces.
"""
from dataclasses import dataclass, replace
from typing import List, Sequence

import numpy as np

from .config import SamplerConfig, settings
from .data_model import DataStream, LatentMatrix, init_latent
from .graph import Graph
from .gwishart import NormalizingConstants
from .logger import get_logger
from .mixture import (
    ComponentState,
    NGWHyper,
    RegimeParams,
    SuffStats,
    component_stats,
    initial_components,
    sample_regime_params,
)
from .regimes import RegimeVector, TransitionModel, initial_transitions

logger = get_logger(__name__)


@dataclass
class SamplerState:
    """One point of the chain. Regime-indexed lists hold occupied regimes only."""
    latent: LatentMatrix
    phi: RegimeVector
    params: List[RegimeParams]
    components: List[ComponentState]
    graph: Graph
    hyper: NGWHyper
    transitions: TransitionModel
    constants: NormalizingConstants
    iteration: int = 0

    @property
    def n_days(self) -> int:
        return self.phi.n_days

    @property
    def n_regimes(self) -> int:
        return self.phi.n_regimes

    @property
    def max_regimes(self) -> int:
        return self.transitions.max_regimes

    def day_range_slice(self, first_day: int, last_day: int) -> slice:
        return self.latent.layout.day_slice(first_day, last_day)

    def regime_slice(self, regime: int) -> slice:
        first, last = self.phi.bounds()[regime]
        return self.day_range_slice(first, last)

    def regime_rows(self, regime: int) -> np.ndarray:
        return self.latent.values[self.regime_slice(regime)]

    def all_labels(self) -> np.ndarray:
        return np.concatenate([c.labels for c in self.components])

    def regime_component_stats(self, regime: int) -> List[SuffStats]:
        comp = self.components[regime]
        return component_stats(self.regime_rows(regime), comp.labels, comp.n_components)

    def check_invariants(self) -> None:
        n_regimes = self.phi.n_regimes
        if n_regimes > self.max_regimes:
            raise AssertionError(f"{n_regimes} regimes exceed the cap {self.max_regimes}")
        if len(self.params) != n_regimes or len(self.components) != n_regimes:
            raise AssertionError("regime-indexed lists out of step with phi")
        for r in range(n_regimes):
            s = self.regime_slice(r)
            if self.components[r].labels.size != s.stop - s.start:
                raise AssertionError(f"regime {r} labels do not cover its rows")
            if self.params[r].graph != self.graph:
                raise AssertionError(f"regime {r} parameters use a stale graph")


def split_labels(state: SamplerState, phi: RegimeVector, labels: np.ndarray, sticks: Sequence[np.ndarray]) -> List[ComponentState]:
    """Cut a global label vector into per-regime component states under `phi`."""
    offsets = state.latent.layout.offsets
    alpha = state.components[0].alpha
    result = []
    for r, (first, last) in enumerate(phi.bounds()):
        result.append(ComponentState(labels[offsets[first]:offsets[last + 1]].copy(), sticks[r], alpha))
    return result


def empirical_hyper(values: np.ndarray, config: SamplerConfig) -> NGWHyper:
    """NG-W hyperparameters centred on the data: E[L] equals the empirical precision."""
    dim = values.shape[1]
    nu = config.resolved_nu(dim)
    center = values.mean(axis=0)
    cov = np.atleast_2d(np.cov(values, rowvar=False)) + 1e-6 * np.eye(dim)
    c, d = config.lambda_prior
    return NGWHyper(m=center.copy(), lam=1.0, D=(nu + dim - 1.0) * cov, nu=nu, c=c, d=d, m0=center)


def init_state(ds: DataStream, config: SamplerConfig, rng: np.random.Generator) -> SamplerState:
    """Single regime, all rows in the first component, empty (or full) graph."""
    latent = init_latent(ds)
    dim = latent.layout.n_cols
    hyper = empirical_hyper(latent.values, config)
    graph = Graph.full(dim) if config.graph_mode == "full" else Graph.empty(dim)
    constants = NormalizingConstants(
        hyper.D, hyper.nu, settings.n_mc_prior, np.random.default_rng([config.seed, 1]),
        force_general=config.force_general_constants,
    )
    phi = RegimeVector.single(ds.n_days)
    transitions = initial_transitions(config.resolved_regimes(ds.n_days), config.w_v_prior, rng)
    comp = initial_components(latent.values.shape[0], config.components, config.alpha, rng)
    params = sample_regime_params(hyper, graph, component_stats(latent.values, comp.labels, config.components), rng)
    state = SamplerState(
        latent=latent, phi=phi, params=[params], components=[comp], graph=graph,
        hyper=hyper, transitions=transitions, constants=constants,
    )
    logger.info(f"Initial state: T={ds.n_days}, latent dim={dim}, Q={config.components}, R={state.max_regimes}, nu={hyper.nu:g}")
    return state


def with_updates(state: SamplerState, **changes) -> SamplerState:
    return replace(state, **changes)
