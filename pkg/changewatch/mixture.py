"""
Per-regime Gaussian graphical mixture: Normal G-Wishart prior, conjugate
updates, truncated stick-breaking components and mixture likelihoods.
"""
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg, special

from .graph import Graph
from .gwishart import NormalizingConstants, sample_gwishart, upper_cholesky
from .logger import get_logger
from .utils import mh_accept

logger = get_logger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SuffStats:
    """Count, sum and sum of outer products of a set of rows."""
    n: int
    total: np.ndarray
    outer: np.ndarray

    @classmethod
    def zeros(cls, dim: int) -> "SuffStats":
        return cls(0, np.zeros(dim), np.zeros((dim, dim)))

    @classmethod
    def from_rows(cls, rows: np.ndarray) -> "SuffStats":
        rows = np.atleast_2d(rows)
        return cls(rows.shape[0], rows.sum(axis=0), rows.T @ rows)

    def __add__(self, other: "SuffStats") -> "SuffStats":
        return SuffStats(self.n + other.n, self.total + other.total, self.outer + other.outer)

    def __sub__(self, other: "SuffStats") -> "SuffStats":
        return SuffStats(self.n - other.n, self.total - other.total, self.outer - other.outer)

    @property
    def mean(self) -> np.ndarray:
        return self.total / self.n

    def scatter(self) -> np.ndarray:
        """Centered scatter sum (z - zbar)(z - zbar)'."""
        return self.outer - np.outer(self.total, self.total) / self.n


@dataclass(frozen=True)
class NGWHyper:
    """Normal G-Wishart hyperparameters plus the hyperpriors of m and lambda.

    mu | L ~ N(m, (lam L)^-1), L ~ W_G(nu, D); m ~ N(m0, I); lam ~ Gamma(c, rate d).
    """
    m: np.ndarray
    lam: float
    D: np.ndarray
    nu: float
    c: float = 1.0
    d: float = 1.0
    m0: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.nu <= 2:
            raise ValueError(f"nu must exceed 2, got {self.nu}")
        if self.m0 is None:
            object.__setattr__(self, "m0", np.zeros_like(self.m))

    @property
    def dim(self) -> int:
        return self.m.shape[0]


def ngw_posterior(hyper: NGWHyper, data: Union[np.ndarray, SuffStats]) -> NGWHyper:
    """Conjugate NG-W update on the rows of one component."""
    stats = data if isinstance(data, SuffStats) else SuffStats.from_rows(np.asarray(data, dtype=float).reshape(-1, hyper.dim))
    n = stats.n
    if n == 0:
        return hyper
    zbar = stats.mean
    lam_post = hyper.lam + n
    m_post = (hyper.lam * hyper.m + stats.total) / lam_post
    diff = zbar - hyper.m
    D_post = hyper.D + stats.scatter() + (hyper.lam * n / lam_post) * np.outer(diff, diff)
    return replace(hyper, m=m_post, lam=lam_post, D=0.5 * (D_post + D_post.T), nu=hyper.nu + n)


def log_marginal_likelihood(hyper: NGWHyper, stats: SuffStats, graph: Graph, constants: NormalizingConstants) -> float:
    """log p(rows) with mean and precision integrated out under the NG-W prior."""
    if stats.n == 0:
        return 0.0
    post = ngw_posterior(hyper, stats)
    return (
        -0.5 * stats.n * hyper.dim * LOG_2PI
        + 0.5 * hyper.dim * (math.log(hyper.lam) - math.log(post.lam))
        + constants.posterior(graph, post.D, post.nu)
        - constants.prior(graph)
    )


@dataclass(frozen=True)
class RegimeParams:
    """Component means (Q x P) and precisions (Q x P x P) sharing one graph."""
    means: np.ndarray
    precisions: np.ndarray
    graph: Graph

    @property
    def n_components(self) -> int:
        return self.means.shape[0]


@dataclass(frozen=True)
class ComponentState:
    """Labels of a regime's rows plus truncated stick-breaking weights."""
    labels: np.ndarray
    sticks: np.ndarray
    alpha: float

    def __post_init__(self):
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.sticks.size):
            raise ValueError("component label outside 0..Q-1")

    @property
    def n_components(self) -> int:
        return self.sticks.size

    @property
    def weights(self) -> np.ndarray:
        """pi_k = v_k prod_{j<k}(1 - v_j)."""
        remaining = np.concatenate([[1.0], np.cumprod(1.0 - self.sticks)[:-1]])
        return self.sticks * remaining

    def mixing_weights(self) -> np.ndarray:
        """Weights with the truncation remainder folded into the last component."""
        w = self.weights.copy()
        w[-1] = max(0.0, 1.0 - w[:-1].sum())
        return w

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_components)


def initial_components(n_rows: int, n_components: int, alpha: float, rng: np.random.Generator) -> ComponentState:
    """All rows in the first component, sticks drawn from their conditionals."""
    labels = np.zeros(n_rows, dtype=int)
    return ComponentState(labels, draw_sticks(labels, n_components, alpha, rng), alpha)


def draw_sticks(labels: np.ndarray, n_components: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    counts = np.bincount(labels, minlength=n_components)
    above = counts[::-1].cumsum()[::-1] - counts  # n_{>k}
    return rng.beta(1.0 + counts, alpha + above)


def stick_log_marginal(counts: np.ndarray, alpha: float) -> float:
    """log p(labels | alpha) with the truncated sticks integrated out."""
    counts = np.asarray(counts)
    above = counts[::-1].cumsum()[::-1] - counts
    head = slice(0, counts.size - 1)
    return float(np.sum(special.betaln(1.0 + counts[head], alpha + above[head]) - special.betaln(1.0, alpha)))


def component_stats(rows: np.ndarray, labels: np.ndarray, n_components: int) -> List[SuffStats]:
    dim = rows.shape[1]
    stats = []
    for q in range(n_components):
        mine = rows[labels == q]
        stats.append(SuffStats.from_rows(mine) if mine.shape[0] else SuffStats.zeros(dim))
    return stats


def draw_mean(m: np.ndarray, lam: float, precision: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """mu ~ N(m, (lam L)^-1) through the upper Cholesky factor of L."""
    u = upper_cholesky(precision)
    return m + linalg.solve_triangular(u, rng.standard_normal(m.shape[0]), lower=False) / math.sqrt(lam)


def sample_component(hyper: NGWHyper, graph: Graph, stats: SuffStats, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    post = ngw_posterior(hyper, stats)
    lam = sample_gwishart(graph, post.D, post.nu, rng).matrix
    return draw_mean(post.m, post.lam, lam, rng), lam


def sample_regime_params(hyper: NGWHyper, graph: Graph, data_by_component: Sequence[SuffStats], rng: np.random.Generator) -> RegimeParams:
    """Draw every component from its NG-W posterior; empty components come from the prior."""
    draws = [sample_component(hyper, graph, stats, rng) for stats in data_by_component]
    return RegimeParams(np.array([d[0] for d in draws]), np.array([d[1] for d in draws]), graph)


def component_logpdf(rows: np.ndarray, mean: np.ndarray, precision: np.ndarray) -> np.ndarray:
    """log N(z | mean, precision^-1) for every row, via the Cholesky factor."""
    u = upper_cholesky(precision)
    white = (rows - mean) @ u.T
    return np.sum(np.log(np.diag(u))) - 0.5 * rows.shape[1] * LOG_2PI - 0.5 * np.sum(white * white, axis=1)


def loglik_matrix(rows: np.ndarray, params: RegimeParams) -> np.ndarray:
    """Rows x components matrix of component log densities."""
    return np.column_stack([
        component_logpdf(rows, params.means[q], params.precisions[q]) for q in range(params.n_components)
    ])


def mixture_loglik(rows: np.ndarray, params: RegimeParams, state: ComponentState) -> float:
    """Sum of log densities of each row under its labelled component."""
    total = 0.0
    for q in np.unique(state.labels):
        mine = state.labels == q
        total += float(component_logpdf(rows[mine], params.means[q], params.precisions[q]).sum())
    return total


def mixture_logpdf(rows: np.ndarray, params: RegimeParams, weights: np.ndarray) -> np.ndarray:
    """Per-row log density of the mixture with the labels summed out."""
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    return special.logsumexp(loglik_matrix(rows, params) + log_w, axis=1)


def log_weights(state: ComponentState) -> np.ndarray:
    return np.log(np.maximum(state.mixing_weights(), 1e-300))


def _gumbel_choice(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return np.argmax(logits + rng.gumbel(size=logits.shape), axis=1)


def gibbs_components(state: ComponentState, params: RegimeParams, rows: np.ndarray, rng: np.random.Generator) -> ComponentState:
    """Resample every label from pi_k f(z | theta_k), then the sticks."""
    if rows.shape[0] == 0:
        return replace(state, sticks=draw_sticks(state.labels, state.n_components, state.alpha, rng))
    logits = log_weights(state) + loglik_matrix(rows, params)
    labels = _gumbel_choice(logits, rng) if state.n_components > 1 else np.zeros(rows.shape[0], dtype=int)
    return ComponentState(labels, draw_sticks(labels, state.n_components, state.alpha, rng), state.alpha)


def launch_set(labels: np.ndarray, a: int, b: int) -> np.ndarray:
    """Rows sharing a label with either anchor (anchors included)."""
    return np.flatnonzero((labels == labels[a]) | (labels == labels[b]))


def target_log_ratio(scores: np.ndarray, rows: np.ndarray, old: np.ndarray, new: np.ndarray) -> float:
    """Change in sum of log(pi_k f(z | theta_k)) when `rows` move from `old` to `new` labels."""
    return float(scores[rows, new].sum() - scores[rows, old].sum())


def _restricted_proposal(
    scores: np.ndarray,
    rows: np.ndarray,
    pair: Tuple[int, int],
    rng: np.random.Generator,
    forced: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, float]:
    """One restricted Gibbs sweep of `rows` between the two labels of `pair`.

    Component parameters stay fixed during the move, so each row's restricted
    conditional does not depend on the other rows and every sweep is an
    independent draw from the same product distribution. Intermediate sweeps
    would leave the proposal unchanged; one scored sweep is the whole of it.

    Returns the proposed labels of `rows` (anchors excluded) and their log
    probability. With `forced` the sweep is evaluated at those labels instead
    of sampled.
    """
    ca, cb = pair
    pair_scores = scores[np.ix_(rows, [ca, cb])]
    log_norm = special.logsumexp(pair_scores, axis=1)
    p_a = np.exp(pair_scores[:, 0] - log_norm)
    final = forced if forced is not None else np.where(rng.random(rows.size) < p_a, ca, cb)
    log_q = float(np.sum(np.where(final == ca, pair_scores[:, 0], pair_scores[:, 1]) - log_norm))
    return final, log_q


def split_merge_swap_components(
    state: ComponentState,
    params: RegimeParams,
    rows: np.ndarray,
    rng: np.random.Generator,
) -> ComponentState:
    """Split-merge move on component labels followed by a full swap sweep over the launch set."""
    n = rows.shape[0]
    n_comp = state.n_components
    if n < 2 or n_comp < 2:
        return state
    scores = log_weights(state) + loglik_matrix(rows, params)
    labels = state.labels.copy()
    a, b = rng.choice(n, size=2, replace=False)
    ca, cb = int(labels[a]), int(labels[b])
    launch = launch_set(labels, a, b)
    movable = launch[(launch != a) & (launch != b)]
    occupied = np.bincount(labels, minlength=n_comp) > 0

    proposal = None
    if ca == cb:
        empty = np.flatnonzero(~occupied)
        if empty.size:
            cnew = int(empty[rng.integers(empty.size)])
            moved, log_q = _restricted_proposal(scores, movable, (ca, cnew), rng)
            proposal = labels.copy()
            proposal[b] = cnew
            proposal[movable] = moved
            log_accept = target_log_ratio(scores, launch, labels[launch], proposal[launch]) - log_q + math.log(empty.size)
    else:
        proposal = labels.copy()
        proposal[launch] = ca
        _, log_q_rev = _restricted_proposal(scores, movable, (ca, cb), rng, forced=labels[movable])
        n_empty_after = int(np.sum(~occupied)) + 1
        log_accept = target_log_ratio(scores, launch, labels[launch], proposal[launch]) + log_q_rev - math.log(n_empty_after)

    if proposal is not None and mh_accept(log_accept, rng):
        logger.debug(f"{'split' if ca == cb else 'merge'} accepted for components ({ca}, {cb})")
        labels = proposal

    labels[launch] = _gumbel_choice(scores[launch], rng)
    return replace(state, labels=labels)
