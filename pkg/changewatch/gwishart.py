"""
G-Wishart machinery in Wang's parameterization, density proportional to
|L|^((nu-2)/2) exp(-tr(D L)/2) on precision matrices L whose zeros follow G.

Covers Cholesky completion, the exact iterative sampler, the unnormalized
log density, three normalizing-constant estimators and the edge prior.
"""
import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import networkx as nx
import numpy as np
from scipy import linalg, special, stats

from .graph import Graph
from .logger import get_logger

logger = get_logger(__name__)

# Calls to the approximate estimators, for instrumentation
estimator_calls: Counter = Counter()

DEFAULT_TOL = 1e-8


class NotPositiveDefiniteError(ValueError):
    """A factor or matrix failed a positive-definiteness requirement."""


class GWishartConvergenceError(ValueError):
    """Iterative projection did not settle; usually an ill-conditioned scale matrix."""


class NonDecomposableGraphError(ValueError):
    """The exact clique/separator formula needs a chordal graph."""


@dataclass(frozen=True)
class GPrecision:
    """Precision matrix whose off-diagonal zeros are exactly the non-edges of `graph`."""
    matrix: np.ndarray
    graph: Graph

    def validate(self, atol: float = 1e-10) -> "GPrecision":
        off = ~self.graph.adjacency & ~np.eye(self.graph.n_vertices, dtype=bool)
        if np.any(np.abs(self.matrix[off]) > atol):
            raise ValueError("precision has non-zero entries at non-edges")
        upper_cholesky(self.matrix)
        return self


@dataclass(frozen=True)
class NormConstEstimate:
    log_value: float
    std_error: float


def upper_cholesky(matrix: np.ndarray) -> np.ndarray:
    """Upper-triangular factor with matrix = U'U."""
    try:
        return linalg.cholesky(matrix, lower=False)
    except linalg.LinAlgError as e:
        raise NotPositiveDefiniteError(f"Cholesky factorization failed: {e}") from e


def logdet_pd(matrix: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(upper_cholesky(matrix)))))


def inv_pd(matrix: np.ndarray) -> np.ndarray:
    u = upper_cholesky(matrix)
    inv = linalg.cho_solve((u, False), np.eye(matrix.shape[0]))
    return 0.5 * (inv + inv.T)


def complete_cholesky(psi: np.ndarray, graph: Graph) -> np.ndarray:
    """Fill non-free entries of an upper-triangular factor so psi'psi honors G.

    Free entries (diagonal and edges) are kept. Rows are filled top to bottom,
    left to right: psi_ij = -(1/psi_ii) sum_{l<i} psi_li psi_lj at non-edges.
    """
    psi = np.triu(np.array(psi, dtype=float))
    if np.any(np.diag(psi) <= 0):
        raise NotPositiveDefiniteError("Cholesky factor needs a strictly positive diagonal")
    adj = graph.adjacency
    dim = psi.shape[0]
    for i in range(dim):
        for j in range(i + 1, dim):
            if adj[i, j]:
                continue
            psi[i, j] = -np.dot(psi[:i, i], psi[:i, j]) / psi[i, i] if i > 0 else 0.0
    return psi


def _wishart_draw(df: float, scale: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    dim = scale.shape[0]
    draw = stats.wishart(df=df, scale=scale).rvs(random_state=rng)
    return np.atleast_2d(np.asarray(draw, dtype=float)).reshape(dim, dim)


def _complete_covariance(sigma: np.ndarray, graph: Graph, tol: float, max_iter: int) -> np.ndarray:
    """Covariance W matching sigma on the free entries with inv(W) zero at non-edges."""
    dim = sigma.shape[0]
    w = sigma.copy()
    everything = np.arange(dim)
    for iteration in range(max_iter):
        previous = w.copy()
        for j in range(dim):
            others = everything[everything != j]
            nb = graph.neighbors(j)
            if nb.size == 0:
                w[others, j] = 0.0
                w[j, others] = 0.0
                continue
            beta = linalg.solve(w[np.ix_(nb, nb)], sigma[nb, j], assume_a="pos")
            column = w[np.ix_(others, nb)] @ beta
            w[others, j] = column
            w[j, others] = column
        if np.max(np.abs(w - previous)) < tol:
            return w
    raise GWishartConvergenceError(f"covariance completion did not converge in {max_iter} iterations")


def sample_gwishart(
    graph: Graph,
    D: np.ndarray,
    nu: float,
    rng: np.random.Generator,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
) -> GPrecision:
    """Exact draw from W_G(nu, D).

    A full Wishart draw with nu + J - 1 degrees of freedom and scale inv(D) is
    projected onto the graph by iterated regressions on each vertex's neighbors.
    """
    if nu <= 2:
        raise ValueError(f"degrees of freedom must exceed 2, got {nu}")
    dim = graph.n_vertices
    max_iter = max_iter if max_iter is not None else 100 * dim
    k = _wishart_draw(nu + dim - 1, inv_pd(D), rng)
    if graph.is_full:
        return GPrecision(0.5 * (k + k.T), graph)
    w = _complete_covariance(inv_pd(k), graph, tol, max_iter)
    lam = inv_pd(w)
    lam[~graph.adjacency & ~np.eye(dim, dtype=bool)] = 0.0
    result = GPrecision(lam, graph)
    if __debug__:
        result.validate(atol=0.0)
    return result


def log_gwishart_unnorm(lam: np.ndarray, D: np.ndarray, nu: float) -> float:
    """((nu - 2)/2) logdet(L) - tr(D L)/2."""
    return 0.5 * (nu - 2.0) * logdet_pd(lam) - 0.5 * float(np.sum(D * lam))


def log_wishart_const(D: np.ndarray, nu: float) -> float:
    """Closed-form log normalizer for the complete graph."""
    dim = D.shape[0]
    if dim == 0:
        return 0.0
    df = nu + dim - 1
    return 0.5 * df * dim * math.log(2.0) + float(special.multigammaln(0.5 * df, dim)) - 0.5 * df * logdet_pd(D)


def _upper_neighbor_counts(graph: Graph) -> np.ndarray:
    return np.triu(graph.adjacency, k=1).sum(axis=1)


def log_norm_const_mc(graph: Graph, D: np.ndarray, nu: float, n_mc: int, rng: np.random.Generator) -> NormConstEstimate:
    """Monte-Carlo estimate of log I_G(nu, D) with its standard error.

    Works in the coordinates psi = phi T^-1, where phi is the Cholesky factor of
    the precision and T'T = inv(D). Free psi entries are chi and standard normal
    draws; the estimator averages exp(-sum of squared non-free psi / 2).
    """
    if nu <= 2:
        raise ValueError(f"degrees of freedom must exceed 2, got {nu}")
    estimator_calls["mc"] += 1
    dim = graph.n_vertices
    adj = graph.adjacency
    t = upper_cholesky(inv_pd(D))
    t_diag = np.diag(t)
    nu_up = _upper_neighbor_counts(graph)
    degree = adj.sum(axis=1)

    log_c = float(np.sum(
        0.5 * (nu + nu_up) * math.log(2.0)
        + 0.5 * nu_up * math.log(2.0 * math.pi)
        + special.gammaln(0.5 * (nu + nu_up))
        + (nu + degree) * np.log(t_diag)
    ))
    if graph.is_full:
        return NormConstEstimate(log_c, 0.0)

    psi = np.zeros((n_mc, dim, dim))
    phi = np.zeros((n_mc, dim, dim))
    penalty = np.zeros(n_mc)
    for i in range(dim):
        psi[:, i, i] = np.sqrt(rng.chisquare(nu + nu_up[i], size=n_mc))
        phi[:, i, i] = psi[:, i, i] * t[i, i]
        for j in range(i + 1, dim):
            partial = psi[:, i, i:j] @ t[i:j, j]
            if adj[i, j]:
                psi[:, i, j] = rng.standard_normal(n_mc)
                phi[:, i, j] = partial + psi[:, i, j] * t[j, j]
            else:
                if i > 0:
                    phi[:, i, j] = -np.einsum("nl,nl->n", phi[:, :i, i], phi[:, :i, j]) / phi[:, i, i]
                psi[:, i, j] = (phi[:, i, j] - partial) / t[j, j]
                penalty += psi[:, i, j] ** 2

    log_f = -0.5 * penalty
    top = log_f.max()
    scaled = np.exp(log_f - top)
    mean = scaled.mean()
    log_mean = top + math.log(mean)
    std_error = float(scaled.std(ddof=1) / (math.sqrt(n_mc) * mean))
    return NormConstEstimate(log_c + log_mean, std_error)


def _cliques(graph: Graph) -> list:
    return sorted((sorted(c) for c in nx.find_cliques(graph.to_networkx())), key=lambda c: (len(c), c))


def ips_mode(graph: Graph, S: np.ndarray, tol: float = DEFAULT_TOL, max_iter: Optional[int] = None) -> np.ndarray:
    """Iterative proportional scaling: K in P_G with inv(K) equal to S on the free entries."""
    dim = graph.n_vertices
    max_iter = max_iter if max_iter is not None else 100 * dim
    cliques = [np.array(c) for c in _cliques(graph)]
    k = np.diag(1.0 / np.diag(S))
    for iteration in range(max_iter):
        previous = k.copy()
        for c in cliques:
            sigma = inv_pd(k)
            block = np.ix_(c, c)
            k[block] += inv_pd(S[block]) - inv_pd(sigma[block])
        k = 0.5 * (k + k.T)
        if np.max(np.abs(k - previous)) < tol:
            return k
    raise GWishartConvergenceError(f"IPS did not converge in {max_iter} iterations")


def log_norm_const_laplace(graph: Graph, D: np.ndarray, nu: float, tol: float = DEFAULT_TOL, max_iter: Optional[int] = None) -> float:
    """Laplace approximation of log I_G(nu, D) around the IPS mode."""
    if nu <= 2:
        raise ValueError(f"Laplace approximation needs an interior mode (nu > 2), got {nu}")
    estimator_calls["laplace"] += 1
    a = 0.5 * (nu - 2.0)
    mode = ips_mode(graph, D / (nu - 2.0), tol, max_iter)
    sigma = inv_pd(mode)

    dim = graph.n_vertices
    rows, cols = np.triu_indices(dim)
    free = graph.adjacency[rows, cols] | (rows == cols)
    ii, jj = rows[free], cols[free]
    scale = np.where(ii == jj, 0.5, 1.0)
    # negative Hessian of a*logdet(K) over symmetric free coordinates
    hessian = 2.0 * a * np.outer(scale, scale) * (
        sigma[np.ix_(ii, jj)].T * sigma[np.ix_(ii, jj)]
        + sigma[np.ix_(ii, ii)] * sigma[np.ix_(jj, jj)]
    )
    log_kernel = log_gwishart_unnorm(mode, D, nu)
    return log_kernel + 0.5 * len(ii) * math.log(2.0 * math.pi) - 0.5 * logdet_pd(hessian)


def log_norm_const_decomposable(graph: Graph, D: np.ndarray, nu: float) -> float:
    """Exact log I_G from clique and separator Wishart normalizers."""
    g = graph.to_networkx()
    if not nx.is_chordal(g):
        raise NonDecomposableGraphError(f"graph {graph!r} is non-decomposable")
    cliques = _cliques(graph)
    total = sum(log_wishart_const(D[np.ix_(c, c)], nu) for c in cliques)
    if len(cliques) > 1:
        clique_graph = nx.Graph()
        clique_graph.add_nodes_from(range(len(cliques)))
        for x in range(len(cliques)):
            for y in range(x + 1, len(cliques)):
                shared = set(cliques[x]) & set(cliques[y])
                if shared:
                    clique_graph.add_edge(x, y, weight=len(shared))
        for x, y in sorted(nx.maximum_spanning_tree(clique_graph).edges()):
            sep = sorted(set(cliques[x]) & set(cliques[y]))
            total -= log_wishart_const(D[np.ix_(sep, sep)], nu)
    return total


def graph_log_prior(graph: Graph, rho: float) -> float:
    """Independent-edge prior: |E| log(rho) + (J(J-1)/2 - |E|) log(1 - rho)."""
    if not 0 < rho < 1:
        raise ValueError(f"edge probability must lie in (0, 1), got {rho}")
    return graph.n_edges * math.log(rho) + (graph.max_edges - graph.n_edges) * math.log1p(-rho)


class NormalizingConstants:
    """Routes G-Wishart normalizing constants to the cheapest valid method.

    Complete graphs use the closed form. Chordal graphs use the exact
    clique/separator formula unless `force_general` is set. Otherwise prior-side
    constants come from Monte Carlo (cached per graph, since nu and D are fixed)
    and posterior-side constants from the Laplace approximation.
    """

    def __init__(self, D: np.ndarray, nu: float, n_mc: int, rng: np.random.Generator, force_general: bool = False):
        self.D = D
        self.nu = nu
        self.n_mc = n_mc
        self.rng = rng
        self.force_general = force_general
        self._prior_cache: Dict[Graph, float] = {}
        self._chordal_cache: Dict[Graph, bool] = {}

    def _exact(self, graph: Graph) -> bool:
        if graph.is_full:
            return True
        if self.force_general:
            return False
        if graph not in self._chordal_cache:
            self._chordal_cache[graph] = graph.is_decomposable()
        return self._chordal_cache[graph]

    def log_const(self, graph: Graph, D: np.ndarray, nu: float) -> float:
        if graph.is_full:
            return log_wishart_const(D, nu)
        if self._exact(graph):
            return log_norm_const_decomposable(graph, D, nu)
        return log_norm_const_laplace(graph, D, nu)

    def prior(self, graph: Graph) -> float:
        if graph not in self._prior_cache:
            if self._exact(graph):
                value = self.log_const(graph, self.D, self.nu)
            else:
                value = log_norm_const_mc(graph, self.D, self.nu, self.n_mc, self.rng).log_value
            self._prior_cache[graph] = value
        return self._prior_cache[graph]

    def posterior(self, graph: Graph, D_post: np.ndarray, nu_post: float) -> float:
        return self.log_const(graph, D_post, nu_post)
