"""
Fault detection: Hellinger distances between the fitted regimes around a
change-point and per-variable Total-Effect / First-Order losses.
"""
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import special, stats

from .gwishart import inv_pd
from .logger import get_logger
from .posterior import DAILY_MEANS, PosteriorLog, RegimeSnapshot
from .utils import write_csv, write_json

logger = get_logger(__name__)

MIN_WEIGHT = 1e-6


class DegenerateSnapshotError(ValueError):
    """A snapshot measure has a singular (averaged) covariance."""


class NoSpanningSnapshotError(ValueError):
    """No logged snapshot separates regimes at the requested day."""


@dataclass(frozen=True)
class GaussianMixtureMeasure:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    @classmethod
    def from_snapshot(cls, regime: RegimeSnapshot) -> "GaussianMixtureMeasure":
        """Drop negligible components and renormalise the rest."""
        keep = regime.weights >= MIN_WEIGHT
        if not keep.any():
            keep = regime.weights == regime.weights.max()
        weights = regime.weights[keep] / regime.weights[keep].sum()
        covariances = np.array([inv_pd(p) for p in regime.precisions[keep]])
        return cls(weights, regime.means[keep], covariances)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        per_component = np.column_stack([
            stats.multivariate_normal(self.means[k], self.covariances[k], allow_singular=False).logpdf(x).reshape(-1)
            for k in range(self.n_components)
        ])
        return special.logsumexp(per_component + np.log(self.weights), axis=1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        which = rng.choice(self.n_components, size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for k in range(self.n_components):
            mine = which == k
            if mine.any():
                out[mine] = rng.multivariate_normal(self.means[k], self.covariances[k], size=int(mine.sum()))
        return out

    def same_as(self, other: "GaussianMixtureMeasure") -> bool:
        return (
            self.weights.shape == other.weights.shape and self.means.shape == other.means.shape
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.covariances, other.covariances)
        )


def marginal(measure: GaussianMixtureMeasure, keep: Sequence[int]) -> GaussianMixtureMeasure:
    """Component-wise Gaussian marginal on the `keep` coordinates; weights unchanged."""
    keep = np.asarray(sorted(keep), dtype=int)
    return GaussianMixtureMeasure(
        measure.weights,
        measure.means[:, keep],
        measure.covariances[:, keep[:, None], keep[None, :]],
    )


def marginalize(measure: GaussianMixtureMeasure, drop: Sequence[int]) -> GaussianMixtureMeasure:
    """Marginal with the `drop` coordinates integrated out."""
    dropped = set(int(d) for d in drop)
    return marginal(measure, [k for k in range(measure.dim) if k not in dropped])


def _logdet(matrix: np.ndarray) -> float:
    sign, value = np.linalg.slogdet(matrix)
    if sign <= 0:
        raise DegenerateSnapshotError("covariance is singular or not positive definite")
    return float(value)


def bhattacharyya_distance(mu1: np.ndarray, sigma1: np.ndarray, mu2: np.ndarray, sigma2: np.ndarray) -> float:
    """-log of the Bhattacharyya affinity between two Gaussians."""
    sigma_bar = 0.5 * (sigma1 + sigma2)
    diff = mu1 - mu2
    try:
        mahal = float(diff @ np.linalg.solve(sigma_bar, diff))
    except np.linalg.LinAlgError as e:
        raise DegenerateSnapshotError(f"averaged covariance is singular: {e}") from e
    return mahal / 8.0 + 0.5 * (_logdet(sigma_bar) - 0.5 * (_logdet(sigma1) + _logdet(sigma2)))


def bhattacharyya_affinity_mc(
    q1: GaussianMixtureMeasure,
    q2: GaussianMixtureMeasure,
    n_mc: int,
    rng: np.random.Generator,
) -> Tuple[float, float]:
    """Importance-sampled affinity with proposal (f1 + f2)/2; returns (estimate, std error)."""
    half = n_mc // 2
    x = np.vstack([q1.sample(half, rng), q2.sample(n_mc - half, rng)])
    log_f1 = q1.logpdf(x)
    log_f2 = q2.logpdf(x)
    log_ratio = 0.5 * (log_f1 + log_f2) - (np.logaddexp(log_f1, log_f2) - math.log(2.0))
    ratio = np.exp(np.minimum(log_ratio, 0.0))
    return float(np.clip(ratio.mean(), 0.0, 1.0)), float(ratio.std(ddof=1) / math.sqrt(x.shape[0]))


def hellinger(
    q1: GaussianMixtureMeasure,
    q2: GaussianMixtureMeasure,
    n_mc: int = 50_000,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Hellinger distance in [0, 1]: closed form for single Gaussians, Monte Carlo for mixtures."""
    return hellinger_estimate(q1, q2, n_mc, rng)[0]


def hellinger_estimate(
    q1: GaussianMixtureMeasure,
    q2: GaussianMixtureMeasure,
    n_mc: int = 50_000,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, float]:
    """(H, std error of H^2). The error is zero for the closed form."""
    if q1.dim != q2.dim:
        raise ValueError(f"measures live in different dimensions ({q1.dim} vs {q2.dim})")
    if q1.dim == 0 or q1.same_as(q2):
        return 0.0, 0.0
    if q1.n_components == 1 and q2.n_components == 1:
        bhd = bhattacharyya_distance(q1.means[0], q1.covariances[0], q2.means[0], q2.covariances[0])
        h2 = -math.expm1(-bhd)
        return math.sqrt(min(max(h2, 0.0), 1.0)), 0.0
    rng = rng if rng is not None else np.random.default_rng()
    affinity, std_error = bhattacharyya_affinity_mc(q1, q2, n_mc, rng)
    return math.sqrt(1.0 - affinity), std_error


@dataclass(frozen=True)
class SnapshotPair:
    before: GaussianMixtureMeasure
    after: GaussianMixtureMeasure
    iteration: int
    chain: int = 0


def total_effect_loss(
    pair: SnapshotPair,
    columns: Sequence[int],
    n_mc: int = 50_000,
    rng: Optional[np.random.Generator] = None,
    total: Optional[float] = None,
) -> float:
    """1 - H(Qb without i, Qa without i) / H(Qb, Qa); NaN when the pair shows no change."""
    total = hellinger(pair.before, pair.after, n_mc, rng) if total is None else total
    if total <= 0.0:
        return math.nan
    rest = hellinger(marginalize(pair.before, columns), marginalize(pair.after, columns), n_mc, rng)
    return 1.0 - rest / total


def first_order_loss(
    pair: SnapshotPair,
    columns: Sequence[int],
    n_mc: int = 50_000,
    rng: Optional[np.random.Generator] = None,
    total: Optional[float] = None,
) -> float:
    """H(Qb on i, Qa on i) / H(Qb, Qa); NaN when the pair shows no change."""
    total = hellinger(pair.before, pair.after, n_mc, rng) if total is None else total
    if total <= 0.0:
        return math.nan
    return hellinger(marginal(pair.before, columns), marginal(pair.after, columns), n_mc, rng) / total


@dataclass
class FaultReport:
    """Per-snapshot losses (rows) for every variable (columns)."""
    day: int
    variables: List[str]
    iterations: List[int]
    chains: List[int]
    total_effect: np.ndarray
    first_order: np.ndarray
    no_change: np.ndarray
    daily_means: pd.DataFrame = field(default_factory=pd.DataFrame)

    @property
    def n_snapshots(self) -> int:
        return len(self.iterations)

    @property
    def all_flagged(self) -> bool:
        return bool(np.all(self.no_change))

    def _mean(self, losses: np.ndarray) -> np.ndarray:
        usable = losses[~self.no_change]
        if usable.shape[0] == 0:
            return np.full(len(self.variables), np.nan)
        return usable.mean(axis=0)

    def mean_total_effect(self) -> np.ndarray:
        return self._mean(self.total_effect)

    def mean_first_order(self) -> np.ndarray:
        return self._mean(self.first_order)

    def ranking(self, metric: str = "first_order") -> List[str]:
        """Variables by decreasing mean loss; a permutation of all variables."""
        means = self.mean_first_order() if metric == "first_order" else self.mean_total_effect()
        order = np.argsort(-np.nan_to_num(means, nan=-np.inf), kind="stable")
        return [self.variables[k] for k in order]

    def summary(self) -> Dict[str, object]:
        te, fo = self.mean_total_effect(), self.mean_first_order()
        usable = ~self.no_change
        return {
            "changepoint_day": self.day,
            "n_snapshots": self.n_snapshots,
            "n_flagged_no_change": int(self.no_change.sum()),
            "no_detectable_change": self.all_flagged,
            "ranking_first_order": self.ranking("first_order"),
            "ranking_total_effect": self.ranking("total_effect"),
            "variables": {
                name: {
                    "total_effect_mean": te[j],
                    "total_effect_sd": float(np.std(self.total_effect[usable, j], ddof=1)) if usable.sum() > 1 else None,
                    "first_order_mean": fo[j],
                    "first_order_sd": float(np.std(self.first_order[usable, j], ddof=1)) if usable.sum() > 1 else None,
                }
                for j, name in enumerate(self.variables)
            },
        }

    def losses_frame(self) -> pd.DataFrame:
        rows = []
        for s in range(self.n_snapshots):
            for j, name in enumerate(self.variables):
                rows.append((s + 1, self.chains[s], self.iterations[s], name, "total_effect", self.total_effect[s, j]))
                rows.append((s + 1, self.chains[s], self.iterations[s], name, "first_order", self.first_order[s, j]))
        return pd.DataFrame(rows, columns=["snapshot", "chain", "iteration", "variable", "metric", "value"])


def spanning_pairs(log: PosteriorLog, day: int) -> List[SnapshotPair]:
    pairs = []
    for snap in log.snapshots:
        found = snap.spanning(day)
        if found is not None:
            pairs.append(SnapshotPair(
                GaussianMixtureMeasure.from_snapshot(found[0]),
                GaussianMixtureMeasure.from_snapshot(found[1]),
                snap.iteration,
                snap.chain,
            ))
    return pairs


def fault_report(log: PosteriorLog, day: int, n_mc: int, rng: np.random.Generator) -> FaultReport:
    """Losses of every variable in every snapshot whose regimes change after `day`."""
    started = time.time()
    pairs = spanning_pairs(log, day)
    if not pairs:
        raise NoSpanningSnapshotError(f"no snapshot has a change after day {day} ({len(log.snapshots)} snapshots logged)")
    names = list(log.column_groups)
    te = np.full((len(pairs), len(names)), np.nan)
    fo = np.full((len(pairs), len(names)), np.nan)
    flagged = np.zeros(len(pairs), dtype=bool)
    logger.info(f"Fault report for day {day}: {len(pairs)} snapshot(s), {len(names)} variables")

    for s, pair in enumerate(pairs):
        total = hellinger(pair.before, pair.after, n_mc, rng)
        if total <= 0.0:
            flagged[s] = True
            continue
        for j, name in enumerate(names):
            cols = log.column_groups[name]
            te[s, j] = total_effect_loss(pair, cols, n_mc, rng, total=total)
            fo[s, j] = first_order_loss(pair, cols, n_mc, rng, total=total)

    if flagged.all():
        logger.warning(f"No detectable change after day {day}: every snapshot pair is identical")
    logger.info(f"Fault report completed in {time.time() - started:.2f}s")
    return FaultReport(
        day=day,
        variables=names,
        iterations=[p.iteration for p in pairs],
        chains=[p.chain for p in pairs],
        total_effect=te,
        first_order=fo,
        no_change=flagged,
        daily_means=log.daily_means,
    )


def write_fault_outputs(report: FaultReport, out_dir: Path) -> List[Path]:
    out_dir = Path(out_dir)
    return [
        write_json(out_dir / "fault_report.json", report.summary()),
        write_csv(out_dir / "fault_losses.csv", report.losses_frame()),
        write_csv(out_dir / DAILY_MEANS, report.daily_means),
    ]
