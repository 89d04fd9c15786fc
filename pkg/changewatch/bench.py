"""
Benchmark harness: Hotelling T^2 scan baseline, detection / false-positive
scoring, and seeded replications over simulation scenarios.
"""
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from .config import SamplerConfig, ScenarioSpec
from .data_model import DAY_COLUMN, DataStream, prepare_stream
from .logger import get_logger
from .posterior import changepoint_probabilities
from .sampler import run_chain
from .simulate import generate, truth
from .utils import gather_bounded, spawn_seeds

logger = get_logger(__name__)

EXCLUDED_AFTER_CHANGE = 2
METHOD_MODEL = "changewatch"
METHOD_HT2 = "hotelling_t2"
RIDGE_SCALE = 1e-6


@dataclass
class BenchResult:
    """Score of one method on one replication."""
    scenario: str
    method: str
    replication: int
    seed: int
    detected: bool
    false_positive_days: List[int] = field(default_factory=list)
    n_candidates: int = 0
    seconds: float = 0.0

    @property
    def fpr(self) -> float:
        return len(self.false_positive_days) / self.n_candidates if self.n_candidates else 0.0

    def to_row(self) -> Dict[str, object]:
        return {
            "scenario": self.scenario,
            "method": self.method,
            "replication": self.replication,
            "seed": self.seed,
            "detected": int(self.detected),
            "fpr": self.fpr,
            "false_positives": " ".join(str(d) for d in self.false_positive_days),
            "n_candidates": self.n_candidates,
            "seconds": round(self.seconds, 3),
        }


def candidate_days(n_days: int, truth_days: Sequence[int]) -> List[int]:
    """Days eligible for a false positive: not a true change and not among the two days after one."""
    excluded = set()
    for t in truth_days:
        excluded.update(range(t, t + EXCLUDED_AFTER_CHANGE + 1))
    return [t for t in range(1, n_days) if t not in excluded]


def score(
    truth_days: Sequence[int],
    values: np.ndarray,
    cutoff: float = 0.5,
    scenario: str = "",
    method: str = "",
    replication: int = 0,
    seed: int = 0,
    seconds: float = 0.0,
) -> BenchResult:
    """Score per-day alarms or change probabilities; entry t-1 refers to a change after day t."""
    values = np.asarray(values, dtype=float)
    n_days = values.size + 1
    hits = values >= cutoff
    detected = bool(truth_days) and all(hits[t - 1] for t in truth_days)
    candidates = candidate_days(n_days, truth_days)
    return BenchResult(
        scenario=scenario,
        method=method,
        replication=replication,
        seed=seed,
        detected=detected,
        false_positive_days=[t for t in candidates if hits[t - 1]],
        n_candidates=len(candidates),
        seconds=seconds,
    )


def _pooled_covariance(window: np.ndarray, today: np.ndarray) -> Tuple[np.ndarray, bool]:
    n1, n2 = window.shape[0], today.shape[0]
    scatter = (n1 - 1) * np.cov(window, rowvar=False) if n1 > 1 else 0.0
    scatter = scatter + ((n2 - 1) * np.cov(today, rowvar=False) if n2 > 1 else 0.0)
    pooled = np.atleast_2d(scatter / (n1 + n2 - 2))
    dim = pooled.shape[0]
    if np.linalg.matrix_rank(pooled) < dim:
        ridge = RIDGE_SCALE * max(np.trace(pooled), 1.0) / dim
        return pooled + ridge * np.eye(dim), True
    return pooled, False


def hotelling_t2_scan(ds: DataStream, window_days: int = 3, alpha: float = 0.005) -> np.ndarray:
    """Alarm flags for a change after each day 1..T-1.

    Day t's mean is compared against the pooled rows of the `window_days`
    preceding days with a two-sample T^2 and its F upper control limit; an
    alarm on day t declares a change after day t-1. Rows with a missing cell
    are dropped.
    """
    if window_days < 1:
        raise ValueError(f"window_days must be >= 1, got {window_days}")
    flags = np.zeros(ds.n_days - 1)
    batches = [batch.codes[~np.isnan(batch.codes).any(axis=1)] for batch in ds.days]
    dropped = int(ds.counts.sum() - sum(b.shape[0] for b in batches))
    if dropped:
        logger.info(f"Hotelling T^2: {dropped} incomplete row(s) dropped")
    p = ds.n_vars

    for t in range(window_days, ds.n_days):
        window = np.vstack(batches[t - window_days:t])
        today = batches[t]
        n1, n2 = window.shape[0], today.shape[0]
        df2 = n1 + n2 - p - 1
        if n2 < 1 or df2 < 1:
            logger.warning(f"Hotelling T^2: too few complete rows on day {ds.days[t].day} ({n1} + {n2} for {p} variables)")
            continue
        pooled, ridged = _pooled_covariance(window, today)
        if ridged:
            logger.warning(f"Hotelling T^2: singular pooled covariance on day {ds.days[t].day}, ridge applied")
        diff = today.mean(axis=0) - window.mean(axis=0)
        t2 = (n1 * n2 / (n1 + n2)) * float(diff @ np.linalg.solve(pooled, diff))
        f_stat = df2 / (p * (n1 + n2 - 2)) * t2
        flags[t - 1] = float(f_stat > stats.f.ppf(1.0 - alpha, p, df2))
    return flags


def load_alarm_file(path: Path, n_days: int) -> np.ndarray:
    """Per-day values from a `day,alarm` CSV; `day` is the day after which a change is declared."""
    frame = pd.read_csv(path)
    missing = {DAY_COLUMN, "alarm"} - set(frame.columns)
    if missing:
        raise ValueError(f"{path}: missing column(s) {', '.join(sorted(missing))}")
    values = np.zeros(n_days - 1)
    for day, alarm in zip(frame[DAY_COLUMN].astype(int), frame["alarm"].astype(float)):
        if not 1 <= day <= n_days - 1:
            raise ValueError(f"{path}: day {day} outside 1..{n_days - 1}")
        values[day - 1] = alarm
    return values


def run_replication(
    spec: ScenarioSpec,
    config: SamplerConfig,
    replication: int,
    seed: int,
    ht2_window: int = 3,
    ht2_alpha: float = 0.005,
    external: Optional[Mapping[str, str]] = None,
) -> List[BenchResult]:
    """Generate one dataset, fit it, run the baseline and score every method."""
    rng = np.random.default_rng(seed)
    ds = generate(spec.model_copy(update={"seed": seed}), rng)
    truth_days = truth(spec)
    common = {"scenario": spec.scenario, "replication": replication, "seed": seed}
    results = []

    started = time.time()
    fit_ds, _ = prepare_stream(ds)
    log = run_chain(fit_ds, config.model_copy(update={"seed": seed}))
    probs = changepoint_probabilities(log)
    results.append(score(truth_days, probs, config.cutoff, method=METHOD_MODEL, seconds=time.time() - started, **common))

    started = time.time()
    flags = hotelling_t2_scan(ds, ht2_window, ht2_alpha)
    results.append(score(truth_days, flags, 0.5, method=METHOD_HT2, seconds=time.time() - started, **common))

    for name, template in (external or {}).items():
        path = Path(template.format(scenario=spec.scenario, replication=replication + 1))
        results.append(score(truth_days, load_alarm_file(path, ds.n_days), 0.5, method=name, **common))

    for r in results:
        logger.info(f"Scenario {spec.scenario} replication {replication + 1} [{r.method}]: detected={r.detected}, FPR={r.fpr:.3f}")
    return results


async def run_bench(
    specs: Sequence[ScenarioSpec],
    config: SamplerConfig,
    replications: int,
    threads: int = 1,
    external: Optional[Mapping[str, str]] = None,
) -> pd.DataFrame:
    """Every scenario x replication, run in a bounded worker pool; one row per method."""
    started = time.time()
    jobs = []
    for spec in specs:
        for k, seed in enumerate(spawn_seeds(spec.seed, replications)):
            jobs.append(lambda spec=spec, k=k, seed=seed: run_replication(spec, config, k, seed, external=external))
    logger.info(f"Bench started: {len(specs)} scenario(s) x {replications} replication(s), {threads} thread(s)")
    nested = await gather_bounded(jobs, threads)
    frame = pd.DataFrame([r.to_row() for results in nested for r in results])
    logger.info(f"Bench completed in {time.time() - started:.2f}s")
    return frame


def false_positive_rate(truth_days: Sequence[int], prob_sets: Sequence[np.ndarray], cutoff: float) -> float:
    hits, total = 0, 0
    for probs in prob_sets:
        result = score(truth_days, probs, cutoff)
        hits += len(result.false_positive_days)
        total += result.n_candidates
    return hits / total if total else 0.0


def calibrate_cutoff(truth_days: Sequence[int], prob_sets: Sequence[np.ndarray], fpr_target: float) -> float:
    """Smallest cutoff whose pooled false-positive rate does not exceed `fpr_target`."""
    pooled = np.concatenate([np.asarray(p, dtype=float) for p in prob_sets]) if prob_sets else np.zeros(0)
    thresholds = np.unique(np.concatenate([[0.0], pooled, np.minimum(np.nextafter(pooled, 2.0), 1.0)]))
    for cutoff in thresholds:
        if false_positive_rate(truth_days, prob_sets, float(cutoff)) <= fpr_target:
            return float(cutoff)
    logger.warning(f"No cutoff reaches FPR {fpr_target}; returning 1.0")
    return 1.0
