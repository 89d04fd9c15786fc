"""
Posterior log: regime-vector trace, parameter snapshots, change-point
probabilities, and persistence of a chain's output directory.
"""
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .data_model import VariableSpec
from .graph import Graph
from .logger import get_logger
from .utils import ensure_dir, read_json, write_csv, write_json

logger = get_logger(__name__)

PHI_TRACE = "phi_trace.csv"
SNAPSHOT_DIR = "snapshots"
CHAIN_META = "chain_meta.json"
FINAL_STATE = "final_state.json"
DAILY_MEANS = "daily_means.csv"


@dataclass(frozen=True)
class RegimeSnapshot:
    """Mixture parameters of one regime. Days are 0-based inclusive."""
    regime: int
    first_day: int
    last_day: int
    weights: np.ndarray
    means: np.ndarray
    precisions: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {
            "regime": self.regime + 1,
            "first_day": self.first_day + 1,
            "last_day": self.last_day + 1,
            "weights": self.weights,
            "means": self.means,
            "precisions": self.precisions,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RegimeSnapshot":
        return cls(
            regime=int(data["regime"]) - 1,
            first_day=int(data["first_day"]) - 1,
            last_day=int(data["last_day"]) - 1,
            weights=np.asarray(data["weights"], dtype=float),
            means=np.asarray(data["means"], dtype=float),
            precisions=np.asarray(data["precisions"], dtype=float),
        )


@dataclass(frozen=True)
class Snapshot:
    iteration: int
    graph: Graph
    regimes: Tuple[RegimeSnapshot, ...]
    chain: int = 0

    def spanning(self, day: int) -> Optional[Tuple[RegimeSnapshot, RegimeSnapshot]]:
        """Adjacent regimes separated by a change after 1-based `day`, if any."""
        for before, after in zip(self.regimes, self.regimes[1:]):
            if before.last_day + 1 == day and after.first_day == day:
                return before, after
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "iteration": self.iteration,
            "chain": self.chain,
            "graph": self.graph.to_text(),
            "regimes": [r.to_dict() for r in self.regimes],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Snapshot":
        return cls(
            iteration=int(data["iteration"]),
            graph=Graph.from_text(data["graph"]),
            regimes=tuple(RegimeSnapshot.from_dict(r) for r in data["regimes"]),
            chain=int(data.get("chain", 0)),
        )


@dataclass
class PosteriorLog:
    """Everything a chain leaves behind. `phi_trace` rows are 0-based labels per iteration."""
    n_days: int
    burn_in: int
    iterations: np.ndarray
    phi_trace: np.ndarray
    snapshots: List[Snapshot]
    variables: Tuple[VariableSpec, ...]
    column_groups: Dict[str, List[int]]
    day_counts: np.ndarray
    daily_means: pd.DataFrame
    final_state: Optional[Snapshot] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_recorded(self) -> int:
        return self.phi_trace.shape[0]

    def post_burn_in(self) -> np.ndarray:
        return self.phi_trace[self.iterations > self.burn_in]


def changepoint_probabilities(log: PosteriorLog) -> np.ndarray:
    """c_t for t = 1..T-1: share of post-burn-in draws with a change after day t."""
    draws = log.post_burn_in()
    if draws.shape[0] == 0:
        logger.warning("No post-burn-in draws; change-point probabilities are all zero")
        return np.zeros(log.n_days - 1)
    return np.mean(np.diff(draws, axis=1) != 0, axis=0)


def changepoints(probs: np.ndarray, cutoff: float) -> List[int]:
    """1-based days whose change probability reaches `cutoff`."""
    return [int(t) + 1 for t in np.flatnonzero(np.asarray(probs) >= cutoff)]


def map_regime_vector(log: PosteriorLog) -> np.ndarray:
    """Most frequent post-burn-in regime vector (0-based labels)."""
    draws = log.post_burn_in()
    if draws.shape[0] == 0:
        return np.zeros(log.n_days, dtype=int)
    counts = Counter(tuple(row) for row in draws.tolist())
    best, _ = max(counts.items(), key=lambda kv: (kv[1], [-x for x in kv[0]]))
    return np.array(best, dtype=int)


def probabilities_frame(probs: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame({"day": np.arange(1, len(probs) + 1), "probability": probs})


def save_log(log: PosteriorLog, out_dir: Path) -> List[Path]:
    """Write the log directory; returns the written paths."""
    out_dir = ensure_dir(Path(out_dir))
    trace = pd.DataFrame(log.phi_trace + 1, columns=[str(t) for t in range(1, log.n_days + 1)])
    trace.insert(0, "iteration", log.iterations)
    paths = [write_csv(out_dir / PHI_TRACE, trace)]

    snap_dir = ensure_dir(out_dir / SNAPSHOT_DIR)
    for k, snap in enumerate(log.snapshots):
        paths.append(write_json(snap_dir / f"snapshot_{k:05d}.json", snap.to_dict()))

    if log.final_state is not None:
        paths.append(write_json(out_dir / FINAL_STATE, log.final_state.to_dict()))
    paths.append(write_csv(out_dir / DAILY_MEANS, log.daily_means))
    paths.append(write_json(out_dir / CHAIN_META, {
        **log.meta,
        "n_days": log.n_days,
        "burn_in": log.burn_in,
        "variables": [v.model_dump(mode="json") for v in log.variables],
        "column_groups": log.column_groups,
        "day_counts": log.day_counts,
        "n_snapshots": len(log.snapshots),
    }))
    logger.info(f"Saved posterior log to {out_dir} ({log.n_recorded} draws, {len(log.snapshots)} snapshots)")
    return paths


def load_log(log_dir: Path) -> PosteriorLog:
    log_dir = Path(log_dir)
    if not (log_dir / CHAIN_META).exists():
        raise FileNotFoundError(f"{log_dir} is not a posterior log directory (no {CHAIN_META})")
    meta = read_json(log_dir / CHAIN_META)
    trace = pd.read_csv(log_dir / PHI_TRACE)
    snapshots = [Snapshot.from_dict(read_json(p)) for p in sorted((log_dir / SNAPSHOT_DIR).glob("snapshot_*.json"))]
    final_path = log_dir / FINAL_STATE
    n_days = int(meta.pop("n_days"))
    burn_in = int(meta.pop("burn_in"))
    variables = tuple(VariableSpec.model_validate(v) for v in meta.pop("variables"))
    column_groups = {k: list(v) for k, v in meta.pop("column_groups").items()}
    day_counts = np.asarray(meta.pop("day_counts"), dtype=int)
    meta.pop("n_snapshots", None)
    return PosteriorLog(
        n_days=n_days,
        burn_in=burn_in,
        iterations=trace["iteration"].to_numpy(dtype=int),
        phi_trace=trace.drop(columns="iteration").to_numpy(dtype=int).reshape(-1, n_days) - 1,
        snapshots=snapshots,
        variables=variables,
        column_groups=column_groups,
        day_counts=day_counts,
        daily_means=pd.read_csv(log_dir / DAILY_MEANS),
        final_state=Snapshot.from_dict(read_json(final_path)) if final_path.exists() else None,
        meta=meta,
    )


def merge_logs(logs: Sequence[PosteriorLog]) -> PosteriorLog:
    """Pool post-burn-in draws and snapshots of independent chains."""
    if not logs:
        raise ValueError("nothing to merge")
    first = logs[0]
    if any(log.n_days != first.n_days for log in logs):
        raise ValueError("chains cover different numbers of days")
    traces = [log.post_burn_in() for log in logs]
    pooled = np.concatenate(traces, axis=0) if traces else np.zeros((0, first.n_days), dtype=int)
    snapshots = [replace(s, chain=c) for c, log in enumerate(logs) for s in log.snapshots]
    meta = dict(first.meta)
    meta["chains"] = [log.meta.get("seed") for log in logs]
    return replace(
        first,
        burn_in=0,
        iterations=np.arange(1, pooled.shape[0] + 1),
        phi_trace=pooled,
        snapshots=snapshots,
        meta=meta,
    )
