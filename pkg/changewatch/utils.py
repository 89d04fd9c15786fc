"""
Utility functions for seeding, file output, and small numeric helpers.
"""
import asyncio
import json
import math
from pathlib import Path
from typing import Any, Callable, List, Sequence, TypeVar

import numpy as np
import pandas as pd

from .logger import get_logger

logger = get_logger(__name__)

CSV_FLOAT_FORMAT = "%.10g"

T = TypeVar("T")


def spawn_seeds(seed: int, count: int) -> List[int]:
    """Derive independent integer seeds for parallel jobs from one master seed."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint32)[0]) for child in children]


def ensure_dir(path: Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_jsonable(value.tolist())
    if isinstance(value, np.generic):
        return _to_jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(path: Path, payload: Any) -> Path:
    """Write JSON deterministically: sorted keys, NaN/inf as null."""
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_to_jsonable(payload), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.debug(f"Wrote {path}")
    return path


def read_json(path: Path) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_csv(path: Path, frame: pd.DataFrame) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.debug(f"Wrote {path} ({len(frame)} rows)")
    return path


def pairs_upper(dim: int) -> List[tuple]:
    """All unordered vertex pairs (q, s), q < s, in row-major order."""
    return [(q, s) for q in range(dim) for s in range(q + 1, dim)]


def mh_accept(log_ratio: float, rng: np.random.Generator) -> bool:
    """Metropolis-Hastings coin: accept with probability min(1, exp(log_ratio))."""
    if np.isnan(log_ratio):
        return False
    return bool(np.log(rng.random()) < log_ratio)


async def gather_bounded(jobs: Sequence[Callable[[], T]], threads: int) -> List[T]:
    """Run blocking jobs in worker threads, at most `threads` at a time, keeping job order."""
    semaphore = asyncio.Semaphore(max(1, threads))

    async def run(job: Callable[[], T]) -> T:
        async with semaphore:
            return await asyncio.to_thread(job)

    return list(await asyncio.gather(*(run(job) for job in jobs)))
