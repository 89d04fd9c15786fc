"""
Day-to-regime assignment and the Markov transition model between regimes.
"""
import math
from dataclasses import dataclass, replace
from typing import List, Tuple

import numpy as np
from scipy import special

from .logger import get_logger
from .utils import mh_accept

logger = get_logger(__name__)


@dataclass(frozen=True)
class RegimeVector:
    """0-based regime label per day: starts at 0 and steps up by at most one."""
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        steps = np.diff(labels)
        if labels.size == 0 or labels[0] != 0 or np.any((steps != 0) & (steps != 1)):
            raise ValueError(f"invalid regime vector {labels.tolist()}")

    @classmethod
    def single(cls, n_days: int) -> "RegimeVector":
        return cls(np.zeros(n_days, dtype=int))

    @classmethod
    def from_changepoints(cls, n_days: int, days: List[int]) -> "RegimeVector":
        """Regime vector with a change after each given 1-based day."""
        labels = np.zeros(n_days, dtype=int)
        for day in days:
            labels[day:] += 1
        return cls(labels)

    @property
    def n_days(self) -> int:
        return self.labels.size

    @property
    def n_regimes(self) -> int:
        return int(self.labels[-1]) + 1

    def bounds(self) -> List[Tuple[int, int]]:
        """(first_day, last_day) per regime, 0-based inclusive."""
        starts = np.flatnonzero(np.diff(self.labels)) + 1
        firsts = np.concatenate([[0], starts])
        lasts = np.concatenate([starts - 1, [self.n_days - 1]])
        return [(int(a), int(b)) for a, b in zip(firsts, lasts)]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels)

    def changepoints(self) -> np.ndarray:
        """1-based days t with a change between day t and t+1."""
        return np.flatnonzero(np.diff(self.labels)) + 1

    def change_indicator(self) -> np.ndarray:
        return (np.diff(self.labels) == 1).astype(float)

    def split(self, regime: int, offset: int) -> "RegimeVector":
        """Split `regime` so its first `offset` days keep the label."""
        first, _ = self.bounds()[regime]
        labels = self.labels.copy()
        labels[first + offset:] += 1
        return RegimeVector(labels)

    def merge(self, regime: int) -> "RegimeVector":
        """Fuse `regime` with its successor."""
        labels = self.labels.copy()
        labels[labels > regime] -= 1
        return RegimeVector(labels)


@dataclass(frozen=True)
class TransitionModel:
    """Stay probabilities of regimes 0..R-2 (the last regime always stays)."""
    stay: np.ndarray
    w: float
    v: float
    a_w: float = 1.0
    b_w: float = 0.1
    a_v: float = 1.0
    b_v: float = 0.1

    def __post_init__(self):
        if np.any((self.stay <= 0) | (self.stay >= 1)):
            raise ValueError("stay probabilities must lie in (0, 1)")
        if self.w <= 0 or self.v <= 0:
            raise ValueError("Beta hyperparameters must be positive")

    @property
    def max_regimes(self) -> int:
        return self.stay.size + 1

    def log_stay(self, regime: int) -> float:
        return 0.0 if regime >= self.stay.size else math.log(self.stay[regime])

    def log_exit(self, regime: int) -> float:
        return -math.inf if regime >= self.stay.size else math.log1p(-self.stay[regime])


def initial_transitions(max_regimes: int, prior: Tuple[float, float, float, float], rng: np.random.Generator) -> TransitionModel:
    a_w, b_w, a_v, b_v = prior
    w, v = a_w / b_w, a_v / b_v
    stay = np.clip(rng.beta(w, v, size=max_regimes - 1), 1e-12, 1 - 1e-12)
    return TransitionModel(stay=stay, w=w, v=v, a_w=a_w, b_w=b_w, a_v=a_v, b_v=b_v)


def log_regime_prior(phi: RegimeVector, tm: TransitionModel) -> float:
    """log p(phi | stay probabilities)."""
    labels = phi.labels
    if phi.n_regimes > tm.max_regimes:
        return -math.inf
    total = 0.0
    for t in range(labels.size - 1):
        r = int(labels[t])
        total += tm.log_stay(r) if labels[t + 1] == r else tm.log_exit(r)
    return total


def transition_counts(phi: RegimeVector, n_stay: int) -> Tuple[np.ndarray, np.ndarray]:
    """Stay and exit counts for regimes 0..n_stay-1."""
    labels = phi.labels
    source = labels[:-1]
    stayed = labels[1:] == source
    stays = np.bincount(source[stayed], minlength=n_stay)[:n_stay]
    exits = np.bincount(source[~stayed], minlength=n_stay)[:n_stay]
    return stays, exits


def _log_wv_target(w: float, v: float, stay: np.ndarray, tm: TransitionModel) -> float:
    log_p = np.log(stay)
    log_q = np.log1p(-stay)
    return (
        float(np.sum((w - 1.0) * log_p + (v - 1.0) * log_q)) - stay.size * float(special.betaln(w, v))
        + (tm.a_w - 1.0) * math.log(w) - tm.b_w * w
        + (tm.a_v - 1.0) * math.log(v) - tm.b_v * v
    )


def update_transitions(tm: TransitionModel, phi: RegimeVector, rng: np.random.Generator, step: float = 0.2) -> TransitionModel:
    """Conjugate Beta draws of the stay probabilities, then log-scale MH on w and v."""
    stays, exits = transition_counts(phi, tm.stay.size)
    stay = np.clip(rng.beta(tm.w + stays, tm.v + exits), 1e-12, 1 - 1e-12)

    w, v = tm.w, tm.v
    current = _log_wv_target(w, v, stay, tm)
    w_new = w * math.exp(step * rng.standard_normal())
    proposed = _log_wv_target(w_new, v, stay, tm)
    if mh_accept(proposed - current + math.log(w_new) - math.log(w), rng):
        w, current = w_new, proposed
    v_new = v * math.exp(step * rng.standard_normal())
    proposed = _log_wv_target(w, v_new, stay, tm)
    if mh_accept(proposed - current + math.log(v_new) - math.log(v), rng):
        v = v_new
    return replace(tm, stay=stay, w=w, v=v)
