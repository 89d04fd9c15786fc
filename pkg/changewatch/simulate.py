"""
Simulated daily streams with one imposed regime change, one generator per
benchmark scenario.
"""
from typing import List, Sequence, Tuple

import numpy as np
from scipy import stats

from .config import ScenarioSpec
from .data_model import DataStream, DayBatch, VariableSpec, apply_indicator_missingness, decode_latent
from .faults import GaussianMixtureMeasure
from .logger import get_logger
from .posterior import Snapshot
from .regimes import RegimeVector

logger = get_logger(__name__)

# Scenario traits
BIMODAL = {"C", "F"}
SCALE_CHANGE = {"A", "F", "G"}
MEAN_CHANGE = {"B", "H"}
MIXED_TYPES = {"F", "G", "H"}
MCAR = {"D", "F", "G", "H"}

# 1-based variables that change, and the mixed-type columns
CHANGED_VARS = (3, 4)
BINARY_VAR, ORDINAL_VAR, NOMINAL_VAR = 1, 2, 5
ORDINAL_LEVELS = ("0", "1", "2")
NOMINAL_LEVELS = ("a", "b", "c")
NOMINAL_CUTS = np.array([-0.43, 0.43])


def ar1_correlation(n_vars: int, rho: float) -> np.ndarray:
    idx = np.arange(n_vars)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def to_correlation(cov: np.ndarray) -> np.ndarray:
    sd = np.sqrt(np.diag(cov))
    return cov / np.outer(sd, sd)


def scenario_variables(spec: ScenarioSpec) -> Tuple[VariableSpec, ...]:
    variables = []
    for j in range(1, spec.n_vars + 1):
        name = f"x{j}"
        if spec.scenario in MIXED_TYPES and j == BINARY_VAR:
            variables.append(VariableSpec(name=name, kind="binary"))
        elif spec.scenario in MIXED_TYPES and j == ORDINAL_VAR:
            variables.append(VariableSpec(name=name, kind="ordinal", levels=ORDINAL_LEVELS))
        elif spec.scenario in MIXED_TYPES and j == NOMINAL_VAR:
            variables.append(VariableSpec(name=name, kind="nominal", levels=NOMINAL_LEVELS))
        else:
            variables.append(VariableSpec(name=name, kind="continuous"))
    return tuple(variables)


def _regime_draw(spec: ScenarioSpec, after: bool, n: int, rng: np.random.Generator) -> np.ndarray:
    """Continuous rows of one day in the pre- or post-change regime."""
    changed = np.array(CHANGED_VARS) - 1
    sd = np.ones(spec.n_vars)
    if after and spec.scenario in SCALE_CHANGE:
        sd[changed] = np.sqrt(spec.variance_scale)
    cov = ar1_correlation(spec.n_vars, spec.correlation) * np.outer(sd, sd)
    x = rng.multivariate_normal(np.zeros(spec.n_vars), cov, size=n)

    if after and spec.scenario in MEAN_CHANGE:
        x[:, changed] += np.asarray(spec.mean_shift)
    if spec.scenario in BIMODAL:
        center = np.full(spec.n_vars, spec.mode_separation)
        if after:
            center[changed] *= -1.0
        sign = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        x += sign[:, None] * center[None, :]
    return x


def _discretize(spec: ScenarioSpec, x: np.ndarray) -> np.ndarray:
    codes = x.copy()
    if spec.scenario in MIXED_TYPES:
        b, o, m = BINARY_VAR - 1, ORDINAL_VAR - 1, NOMINAL_VAR - 1
        codes[:, b] = (x[:, b] >= 0).astype(float)
        codes[:, o] = np.searchsorted(np.array([0.0, 1.0]), x[:, o], side="left")
        codes[:, m] = np.digitize(x[:, m], NOMINAL_CUTS, right=True)
    return codes


def _missing_mask(spec: ScenarioSpec, after: bool, n: int, latent_corr: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    mask = np.zeros((n, spec.n_vars), dtype=bool)
    cols = np.array(spec.missing_vars) - 1
    if spec.scenario in MCAR:
        rate = spec.missing_rate_after if (after and spec.scenario == "D") else spec.missing_rate
        mask[:, cols] = rng.random((n, cols.size)) < rate
    elif spec.scenario == "E":
        threshold = stats.norm.ppf(1.0 - spec.missing_rate)
        latent = rng.multivariate_normal(np.zeros(cols.size), latent_corr, size=n)
        mask[:, cols] = latent > threshold
    return mask


def generate(spec: ScenarioSpec, rng: np.random.Generator) -> DataStream:
    """Days 1..T with the regime change after `spec.change_day`."""
    k = len(spec.missing_vars)
    before_corr = np.full((k, k), spec.indicator_correlation) + (1.0 - spec.indicator_correlation) * np.eye(k)
    after_corr = before_corr
    if spec.scenario == "E":
        after_corr = to_correlation(np.atleast_2d(stats.invwishart(df=k + 2, scale=np.eye(k)).rvs(random_state=rng)))

    days: List[DayBatch] = []
    for day in range(1, spec.n_days + 1):
        after = day > spec.change_day
        x = _regime_draw(spec, after, spec.obs_per_day, rng)
        codes = _discretize(spec, x)
        codes[_missing_mask(spec, after, spec.obs_per_day, after_corr if after else before_corr, rng)] = np.nan
        days.append(DayBatch(day=day, codes=codes))

    ds = DataStream(variables=scenario_variables(spec), days=tuple(days))
    logger.info(f"Generated scenario {spec.scenario}: T={spec.n_days}, J={spec.n_vars}, {spec.obs_per_day} obs/day, change after day {spec.change_day}")
    return ds


def truth(spec: ScenarioSpec) -> List[int]:
    return [spec.change_day]


def simulate_from_fit(
    final_state: Snapshot,
    phi: np.ndarray,
    variables: Sequence[VariableSpec],
    day_indices: Sequence[int],
    counts: Sequence[int],
    rng: np.random.Generator,
) -> DataStream:
    """Stream drawn from fitted regime mixtures along the regime vector `phi` (0-based labels).

    Each regime of `phi` takes the parameters of the fitted regime covering its
    middle day. Latent draws are decoded to codes and missingness indicators
    blank out their sources.
    """
    fitted = list(final_state.regimes)
    measures = {}
    for r, (first, last) in enumerate(RegimeVector(phi).bounds()):
        middle = (first + last) // 2
        source = next(reg for reg in fitted if reg.first_day <= middle <= reg.last_day)
        measures[r] = GaussianMixtureMeasure.from_snapshot(source)

    days = []
    for t, (day, n) in enumerate(zip(day_indices, counts)):
        latent = measures[int(phi[t])].sample(int(n), rng)
        codes = apply_indicator_missingness(decode_latent(latent, variables), variables)
        days.append(DayBatch(day=int(day), codes=codes))
    return DataStream(variables=tuple(variables), days=tuple(days))
