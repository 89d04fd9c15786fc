"""
Daily-batched mixed-type data: variable metadata, ingestion, missingness
indicators, Box-Cox preprocessing and the latent Gaussian representation.

Discrete values are stored as level indices (0-based floats) and missing
values as NaN, so a stream is one numeric matrix split by day.
"""
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import optimize, special, stats

from .logger import get_logger
from .utils import read_json, write_json

logger = get_logger(__name__)

DAY_COLUMN = "day"
INDICATOR_SUFFIX = "NA"

VariableKind = Literal["continuous", "binary", "ordinal", "nominal"]


class StreamValidationError(ValueError):
    """Raised when a data file or variable spec violates the declared metadata."""


class VariableSpec(BaseModel):
    """Metadata for one observed variable."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    kind: VariableKind
    lower: float = -math.inf
    upper: float = math.inf
    levels: Optional[Tuple[str, ...]] = None
    is_missing_indicator: bool = False
    source: Optional[str] = None

    @field_validator("lower", "upper", mode="before")
    @classmethod
    def _null_is_unbounded(cls, value, info):
        if value is None:
            return -math.inf if info.field_name == "lower" else math.inf
        return value

    @field_validator("levels", mode="before")
    @classmethod
    def _levels_as_text(cls, value):
        if value is None:
            return None
        return tuple(_label(v) for v in value)

    @model_validator(mode="before")
    @classmethod
    def _binary_levels(cls, data):
        if isinstance(data, dict) and data.get("kind") == "binary" and data.get("levels") is None:
            data = {**data, "levels": ("0", "1")}
        return data

    @model_validator(mode="after")
    def _check(self) -> "VariableSpec":
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower bound must be below upper bound")
        if self.kind == "continuous":
            if self.levels is not None:
                raise ValueError(f"{self.name}: continuous variables take no levels")
        else:
            if self.levels is None or len(set(self.levels)) != len(self.levels):
                raise ValueError(f"{self.name}: discrete variables need distinct levels")
            if self.kind == "binary" and len(self.levels) != 2:
                raise ValueError(f"{self.name}: binary variables have exactly 2 levels")
            if len(self.levels) < 2:
                raise ValueError(f"{self.name}: at least 2 levels are required")
            if self.kind == "ordinal":
                try:
                    cutoffs = [float(level) for level in self.levels]
                except ValueError:
                    raise ValueError(f"{self.name}: ordinal levels must be numeric (they are the cutoffs)")
                if any(b <= a for a, b in zip(cutoffs, cutoffs[1:])):
                    raise ValueError(f"{self.name}: ordinal levels must be strictly increasing")
        if self.is_missing_indicator and (self.kind != "binary" or not self.source):
            raise ValueError(f"{self.name}: a missing indicator is binary and names its source")
        return self

    @property
    def latent_width(self) -> int:
        return len(self.levels) if self.kind == "nominal" else 1

    @property
    def cutoffs(self) -> np.ndarray:
        """Ordinal cutoffs a_l = d_l."""
        return np.array([float(level) for level in self.levels])

    def level_index(self, raw: str) -> int:
        if raw in self.levels:
            return self.levels.index(raw)
        try:
            value = float(raw)
        except ValueError:
            value = None
        if value is not None:
            for i, level in enumerate(self.levels):
                try:
                    if float(level) == value:
                        return i
                except ValueError:
                    continue
        raise StreamValidationError(f"level {raw!r} not declared for variable {self.name}")


def _label(value: Union[str, int, float]) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


@dataclass(frozen=True)
class DayBatch:
    """Observations of one day: level indices for discrete kinds, NaN when missing."""
    day: int
    codes: np.ndarray

    def __post_init__(self):
        if self.day < 1:
            raise StreamValidationError(f"day index must be >= 1, got {self.day}")
        if self.codes.ndim != 2 or self.codes.shape[0] < 1:
            raise StreamValidationError(f"day {self.day} has no observations")
        self.codes.setflags(write=False)

    @property
    def n_obs(self) -> int:
        return self.codes.shape[0]


@dataclass(frozen=True)
class DataStream:
    """Day-ordered batches sharing one variable list."""
    variables: Tuple[VariableSpec, ...]
    days: Tuple[DayBatch, ...]

    def __post_init__(self):
        for batch in self.days:
            if batch.codes.shape[1] != len(self.variables):
                raise StreamValidationError(f"day {batch.day} has {batch.codes.shape[1]} columns, expected {len(self.variables)}")
        indices = [batch.day for batch in self.days]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise StreamValidationError("non-monotone day indices")

    @property
    def n_days(self) -> int:
        return len(self.days)

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def names(self) -> List[str]:
        return [v.name for v in self.variables]

    @property
    def day_indices(self) -> List[int]:
        return [batch.day for batch in self.days]

    @property
    def counts(self) -> np.ndarray:
        return np.array([batch.n_obs for batch in self.days], dtype=int)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.counts)])

    @property
    def codes(self) -> np.ndarray:
        return np.vstack([batch.codes for batch in self.days])

    def index(self, name: str) -> int:
        return self.names.index(name)

    def with_codes(self, variables: Sequence[VariableSpec], codes: np.ndarray) -> "DataStream":
        """New stream with the same day split and replaced columns."""
        offsets = self.offsets
        days = tuple(
            DayBatch(day=batch.day, codes=np.array(codes[offsets[t]:offsets[t + 1]], dtype=float))
            for t, batch in enumerate(self.days)
        )
        return DataStream(variables=tuple(variables), days=days)


# Files

def load_variable_specs(spec_file: Path) -> Tuple[VariableSpec, ...]:
    payload = read_json(spec_file)
    entries = payload["variables"] if isinstance(payload, dict) else payload
    try:
        return tuple(VariableSpec.model_validate(entry) for entry in entries)
    except ValueError as e:
        raise StreamValidationError(f"invalid variable spec {spec_file}: {e}") from e


def write_variable_specs(variables: Iterable[VariableSpec], spec_file: Path) -> Path:
    return write_json(spec_file, {"variables": [v.model_dump(exclude_defaults=False) for v in variables]})


def _parse_column(spec: VariableSpec, raw: pd.Series) -> np.ndarray:
    out = np.full(len(raw), np.nan)
    present = raw.notna().to_numpy()
    if spec.kind == "continuous":
        try:
            values = raw[present].astype(float).to_numpy()
        except ValueError as e:
            raise StreamValidationError(f"non-numeric value in continuous variable {spec.name}: {e}") from e
        if np.any(values < spec.lower) or np.any(values > spec.upper):
            raise StreamValidationError(f"value outside declared bounds [{spec.lower}, {spec.upper}] for variable {spec.name}")
        out[present] = values
    else:
        out[present] = [spec.level_index(str(v).strip()) for v in raw[present]]
    return out


def ingest(stream_file: Path, spec_file: Path) -> DataStream:
    """Read a CSV stream (mandatory integer `day` column, empty cell = missing)."""
    variables = load_variable_specs(spec_file)
    frame = pd.read_csv(stream_file, dtype=str, keep_default_na=False, na_values=[""])
    if DAY_COLUMN not in frame.columns:
        raise StreamValidationError(f"{stream_file}: missing '{DAY_COLUMN}' column")

    declared = {v.name for v in variables}
    unknown = [c for c in frame.columns if c != DAY_COLUMN and c not in declared]
    if unknown:
        raise StreamValidationError(f"unknown column(s) without a variable spec: {', '.join(unknown)}")
    absent = [v.name for v in variables if v.name not in frame.columns]
    if absent:
        raise StreamValidationError(f"declared variable(s) missing from data: {', '.join(absent)}")

    try:
        day = frame[DAY_COLUMN].astype(int).to_numpy()
    except ValueError as e:
        raise StreamValidationError(f"day column must hold integers: {e}") from e
    if np.any(np.diff(day) < 0):
        raise StreamValidationError("non-monotone day indices")

    codes = np.column_stack([_parse_column(v, frame[v.name]) for v in variables]) if variables else np.empty((len(frame), 0))
    batches = []
    for d in np.unique(day):
        rows = day == d
        batches.append(DayBatch(day=int(d), codes=codes[rows]))
    ds = DataStream(variables=variables, days=tuple(batches))
    logger.info(f"Ingested {stream_file}: T={ds.n_days}, J={ds.n_vars}, rows={int(ds.counts.sum())}")
    return ds


def to_frame(ds: DataStream) -> pd.DataFrame:
    """Labelled table: level labels for discrete kinds, None for missing."""
    codes = ds.codes
    columns: Dict[str, object] = {DAY_COLUMN: np.repeat(ds.day_indices, ds.counts)}
    for j, spec in enumerate(ds.variables):
        col = codes[:, j]
        if spec.kind == "continuous":
            columns[spec.name] = col
        else:
            columns[spec.name] = [None if np.isnan(c) else spec.levels[int(c)] for c in col]
    return pd.DataFrame(columns)


def write_stream(ds: DataStream, stream_file: Path) -> Path:
    stream_file = Path(stream_file)
    stream_file.parent.mkdir(parents=True, exist_ok=True)
    # %.17g keeps doubles exact through a write-then-ingest cycle
    to_frame(ds).to_csv(stream_file, index=False, float_format="%.17g", lineterminator="\n")
    return stream_file


# Transformations

def add_missingness_indicators(ds: DataStream) -> DataStream:
    """Append a binary `<name>NA` variable for every variable with a missing value."""
    codes = ds.codes
    existing = {v.source for v in ds.variables if v.is_missing_indicator}
    new_vars: List[VariableSpec] = []
    new_cols: List[np.ndarray] = []
    for j, spec in enumerate(ds.variables):
        if spec.is_missing_indicator or spec.name in existing:
            continue
        missing = np.isnan(codes[:, j])
        if not missing.any():
            continue
        new_vars.append(VariableSpec(
            name=f"{spec.name}{INDICATOR_SUFFIX}",
            kind="binary",
            levels=("0", "1"),
            is_missing_indicator=True,
            source=spec.name,
        ))
        new_cols.append(missing.astype(float))
    if not new_vars:
        return ds
    logger.info(f"Added {len(new_vars)} missingness indicator(s)")
    return ds.with_codes(ds.variables + tuple(new_vars), np.column_stack([codes] + new_cols))


def drop_zero_variance(ds: DataStream) -> DataStream:
    """Remove columns whose observed values never vary."""
    codes = ds.codes
    keep = []
    for j, spec in enumerate(ds.variables):
        observed = codes[~np.isnan(codes[:, j]), j]
        if observed.size == 0 or np.all(observed == observed[0]):
            logger.warning(f"Dropping zero-variance variable {spec.name}")
            continue
        keep.append(j)
    if len(keep) == ds.n_vars:
        return ds
    return ds.with_codes([ds.variables[j] for j in keep], codes[:, keep])


def restrict_days(ds: DataStream, first: Optional[int] = None, last: Optional[int] = None) -> DataStream:
    """Keep days with first <= day <= last (inclusive, original day indices)."""
    lo = first if first is not None else ds.days[0].day
    hi = last if last is not None else ds.days[-1].day
    days = tuple(batch for batch in ds.days if lo <= batch.day <= hi)
    if len(days) == 0:
        raise StreamValidationError(f"no days within [{lo}, {hi}]")
    return DataStream(variables=ds.variables, days=days)


def daily_means(ds: DataStream) -> pd.DataFrame:
    """Per-day mean of every variable (level index for discrete kinds)."""
    rows = []
    for batch in ds.days:
        with np.errstate(invalid="ignore"):
            counts = np.sum(~np.isnan(batch.codes), axis=0)
            sums = np.nansum(batch.codes, axis=0)
            means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        rows.append([batch.day] + means.tolist())
    return pd.DataFrame(rows, columns=[DAY_COLUMN] + ds.names)


@dataclass(frozen=True)
class BoxCoxParams:
    lmbda: float
    shift: float
    lower: float = -math.inf  # declared bounds before the transform
    upper: float = math.inf


def guerrero_criterion(lmbda: float, means: np.ndarray, sds: np.ndarray) -> float:
    """Coefficient of variation of s_h / m_h^(1 - lambda) across sub-series."""
    ratios = sds / np.power(means, 1.0 - lmbda)
    return float(np.std(ratios, ddof=1) / np.mean(ratios))


def guerrero_lambda(values: np.ndarray, groups: np.ndarray, bounds: Tuple[float, float] = (-2.0, 2.0)) -> float:
    """Box-Cox parameter minimising the Guerrero criterion with days as sub-series."""
    means, sds = [], []
    for g in np.unique(groups):
        x = values[groups == g]
        if x.size >= 2:
            means.append(x.mean())
            sds.append(x.std(ddof=1))
    means, sds = np.asarray(means), np.asarray(sds)
    if means.size < 2:
        logger.warning("Fewer than two sub-series with 2+ values; Box-Cox lambda set to 1")
        return 1.0
    result = optimize.minimize_scalar(
        guerrero_criterion, bounds=bounds, args=(means, sds), method="bounded", options={"xatol": 1e-6}
    )
    return float(result.x)


def apply_boxcox(values: np.ndarray, params: BoxCoxParams) -> np.ndarray:
    return stats.boxcox(values + params.shift, lmbda=params.lmbda)


def invert_boxcox_values(values: np.ndarray, params: BoxCoxParams) -> np.ndarray:
    return special.inv_boxcox(values, params.lmbda) - params.shift


def boxcox_preprocess(
    ds: DataStream,
    names: Optional[Sequence[str]] = None,
    lambdas: Optional[Dict[str, float]] = None,
) -> Tuple[DataStream, Dict[str, BoxCoxParams]]:
    """Transform selected continuous columns with one stream-wide parameter each."""
    codes = ds.codes.copy()
    groups = np.repeat(ds.day_indices, ds.counts)
    variables = list(ds.variables)
    selected = names if names is not None else [v.name for v in ds.variables if v.kind == "continuous" and not v.is_missing_indicator]
    fitted: Dict[str, BoxCoxParams] = {}

    for name in selected:
        j = ds.index(name)
        spec = variables[j]
        if spec.kind != "continuous":
            raise StreamValidationError(f"Box-Cox applies to continuous variables only: {name}")
        present = ~np.isnan(codes[:, j])
        x = codes[present, j]
        if x.size < 2 or np.all(x == x[0]):
            logger.warning(f"Skipping Box-Cox for zero-variance variable {name}")
            continue
        shift = 1.0 - x.min() if x.min() <= 0 else 0.0
        if lambdas and name in lambdas:
            lmbda = float(lambdas[name])
        else:
            lmbda = guerrero_lambda(x + shift, groups[present])
        params = BoxCoxParams(lmbda=lmbda, shift=shift, lower=spec.lower, upper=spec.upper)
        codes[present, j] = apply_boxcox(x, params)
        bounds = {}
        for side in ("lower", "upper"):
            bound = getattr(spec, side)
            if not np.isfinite(bound):
                bounds[side] = bound
            elif bound + shift < 0:
                # below the transform's domain; no observation can sit there
                bounds[side] = -math.inf
            else:
                bounds[side] = float(apply_boxcox(np.array([bound]), params)[0])
        variables[j] = spec.model_copy(update=bounds)
        fitted[name] = params
        logger.info(f"Box-Cox {name}: lambda={lmbda:.4f}, shift={shift:.4g}")

    return ds.with_codes(variables, codes), fitted


def invert_boxcox(ds: DataStream, params: Dict[str, BoxCoxParams]) -> DataStream:
    codes = ds.codes.copy()
    variables = list(ds.variables)
    for name, p in params.items():
        j = ds.index(name)
        present = ~np.isnan(codes[:, j])
        codes[present, j] = invert_boxcox_values(codes[present, j], p)
        variables[j] = variables[j].model_copy(update={"lower": p.lower, "upper": p.upper})
    return ds.with_codes(variables, codes)


def prepare_stream(ds: DataStream, boxcox: bool = False) -> Tuple[DataStream, Dict[str, BoxCoxParams]]:
    """Fit-time preprocessing: indicators, constant-column removal, optional Box-Cox."""
    ds = drop_zero_variance(add_missingness_indicators(ds))
    if ds.n_vars == 0:
        raise StreamValidationError("no variables left after dropping zero-variance columns")
    if not boxcox:
        return ds, {}
    return boxcox_preprocess(ds)


# Latent representation

@dataclass(frozen=True)
class LatentLayout:
    """Where each variable lives in the latent matrix and which entries are truncated.

    `lower`/`upper` hold the truncation interval of every statically constrained
    entry (binary, ordinal, boundary-valued continuous). Nominal blocks are
    constrained through `nominal`, whose intervals depend on the block itself.
    """
    variables: Tuple[VariableSpec, ...]
    groups: Tuple[np.ndarray, ...]
    offsets: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    constrained: np.ndarray
    missing: np.ndarray
    nominal: Tuple[Tuple[np.ndarray, np.ndarray], ...]

    @property
    def n_cols(self) -> int:
        return self.lower.shape[1]

    @property
    def n_rows(self) -> int:
        return self.lower.shape[0]

    @property
    def n_days(self) -> int:
        return len(self.offsets) - 1

    def column_names(self) -> List[str]:
        names = []
        for spec in self.variables:
            if spec.kind == "nominal":
                names.extend(f"{spec.name}[{level}]" for level in spec.levels)
            else:
                names.append(spec.name)
        return names

    def day_slice(self, first_day: int, last_day: int) -> slice:
        """Rows of days first_day..last_day (0-based, inclusive)."""
        return slice(int(self.offsets[first_day]), int(self.offsets[last_day + 1]))


@dataclass(frozen=True)
class LatentMatrix:
    values: np.ndarray
    layout: LatentLayout

    def replace(self, values: np.ndarray) -> "LatentMatrix":
        return LatentMatrix(values=values, layout=self.layout)


def build_layout(ds: DataStream) -> LatentLayout:
    codes = ds.codes
    n = codes.shape[0]
    widths = [v.latent_width for v in ds.variables]
    starts = np.concatenate([[0], np.cumsum(widths)]).astype(int)
    groups = tuple(np.arange(starts[j], starts[j + 1]) for j in range(ds.n_vars))
    p = int(starts[-1])

    lower = np.full((n, p), -np.inf)
    upper = np.full((n, p), np.inf)
    constrained = np.zeros((n, p), dtype=bool)
    missing = np.zeros((n, p), dtype=bool)
    nominal = []

    for j, spec in enumerate(ds.variables):
        col = codes[:, j]
        miss = np.isnan(col)
        cols = groups[j]
        missing[:, cols] = miss[:, None]
        obs = ~miss
        k = cols[0]
        if spec.kind == "continuous":
            at_lower = obs & (col == spec.lower)
            at_upper = obs & (col == spec.upper)
            upper[at_lower, k] = spec.lower
            lower[at_upper, k] = spec.upper
            constrained[:, k] = at_lower | at_upper
        elif spec.kind == "binary":
            is_one = obs & (col == 1)
            is_zero = obs & (col == 0)
            lower[is_one, k] = 0.0
            upper[is_zero, k] = 0.0
            constrained[:, k] = obs
        elif spec.kind == "ordinal":
            cut = spec.cutoffs
            idx = np.where(obs, col, 0).astype(int)
            lo = np.concatenate([[-np.inf], cut[:-1]])[idx]
            hi = np.concatenate([cut[:-1], [np.inf]])[idx]
            lower[obs, k] = lo[obs]
            upper[obs, k] = hi[obs]
            constrained[:, k] = obs
        else:
            observed_level = np.where(obs, col, -1).astype(int)
            nominal.append((cols, observed_level))

    return LatentLayout(
        variables=ds.variables,
        groups=groups,
        offsets=ds.offsets,
        lower=lower,
        upper=upper,
        constrained=constrained,
        missing=missing,
        nominal=tuple(nominal),
    )


def init_latent(ds: DataStream) -> LatentMatrix:
    """Deterministic latent start consistent with the observed values."""
    layout = build_layout(ds)
    codes = ds.codes
    z = np.zeros((layout.n_rows, layout.n_cols))

    for j, spec in enumerate(ds.variables):
        col = codes[:, j]
        obs = ~np.isnan(col)
        cols = layout.groups[j]
        k = cols[0]
        if spec.kind == "continuous":
            z[obs, k] = col[obs]
        elif spec.kind == "binary":
            z[obs, k] = np.where(col[obs] == 1, 0.5, -0.5)
        elif spec.kind == "ordinal":
            lo, hi = layout.lower[obs, k], layout.upper[obs, k]
            mid = np.where(np.isinf(lo), hi - 1.0, np.where(np.isinf(hi), lo + 1.0, 0.5 * (lo + hi)))
            z[obs, k] = mid
        else:
            rows = np.flatnonzero(obs)
            z[rows, cols[col[obs].astype(int)]] = 1.0

    for j in range(ds.n_vars):
        cols = layout.groups[j]
        miss = layout.missing[:, cols[0]]
        if miss.any():
            observed = z[~miss][:, cols]
            fill = observed.mean(axis=0) if observed.size else np.zeros(len(cols))
            z[np.ix_(miss, cols)] = fill

    return LatentMatrix(values=z, layout=layout)


def decode_latent(values: np.ndarray, variables: Sequence[VariableSpec]) -> np.ndarray:
    """Forward map from latent values to observed codes (no missingness applied)."""
    out = np.empty((values.shape[0], len(variables)))
    k = 0
    for j, spec in enumerate(variables):
        if spec.kind == "nominal":
            width = spec.latent_width
            out[:, j] = np.argmax(values[:, k:k + width], axis=1)
            k += width
            continue
        z = values[:, k]
        if spec.kind == "continuous":
            out[:, j] = np.clip(z, spec.lower, spec.upper)
        elif spec.kind == "binary":
            out[:, j] = (z >= 0).astype(float)
        else:
            out[:, j] = np.searchsorted(spec.cutoffs[:-1], z, side="left")
        k += 1
    return out


def apply_indicator_missingness(codes: np.ndarray, variables: Sequence[VariableSpec]) -> np.ndarray:
    """Blank out source values wherever their indicator reads 1."""
    codes = codes.copy()
    names = [v.name for v in variables]
    for j, spec in enumerate(variables):
        if spec.is_missing_indicator and spec.source in names:
            codes[codes[:, j] == 1, names.index(spec.source)] = np.nan
    return codes
