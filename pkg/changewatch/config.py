"""
Configuration management (Pydantic v2 settings and run configs).
"""
import json
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple

from pydantic import BaseModel, Field, ValidationInfo, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide settings loaded from environment variables."""

    # System
    log_level: str = Field("INFO")

    # Worker pool
    threads: int = Field(1, ge=1)

    # Monte-Carlo budgets
    n_mc_prior: int = Field(2000, ge=10)  # prior-side G-Wishart constants
    n_mc_hellinger: int = Field(50_000, ge=100)

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="CHANGEWATCH_",
        case_sensitive=False,
        extra="ignore",
    )


GraphMode = Literal["sparse", "full", "decomposable"]


class SamplerConfig(BaseModel):
    """Everything a chain needs besides the data."""

    model_config = {"extra": "forbid"}

    # Chain length
    n_iterations: int = Field(300, ge=0)
    burn_in: Optional[int] = Field(None, ge=0)  # default 20% of n_iterations
    seed: int = 0
    n_chains: int = Field(1, ge=1)

    # Model size
    components: int = Field(7, ge=1)  # Q; 1 gives the single-Gaussian model
    max_regimes: Optional[int] = Field(None, ge=1)  # R; default min(T, 60)
    alpha: float = Field(0.1, gt=0)  # stick-breaking concentration, fixed
    rho: float = Field(0.5, gt=0, lt=1)  # edge inclusion probability
    nu: Optional[float] = Field(None, gt=2)  # default 3 + P
    lambda_prior: Tuple[float, float] = (1.0, 1.0)  # Gamma(c, d) on lambda
    w_v_prior: Tuple[float, float, float, float] = (1.0, 0.1, 1.0, 0.1)  # a_w, b_w, a_v, b_v
    mh_step: float = Field(0.2, gt=0)
    learn_mean_hyper: bool = True  # False holds m and lambda at their initial values

    # Moves
    graph_mode: GraphMode = "sparse"
    sigma_g: float = Field(0.5, gt=0)
    drj_moves_per_sweep: int = Field(1, ge=0)
    split_exhaustive_max: int = Field(30, ge=0)
    force_general_constants: bool = False

    # Output
    snapshot_stride: int = Field(5, ge=1)
    cutoff: float = Field(0.5, gt=0, lt=1)

    @field_validator("lambda_prior", "w_v_prior")
    @classmethod
    def _positive(cls, value: Tuple[float, ...], info: ValidationInfo) -> Tuple[float, ...]:
        if any(x <= 0 for x in value):
            raise ValueError(f"{info.field_name} entries must be positive")
        return value

    @model_validator(mode="after")
    def _burn_in_default(self) -> "SamplerConfig":
        if self.burn_in is None:
            self.burn_in = int(0.2 * self.n_iterations)
        if self.burn_in > self.n_iterations:
            raise ValueError(f"burn_in ({self.burn_in}) exceeds n_iterations ({self.n_iterations})")
        return self

    def resolved_nu(self, dim: int) -> float:
        return self.nu if self.nu is not None else 3.0 + dim

    def resolved_regimes(self, n_days: int) -> int:
        return self.max_regimes if self.max_regimes is not None else min(n_days, 60)


ScenarioId = Literal["A", "B", "C", "D", "E", "F", "G", "H"]


class ScenarioSpec(BaseModel):
    """One simulation scenario. Magnitudes are artifact defaults."""

    model_config = {"extra": "forbid"}

    scenario: ScenarioId = "B"
    n_vars: int = Field(10, ge=5)
    n_days: int = Field(30, ge=2)
    obs_per_day: int = Field(200, ge=1)
    change_day: int = 14  # change occurs after this day
    seed: int = 0

    # Shift/scale magnitudes on variables 3 and 4
    mean_shift: Tuple[float, float] = (0.5, 1.0)
    variance_scale: Tuple[float, float] = (1.5, 2.0)
    mode_separation: float = 1.5
    correlation: float = Field(0.3, gt=-1, lt=1)

    # Missingness
    missing_vars: Tuple[int, ...] = (5, 6, 7)  # 1-based
    missing_rate: float = Field(0.05, ge=0, lt=1)
    missing_rate_after: float = Field(0.3, ge=0, lt=1)  # scenario D
    indicator_correlation: float = Field(0.6, gt=-1, lt=1)  # scenario E, pre-change

    @model_validator(mode="after")
    def _check_days(self) -> "ScenarioSpec":
        if not 1 <= self.change_day <= self.n_days - 1:
            raise ValueError(f"change_day must lie in [1, {self.n_days - 1}]")
        if any(not 1 <= j <= self.n_vars for j in self.missing_vars):
            raise ValueError("missing_vars must index existing variables")
        return self


def load_sampler_config(path: Optional[Path], overrides: Optional[Dict[str, Any]] = None) -> SamplerConfig:
    """Load a JSON config file and apply non-None overrides on top."""
    data: Dict[str, Any] = {}
    if path is not None:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return SamplerConfig.model_validate(data)


def load_scenario_spec(path: Path) -> ScenarioSpec:
    return ScenarioSpec.model_validate_json(Path(path).read_text(encoding="utf-8"))


# Global settings instance
settings = Settings()
