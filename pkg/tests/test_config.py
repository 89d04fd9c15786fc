import json

import pytest
from pydantic import ValidationError

from changewatch.config import SamplerConfig, ScenarioSpec, Settings, load_sampler_config, load_scenario_spec


def test_defaults_resolve_from_data_size():
    config = SamplerConfig(n_iterations=300)
    assert config.burn_in == 60
    assert config.resolved_nu(10) == 13.0
    assert config.resolved_regimes(30) == 30
    assert config.resolved_regimes(400) == 60
    assert config.snapshot_stride == 5 and config.cutoff == 0.5


@pytest.mark.parametrize("field, value", [
    ("snapshot_stride", 0),
    ("cutoff", 1.0),
    ("rho", 0.0),
    ("graph_mode", "dense"),
    ("lambda_prior", (1.0, -1.0)),
])
def test_invalid_values_rejected(field, value):
    with pytest.raises(ValidationError):
        SamplerConfig(**{field: value})


def test_burn_in_cannot_exceed_iterations():
    with pytest.raises(ValidationError, match="burn_in"):
        SamplerConfig(n_iterations=10, burn_in=20)


def test_unknown_keys_rejected():
    with pytest.raises(ValidationError):
        SamplerConfig(iterations=10)


def test_file_values_with_flag_overrides(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"n_iterations": 50, "seed": 3, "components": 2}))
    config = load_sampler_config(path, {"seed": 9, "cutoff": None})
    assert (config.n_iterations, config.seed, config.components, config.cutoff) == (50, 9, 2, 0.5)


def test_scenario_change_day_inside_stream(tmp_path):
    with pytest.raises(ValidationError):
        ScenarioSpec(n_days=10, change_day=10)
    with pytest.raises(ValidationError):
        ScenarioSpec(scenario="Z")
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps({"scenario": "C", "obs_per_day": 50}))
    spec = load_scenario_spec(path)
    assert spec.scenario == "C" and spec.change_day == 14


def test_settings_read_prefixed_environment(monkeypatch):
    monkeypatch.setenv("CHANGEWATCH_THREADS", "4")
    monkeypatch.setenv("CHANGEWATCH_N_MC_HELLINGER", "1000")
    settings = Settings()
    assert settings.threads == 4 and settings.n_mc_hellinger == 1000
