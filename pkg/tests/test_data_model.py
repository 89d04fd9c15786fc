import math

import numpy as np
import pandas as pd
import pytest

from changewatch.data_model import (
    DataStream,
    DayBatch,
    StreamValidationError,
    VariableSpec,
    add_missingness_indicators,
    apply_indicator_missingness,
    boxcox_preprocess,
    build_layout,
    daily_means,
    decode_latent,
    drop_zero_variance,
    guerrero_lambda,
    ingest,
    init_latent,
    invert_boxcox,
    prepare_stream,
    restrict_days,
    write_stream,
    write_variable_specs,
)


def _write(tmp_path, frame: pd.DataFrame, variables):
    data = tmp_path / "data.csv"
    frame.to_csv(data, index=False)
    spec = write_variable_specs(variables, tmp_path / "variables.json")
    return data, spec


class TestVariableSpec:
    def test_binary_levels_default(self):
        assert VariableSpec(name="b", kind="binary").levels == ("0", "1")

    def test_ordinal_levels_are_numeric_cutoffs(self):
        spec = VariableSpec(name="o", kind="ordinal", levels=[1, 2.5, 4])
        np.testing.assert_array_equal(spec.cutoffs, [1.0, 2.5, 4.0])
        with pytest.raises(ValueError):
            VariableSpec(name="o", kind="ordinal", levels=["low", "high"])

    def test_nominal_latent_width(self):
        assert VariableSpec(name="n", kind="nominal", levels=["a", "b", "c"]).latent_width == 3

    def test_bounds_must_be_ordered(self):
        with pytest.raises(ValueError):
            VariableSpec(name="x", kind="continuous", lower=1.0, upper=0.0)

    def test_indicator_needs_source(self):
        with pytest.raises(ValueError):
            VariableSpec(name="xNA", kind="binary", is_missing_indicator=True)


class TestIngest:
    def test_reads_levels_and_missing(self, tmp_path, mixed_stream):
        data = write_stream(mixed_stream, tmp_path / "data.csv")
        spec = write_variable_specs(mixed_stream.variables, tmp_path / "variables.json")
        ds = ingest(data, spec)
        assert ds.day_indices == [1, 2, 3, 4]
        np.testing.assert_array_equal(np.isnan(ds.codes), np.isnan(mixed_stream.codes))
        np.testing.assert_allclose(ds.codes, mixed_stream.codes, equal_nan=True)

    def test_unbounded_variables_survive_the_spec_file(self, tmp_path):
        variables = [VariableSpec(name="x", kind="continuous")]
        spec = write_variable_specs(variables, tmp_path / "variables.json")
        data = tmp_path / "data.csv"
        pd.DataFrame({"day": [1, 2], "x": [0.5, -3.0]}).to_csv(data, index=False)
        ds = ingest(data, spec)
        assert math.isinf(ds.variables[0].lower) and ds.variables[0].lower < 0

    def test_unknown_column(self, tmp_path):
        data, spec = _write(tmp_path, pd.DataFrame({"day": [1], "x": [1.0], "y": [2.0]}), [VariableSpec(name="x", kind="continuous")])
        with pytest.raises(StreamValidationError, match="unknown column"):
            ingest(data, spec)

    def test_non_monotone_days(self, tmp_path):
        data, spec = _write(tmp_path, pd.DataFrame({"day": [2, 1], "x": [1.0, 2.0]}), [VariableSpec(name="x", kind="continuous")])
        with pytest.raises(StreamValidationError, match="non-monotone"):
            ingest(data, spec)

    def test_undeclared_level(self, tmp_path):
        data, spec = _write(tmp_path, pd.DataFrame({"day": [1], "c": ["purple"]}), [VariableSpec(name="c", kind="nominal", levels=["red", "blue"])])
        with pytest.raises(StreamValidationError, match="not declared"):
            ingest(data, spec)

    def test_value_outside_bounds(self, tmp_path):
        data, spec = _write(tmp_path, pd.DataFrame({"day": [1], "x": [-1.0]}), [VariableSpec(name="x", kind="continuous", lower=0.0)])
        with pytest.raises(StreamValidationError, match="outside declared bounds"):
            ingest(data, spec)

    def test_missing_day_column(self, tmp_path):
        data, spec = _write(tmp_path, pd.DataFrame({"x": [1.0]}), [VariableSpec(name="x", kind="continuous")])
        with pytest.raises(StreamValidationError, match="'day'"):
            ingest(data, spec)


class TestTransformations:
    def test_indicators_follow_missing_cells(self, mixed_stream):
        ds = add_missingness_indicators(mixed_stream)
        indicators = [v for v in ds.variables if v.is_missing_indicator]
        assert indicators
        for spec in indicators:
            source = mixed_stream.index(spec.source)
            np.testing.assert_array_equal(ds.codes[:, ds.index(spec.name)], np.isnan(mixed_stream.codes[:, source]).astype(float))
        assert add_missingness_indicators(ds).n_vars == ds.n_vars

    def test_drop_zero_variance(self, rng):
        codes = np.column_stack([rng.standard_normal(10), np.full(10, 3.0)])
        variables = (VariableSpec(name="x", kind="continuous"), VariableSpec(name="c", kind="continuous"))
        ds = DataStream(variables, (DayBatch(1, codes[:5]), DayBatch(2, codes[5:])))
        assert drop_zero_variance(ds).names == ["x"]

    def test_prepare_rejects_constant_stream(self):
        ds = DataStream((VariableSpec(name="c", kind="continuous"),), (DayBatch(1, np.ones((3, 1))),))
        with pytest.raises(StreamValidationError):
            prepare_stream(ds)

    def test_restrict_days_keeps_original_indices(self, continuous_stream):
        ds = restrict_days(continuous_stream, 3, 5)
        assert ds.day_indices == [3, 4, 5]
        with pytest.raises(StreamValidationError):
            restrict_days(continuous_stream, 50, 60)

    def test_daily_means(self, continuous_stream):
        means = daily_means(continuous_stream)
        assert list(means.columns) == ["day"] + continuous_stream.names
        np.testing.assert_allclose(means.iloc[0, 1:].to_numpy(dtype=float), continuous_stream.days[0].codes.mean(axis=0))

    def test_indicator_missingness_blanks_source(self):
        variables = (
            VariableSpec(name="x", kind="continuous"),
            VariableSpec(name="xNA", kind="binary", is_missing_indicator=True, source="x"),
        )
        codes = np.array([[1.0, 0.0], [2.0, 1.0]])
        out = apply_indicator_missingness(codes, variables)
        assert out[0, 0] == 1.0 and np.isnan(out[1, 0])


class TestBoxCox:
    def test_guerrero_finds_log_for_proportional_spread(self, rng):
        groups = np.repeat(np.arange(6), 300)
        level = 2.0 ** groups
        values = level * np.exp(0.1 * rng.standard_normal(groups.size))
        assert abs(guerrero_lambda(values, groups)) < 0.2

    def test_invert_restores_values(self, rng):
        codes = np.exp(rng.standard_normal((40, 1)))
        ds = DataStream((VariableSpec(name="x", kind="continuous", lower=0.0),), (DayBatch(1, codes[:20]), DayBatch(2, codes[20:])))
        transformed, params = boxcox_preprocess(ds)
        assert "x" in params
        restored = invert_boxcox(transformed, params)
        np.testing.assert_allclose(restored.codes, codes, rtol=1e-8)
        assert restored.variables[0].lower == pytest.approx(0.0, abs=1e-8)

    def test_positive_data_is_not_shifted(self, rng):
        codes = np.exp(rng.standard_normal((40, 1)))
        ds = DataStream((VariableSpec(name="x", kind="continuous", lower=-2.0),), (DayBatch(1, codes[:20]), DayBatch(2, codes[20:])))
        transformed, params = boxcox_preprocess(ds)
        assert params["x"].shift == 0.0
        assert params["x"].lmbda == pytest.approx(guerrero_lambda(codes[:, 0], np.repeat([0, 1], 20)))
        assert transformed.variables[0].lower == -np.inf
        assert invert_boxcox(transformed, params).variables[0].lower == -2.0

    def test_non_positive_data_is_shifted_to_one(self, rng):
        codes = rng.standard_normal((40, 1))
        ds = DataStream((VariableSpec(name="x", kind="continuous"),), (DayBatch(1, codes[:20]), DayBatch(2, codes[20:])))
        _, params = boxcox_preprocess(ds)
        assert params["x"].shift == pytest.approx(1.0 - codes.min())


class TestLatent:
    def test_layout_intervals(self, mixed_stream):
        layout = build_layout(mixed_stream)
        codes = mixed_stream.codes
        assert layout.n_cols == 1 + 1 + 1 + 3
        binary = codes[:, 1]
        ones = binary == 1
        assert np.all(layout.lower[ones, 1] == 0.0) and np.all(np.isinf(layout.upper[ones, 1]))
        ordinal = codes[:, 2]
        middle = ordinal == 1
        assert np.all(layout.lower[middle, 2] == 0.0) and np.all(layout.upper[middle, 2] == 1.0)
        at_zero = codes[:, 0] == 0.0
        assert np.all(layout.constrained[at_zero, 0]) and np.all(layout.upper[at_zero, 0] == 0.0)
        assert len(layout.nominal) == 1

    def test_initial_latent_decodes_to_observed(self, mixed_stream):
        latent = init_latent(mixed_stream)
        decoded = decode_latent(latent.values, mixed_stream.variables)
        observed = ~np.isnan(mixed_stream.codes)
        np.testing.assert_allclose(decoded[observed], mixed_stream.codes[observed])

    def test_column_names_expand_nominal(self, mixed_stream):
        names = build_layout(mixed_stream).column_names()
        assert names[-3:] == ["shift[day]", "shift[night]", "shift[weekend]"]
