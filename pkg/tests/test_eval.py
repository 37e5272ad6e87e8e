import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emsforecast.datasets import Hotspot, SynthConfig, synth_generate
from emsforecast.errors import ComparisonError, DegenerateRange, InsufficientHistory, ShapeError
from emsforecast.eval import (
    AttributionConfig,
    EvaluationReport,
    compare_models,
    make_report,
    margin,
    model_attribution,
    mse,
    nrmse,
    sensitivity_run,
    shapley_attribution,
    shapley_values,
    split_metrics,
)
from emsforecast.model import ModelSpec, TrainOptions
from emsforecast.pipeline import PipelineConfig, fit_model, prepare, raw_from_synth


def linear_f(w, x, B):
    """Coalition function of f(z) = w.z with background rows B."""
    x, B, w = np.asarray(x, float), np.asarray(B, float), np.asarray(w, float)

    def f(masks, bg):
        z = np.where(masks, x[None], B[bg])
        return z @ w

    return f


def generic_f(fn, x, B):
    x, B = np.asarray(x, float), np.asarray(B, float)

    def f(masks, bg):
        z = np.where(masks, x[None], B[bg])
        return np.array([fn(r) for r in z])

    return f


class TestMSE:
    def test_equal_is_zero(self):
        a = np.arange(6.0).reshape(2, 3)
        assert mse(a, a) == 0.0

    def test_worked_example(self):
        assert mse([0, 0], [2, 0]) == 2.0

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(4, 3, 2)), rng.normal(size=(4, 3, 2))
        assert mse(a, b) == mse(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse(np.zeros(3), np.zeros(4))


class TestNRMSE:
    def test_worked_example(self):
        assert nrmse(4.0, 10.0, 0.0) == 0.2

    def test_zero_mse(self):
        assert nrmse(0.0, 3.0, 1.0) == 0.0

    def test_doubling_range_halves(self):
        assert nrmse(2.0, 10.0, 0.0) == pytest.approx(2 * nrmse(2.0, 20.0, 0.0), rel=1e-15)

    def test_degenerate_range(self):
        with pytest.raises(DegenerateRange):
            nrmse(1.0, 5.0, 5.0)

    @given(st.floats(0, 1e6), st.floats(-1e3, 1e3), st.floats(1e-3, 1e3))
    def test_identity(self, m, lo, width):
        assert nrmse(m, lo + width, lo) == math.sqrt(m) / ((lo + width) - lo)


class TestSplitMetrics:
    def test_worked_example(self):
        s = split_metrics([1, 2], [0, 2])
        assert s["mse_zero"] == 1.0 and s["mse_nonzero"] == 0.0
        assert (s["n_zero"], s["n_nonzero"]) == (1, 1)

    def test_all_zero_actuals(self):
        s = split_metrics([0.5, 1.0], [0.0, 0.0])
        assert s["mse_nonzero"] is None and s["n_nonzero"] == 0
        assert s["mse_zero"] == pytest.approx(0.625)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_recombination(self, seed):
        rng = np.random.default_rng(seed)
        actual = rng.poisson(0.7, size=(5, 3, 4)).astype(float)
        pred = rng.gamma(1.0, 1.0, size=actual.shape)
        s = split_metrics(pred, actual)
        n = s["n_zero"] + s["n_nonzero"]
        parts = [(s["mse_zero"] or 0.0) * s["n_zero"], (s["mse_nonzero"] or 0.0) * s["n_nonzero"]]
        assert abs(sum(parts) / n - mse(pred, actual)) < 1e-12


class TestCompare:
    def rep(self, name, value, split="s1"):
        return EvaluationReport(name, 8, value, None, None, None, 0, 0, split)

    def test_ten_percent_margin(self):
        rows = compare_models([self.rep("a", 10.0), self.rep("b", 9.0)])
        assert [r["model_id"] for r in rows] == ["b", "a"]
        assert rows[1]["best_margin_pct"] == pytest.approx(10.0, abs=1e-12)

    def test_identical_models(self):
        rows = compare_models([self.rep("a", 3.0), self.rep("b", 3.0)])
        assert all(r["best_margin_pct"] == 0.0 for r in rows)

    def test_ranking_scale_invariant(self):
        vals = [3.0, 1.5, 7.0, 2.2]
        base = [r["model_id"] for r in compare_models([self.rep(str(i), v) for i, v in enumerate(vals)])]
        scaled = [r["model_id"] for r in compare_models([self.rep(str(i), 13.0 * v) for i, v in enumerate(vals)])]
        assert base == scaled

    def test_mismatched_splits(self):
        with pytest.raises(ComparisonError):
            compare_models([self.rep("a", 1.0, "s1"), self.rep("b", 2.0, "s2")])

    def test_needs_two(self):
        with pytest.raises(ComparisonError):
            compare_models([self.rep("a", 1.0)])

    def test_margin_formula(self):
        assert margin(9.0, 10.0) == pytest.approx(10.0)

    def test_report_roundtrip(self):
        r = make_report("m", np.ones((2, 2, 2)), np.zeros((2, 2, 2)), 8, "abc", 4.0, 0.0)
        assert EvaluationReport.from_dict(r.to_dict()) == r
        assert r.nrmse == pytest.approx(0.25)


class TestShapley:
    def test_constant_model(self):
        B = np.random.default_rng(0).normal(size=(5, 3))
        f = generic_f(lambda z: 4.2, [1, 2, 3], B)
        r = shapley_values(f, 3, len(B), exhaustive=True)
        np.testing.assert_array_equal(r.phi, 0.0)

    def test_linear_closed_form(self):
        B = np.array([[1.0, -1.0], [-1.0, 1.0]])
        r = shapley_values(linear_f([2, 3], [1, 1], B), 2, 2, exhaustive=True)
        np.testing.assert_allclose(r.phi, [2.0, 3.0], atol=1e-12)
        assert r.base == 0.0

    def test_efficiency_three_features(self):
        rng = np.random.default_rng(1)
        B = rng.normal(size=(7, 3))
        x = np.array([0.3, -1.2, 2.0])
        fn = lambda z: z[0] * z[1] + math.sin(z[2]) + z[0] ** 2 * z[2]
        r = shapley_values(generic_f(fn, x, B), 3, len(B), exhaustive=True)
        base = np.mean([fn(b) for b in B])
        assert abs(r.phi.sum() - (fn(x) - base)) < 1e-12
        assert r.fx == fn(x)

    def test_symmetry(self):
        B = np.random.default_rng(2).normal(size=(6, 3))
        x = np.array([0.7, 0.7, -0.4])
        # a symmetric background keeps the two roles interchangeable
        Bs = np.vstack([B, B[:, [1, 0, 2]]])
        r = shapley_values(generic_f(lambda z: z[0] * z[1] + z[2], x, Bs), 3, len(Bs), exhaustive=True)
        assert abs(r.phi[0] - r.phi[1]) < 1e-12

    def test_dummy_feature_exact_zero(self):
        B = np.random.default_rng(3).normal(size=(4, 3))
        r = shapley_values(generic_f(lambda z: np.exp(z[0]) * z[1], [1.0, 2.0, 9.0], B), 3, 4, exhaustive=True)
        assert r.phi[2] == 0.0

    def test_monte_carlo_error_slope(self):
        rng = np.random.default_rng(4)
        B = rng.normal(size=(400, 2))
        w, x = np.array([2.0, 3.0]), np.array([1.0, 1.0])
        truth = w * (x - B.mean(axis=0))
        counts = [16, 64, 256, 1024]
        errs = []
        for P in counts:
            e = [np.sqrt(np.mean((shapley_values(linear_f(w, x, B), 2, len(B), permutations=P, rng=s,
                                                 exhaustive=False).phi - truth) ** 2)) for s in range(60)]
            errs.append(np.sqrt(np.mean(np.square(e))))
        slope = np.polyfit(np.log(counts), np.log(errs), 1)[0]
        assert -0.6 <= slope <= -0.4

    def test_reported_stderr_matches_spread(self):
        rng = np.random.default_rng(5)
        B = rng.normal(size=(300, 2))
        est = [shapley_values(linear_f([2, 3], [1, 1], B), 2, 300, permutations=200, rng=s, exhaustive=False)
               for s in range(40)]
        spread = np.std([r.phi for r in est], axis=0)
        mean_se = np.mean([r.stderr for r in est], axis=0)
        np.testing.assert_allclose(mean_se, spread, rtol=0.35)

    def test_empty_background(self):
        with pytest.raises(ValueError):
            shapley_attribution(lambda b: np.zeros((1, 1, 1)), {"a": np.zeros(1)}, {"a": np.zeros((0, 1))})

    def test_config_sizes(self):
        with pytest.raises(ValueError):
            AttributionConfig(background_size=0)

    def test_heatmap_sum_and_cell(self):
        rng = np.random.default_rng(6)
        bg = {"a": rng.normal(size=(5, 2)), "b": rng.normal(size=(5,))}
        inst = {"a": np.array([1.0, 2.0]), "b": np.array(0.5)}

        def predict(batch):
            B = len(batch["a"])
            out = np.zeros((B, 2, 2))
            out[:, 0, 0] = batch["a"].sum(axis=1)
            out[:, 1, 1] = 2 * batch["b"]
            return out

        tot = shapley_attribution(predict, inst, bg, AttributionConfig(permutations=10))
        cell = shapley_attribution(predict, inst, bg, AttributionConfig(permutations=10), cell=(1, 1))
        assert tot.exhaustive
        np.testing.assert_allclose(tot.phi, [3.0 - bg["a"].sum(axis=1).mean(), 2 * (0.5 - bg["b"].mean())],
                                   atol=1e-12)
        assert cell.phi[0] == 0.0


@pytest.fixture(scope="module")
def small_prepared():
    cfg = SynthConfig(q=3, p=2, n_days=40, granularity=24, hotspots=[Hotspot(0.5, 1.0, (1, 1), (0.3, 0.2))])
    s = synth_generate(cfg, np.random.default_rng(11))
    return s, prepare(s.cube, s.externals, s.start, PipelineConfig(granularity=24, look_back=3))


class TestModelAttribution:
    def test_masked_feature_absent_and_efficiency(self, small_prepared):
        _, prep = small_prepared
        keep = {"hour_slot", "temp_max"}
        mask = {f.name: f.name in keep for f in prep.ds.schema.optional()}
        spec = ModelSpec(grid=(3, 2), look_back=3, feature_mask=mask, dense=[8],
                         conv=[{"filters": 2, "kernel": (3, 3, 3), "activation": "tanh"}])
        m = fit_model(prep.ds, spec, TrainOptions(max_epochs=3, patience=2))
        results, table = model_attribution(m, prep.ds, AttributionConfig(20, 3, 10, seed=1))
        assert results[0].names == ["demand", "hour_slot", "temp_max"]
        for r in results:
            assert r.exhaustive
            assert abs(r.phi.sum() - (r.fx - r.base)) < 1e-10
        assert {row["feature"] for row in table} == {"demand", "hour_slot", "temp_max"}

    def test_deterministic(self, small_prepared):
        _, prep = small_prepared
        spec = ModelSpec(grid=(3, 2), look_back=3, dense=[4], conv=[{"filters": 1, "kernel": (1, 1, 1)}])
        m = fit_model(prep.ds, spec, TrainOptions(max_epochs=2, patience=2))
        cfg = AttributionConfig(10, 2, 8, seed=3)
        a, _ = model_attribution(m, prep.ds, cfg)
        b, _ = model_attribution(m, prep.ds, cfg)
        np.testing.assert_array_equal(a[0].phi, b[0].phi)
        assert not a[0].exhaustive


@pytest.fixture(scope="module")
def raw():
    cfg = SynthConfig(q=3, p=2, n_days=84, granularity=2)
    s = synth_generate(cfg, np.random.default_rng(2))
    return raw_from_synth(s, 0), s


class TestSensitivity:
    def test_single_granularity(self, raw):
        rows = sensitivity_run(raw[0], [8], PipelineConfig(look_back=3))
        assert [(r["granularity"], r["model_id"]) for r in rows] == [(8, "medic")]

    def test_all_granularities_with_model(self, raw):
        spec = ModelSpec(grid=(3, 2), look_back=3, dense=[4], conv=[{"filters": 1, "kernel": (1, 1, 1)}])
        rows = sensitivity_run(raw[0], [2, 4, 8, 12, 24], PipelineConfig(look_back=3), {"cnn": spec},
                               TrainOptions(max_epochs=1, patience=1))
        assert sorted({r["granularity"] for r in rows}) == [2, 4, 8, 12, 24]
        for g in (2, 4, 8, 12, 24):
            ids = [r["model_id"] for r in rows if r["granularity"] == g]
            assert ids == ["medic", "cnn"]
        # normalisation range from the cube re-binned at each granularity
        cube = raw[1].cube
        for g in (2, 24):
            k = g // 2
            T = cube.shape[2] // k
            rebinned = cube[:, :, :T * k].reshape(3, 2, T, k).sum(axis=3)
            row = next(r for r in rows if r["granularity"] == g)
            assert row["y_max"] == rebinned.max() and row["y_min"] == rebinned.min()

    def test_error_names_granularity(self, raw):
        with pytest.raises(InsufficientHistory, match="24-hour"):
            sensitivity_run(raw[0], [24], PipelineConfig(look_back=100))
