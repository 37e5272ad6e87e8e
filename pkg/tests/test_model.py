import numpy as np
import pytest

from emsforecast.datasets import (
    DemandDataset,
    FeatureSchema,
    FeatureSpec,
    Hotspot,
    SynthConfig,
    chronological_split,
    fit_scaler,
    synth_generate,
    window_instances,
)
from emsforecast.errors import ShapeError, SpecError, TrainingDiverged
from emsforecast.layers import Dense
from emsforecast.model import (
    ModelSpec,
    TrainOptions,
    build_cnn,
    build_mlp,
    count_params,
    gather_inputs,
    load_model,
    loss_and_grads,
    predict,
    predict_demand,
    save_model,
    train,
)

SMALL = dict(conv=[{"filters": 2, "kernel": (3, 3, 3), "activation": "tanh"}],
             tconv=[{"filters": 2, "activation": "tanh"}], fusion={"filters": 3, "activation": "tanh"},
             local={"filters": 2, "kernel": (3, 3), "activation": "tanh"}, dense=[6], dense_activation="tanh")


def synth_ds(seed=0, n_days=35, decoys=2, grid=(4, 3)):
    cfg = SynthConfig(q=grid[0], p=grid[1], n_days=n_days, events_per_week=3, holiday_rate=0.1, n_decoys=decoys,
                      hotspots=[Hotspot(0.6, 1.0, (1, 1), (0.3, 0.2))])
    res = synth_generate(cfg, np.random.default_rng(seed))
    ds = chronological_split(window_instances(res.cube, res.externals, 6, 8, res.start))
    return fit_scaler(ds.part("train")).transform(ds)


def small_ds():
    # hand-built schema: demand, one upsampled series, one 2-D map, weekday one-hot, one scalar
    rng = np.random.default_rng(0)
    N, q, p, L = 30, 3, 2, 4
    schema = FeatureSchema((FeatureSpec("demand", "3D"), FeatureSpec("ev", "2D"),
                            FeatureSpec("w_hist", "1D_timeseries", True, ("w",), L),
                            FeatureSpec("weekday", "1D_onehot", width=7), FeatureSpec("w", "scalar")))
    ds = DemandDataset(rng.random((N, q, p, L)), rng.random((N, q, p)), {"ev": rng.random((N, q, p))},
                       {"w_hist": rng.random((N, L))}, {"weekday": np.eye(7)[rng.integers(7, size=N)]},
                       {"w": rng.random(N)}, np.arange(N).astype("datetime64[h]"), np.arange(N) + L, 8, L, schema)
    return chronological_split(ds)


def spec_for(ds, kind="cnn", **kw):
    return ModelSpec(kind=kind, grid=ds.grid_shape, look_back=ds.look_back, **{**SMALL, **kw})


def brute_count(m):
    return sum(int(np.prod(a.shape)) for _, a in m.network.parameters())


class TestBuildCnn:
    def test_demand_only(self):
        ds = small_ds()
        mask = {n: False for n in ("ev", "w_hist", "weekday", "w")}
        m = build_cnn(spec_for(ds, feature_mask=mask), ds.schema, rng=0)
        names = [n for n, _ in m.network.layers]
        assert not any(n.startswith("tconv") for n in names)
        assert m.network.layer("local").in_maps == 3  # fusion filters only, no 2-D concat
        assert m.network.layer("dense0").in_size == 2 * 3 * 2
        assert predict(m, ds).shape == (len(ds), 3, 2)

    def test_output_width_is_grid(self):
        schema = FeatureSchema((FeatureSpec("demand", "3D"),))
        m = build_cnn(ModelSpec(grid=(11, 6), **SMALL), schema, rng=0)
        assert m.network.layer("out").out_size == 66

    def test_param_count_by_stage(self):
        ds = small_ds()
        m = build_cnn(spec_for(ds), ds.schema, rng=0)
        q, p, L = 3, 2, 4
        conv = (3 * 3 * 3 * 1 + 1) * 2
        tconv = (q * p * 1 * 1 + 1) * 2
        fusion = (1 * 1 * L * (2 + 2) + 1) * 3
        local = (3 * 3 * (3 + 1) + 1) * q * p * 2
        dense = (2 * q * p + 7 + 1 + 1) * 6
        out = (6 + 1) * q * p
        assert count_params(m) == conv + tconv + fusion + local + dense + out
        assert count_params(m) == brute_count(m)

    def test_masking_reduces_params(self):
        ds = small_ds()
        full = count_params(build_cnn(spec_for(ds), ds.schema, rng=0))
        for name in ("ev", "w_hist", "weekday", "w"):
            masked = count_params(build_cnn(spec_for(ds, feature_mask={name: False}), ds.schema, rng=0))
            assert masked < full

    def test_demand_cannot_be_masked(self):
        ds = small_ds()
        with pytest.raises(SpecError):
            build_cnn(spec_for(ds, feature_mask={"demand": False}), ds.schema)

    def test_unknown_mask_feature(self):
        ds = small_ds()
        with pytest.raises(SpecError):
            build_cnn(spec_for(ds, feature_mask={"nope": False}), ds.schema)

    def test_kind_mismatch(self):
        ds = small_ds()
        with pytest.raises(SpecError):
            build_mlp(spec_for(ds), ds.schema)

    def test_bad_spec_values(self):
        with pytest.raises(SpecError):
            ModelSpec(optimizer="rmsprop")
        with pytest.raises(SpecError):
            ModelSpec(dropout=1.0)
        with pytest.raises(SpecError):
            ModelSpec(conv=[{"filters": 0, "kernel": (1, 1, 1)}])


class TestBuildMlp:
    def test_zero_width_is_affine(self):
        ds = small_ds()
        m = build_mlp(spec_for(ds, kind="mlp", dense=[0]), ds.schema, rng=0)
        assert [n for n, _ in m.network.layers] == ["out"]
        rows = m.network.mlp_rows(gather_inputs(m.network, ds))
        out = m.network.layer("out")
        np.testing.assert_allclose(predict(m, ds).reshape(-1), rows @ out.weights[0] + out.bias[0], atol=1e-12)

    def test_chain_count(self):
        q, p, L = 2, 2, 6
        feats = [FeatureSpec("demand", "3D")] + [FeatureSpec(f"s{i}", "scalar") for i in range(40)]
        m = build_mlp(ModelSpec(kind="mlp", grid=(q, p), look_back=L, dense=[32, 16]), FeatureSchema(feats))
        assert m.network.mlp_input_width == 50
        assert count_params(m) == (50 + 1) * 32 + (32 + 1) * 16 + (16 + 1) * 1

    def test_per_subregion_reassembly(self):
        ds = small_ds()
        m = build_mlp(spec_for(ds, kind="mlp", dense=[5]), ds.schema, rng=1)
        net = m.network
        heat = predict(m, ds.take([3]))[0]
        q, p = ds.grid_shape
        for i in range(q):
            for j in range(p):
                x = np.concatenate([ds.X3D[3, i, j], [ds.maps2d["ev"][3, i, j]], ds.series["w_hist"][3],
                                    ds.onehots["weekday"][3], [ds.scalars["w"][3]], np.eye(q * p)[i * p + j]])
                h = net.layer("dense0").forward(x[None])
                assert heat[i, j] == pytest.approx(net.layer("out").forward(h)[0, 0], abs=1e-12)


class TestPredict:
    def test_zero_weights(self):
        ds = small_ds()
        m = build_cnn(spec_for(ds), ds.schema, rng=0)
        for _, a in m.network.parameters():
            a[...] = 0.0
        np.testing.assert_array_equal(predict(m, ds), 0.0)

    def test_pure(self):
        ds = small_ds()
        m = build_cnn(spec_for(ds, dropout=0.5), ds.schema, rng=0)
        np.testing.assert_array_equal(predict(m, ds), predict(m, ds))

    def test_batch_equals_single(self):
        ds = small_ds()
        m = build_cnn(spec_for(ds), ds.schema, rng=0)
        full = predict(m, ds)
        singles = np.concatenate([predict(m, ds.take([i])) for i in range(len(ds))])
        np.testing.assert_allclose(full, singles, rtol=0, atol=1e-13)

    def test_schema_mismatch(self):
        ds = small_ds()
        m = build_cnn(spec_for(ds), ds.schema, rng=0)
        with pytest.raises(ShapeError):
            predict(m, ds.restrict(["ev"]))
        other = synth_ds()
        with pytest.raises(ShapeError):
            predict(m, other)

    @pytest.mark.parametrize("kind", ["cnn", "mlp"])
    def test_masked_features_do_not_matter(self, kind):
        ds = small_ds()
        mask = {"ev": False, "w": False, "w_hist": False}
        m = (build_cnn if kind == "cnn" else build_mlp)(spec_for(ds, kind=kind, feature_mask=mask), ds.schema, rng=0)
        base = predict(m, ds)
        rng = np.random.default_rng(9)
        ds.maps2d["ev"] = rng.normal(size=ds.maps2d["ev"].shape) * 1e6
        ds.scalars["w"] = rng.normal(size=ds.scalars["w"].shape)
        ds.series["w_hist"] = np.full_like(ds.series["w_hist"], np.nan)
        np.testing.assert_array_equal(predict(m, ds), base)
        ds.onehots["weekday"] = np.roll(ds.onehots["weekday"], 1, axis=1)
        assert not np.array_equal(predict(m, ds), base)


class TestTrain:
    def test_zero_targets_converge_immediately(self):
        ds = small_ds()
        ds.Y[...] = 0.0
        m = build_cnn(spec_for(ds), ds.schema, rng=0)
        out = m.network.layer("out")
        out.weights[...] = 0.0
        out.bias[...] = 0.0
        train(m, ds, TrainOptions(max_epochs=300, patience=20))
        assert m.history[0]["val_loss"] == 0.0
        assert len(m.history) == 2

    def test_recovers_slope(self):
        rng = np.random.default_rng(0)
        N, L = 200, 2
        x = rng.uniform(-1, 1, N)
        schema = FeatureSchema((FeatureSpec("demand", "3D"), FeatureSpec("x", "scalar")))
        ds = DemandDataset(np.zeros((N, 1, 1, L)), (2 * x)[:, None, None], {}, {}, {}, {"x": x},
                           np.arange(N).astype("datetime64[h]"), np.arange(N) + L, 8, L, schema)
        ds = chronological_split(ds)
        m = build_mlp(ModelSpec(kind="mlp", grid=(1, 1), look_back=L, dense=[0], learning_rate=0.05,
                                batch_size=16), schema, rng=0)
        train(m, ds, TrainOptions(max_epochs=200, patience=20))
        w = m.network.layer("out").weights[0]
        # rows are [history (L), x, cell one-hot]; compare with least squares on the same rows
        tr = ds.part("train")
        rows = m.network.mlp_rows(gather_inputs(m.network, tr))
        coef = np.linalg.lstsq(rows[:, L:], tr.Y.reshape(-1), rcond=None)[0]
        assert coef[0] == pytest.approx(2.0, abs=1e-9)
        assert w[L] == pytest.approx(2.0, abs=0.05)

    def test_constant_val_loss_stops_at_patience_plus_one(self):
        ds = small_ds()
        m = build_cnn(spec_for(ds, optimizer="sgd", learning_rate=1e-300), ds.schema, rng=0)
        train(m, ds, TrainOptions(max_epochs=300, patience=5))
        assert m.history[-1]["epoch"] == 6
        assert len({h["val_loss"] for h in m.history}) == 1
        assert m.best_epoch == 1

    @pytest.mark.parametrize("opt", ["sgd", "momentum", "adam"])
    def test_best_epoch_restored(self, opt):
        ds = synth_ds()
        m = build_cnn(spec_for(ds, optimizer=opt, learning_rate=0.05 if opt == "sgd" else 0.01), ds.schema, rng=0)
        train(m, ds, TrainOptions(max_epochs=25, patience=4, seed=1))
        best = min(h["val_loss"] for h in m.history[1:])
        assert m.history[m.best_epoch]["val_loss"] == best
        val = ds.part("val")
        assert float(np.mean((predict(m, val) - val.Y) ** 2)) == pytest.approx(best, rel=1e-12)
        assert m.history[-1]["epoch"] < 25 or m.best_epoch <= 25

    def test_small_step_decreases_batch_loss(self):
        rng = np.random.default_rng(0)
        ds = small_ds()
        acts = ["tanh", "sigmoid", "elu", "identity"]
        for trial in range(20):
            kind = "cnn" if trial % 2 == 0 else "mlp"
            cfg = dict(conv=[{"filters": int(rng.integers(1, 3)), "kernel": tuple(rng.integers(1, 4, 3)),
                              "activation": rng.choice(acts)}],
                       tconv=[{"filters": int(rng.integers(1, 3)), "activation": rng.choice(acts)}],
                       fusion={"filters": int(rng.integers(1, 4)), "activation": rng.choice(acts)},
                       local={"filters": int(rng.integers(1, 3)), "kernel": (3, 3), "activation": rng.choice(acts)},
                       dense=[int(rng.integers(1, 8))], dense_activation=rng.choice(acts))
            m = (build_cnn if kind == "cnn" else build_mlp)(
                ModelSpec(kind=kind, grid=(3, 2), look_back=4, optimizer="sgd", learning_rate=1e-4, **cfg),
                ds.schema, rng=trial)
            net = m.network
            idx = np.arange(8)
            batch = gather_inputs(net, ds, idx)
            before, grads = loss_and_grads(net, batch, ds.Y[idx])
            for key, p in net.parameters():
                p -= 1e-4 * grads[key]
            after, _ = loss_and_grads(net, batch, ds.Y[idx])
            assert after < before

    def test_divergence(self):
        ds = small_ds()
        ds.Y[...] = 1e300
        m = build_cnn(spec_for(ds, optimizer="sgd", learning_rate=1e10), ds.schema, rng=0)
        with pytest.raises(TrainingDiverged) as err:
            with np.errstate(all="ignore"):
                train(m, ds, TrainOptions(max_epochs=10, patience=5))
        assert err.value.epoch == 1

    def test_needs_split(self):
        ds = small_ds()
        ds.split = None
        m = build_cnn(spec_for(ds), ds.schema, rng=0)
        with pytest.raises(ValueError):
            train(m, ds)

    def test_reproducible(self):
        ds = synth_ds()
        a = train(build_cnn(spec_for(ds, dropout=0.2), ds.schema, rng=3), ds, TrainOptions(max_epochs=5, seed=2))
        b = train(build_cnn(spec_for(ds, dropout=0.2), ds.schema, rng=3), ds, TrainOptions(max_epochs=5, seed=2))
        np.testing.assert_array_equal(predict(a, ds), predict(b, ds))

    def test_options_validation(self):
        with pytest.raises(SpecError):
            TrainOptions(fractions=(0.5, 0.2, 0.2))


class TestCountParams:
    def test_empty(self):
        assert count_params([]) == 0
        assert count_params(None) == 0

    def test_single_dense(self):
        assert count_params([Dense.init(10, 5)]) == 55

    @pytest.mark.parametrize("kind", ["cnn", "mlp"])
    def test_matches_brute_force(self, kind):
        ds = synth_ds()
        m = (build_cnn if kind == "cnn" else build_mlp)(spec_for(ds, kind=kind), ds.schema, rng=0)
        assert count_params(m) == brute_count(m)


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        ds = synth_ds()
        m = train(build_cnn(spec_for(ds), ds.schema, rng=0), ds, TrainOptions(max_epochs=3))
        save_model(m, tmp_path / "m")
        assert (tmp_path / "m" / "model.json").exists() and (tmp_path / "m" / "weights.bin").exists()
        back = load_model(tmp_path / "m")
        np.testing.assert_array_equal(predict(back, ds), predict(m, ds))
        np.testing.assert_array_equal(predict_demand(back, ds), predict_demand(m, ds))
        assert back.history == m.history and back.best_epoch == m.best_epoch

    def test_predict_demand_unscaled_and_clamped(self):
        ds = synth_ds()
        m = build_cnn(spec_for(ds), ds.schema, rng=0)
        m.scaler = ds.scaler
        out = m.network.layer("out")
        out.weights[...] = 0.0
        out.bias[...] = -1.0
        np.testing.assert_array_equal(predict_demand(m, ds), 0.0)
        out.bias[...] = 0.5
        lo, hi = ds.scaler.ranges["demand"]
        np.testing.assert_allclose(predict_demand(m, ds), lo + 0.5 * (hi - lo))
