"""Tests for the gated self-labeling loop."""

import json
from dataclasses import replace

import numpy as np
import pytest

from shadowforge.dataset import mask_subset
from shadowforge.engine import (
    REPORT_COLUMNS,
    AdmittedPoint,
    ConsistencyConfig,
    EngineState,
    consistency_variance,
    engine_iteration,
    retrain,
    run_engine,
    save_iteration_report,
    select_high_quality,
    validate,
)
from shadowforge.errors import InvalidArgument
from shadowforge.learner import (
    LearnerConfig,
    Model,
    feature_spec_for,
    predict,
)
from shadowforge.seeding import derive_rng


def constant_mlp(values, spec):
    # dims (D, 1, K) with all weights zero and output bias = values gives
    # a model that predicts the same vector for every input
    values = np.atleast_1d(np.asarray(values, dtype=np.float64))
    dims = (spec.dim, 1, values.size)
    theta = np.concatenate([np.zeros(spec.dim), np.zeros(1), np.zeros(values.size), values])
    return Model("mlp", dims, theta, spec, 0, np.zeros(spec.dim), np.ones(spec.dim))


ENGINE_LC = LearnerConfig(
    hidden_sizes=(32,), max_epochs=60, patience_initial=40, patience_engine=15, seed=5
)
ENGINE_CC = ConsistencyConfig(
    s=4, subset_fraction=0.5, admitted_fraction=0.25, max_retries=2
)


@pytest.fixture(scope="module")
def base_run(tiny_ds):
    return run_engine(tiny_ds, 0, ENGINE_CC, ENGINE_LC, "sl")


@pytest.fixture(scope="module")
def tiny_run(tiny_ds):
    return run_engine(tiny_ds, 3, ENGINE_CC, ENGINE_LC, "sl")


class TestConsistencyConfig:
    def test_defaults_valid(self):
        cc = ConsistencyConfig()
        assert cc.s == 5 and cc.max_retries == 3

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(s=1),
            dict(subset_fraction=0.0),
            dict(subset_fraction=1.5),
            dict(admitted_fraction=0.0),
            dict(max_retries=-1),
            dict(tighten_factor=1.0),
            dict(tighten_factor=0.0),
            dict(absolute_tau=-0.1),
        ],
    )
    def test_bad_knobs_rejected(self, kwargs):
        with pytest.raises(InvalidArgument):
            ConsistencyConfig(**kwargs)


class TestConsistencyVariance:
    def test_constant_model_zero_variance(self, tiny_ds, tiny_config):
        spec = feature_spec_for(tiny_config)
        model = constant_mlp([0.7, 1.3, 0.9], spec)
        rng = derive_rng(500)
        var, center = consistency_variance(model, tiny_ds.unlabeled[0], ENGINE_CC, rng)
        assert var == 0.0
        assert np.allclose(center, [0.7, 1.3, 0.9])

    def test_full_subsets_zero_variance(self, tiny_ds, base_run):
        # subset_fraction 1 makes every subset the whole record, so even a
        # trained model sees identical features s times
        model, _, _ = base_run
        cc = replace(ENGINE_CC, subset_fraction=1.0)
        var, _ = consistency_variance(model, tiny_ds.unlabeled[0], cc, derive_rng(501))
        assert var == 0.0

    def test_real_model_finite_nonnegative(self, tiny_ds, base_run):
        model, _, _ = base_run
        var, center = consistency_variance(
            model, tiny_ds.unlabeled[1], ENGINE_CC, derive_rng(502)
        )
        assert np.isfinite(var) and var >= 0.0
        assert center.shape == (tiny_ds.config.N - 1,)

    def test_deterministic_given_rng(self, tiny_ds, base_run):
        model, _, _ = base_run
        a = consistency_variance(model, tiny_ds.unlabeled[2], ENGINE_CC, derive_rng(503))
        b = consistency_variance(model, tiny_ds.unlabeled[2], ENGINE_CC, derive_rng(503))
        assert a[0] == b[0]
        assert np.array_equal(a[1], b[1])

    def test_record_smaller_than_s_rejected(self, tiny_ds, tiny_config):
        spec = feature_spec_for(tiny_config)
        model = constant_mlp([0.5, 0.5, 0.5], spec)
        point = tiny_ds.unlabeled[0]
        short = replace(point, record=point.record.take(np.arange(3)))
        with pytest.raises(InvalidArgument):
            consistency_variance(model, short, ConsistencyConfig(s=5), derive_rng(504))


class TestSelectHighQuality:
    def test_empty_candidates(self, base_run):
        model, _, _ = base_run
        assert select_high_quality(model, [], ENGINE_CC, derive_rng(510)) == []

    def test_fraction_one_admits_all(self, tiny_ds, base_run):
        model, _, _ = base_run
        cc = replace(ENGINE_CC, admitted_fraction=1.0)
        admitted = select_high_quality(model, tiny_ds.unlabeled, cc, derive_rng(511))
        assert len(admitted) == len(tiny_ds.unlabeled)
        assert {p.id for p, _ in admitted} == {p.id for p in tiny_ds.unlabeled}

    def test_ceil_count(self, tiny_ds, base_run):
        # 12 candidates at fraction 0.1 admit ceil(1.2) = 2, not 1
        model, _, _ = base_run
        cc = replace(ENGINE_CC, admitted_fraction=0.1)
        admitted = select_high_quality(model, tiny_ds.unlabeled, cc, derive_rng(512))
        assert len(admitted) == 2

    def test_labels_are_model_predictions(self, tiny_ds, base_run):
        model, _, _ = base_run
        cc = replace(ENGINE_CC, admitted_fraction=0.25)
        admitted = select_high_quality(model, tiny_ds.unlabeled, cc, derive_rng(513))
        for point, labels in admitted:
            assert np.array_equal(labels, predict(model, point))

    def test_zero_variance_ties_broken_by_id(self, tiny_ds, tiny_config):
        spec = feature_spec_for(tiny_config)
        model = constant_mlp([1.0, 1.0, 1.0], spec)
        cc = replace(ENGINE_CC, admitted_fraction=0.25)
        admitted = select_high_quality(model, tiny_ds.unlabeled, cc, derive_rng(514))
        want = sorted(p.id for p in tiny_ds.unlabeled)[: len(admitted)]
        assert [p.id for p, _ in admitted] == want

    def test_absolute_tau_strictly_below(self, tiny_ds, tiny_config):
        # constant model scores every candidate exactly 0, so tau 0 admits
        # nothing while any positive tau admits everything
        spec = feature_spec_for(tiny_config)
        model = constant_mlp([1.0, 1.0, 1.0], spec)
        none = select_high_quality(
            model, tiny_ds.unlabeled, replace(ENGINE_CC, absolute_tau=0.0), derive_rng(515)
        )
        assert none == []
        every = select_high_quality(
            model, tiny_ds.unlabeled, replace(ENGINE_CC, absolute_tau=1e-9), derive_rng(515)
        )
        assert len(every) == len(tiny_ds.unlabeled)


class TestRetrain:
    def test_deterministic(self, tiny_ds, base_run):
        model, state, _ = base_run
        a = retrain(model, state.pool, ENGINE_LC, derive_rng(520))
        b = retrain(model, state.pool, ENGINE_LC, derive_rng(520))
        assert np.array_equal(a.theta, b.theta)

    def test_missing_feature_spec_rejected(self, base_run):
        model, state, _ = base_run
        bare = replace(model, feature_spec=None)
        with pytest.raises(InvalidArgument):
            retrain(bare, state.pool, ENGINE_LC, derive_rng(521))

    def test_mixed_snapshot_budgets(self, tiny_ds, base_run):
        # monitor rows are truncated to the smallest record in the pool
        model, state, _ = base_run
        first = state.pool[0]
        short_point = replace(
            first.point, record=first.point.record.take(np.arange(8))
        )
        pool = [AdmittedPoint(short_point, first.labels, 0)] + state.pool[1:]
        out = retrain(model, pool, ENGINE_LC, derive_rng(522))
        assert isinstance(out, Model)

    def test_preserves_scaler(self, base_run):
        model, state, _ = base_run
        out = retrain(model, state.pool, ENGINE_LC, derive_rng(523))
        assert np.array_equal(out.x_center, model.x_center)
        assert np.array_equal(out.x_scale, model.x_scale)


class TestValidate:
    def test_constant_mean_scores_zero(self, tiny_ds, tiny_config):
        spec = feature_spec_for(tiny_config)
        mu = np.concatenate([p.labels for p in tiny_ds.validation]).mean()
        model = constant_mlp([mu, mu, mu], spec)
        assert validate(model, tiny_ds.validation) == 0.0

    def test_constant_off_mean_scores_negative(self, tiny_ds, tiny_config):
        spec = feature_spec_for(tiny_config)
        mu = np.concatenate([p.labels for p in tiny_ds.validation]).mean()
        model = constant_mlp([mu + 0.5] * 3, spec)
        assert validate(model, tiny_ds.validation) < 0.0

    def test_needs_two_points(self, tiny_ds, tiny_config):
        model = constant_mlp([1.0, 1.0, 1.0], feature_spec_for(tiny_config))
        with pytest.raises(InvalidArgument):
            validate(model, tiny_ds.validation[:1])

    def test_needs_labels(self, tiny_ds, tiny_config):
        model = constant_mlp([1.0, 1.0, 1.0], feature_spec_for(tiny_config))
        with pytest.raises(InvalidArgument):
            validate(model, tiny_ds.unlabeled[:4])


class TestEngineIteration:
    def test_empty_candidates_only_advances_t(self, tiny_ds, base_run):
        _, state, _ = base_run
        nxt, row = engine_iteration(state, [], tiny_ds.validation, ENGINE_CC, ENGINE_LC, 5)
        assert nxt.t == state.t + 1
        assert nxt.model is state.model
        assert nxt.pool is state.pool
        assert nxt.val_history == state.val_history
        assert row["accepted"] is True
        assert row["retries"] == 0 and row["admitted_count"] == 0
        assert row["val_r2"] == state.val_history[-1]

    def test_converged_state_rejected(self, tiny_ds, base_run):
        _, state, _ = base_run
        done = replace(state, converged=True)
        with pytest.raises(InvalidArgument):
            engine_iteration(done, [], tiny_ds.validation, ENGINE_CC, ENGINE_LC, 5)

    def test_failing_gate_tightens_and_converges(self, tiny_ds, base_run, monkeypatch):
        # force every retrain to produce a bad constant model so the gate
        # rejects all retries
        model, state, _ = base_run
        spec = model.feature_spec
        bad = constant_mlp([2.9, 2.9, 2.9], spec)
        import shadowforge.engine as eng

        monkeypatch.setattr(eng, "retrain", lambda m, pool, cfg, rng=None: bad)
        nxt, row = engine_iteration(
            state, list(tiny_ds.unlabeled), tiny_ds.validation, ENGINE_CC, ENGINE_LC, 5
        )
        assert nxt.converged is True
        assert nxt.model is state.model
        assert nxt.pool is state.pool
        assert nxt.val_history == state.val_history
        want = ENGINE_CC.admitted_fraction * ENGINE_CC.tighten_factor ** (
            ENGINE_CC.max_retries + 1
        )
        assert np.isclose(nxt.admitted_fraction, want)
        assert row["accepted"] is False
        assert row["retries"] == ENGINE_CC.max_retries
        assert row["admitted_count"] == 0

    def test_accepted_round_grows_pool(self, tiny_ds, base_run):
        _, state, _ = base_run
        nxt, row = engine_iteration(
            state, list(tiny_ds.unlabeled), tiny_ds.validation, ENGINE_CC, ENGINE_LC, 5
        )
        assert nxt.t == 1
        if row["accepted"]:
            assert len(nxt.pool) == len(state.pool) + row["admitted_count"]
            assert nxt.val_history[-1] >= state.val_history[-1]
            added = [e for e in nxt.pool if e.admitted_at == 1]
            assert len(added) == row["admitted_count"]
            assert all(e.point.labels is None for e in added)


class TestRunEngine:
    def test_zero_iterations_returns_baseline(self, tiny_ds, base_run):
        model, state, rows = base_run
        assert state.t == 0
        assert state.baseline_model is model
        assert len(rows) == 1
        assert rows[0]["t"] == 0 and rows[0]["accepted"] is True
        assert rows[0]["admitted_count"] == 0
        assert len(state.pool) == len(tiny_ds.labeled)
        assert len(state.val_history) == 1
        assert rows[0]["val_r2"] == state.val_history[0]

    def test_bad_arguments_rejected(self, tiny_ds):
        with pytest.raises(InvalidArgument):
            run_engine(tiny_ds, -1, ENGINE_CC, ENGINE_LC, "sl")
        with pytest.raises(InvalidArgument):
            run_engine(tiny_ds, 1, ENGINE_CC, ENGINE_LC, "boost")
        with pytest.raises(InvalidArgument):
            run_engine(replace(tiny_ds, labeled=[]), 1, ENGINE_CC, ENGINE_LC, "sl")

    def test_report_shape(self, tiny_run):
        _, state, rows = tiny_run
        assert len(rows) == state.t + 1
        for t, row in enumerate(rows):
            assert tuple(row.keys()) == REPORT_COLUMNS
            assert row["t"] == t
            assert row["wallclock_s"] >= 0.0

    def test_pool_conservation(self, tiny_ds, tiny_run):
        _, state, rows = tiny_run
        admitted_total = sum(r["admitted_count"] for r in rows if r["accepted"])
        assert len(state.pool) == len(tiny_ds.labeled) + admitted_total
        ids = [e.point.id for e in state.pool]
        assert len(ids) == len(set(ids))
        unlabeled_ids = {p.id for p in tiny_ds.unlabeled}
        for entry in state.pool:
            if entry.admitted_at > 0:
                assert entry.point.id in unlabeled_ids

    def test_accepted_val_history_monotone(self, tiny_run):
        _, state, _ = tiny_run
        hist = state.val_history
        assert all(b >= a for a, b in zip(hist, hist[1:]))

    def test_synthetic_labels_match_admission_time_model(self, tiny_run):
        _, state, _ = tiny_run
        for entry in state.pool:
            assert entry.labels.shape == (state.model.output_dim,)
            assert np.isfinite(entry.labels).all()

    def test_never_touches_test_split(self, tiny_ds, tiny_run):
        _, state, _ = tiny_run
        test_ids = {p.id for p in tiny_ds.test}
        assert all(e.point.id not in test_ids for e in state.pool)

    def test_deterministic_modulo_wallclock(self, tiny_ds, tiny_run):
        model, state, rows = tiny_run
        model2, state2, rows2 = run_engine(tiny_ds, 3, ENGINE_CC, ENGINE_LC, "sl")
        assert np.array_equal(model.theta, model2.theta)
        assert state2.val_history == state.val_history
        strip = lambda rs: [{k: r[k] for k in REPORT_COLUMNS if k != "wallclock_s"} for r in rs]
        assert strip(rows) == strip(rows2)

    def test_ssl_paradigm_runs(self, tiny_ds):
        model, state, rows = run_engine(tiny_ds, 1, ENGINE_CC, ENGINE_LC, "ssl")
        assert model.kind == "mlp"
        assert len(rows) == state.t + 1

    def test_kernel_paradigm_runs(self, tiny_ds):
        model, state, rows = run_engine(tiny_ds, 1, ENGINE_CC, ENGINE_LC, "kernel")
        assert model.kind == "kernel"
        assert len(rows) == state.t + 1
        assert len(state.val_history) >= 1


class TestIterationReport:
    def test_round_trip(self, tmp_path, tiny_run):
        _, _, rows = tiny_run
        path = tmp_path / "report.json"
        save_iteration_report(rows, path)
        text = path.read_text()
        assert text.endswith("\n")
        loaded = json.loads(text)
        assert len(loaded) == len(rows)
        for got, want in zip(loaded, rows):
            assert tuple(got.keys()) == REPORT_COLUMNS
            for key in REPORT_COLUMNS:
                assert got[key] == want[key]
