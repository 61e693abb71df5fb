"""Shapley attribution checked against closed forms and the exact oracle."""

import json
import math

import numpy as np
import pytest

from iknet.dataset import Sample, fit_scaler
from iknet.errors import ValidationError
from iknet.explain import (
    Attribution,
    Background,
    FeatureGrouping,
    _coalition_values,
    _solve_constrained,
    background_from_samples,
    bucketed_grouping,
    exact_shapley,
    global_importance,
    kernel_shap,
    per_scalar_grouping,
    render_text_attribution,
    standard_grouping,
    write_importance_csv,
)
from iknet.indicators import FEATURE_NAMES
from iknet.model import TrainConfig, predict, train
from iknet.saliency import KeywordSet
from iknet.tensor import rng_stream

from test_indicators import weekday_dates
from test_model import make_samples

FEATS = ("open", "close", "rsi_14", "volume")


def tiny_sample(seed=0, words=("alpha", "beta", "gamma"), d=2, T=3, feats=FEATS):
    n = len(words)
    rng = rng_stream(seed, "explain-sample")
    ks = KeywordSet(
        words=list(words),
        saliencies=np.sort(rng.uniform(0.1, 1.0, n))[::-1],
        embeddings=rng.normal(size=(n, d)),
        count=n,
    )
    dates = weekday_dates(T + 2)
    return Sample(
        anchor_date=dates[T],
        target_date=dates[T + 1],
        news_date=dates[T - 1],
        window_dates=dates[:T],
        x_tech=rng.normal(size=(T, len(feats))),
        keywords=ks,
        y=100.0,
        anchor_close=99.0,
    )


def tiny_background(n_members=2, first_seed=10, **kwargs):
    return background_from_samples(
        [tiny_sample(seed=first_seed + i, **kwargs) for i in range(n_members)]
    )


def sum_model(k, x):
    return k.sum(axis=(1, 2)) + x.sum(axis=(1, 2))


def product_model(k, x):
    return k.sum(axis=(1, 2)) * x.sum(axis=(1, 2))


def constant_model(value):
    return lambda k, x: np.full(k.shape[0], value)


def additive_model(wk, wx):
    wk = np.asarray(wk, dtype=float)
    wx = np.asarray(wx, dtype=float)

    def fn(k, x):
        return (k.sum(axis=2) * wk).sum(axis=1) + (x.sum(axis=1) * wx).sum(axis=1)

    return fn


GROUPING = standard_grouping(3, 2, 3, FEATS)


class TestGrouping:
    def test_standard_shapes_and_labels(self):
        assert GROUPING.size == 7
        assert GROUPING.labels[:3] == ("keyword_01", "keyword_02", "keyword_03")
        assert GROUPING.labels[3:] == FEATS
        assert GROUPING.keyword_slots() == (0, 1, 2, None, None, None, None)
        np.testing.assert_array_equal(GROUPING.keyword_ids[1], [1, 1])
        np.testing.assert_array_equal(GROUPING.indicator_ids[:, 2], [5, 5, 5])

    def test_per_scalar_labels(self):
        grouping = per_scalar_grouping(2, 2, 2, ("open", "close", "rsi_14"))
        assert grouping.size == 4 + 6
        assert grouping.labels[0] == "keyword_01[0]"
        assert grouping.labels[4] == "open[t-2]"
        assert grouping.labels[-1] == "rsi_14[t-1]"
        assert grouping.keyword_slots() == (None,) * 10

    def test_bucketed_covers_and_maps(self):
        grouping = bucketed_grouping(
            3, 2, 3, FEATS,
            {"price": ["open", "close"], "momentum": ["rsi_14"], "flow": ["volume"]},
        )
        assert grouping.size == 6
        assert grouping.keyword_slots() == (0, 1, 2, None, None, None)
        assert grouping.indicator_ids[0, 0] == grouping.indicator_ids[0, 1]

    def test_bucket_validation(self):
        with pytest.raises(ValidationError, match="not a feature"):
            bucketed_grouping(1, 2, 3, FEATS, {"a": ["nope"], "b": list(FEATS)})
        with pytest.raises(ValidationError, match="two buckets"):
            bucketed_grouping(1, 2, 3, FEATS, {"a": ["open"], "b": list(FEATS)})
        with pytest.raises(ValidationError, match="cover"):
            bucketed_grouping(1, 2, 3, FEATS, {"a": ["open", "close"]})

    def test_grouping_validation(self):
        with pytest.raises(ValidationError, match="at least 2"):
            FeatureGrouping(("solo",), np.zeros((1, 2), dtype=int), np.zeros((0, 0), dtype=int))
        with pytest.raises(ValidationError, match="no cells"):
            FeatureGrouping(
                ("a", "b", "ghost"),
                np.zeros((1, 2), dtype=int),
                np.ones((2, 2), dtype=int),
            )


class TestMasking:
    def test_coalition_values_by_hand(self):
        sample = tiny_sample(seed=1)
        background = tiny_background(2)
        z = np.zeros((3, GROUPING.size), dtype=bool)
        z[1, :] = True
        z[2, 0] = True  # only keyword slot 0 from the sample
        values = _coalition_values(
            z, sample.keywords.embeddings, sample.x_tech, background, GROUPING, sum_model
        )
        bg_sums = background.k.sum(axis=(1, 2)) + background.x.sum(axis=(1, 2))
        assert values[0] == pytest.approx(bg_sums.mean(), rel=1e-12)
        assert values[1] == pytest.approx(
            sample.keywords.embeddings.sum() + sample.x_tech.sum(), rel=1e-12
        )
        swapped = [
            sample.keywords.embeddings[0].sum()
            + background.k[b, 1:].sum()
            + background.x[b].sum()
            for b in range(2)
        ]
        assert values[2] == pytest.approx(np.mean(swapped), rel=1e-12)


class TestKernelShap:
    def test_constant_model(self):
        attribution = kernel_shap(
            tiny_sample(), None, None, GROUPING, tiny_background(), model_fn=constant_model(7.5)
        )
        assert attribution.method == "kernel-exact"
        assert attribution.baseline == pytest.approx(7.5, abs=1e-12)
        assert attribution.prediction == pytest.approx(7.5, abs=1e-12)
        np.testing.assert_allclose(attribution.values, np.zeros(7), atol=1e-12)

    def test_additive_model_single_background(self):
        sample = tiny_sample(seed=2)
        member = tiny_sample(seed=3)
        background = background_from_samples([member])
        wk, wx = [1.5, -2.0, 0.5], [3.0, -1.0, 2.0, 0.25]
        fn = additive_model(wk, wx)
        attribution = kernel_shap(sample, None, None, GROUPING, background, model_fn=fn)
        want = [
            wk[i] * (sample.keywords.embeddings[i].sum() - member.keywords.embeddings[i].sum())
            for i in range(3)
        ] + [
            wx[j] * (sample.x_tech[:, j].sum() - member.x_tech[:, j].sum())
            for j in range(4)
        ]
        np.testing.assert_allclose(attribution.values, want, atol=1e-9)
        oracle = exact_shapley(sample, None, None, GROUPING, background, model_fn=fn)
        np.testing.assert_allclose(oracle.values, want, atol=1e-9)

    def test_exact_mode_matches_exact_shapley_on_interactions(self):
        sample = tiny_sample(seed=4)
        background = tiny_background(3)
        solved = kernel_shap(
            sample, None, None, GROUPING, background, sampler="exact", model_fn=product_model
        )
        oracle = exact_shapley(sample, None, None, GROUPING, background, model_fn=product_model)
        np.testing.assert_allclose(solved.values, oracle.values, atol=1e-9)
        assert solved.baseline == pytest.approx(oracle.baseline, abs=1e-12)

    def test_sampled_with_covering_budget_matches_exact(self):
        words = ("alpha", "beta", "gamma", "delta")
        grouping = standard_grouping(4, 2, 3, FEATS)
        sample = tiny_sample(seed=5, words=words)
        background = tiny_background(2, words=words)
        sampled = kernel_shap(
            sample, None, None, grouping, background,
            n_coalitions=4096, sampler="sampled", model_fn=product_model,
        )
        exact = kernel_shap(
            sample, None, None, grouping, background, sampler="exact", model_fn=product_model
        )
        assert sampled.method == "kernel-sampled"
        assert np.abs(sampled.values - exact.values).max() < 1e-6

    def test_sampled_partial_budget_approximates_oracle(self):
        words = tuple(f"w{i}" for i in range(4))
        feats = tuple(f"c{i}" for i in range(8))
        grouping = standard_grouping(4, 2, 3, feats)
        sample = tiny_sample(seed=6, words=words, feats=feats)
        background = tiny_background(2, words=words, feats=feats)
        oracle = exact_shapley(sample, None, None, grouping, background, model_fn=product_model)
        sampled = kernel_shap(
            sample, None, None, grouping, background,
            n_coalitions=400, sampler="sampled", seed=1, model_fn=product_model,
        )
        scale = np.abs(oracle.values).max()
        assert np.abs(sampled.values - oracle.values).max() < 0.2 * scale

    def test_sampled_is_deterministic_per_seed(self):
        words = tuple(f"w{i}" for i in range(4))
        feats = tuple(f"c{i}" for i in range(8))
        grouping = standard_grouping(4, 2, 3, feats)
        sample = tiny_sample(seed=7, words=words, feats=feats)
        background = tiny_background(2, words=words, feats=feats)
        kwargs = dict(n_coalitions=400, sampler="sampled", model_fn=product_model)
        a = kernel_shap(sample, None, None, grouping, background, seed=3, **kwargs)
        b = kernel_shap(sample, None, None, grouping, background, seed=3, **kwargs)
        c = kernel_shap(sample, None, None, grouping, background, seed=4, **kwargs)
        np.testing.assert_array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    def test_efficiency_holds_even_when_sampled(self):
        words = tuple(f"w{i}" for i in range(4))
        feats = tuple(f"c{i}" for i in range(8))
        grouping = standard_grouping(4, 2, 3, feats)
        sample = tiny_sample(seed=8, words=words, feats=feats)
        background = tiny_background(3, words=words, feats=feats)
        attribution = kernel_shap(
            sample, None, None, grouping, background,
            n_coalitions=400, sampler="sampled", model_fn=product_model,
        )
        gap = attribution.baseline + attribution.values.sum() - attribution.prediction
        assert abs(gap) < 1e-9

    def test_budget_validation(self):
        with pytest.raises(ValidationError, match="at least M"):
            kernel_shap(
                tiny_sample(), None, None, GROUPING, tiny_background(),
                n_coalitions=5, sampler="sampled", model_fn=sum_model,
            )
        with pytest.raises(ValidationError, match="sampler"):
            kernel_shap(
                tiny_sample(), None, None, GROUPING, tiny_background(),
                sampler="antithetic", model_fn=sum_model,
            )

    def test_exact_mode_size_limit(self):
        feats = tuple(f"c{i}" for i in range(14))
        grouping = standard_grouping(3, 2, 3, feats)
        sample = tiny_sample(seed=9, feats=feats)
        background = tiny_background(2, feats=feats)
        with pytest.raises(ValidationError, match="enumeration limit"):
            kernel_shap(
                sample, None, None, grouping, background, sampler="exact", model_fn=sum_model
            )

    def test_background_shape_mismatch(self):
        background = tiny_background(2, d=3)
        with pytest.raises(ValidationError, match="grouping shape"):
            kernel_shap(
                tiny_sample(d=3), None, None, GROUPING, background, model_fn=sum_model
            )


class TestExactShapley:
    def test_symmetry_axiom(self):
        sample = tiny_sample(seed=11)
        sample.keywords.embeddings[1] = sample.keywords.embeddings[0]
        background = tiny_background(2)
        background.k[:, 1, :] = background.k[:, 0, :]

        def symmetric(k, x):
            return k[:, 0, :].sum(axis=1) * k[:, 1, :].sum(axis=1) + x.sum(axis=(1, 2))

        attribution = exact_shapley(
            sample, None, None, GROUPING, background, model_fn=symmetric
        )
        assert attribution.values[0] == pytest.approx(attribution.values[1], abs=1e-12)

    def test_dummy_axiom(self):
        def ignores_some(k, x):
            return k[:, :2, :].sum(axis=(1, 2)) + x[:, :, :3].sum(axis=(1, 2))

        attribution = exact_shapley(
            tiny_sample(seed=12), None, None, GROUPING, tiny_background(2),
            model_fn=ignores_some,
        )
        assert attribution.values[2] == 0.0
        assert attribution.values[GROUPING.labels.index("volume")] == 0.0

    def test_size_limit(self):
        grouping = per_scalar_grouping(3, 2, 3, FEATS)  # M = 18
        with pytest.raises(ValidationError, match="M <= 16"):
            exact_shapley(
                tiny_sample(), None, None, grouping, tiny_background(), model_fn=sum_model
            )

    def test_per_scalar_agreement(self):
        feats = ("open", "close", "rsi_14")
        grouping = per_scalar_grouping(2, 2, 2, feats)  # M = 10
        words = ("alpha", "beta")
        sample = tiny_sample(seed=13, words=words, T=2, feats=feats)
        background = tiny_background(2, words=words, T=2, feats=feats)
        solved = kernel_shap(
            sample, None, None, grouping, background, sampler="exact", model_fn=product_model
        )
        oracle = exact_shapley(sample, None, None, grouping, background, model_fn=product_model)
        np.testing.assert_allclose(solved.values, oracle.values, atol=1e-9)


class TestTrainedModelOracle:
    BUCKETS = {
        "price": ["open", "high", "low", "close"],
        "volume": ["volume", "volume_change"],
        "trend": ["sma_10", "ema_10", "sma_deviation"],
        "momentum": ["rsi_14"],
        "macd": ["macd", "macd_signal", "macd_diff"],
        "bands": ["bb_upper", "bb_middle", "bb_lower"],
        "vol": ["volatility_ratio"],
    }

    def test_kernel_matches_oracle_on_trained_net(self):
        samples = make_samples(n_days=40, seed=21)
        scaler = fit_scaler(samples)
        config = TrainConfig(seed=21, batch_size=8, epochs=10, dropout=0.1,
                             hidden=4, n_keywords=3, window=5, lstm_layers=1)
        params, _ = train(samples, config, scaler)
        grouping = bucketed_grouping(3, 4, 5, FEATURE_NAMES, self.BUCKETS)  # M = 10
        background = background_from_samples(samples[:2])
        target = samples[-1]
        solved = kernel_shap(target, params, scaler, grouping, background, sampler="exact")
        oracle = exact_shapley(target, params, scaler, grouping, background)
        np.testing.assert_allclose(solved.values, oracle.values, atol=1e-9)
        # attribution lives in raw index points: full-coalition value is the
        # same number predict reports for this sample
        series = predict([target], params, scaler)
        assert solved.prediction == pytest.approx(series.y_hat[0], abs=1e-9)
        assert abs(solved.baseline + solved.values.sum() - solved.prediction) < 1e-9


class TestSolver:
    def test_singular_system_regularizes_with_warning(self):
        z = np.array([[1, 0, 0], [0, 1, 1]], dtype=bool)
        weights = np.ones(2)
        values = np.array([1.0, 2.0])
        with pytest.warns(RuntimeWarning, match="singular"):
            phi, regularized = _solve_constrained(z, weights, values, 0.0, 3.0)
        assert regularized
        assert phi.sum() == pytest.approx(3.0, abs=1e-12)

    def test_attribution_rejects_broken_efficiency(self):
        with pytest.raises(ValidationError, match="efficiency"):
            Attribution(
                baseline=0.0,
                values=np.array([1.0, 1.0]),
                prediction=5.0,
                labels=("a", "b"),
                keyword_slots=(None, None),
                words=(),
                date="2024-01-02",
                method="kernel-exact",
            )


class TestGlobalImportance:
    def test_constructed_rsi_dependence_ranks_first(self):
        def rsi_only(k, x):
            return x[:, :, 2].sum(axis=1)

        attributions = [
            kernel_shap(
                tiny_sample(seed=30 + i), None, None, GROUPING, tiny_background(2),
                model_fn=rsi_only,
            )
            for i in range(3)
        ]
        ranking = global_importance(attributions)
        assert ranking[0][0] == "rsi_14"
        assert ranking[0][1] > 0
        assert all(value < 1e-9 for _, value in ranking[1:])

    def test_single_attribution_is_its_own_ranking(self):
        attribution = kernel_shap(
            tiny_sample(seed=31), None, None, GROUPING, tiny_background(2),
            model_fn=product_model,
        )
        ranking = global_importance([attribution])
        values = sorted(np.abs(attribution.values), reverse=True)
        np.testing.assert_allclose([v for _, v in ranking], values, atol=1e-12)

    def test_all_zero_ties_break_lexicographically(self):
        attribution = kernel_shap(
            tiny_sample(seed=32), None, None, GROUPING, tiny_background(2),
            model_fn=constant_model(3.0),
        )
        ranking = global_importance([attribution])
        labels = [label for label, _ in ranking]
        assert labels == sorted(labels)
        assert all(value == 0.0 for _, value in ranking)

    def test_modal_word_labels(self):
        a1 = kernel_shap(
            tiny_sample(seed=33, words=("alpha", "beta", "gamma")),
            None, None, GROUPING, tiny_background(2), model_fn=sum_model,
        )
        a2 = kernel_shap(
            tiny_sample(seed=34, words=("delta", "beta", "gamma")),
            None, None, GROUPING, tiny_background(2), model_fn=sum_model,
        )
        labels = {label for label, _ in global_importance([a1, a2])}
        # slot 0 ties alpha/delta -> lexicographic; slot 1 is unanimous
        assert "keyword_01 (alpha)" in labels
        assert "keyword_02 (beta)" in labels

    def test_mixed_groupings_rejected(self):
        a = kernel_shap(
            tiny_sample(seed=35), None, None, GROUPING, tiny_background(2),
            model_fn=sum_model,
        )
        other = standard_grouping(3, 2, 3, ("w", "x", "y", "z"))
        b = kernel_shap(
            tiny_sample(seed=36), None, None, other, tiny_background(2),
            model_fn=sum_model,
        )
        with pytest.raises(ValidationError, match="grouping"):
            global_importance([a, b])
        with pytest.raises(ValidationError, match="at least one"):
            global_importance([])

    def test_importance_csv(self, tmp_path):
        attribution = kernel_shap(
            tiny_sample(seed=37), None, None, GROUPING, tiny_background(2),
            model_fn=product_model,
        )
        path = tmp_path / "importance.csv"
        write_importance_csv(path, global_importance([attribution]))
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "group,mean_abs_phi"
        assert len(lines) == 8


class TestBackground:
    def test_subsample_is_deterministic(self):
        samples = [tiny_sample(seed=40 + i) for i in range(60)]
        a = background_from_samples(samples, size=50, seed=5)
        b = background_from_samples(samples, size=50, seed=5)
        c = background_from_samples(samples, size=50, seed=6)
        assert len(a) == 50
        np.testing.assert_array_equal(a.k, b.k)
        assert not np.array_equal(a.k, c.k)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError, match="empty background"):
            background_from_samples([])


class TestRendering:
    def _attribution(self, phis, words=("good", "bad")):
        grouping = standard_grouping(len(words), 2, 3, FEATS)
        full = np.zeros(grouping.size)
        full[: len(phis)] = phis
        return Attribution(
            baseline=100.0,
            values=full,
            prediction=100.0 + full.sum(),
            labels=grouping.labels,
            keyword_slots=grouping.keyword_slots(),
            words=words,
            date="2024-03-04",
            method="kernel-exact",
        )

    def _keywords(self, words):
        n = len(words)
        return KeywordSet(
            words=list(words),
            saliencies=np.linspace(1.0, 0.5, n),
            embeddings=np.ones((n, 2)),
            count=n,
        )

    def test_two_point_normalization(self):
        attribution = self._attribution([2.0, -2.0])
        payload, page = render_text_attribution(
            "Good news, then bad news.", self._keywords(("good", "bad")), attribution
        )
        entries = {e["word"]: e for e in payload["entries"]}
        assert entries["good"]["sign"] == "up"
        assert entries["bad"]["sign"] == "down"
        assert entries["good"]["intensity"] == 1.0
        assert entries["bad"]["intensity"] == 1.0
        assert entries["good"]["in_text"] and entries["bad"]["in_text"]
        assert entries["bad"]["rank"] == 1  # |phi| tie breaks by word
        assert 'style="background: rgba(46, 125, 50' in page
        assert 'style="background: rgba(183, 28, 28' in page

    def test_zero_attribution_renders_neutral(self):
        attribution = self._attribution([0.0, 0.0])
        payload, page = render_text_attribution(
            "good and bad", self._keywords(("good", "bad")), attribution
        )
        assert all(e["sign"] == "flat" for e in payload["entries"])
        assert all(e["intensity"] == 0.0 for e in payload["entries"])
        assert "rgba(120, 120, 120" in page

    def test_json_round_trip(self):
        attribution = self._attribution([1.25, -0.5])
        payload, _ = render_text_attribution(
            "good bad", self._keywords(("good", "bad")), attribution
        )
        parsed = json.loads(json.dumps(payload))
        assert [e["phi"] for e in parsed["entries"]] == [1.25, -0.5]
        assert parsed["baseline"] == attribution.baseline

    def test_absent_word_flagged_for_legend(self):
        attribution = self._attribution([1.0, -1.0], words=("missing", "bad"))
        payload, page = render_text_attribution(
            "only bad words here", self._keywords(("missing", "bad")), attribution
        )
        entries = {e["word"]: e for e in payload["entries"]}
        assert entries["missing"]["in_text"] is False
        assert "(not in text)" in page

    def test_word_mismatch_rejected(self):
        attribution = self._attribution([1.0, -1.0])
        with pytest.raises(ValidationError, match="does not match"):
            render_text_attribution("text", self._keywords(("other", "bad")), attribution)
