"""Trading simulation checked against scripted day-by-day oracles."""

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iknet.backtest import StrategyConfig, hv, sharpe, simulate, write_ledger_csv
from iknet.errors import ValidationError
from iknet.evaluate import ForecastSeries
from iknet.tensor import rng_stream

from test_indicators import weekday_dates


def chained_series(ratios, longs, start=100.0):
    """Series whose closes follow `ratios` and whose calls follow `longs`."""
    anchors, trues, hats = [], [], []
    price = start
    for ratio, call in zip(ratios, longs):
        anchors.append(price)
        price = price * ratio
        trues.append(price)
        hats.append(anchors[-1] * (1.01 if call else 0.99))
    return ForecastSeries(
        dates=weekday_dates(len(anchors)),
        y_hat=hats,
        y_true=trues,
        anchor_close=anchors,
        model="sim",
    )


day_plan = st.lists(
    st.tuples(st.floats(0.9, 1.1), st.booleans()), min_size=1, max_size=15
)


class TestSimulate:
    def test_never_long_is_a_flat_book(self):
        ledger = simulate(chained_series([1.02, 0.97, 1.01], [False] * 3))
        assert ledger.cumulative_return_pct == 0.0
        assert ledger.n_trades == 0
        assert ledger.positions == ["flat"] * 3
        np.testing.assert_array_equal(ledger.cost_log, np.zeros(3))

    def test_single_held_day_no_cost(self):
        series = chained_series([math.exp(0.01)], [True])
        ledger = simulate(series, StrategyConfig(cost=0.0))
        want = (math.exp(0.01) - 1.0) * 100.0
        assert ledger.cumulative_return_pct == pytest.approx(want, rel=1e-12)
        assert ledger.n_trades == 1
        np.testing.assert_array_equal(ledger.cost_log, np.zeros(1))

    def test_five_day_scripted_oracle(self):
        ratios = [1.02, 0.99, 1.01, 1.03, 0.98]
        longs = [True, True, False, True, True]
        ledger = simulate(chained_series(ratios, longs), StrategyConfig(cost=0.003))

        side = math.log(1.0 - 0.003)
        # day 0: enter, up day.  day 1: hold, down day.  day 2: exit to flat.
        # day 3: re-enter, up day.  day 4: hold, then liquidate at the end.
        want_gross = [math.log(1.02), math.log(0.99), 0.0, math.log(1.03), math.log(0.98)]
        want_cost = [side, 0.0, side, side, side]
        np.testing.assert_allclose(ledger.gross_log, want_gross, atol=1e-12)
        np.testing.assert_allclose(ledger.cost_log, want_cost, atol=1e-15)
        assert ledger.positions == ["long", "long", "flat", "long", "long"]
        assert ledger.n_trades == 2
        want_total = (math.exp(sum(want_gross) + sum(want_cost)) - 1.0) * 100.0
        assert ledger.cumulative_return_pct == pytest.approx(want_total, rel=1e-12)

    def test_paper_literal_zeroes_losing_long_days(self):
        ratios = [1.02, 0.99, 1.01, 1.03, 0.98]
        longs = [True, True, False, True, True]
        series = chained_series(ratios, longs)
        literal = simulate(series, StrategyConfig(cost=0.003, mode="paper_literal"))
        standard = simulate(series, StrategyConfig(cost=0.003))

        want_gross = [math.log(1.02), 0.0, 0.0, math.log(1.03), 0.0]
        np.testing.assert_allclose(literal.gross_log, want_gross, atol=1e-12)
        np.testing.assert_array_equal(literal.cost_log, standard.cost_log)
        assert literal.cumulative_return_pct > standard.cumulative_return_pct

    def test_exact_tie_call_stays_flat(self):
        series = chained_series([1.05], [True])
        series.y_hat = series.anchor_close.copy()
        ledger = simulate(series)
        assert ledger.positions == ["flat"]
        assert ledger.cumulative_return_pct == 0.0

    def test_entry_and_liquidation_share_the_last_day(self):
        series = chained_series([0.99, 1.02], [False, True])
        ledger = simulate(series, StrategyConfig(cost=0.003))
        assert ledger.n_trades == 1
        assert ledger.cost_log[1] == pytest.approx(2 * math.log(0.997), abs=1e-15)

    def test_closes_record_the_underlying_path(self):
        series = chained_series([1.02, 0.99], [True, False])
        ledger = simulate(series)
        np.testing.assert_array_equal(
            ledger.closes, np.concatenate(([series.anchor_close[0]], series.y_true))
        )

    def test_misaligned_prices_rejected(self):
        series = chained_series([1.01, 1.01, 1.01], [True, True, True])
        series.anchor_close[1] += 1.0
        with pytest.raises(ValidationError, match="misaligned"):
            simulate(series)

    def test_bare_arrays_rejected(self):
        with pytest.raises(TypeError):
            simulate(np.array([1.0, 2.0]))

    def test_empty_series_rejected(self):
        empty = ForecastSeries(dates=[], y_hat=[], y_true=[], anchor_close=[])
        with pytest.raises(ValidationError, match="empty"):
            simulate(empty)

    def test_config_validation(self):
        with pytest.raises(ValidationError, match="cost"):
            StrategyConfig(cost=-0.1)
        with pytest.raises(ValidationError, match="cost"):
            StrategyConfig(cost=1.0)
        with pytest.raises(ValidationError, match="mode"):
            StrategyConfig(mode="aggressive")

    def test_cumulative_return_non_increasing_in_cost(self):
        rng = rng_stream(3, "cost-mono")
        ratios = np.exp(rng.normal(0, 0.01, 20))
        longs = list(rng.uniform(size=20) < 0.5)
        series = chained_series(list(ratios), longs)
        totals = [
            simulate(series, StrategyConfig(cost=c)).cumulative_return_pct
            for c in (0.0, 0.001, 0.003, 0.01, 0.05)
        ]
        assert all(a > b for a, b in zip(totals, totals[1:]))
        assert simulate(series).n_trades >= 1

    @settings(max_examples=60, deadline=None)
    @given(plan=day_plan)
    def test_paper_literal_never_below_standard(self, plan):
        ratios = [r for r, _ in plan]
        longs = [c for _, c in plan]
        series = chained_series(ratios, longs)
        literal = simulate(series, StrategyConfig(cost=0.003, mode="paper_literal"))
        standard = simulate(series, StrategyConfig(cost=0.003))
        assert (
            literal.cumulative_return_pct
            >= standard.cumulative_return_pct - 1e-12
        )
        flat_gross = [
            g for g, p in zip(standard.gross_log, standard.positions) if p == "flat"
        ]
        assert all(g == 0.0 for g in flat_gross)

    def test_perfect_foresight_beats_buy_and_hold(self):
        rng = rng_stream(4, "foresight")
        ratios = np.exp(rng.normal(0, 0.02, 50))
        assert (ratios < 1.0).any()
        anchors, trues = [], []
        price = 100.0
        for ratio in ratios:
            anchors.append(price)
            price = price * ratio
            trues.append(price)
        series = ForecastSeries(
            dates=weekday_dates(50),
            y_hat=trues,
            y_true=trues,
            anchor_close=anchors,
            model="oracle",
        )
        ledger = simulate(series, StrategyConfig(cost=0.0))
        buy_hold = (trues[-1] / anchors[0] - 1.0) * 100.0
        assert ledger.cumulative_return_pct > buy_hold


class TestSharpe:
    def test_alternating_returns_have_zero_mean(self):
        r = 0.02
        ratios = [math.exp(r), math.exp(-r)] * 5
        ledger = simulate(chained_series(ratios, [True] * 10), StrategyConfig(cost=0.0))
        assert abs(sharpe(ledger)) < 1e-10

    def test_constant_return_is_undefined(self):
        # power-of-two ratios divide exactly, so every day books the
        # bit-identical log return and the std is exactly zero
        ledger = simulate(
            chained_series([2.0] * 4, [True] * 4, start=1.0), StrategyConfig(cost=0.0)
        )
        assert sharpe(ledger) is None
        summary = ledger.summary()
        assert summary["sharpe"] is None
        assert summary["sharpe_undefined"] is True

    def test_monte_carlo_matches_theory(self):
        mu, sigma, n = 0.004, 0.01, 2520
        draws = rng_stream(11, "mc").normal(mu, sigma, n)
        series = chained_series(list(np.exp(draws)), [True] * n)
        ledger = simulate(series, StrategyConfig(cost=0.0))
        theory = mu / sigma * math.sqrt(252)
        assert sharpe(ledger) == pytest.approx(theory, rel=0.1)

    def test_single_day_rejected(self):
        ledger = simulate(chained_series([1.01], [True]))
        with pytest.raises(ValidationError, match="at least 2"):
            sharpe(ledger)


class TestHv:
    def test_two_return_hand_value(self):
        closes = [100.0, 100.0 * math.exp(0.01), 100.0]
        want = math.sqrt(2 * 0.01**2 / 1) * math.sqrt(252) * 100.0
        assert hv(closes) == pytest.approx(want, rel=1e-9)

    def test_constant_growth_is_near_zero(self):
        # log(4)-log(2) and log(2) round separately, so allow libm jitter
        assert hv([1.0, 2.0, 4.0, 8.0]) == pytest.approx(0.0, abs=1e-10)

    def test_scale_invariance(self):
        closes = [100.0, 103.0, 97.0, 101.0]
        scaled = [7.0 * c for c in closes]
        assert hv(scaled) == pytest.approx(hv(closes), rel=1e-9)

    def test_validation(self):
        with pytest.raises(ValidationError, match="at least 3"):
            hv([100.0, 101.0])
        with pytest.raises(ValidationError, match="positive"):
            hv([100.0, -1.0, 101.0])
        with pytest.raises(ValidationError, match="finite"):
            hv([100.0, float("nan"), 101.0])


class TestArtifacts:
    def test_ledger_csv_round_trip(self, tmp_path):
        ratios = [1.02, 0.99, 1.01, 1.03, 0.98]
        longs = [True, True, False, True, True]
        ledger = simulate(chained_series(ratios, longs), StrategyConfig(cost=0.003))
        path = tmp_path / "ledger.csv"
        write_ledger_csv(path, ledger)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 5
        assert [r["position"] for r in rows] == ledger.positions
        assert float(rows[-1]["cumulative_pct"]) == pytest.approx(
            ledger.cumulative_return_pct, rel=1e-12
        )
        net = [float(r["net_log"]) for r in rows]
        np.testing.assert_array_equal(net, ledger.net_log)

    def test_summary_fields(self):
        ratios = [1.02, 0.99, 1.01, 1.03, 0.98]
        longs = [True, True, False, True, True]
        ledger = simulate(chained_series(ratios, longs), StrategyConfig(cost=0.003))
        summary = ledger.summary()
        assert summary["mode"] == "standard"
        assert summary["cost"] == 0.003
        assert summary["n_days"] == 5
        assert summary["n_trades"] == 2
        assert summary["cumulative_return_pct"] == ledger.cumulative_return_pct
        assert isinstance(summary["sharpe"], float)
        assert summary["sharpe_undefined"] is False
        assert summary["hv_pct"] == pytest.approx(hv(ledger.closes), rel=1e-12)
