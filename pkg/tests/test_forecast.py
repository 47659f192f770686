import math
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from fleetopt.errors import EmptySeries, SeriesTooShort
from fleetopt.forecast import (
    Forecast,
    KIND_AUTOREGRESSIVE,
    KIND_CONSTANT,
    KIND_SEASONAL,
    ModelChoice,
    autocorrelation,
    compute_stats,
    forecast,
    percentile_nearest_rank,
    sample_entropy,
    select_model,
)

from conftest import ou_series

FIVE_MIN = timedelta(minutes=5)
DAY_LAG = 288


# -- independent oracles -------------------------------------------------------

def p95_sort_index_oracle(values):
    ordered = sorted(values)
    return ordered[math.ceil(0.95 * len(ordered)) - 1]


def sampen_bruteforce(series, m=2, r=None):
    """O(n^2) loop implementation, no vectorization: the reference the
    optimized version must match exactly."""
    x = [float(v) for v in series]
    n = len(x)
    std = float(np.std(x))
    if r is None:
        if std == 0.0:
            return 0.0
        r = 0.2 * std

    def count_pairs(length):
        templates = [x[i : i + length] for i in range(n - length + 1)]
        total = 0
        for i in range(len(templates)):
            for j in range(i + 1, len(templates)):
                dist = max(abs(a - b) for a, b in zip(templates[i], templates[j]))
                if dist <= r:
                    total += 1
        return total

    b = count_pairs(m)
    a = count_pairs(m + 1)
    if a > 0 and b > 0:
        return -math.log(a / b)
    if b > 1:
        return math.log(b * (b - 1))
    p = n - m
    return math.log(p * (p - 1)) if p > 1 else 0.0


def acf_oracle(series, lag):
    x = np.asarray(series, dtype=float)
    mu = x.mean()
    num = sum((x[t] - mu) * (x[t + lag] - mu) for t in range(len(x) - lag))
    den = sum((v - mu) ** 2 for v in x)
    return num / den if den else 0.0


# -- percentile ------------------------------------------------------------------

def test_p95_constant_series():
    assert percentile_nearest_rank([5.0] * 100) == 5.0


def test_p95_1_to_100_matches_sort_index_oracle():
    series = list(range(1, 101))
    assert percentile_nearest_rank(series) == 95
    assert percentile_nearest_rank(series) == p95_sort_index_oracle(series)


def test_p95_matches_oracle_on_seeded_series():
    rng = np.random.default_rng(3)
    for n in (1, 2, 7, 19, 20, 100, 313):
        series = rng.uniform(0, 10, n)
        assert percentile_nearest_rank(series) == p95_sort_index_oracle(series)


def test_percentile_empty():
    with pytest.raises(EmptySeries):
        percentile_nearest_rank([])


# -- compute_stats ----------------------------------------------------------------

def test_stats_constant_series():
    stats = compute_stats([5.0] * 100, allocated=10.0)
    assert stats.p95 == 5.0
    assert stats.slack == 5.0
    assert stats.variance == 0.0
    assert stats.min == stats.max == stats.mean == 5.0
    assert stats.sample_count == 100


def test_stats_1_to_100():
    stats = compute_stats(list(range(1, 101)), allocated=100.0)
    assert stats.p95 == 95
    assert stats.slack == 5
    assert stats.min <= stats.mean <= stats.max


def test_stats_eight_core_vm_at_1_4_percent():
    # 8 cores at a constant 1.4% utilization
    series = [8 * 0.014] * 50
    stats = compute_stats(series, allocated=8.0)
    assert stats.mean == pytest.approx(0.112)


def test_stats_empty_series():
    with pytest.raises(EmptySeries):
        compute_stats([], allocated=1.0)
    with pytest.raises(ValueError):
        compute_stats([1.0], allocated=0.0)


# -- sample entropy ----------------------------------------------------------------

def test_sampen_constant_is_zero():
    assert sample_entropy([3.3] * 40) == 0.0


def test_sampen_periodic_matches_bruteforce_and_is_low():
    series = [1.0, 2.0] * 25  # n = 50
    ours = sample_entropy(series)
    oracle = sampen_bruteforce(series)
    assert ours == oracle
    assert ours < 0.05


def test_sampen_noise_exceeds_sine():
    rng = np.random.default_rng(11)
    noise = rng.uniform(0, 1, 200)
    sine = np.sin(np.linspace(0, 8 * np.pi, 200))
    assert sample_entropy(noise) > sample_entropy(sine)
    assert sample_entropy(noise) == sampen_bruteforce(noise)
    assert sample_entropy(sine) == sampen_bruteforce(sine)


def test_sampen_matches_bruteforce_on_varied_series():
    rng = np.random.default_rng(99)
    cases = [
        rng.normal(0, 1, 60),
        np.cumsum(rng.normal(0, 1, 80)),
        np.sin(np.linspace(0, 12, 90)) + 0.1 * rng.normal(0, 1, 90),
        np.repeat(rng.uniform(0, 1, 10), 5),
    ]
    for series in cases:
        assert sample_entropy(series) == sampen_bruteforce(series)


def test_sampen_too_short():
    with pytest.raises(SeriesTooShort):
        sample_entropy([1.0, 2.0, 3.0], m=2)


def test_sampen_explicit_tolerance():
    series = [0.0, 10.0] * 20
    assert sample_entropy(series, r=0.5) == sampen_bruteforce(series, r=0.5)


# -- autocorrelation ---------------------------------------------------------------

def test_acf_matches_oracle():
    rng = np.random.default_rng(5)
    series = np.cumsum(rng.normal(0, 1, 400))
    for lag in (1, 7, 50, 144):
        assert autocorrelation(series, lag) == pytest.approx(acf_oracle(series, lag))


def test_acf_of_sine_at_its_period():
    # the biased estimator tapers by (1 - lag/n), so expect ~0.857, not 1
    t = np.arange(2016)
    sine = np.sin(2 * np.pi * t / DAY_LAG)
    assert autocorrelation(sine, DAY_LAG) == pytest.approx(1 - DAY_LAG / 2016, abs=0.01)
    assert autocorrelation(sine, DAY_LAG // 2) < -0.8


# -- model selection ----------------------------------------------------------------

def test_select_constant():
    choice = select_model([0.5] * 100)
    assert choice.kind == KIND_CONSTANT
    assert "variance" in choice.rationale


def test_select_seasonal_for_daily_sine():
    t = np.arange(7 * DAY_LAG)
    series = 0.5 + 0.2 * np.sin(2 * np.pi * t / DAY_LAG)
    choice = select_model(series)
    assert choice.kind == KIND_SEASONAL
    assert choice.season_lag == DAY_LAG
    # the decision's autocorrelation gate agrees with the oracle
    assert acf_oracle(series, DAY_LAG) >= 0.5


def test_select_autoregressive_for_random_walk():
    rng = np.random.default_rng(21)
    series = 10.0 + np.cumsum(rng.normal(0, 0.05, 7 * DAY_LAG))
    choice = select_model(series)
    assert choice.kind == KIND_AUTOREGRESSIVE
    # no dominant seasonal lag: the walk's ACF decays smoothly, so the
    # half-lag ACF dominates the seasonal-lag ACF
    assert acf_oracle(series, DAY_LAG // 2) > acf_oracle(series, DAY_LAG)


def test_select_autoregressive_for_mean_reverting_noise():
    series = ou_series(2016, mean=0.3, seed=4)
    assert select_model(series).kind == KIND_AUTOREGRESSIVE


def test_select_model_deterministic():
    series = ou_series(600, mean=1.0, seed=8)
    a = select_model(series)
    b = select_model(series)
    assert a == b
    assert a.rationale == b.rationale


def test_select_model_too_short():
    with pytest.raises(SeriesTooShort):
        select_model([1.0] * 15)


# -- forecasting --------------------------------------------------------------------

def test_constant_forecast_repeats_last_value():
    choice = select_model([5.0] * 100)
    fc = forecast([5.0] * 100, choice, horizon=timedelta(hours=1), period=FIVE_MIN)
    assert len(fc.values) == 12
    assert all(v == 5.0 for _, v in fc.values)
    assert fc.p95_forecast == 5.0


def test_forecast_covers_horizon_exactly():
    start = datetime(2025, 1, 1, tzinfo=timezone.utc)
    choice = ModelChoice(kind=KIND_CONSTANT, entropy=0.0, variance=0.0, rationale="r")
    fc = forecast([1.0] * 20, choice, horizon=timedelta(days=7), period=FIVE_MIN, start=start)
    assert len(fc.values) == 7 * DAY_LAG
    assert fc.values[0][0] == start + FIVE_MIN
    assert fc.values[-1][0] == start + timedelta(days=7)


def test_ar_forecast_tracks_linear_ramp():
    # closed-form oracle: the ramp extrapolates to last + slope * steps
    slope = 0.01
    series = 2.0 + slope * np.arange(2016)
    choice = select_model(series)
    assert choice.kind == KIND_AUTOREGRESSIVE
    fc = forecast(series, choice, horizon=timedelta(days=7), period=FIVE_MIN)
    steps = 7 * DAY_LAG
    expected_end = series[-1] + slope * steps
    assert fc.values[-1][1] == pytest.approx(expected_end, rel=0.10)
    expected_mean = series[-1] + slope * (steps + 1) / 2
    mean_pred = np.mean([v for _, v in fc.values])
    assert mean_pred == pytest.approx(expected_mean, rel=0.10)


def test_seasonal_forecast_beats_naive_on_sine():
    t = np.arange(10 * DAY_LAG)
    full = 1.0 + 0.4 * np.sin(2 * np.pi * t / DAY_LAG)
    train, held_out = full[: 7 * DAY_LAG], full[7 * DAY_LAG :]
    choice = select_model(train)
    assert choice.kind == KIND_SEASONAL
    fc = forecast(train, choice, horizon=timedelta(days=3), period=FIVE_MIN)
    predicted = np.array([v for _, v in fc.values])
    naive = np.full_like(held_out, train[-1])
    mae_model = np.abs(predicted - held_out).mean()
    mae_naive = np.abs(naive - held_out).mean()
    assert mae_model < mae_naive


def test_scale_equivariance_of_forecasts():
    rng = np.random.default_rng(17)
    base_ar = np.cumsum(rng.normal(0, 0.1, 2016)) + 5.0
    t = np.arange(7 * DAY_LAG)
    base_seasonal = 1.0 + 0.3 * np.sin(2 * np.pi * t / DAY_LAG) + 0.01 * rng.normal(size=t.size)
    base_const = np.full(100, 3.0)
    for base in (base_ar, base_seasonal, base_const):
        choice = select_model(base)
        fc1 = forecast(base, choice, horizon=timedelta(days=1), period=FIVE_MIN)
        for c in (2.0, 17.5, 0.125):
            scaled_choice = select_model(c * base)
            assert scaled_choice.kind == choice.kind
            fc2 = forecast(c * base, scaled_choice, horizon=timedelta(days=1), period=FIVE_MIN)
            v1 = np.array([v for _, v in fc1.values])
            v2 = np.array([v for _, v in fc2.values])
            np.testing.assert_allclose(v2, c * v1, rtol=1e-9)


def test_p95_forecast_uses_shared_percentile_rule():
    series = ou_series(600, mean=2.0, seed=12)
    choice = select_model(series)
    fc = forecast(series, choice, horizon=timedelta(hours=6), period=FIVE_MIN)
    values = [v for _, v in fc.values]
    assert fc.p95_forecast == percentile_nearest_rank(values)


def test_unstable_fit_falls_back_to_constant():
    # alternating huge swings make the differenced fit explosive
    series = np.array([0.0, 1e6] * 10)
    choice = ModelChoice(
        kind=KIND_AUTOREGRESSIVE, entropy=1.0, variance=1.0, rationale="forced"
    )
    fc = forecast(series, choice, horizon=timedelta(hours=1), period=FIVE_MIN)
    if "fell back to constant" in fc.model.rationale:
        assert all(v == series[-1] for _, v in fc.values)
    else:
        assert all(np.isfinite(v) for _, v in fc.values)


def test_forecast_bad_horizon():
    choice = ModelChoice(kind=KIND_CONSTANT, entropy=0.0, variance=0.0, rationale="r")
    with pytest.raises(ValueError):
        forecast([1.0] * 20, choice, horizon=timedelta(minutes=7), period=FIVE_MIN)
