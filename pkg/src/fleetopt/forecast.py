"""Series statistics, complexity-based model selection, and forecasters.

The rightsizing pipeline uses this module in three steps: summarize a
utilization window (:func:`compute_stats`), pick a forecaster by series
complexity (:func:`select_model`), and project the series over the horizon
(:func:`forecast`). Three forecaster kinds cover the stationary/seasonal/
drifting cases:

* ``constant`` — repeat the last value (degenerate series);
* ``seasonal_trend`` — additive decomposition: least-squares linear trend
  plus the mean seasonal profile at the detected lag, projected forward;
* ``autoregressive`` — AR(p), p <= 3, fitted by least squares on the
  differenced series and integrated back (an ARIMA(p,1,0) role).

The same nearest-rank percentile routine is used for historical and forecast
P95 so the two are directly comparable.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from .errors import EmptySeries, SeriesTooShort

KIND_CONSTANT = "constant"
KIND_SEASONAL = "seasonal_trend"
KIND_AUTOREGRESSIVE = "autoregressive"

DEFAULT_HORIZON = timedelta(days=7)
DEFAULT_PERIOD = timedelta(minutes=5)

# Decision thresholds for select_model. The variance floor is meant for
# series normalized to their allocation; the entropy gate and seasonal
# autocorrelation gate are scale-free.
VARIANCE_FLOOR = 1e-6
ENTROPY_THRESHOLD = 0.5
SEASONAL_ACF_THRESHOLD = 0.5
ENTROPY_MAX_SAMPLES = 512

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class SeriesStats:
    """Window summary: nearest-rank P95, extrema, mean, population variance,
    and slack (allocated minus P95)."""

    p95: float
    min: float
    max: float
    mean: float
    variance: float
    slack: float
    sample_count: int
    allocated: float

    def to_doc(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_doc(cls, doc: dict) -> "SeriesStats":
        return cls(**doc)


@dataclass(frozen=True)
class ModelChoice:
    kind: str
    entropy: float
    variance: float
    rationale: str
    season_lag: int | None = None

    def to_doc(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_doc(cls, doc: dict) -> "ModelChoice":
        return cls(**doc)


@dataclass(frozen=True)
class Forecast:
    horizon: timedelta
    values: tuple[tuple[datetime, float], ...]
    model: ModelChoice
    p95_forecast: float


def percentile_nearest_rank(values, q: float = 0.95) -> float:
    """Nearest-rank percentile: the value at sorted index ceil(q*n) - 1."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise EmptySeries("percentile of an empty series")
    rank = math.ceil(q * arr.size) - 1
    return float(np.sort(arr)[max(rank, 0)])


def compute_stats(series, allocated: float) -> SeriesStats:
    """Summarize a series against its allocated capacity.

    ``allocated`` must be positive and share the series' unit; slack is
    allocated - P95.
    """
    arr = np.asarray(series, dtype=float)
    if arr.size == 0:
        raise EmptySeries("compute_stats over an empty series")
    if allocated <= 0:
        raise ValueError(f"allocated must be positive, got {allocated}")
    p95 = percentile_nearest_rank(arr, 0.95)
    return SeriesStats(
        p95=p95,
        min=float(arr.min()),
        max=float(arr.max()),
        mean=float(arr.mean()),
        variance=float(arr.var()),
        slack=allocated - p95,
        sample_count=int(arr.size),
        allocated=float(allocated),
    )


# -- sample entropy -----------------------------------------------------------

def sample_entropy(series, m: int = 2, r: float | None = None) -> float:
    """SampEn(m, r): -ln(A/B) over Chebyshev template matches.

    B counts matched pairs of m-length templates, A of (m+1)-length
    templates; pairs are unordered and self-matches are excluded. ``r``
    defaults to 0.2 x the population standard deviation; a zero-variance
    series returns 0 directly. When A = 0 the value is capped at
    ln(B*(B-1)) (and, if B <= 1, at ln(P*(P-1)) over the P possible
    (m+1)-templates) instead of returning infinity.
    """
    arr = np.asarray(series, dtype=float)
    n = arr.size
    if n < m + 2:
        raise SeriesTooShort(f"sample entropy needs at least {m + 2} samples, got {n}")
    std = float(arr.std())
    if r is None:
        if std == 0.0:
            return 0.0
        r = 0.2 * std
    if r <= 0:
        raise ValueError(f"tolerance r must be positive, got {r}")
    b = _template_match_pairs(arr, m, r)
    a = _template_match_pairs(arr, m + 1, r)
    if a > 0 and b > 0:
        return float(-math.log(a / b))
    if b > 1:
        return float(math.log(b * (b - 1)))
    p = n - m  # number of (m+1)-length templates
    if p > 1:
        return float(math.log(p * (p - 1)))
    return 0.0


def _template_match_pairs(arr: np.ndarray, m: int, r: float) -> int:
    """Count unordered template pairs (i < j) whose Chebyshev distance <= r."""
    count = arr.size - m + 1
    if count < 2:
        return 0
    emb = np.lib.stride_tricks.sliding_window_view(arr, m)
    total = 0
    block = max(1, 4_000_000 // (count * m))
    cols = np.arange(count)
    for start in range(0, count, block):
        rows = emb[start : start + block]
        dist = np.max(np.abs(rows[:, None, :] - emb[None, :, :]), axis=2)
        upper = cols[None, :] > np.arange(start, start + rows.shape[0])[:, None]
        total += int(np.count_nonzero((dist <= r) & upper))
    return total


def autocorrelation(series, lag: int) -> float:
    """Sample autocorrelation at ``lag`` (0 when the series is constant)."""
    arr = np.asarray(series, dtype=float)
    if lag <= 0 or lag >= arr.size:
        raise ValueError(f"lag must be in (0, n), got {lag} for n={arr.size}")
    centered = arr - arr.mean()
    denom = float(np.dot(centered, centered))
    if denom == 0.0:
        return 0.0
    num = float(np.dot(centered[:-lag], centered[lag:]))
    return num / denom


# -- model selection ----------------------------------------------------------

def seasonal_lag_candidates(n: int, period: timedelta) -> list[int]:
    """Daily and weekly lags, in samples, that fit at least twice into n."""
    day = int(round(timedelta(days=1) / period))
    out = []
    for lag in (day, 7 * day):
        if lag >= 2 and 2 * lag <= n:
            out.append(lag)
    return out


def select_model(
    series,
    period: timedelta = DEFAULT_PERIOD,
    variance_floor: float = VARIANCE_FLOOR,
    entropy_threshold: float = ENTROPY_THRESHOLD,
    acf_threshold: float = SEASONAL_ACF_THRESHOLD,
    entropy_max_samples: int = ENTROPY_MAX_SAMPLES,
) -> ModelChoice:
    """Pick a forecaster from series complexity measures.

    Decision rule: variance below the floor -> constant. Otherwise, if some
    daily/weekly lag is a *dominant* seasonal lag — its autocorrelation is
    at least ``acf_threshold`` and strictly exceeds the autocorrelation at
    its half-lag (which rules out the smoothly decaying ACF of drifting
    series) — and the sample entropy is at most ``entropy_threshold``,
    choose the seasonal-trend forecaster at that lag; otherwise the
    autoregressive one. The variance floor is calibrated for series
    normalized to their allocation.

    Entropy is estimated on the most recent ``entropy_max_samples`` points
    to keep fleet-scale selection O(1) per resource; the rationale string
    names every measure that drove the choice and the kind not chosen.
    """
    arr = np.asarray(series, dtype=float)
    n = arr.size
    if n < 16:
        raise SeriesTooShort(f"select_model needs at least 16 samples, got {n}")
    variance = float(arr.var())
    if variance < variance_floor:
        return ModelChoice(
            kind=KIND_CONSTANT,
            entropy=0.0,
            variance=variance,
            rationale=(
                f"variance {variance:.6g} below floor {variance_floor:.6g}; "
                "constant selected (forecast alternatives not exercised)"
            ),
        )
    tail = arr[-entropy_max_samples:]
    entropy = sample_entropy(tail)
    candidates = seasonal_lag_candidates(n, period)
    best_lag: int | None = None
    best_acf = 0.0
    acf_notes = []
    for lag in candidates:
        acf = autocorrelation(arr, lag)
        half = autocorrelation(arr, max(1, lag // 2))
        acf_notes.append(f"acf@{lag}={acf:.4f}")
        if acf >= acf_threshold and acf > half and acf > best_acf:
            best_lag, best_acf = lag, acf
    acf_summary = ", ".join(acf_notes) if acf_notes else "no seasonal lag fits the window"
    if best_lag is not None and entropy <= entropy_threshold:
        return ModelChoice(
            kind=KIND_SEASONAL,
            entropy=entropy,
            variance=variance,
            season_lag=best_lag,
            rationale=(
                f"dominant seasonal lag {best_lag} ({acf_summary}); "
                f"sample entropy {entropy:.4f} <= {entropy_threshold:g}; "
                "seasonal-trend selected over autoregressive"
            ),
        )
    if best_lag is not None:
        why = (
            f"dominant seasonal lag {best_lag} present but sample entropy "
            f"{entropy:.4f} > {entropy_threshold:g}"
        )
    else:
        why = f"no dominant seasonal lag ({acf_summary}); sample entropy {entropy:.4f}"
    return ModelChoice(
        kind=KIND_AUTOREGRESSIVE,
        entropy=entropy,
        variance=variance,
        rationale=f"{why}; autoregressive selected over seasonal-trend",
    )


# -- forecasters --------------------------------------------------------------

def forecast(
    series,
    model: ModelChoice,
    horizon: timedelta = DEFAULT_HORIZON,
    period: timedelta = DEFAULT_PERIOD,
    start: datetime | None = None,
) -> Forecast:
    """Project ``series`` over ``horizon`` at ``period`` with the chosen model.

    ``start`` anchors the forecast timestamps (the time of the last observed
    sample); values land at start + k*period for k = 1..horizon/period.
    An unstable or singular autoregressive fit falls back to the constant
    forecaster and says so in the rationale.
    """
    arr = np.asarray(series, dtype=float)
    if arr.size == 0:
        raise EmptySeries("forecast over an empty series")
    steps_f = horizon / period
    steps = int(round(steps_f))
    if steps < 1 or abs(steps_f - steps) > 1e-9:
        raise ValueError(f"horizon {horizon} is not a positive multiple of period {period}")
    if start is None:
        start = _EPOCH

    used_model = model
    if model.kind == KIND_CONSTANT:
        values = np.full(steps, arr[-1])
    elif model.kind == KIND_SEASONAL:
        values = _seasonal_trend_forecast(arr, model.season_lag, steps, period)
        if values is None:
            values = np.full(steps, arr[-1])
            used_model = _flag_fallback(model, "no usable seasonal lag")
    elif model.kind == KIND_AUTOREGRESSIVE:
        values = _autoregressive_forecast(arr, steps)
        if values is None:
            values = np.full(steps, arr[-1])
            used_model = _flag_fallback(model, "singular or unstable fit")
    else:
        raise ValueError(f"unknown model kind {model.kind!r}")

    stamps = tuple(
        (start + period * (k + 1), float(values[k])) for k in range(steps)
    )
    return Forecast(
        horizon=horizon,
        values=stamps,
        model=used_model,
        p95_forecast=percentile_nearest_rank(values, 0.95),
    )


def _flag_fallback(model: ModelChoice, why: str) -> ModelChoice:
    return dataclasses.replace(
        model, rationale=f"{model.rationale}; fell back to constant forecaster ({why})"
    )


def _linear_trend(arr: np.ndarray) -> tuple[float, float]:
    """Closed-form least-squares line fit; returns (intercept, slope).

    Closed form keeps the fit exactly linear in the data, which the scale
    equivariance of forecasts relies on.
    """
    n = arr.size
    idx = np.arange(n, dtype=float)
    idx_mean = idx.mean()
    y_mean = arr.mean()
    denom = float(np.dot(idx - idx_mean, idx - idx_mean))
    if denom == 0.0:
        return float(y_mean), 0.0
    slope = float(np.dot(idx - idx_mean, arr - y_mean)) / denom
    return float(y_mean - slope * idx_mean), slope


def _seasonal_trend_forecast(
    arr: np.ndarray, lag: int | None, steps: int, period: timedelta
) -> np.ndarray | None:
    n = arr.size
    if lag is None:
        candidates = seasonal_lag_candidates(n, period)
        lag = candidates[0] if candidates else None
    if lag is None or lag < 2 or 2 * lag > n:
        return None
    intercept, slope = _linear_trend(arr)
    detrended = arr - (intercept + slope * np.arange(n))
    profile = np.zeros(lag)
    phases = np.arange(n) % lag
    for j in range(lag):
        bucket = detrended[phases == j]
        profile[j] = bucket.mean() if bucket.size else 0.0
    future = np.arange(n, n + steps)
    return intercept + slope * future + profile[future % lag]


def _autoregressive_forecast(arr: np.ndarray, steps: int) -> np.ndarray | None:
    """AR(p) on the differenced series, p in {1,2,3} by in-sample MSE on the
    common rows, integrated back. Returns None when the fit is unusable.

    No constant term: with one order of differencing a fitted intercept
    compounds into a spurious linear drift over long horizons (matching the
    usual no-constant convention for once-differenced AR models). A
    noiseless ramp still extrapolates exactly, via a unit root on the
    constant differences.
    """
    diff = np.diff(arr)
    n = diff.size
    p_max = 3
    if n < p_max + 2:
        return None
    target = diff[p_max:]
    best: tuple[float, np.ndarray, int] | None = None
    for p in (1, 2, 3):
        design = np.column_stack([diff[p_max - k : n - k] for k in range(1, p + 1)])
        try:
            coef, *_ = np.linalg.lstsq(design, target, rcond=None)
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(coef)):
            continue
        mse = float(np.mean((design @ coef - target) ** 2))
        if best is None or mse < best[0] - 1e-15:
            best = (mse, coef, p)
    if best is None:
        return None
    _, coef, p = best
    history = list(diff[-p:])
    future_diffs = np.empty(steps)
    for s in range(steps):
        nxt = sum(coef[k - 1] * history[-k] for k in range(1, p + 1))
        future_diffs[s] = nxt
        history.append(nxt)
    values = arr[-1] + np.cumsum(future_diffs)
    bound = 1e6 * (1.0 + float(np.max(np.abs(arr))))
    if not np.all(np.isfinite(values)) or np.max(np.abs(values)) > bound:
        return None
    return values
