"""Numerical operators: transforms, autocorrelation, decomposition, features,
spike detection, hypothesis tests, thresholding and Granger causality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .core import BinVec, Frame, IntVec, TestResult, TimeSeries
from .errors import (
    BothOrNeitherGiven,
    ConstantSeries,
    DomainError,
    DuplicateColumn,
    EmptyAfterDiff,
    InvalidValue,
    LagTooLarge,
    LengthMismatch,
    MissingSecondSeries,
    SeriesTooShort,
    SingularRegression,
    WindowTooLarge,
)

ALPHA = 0.05
MAD_SCALE = 1.4826
# mean absolute deviation -> sigma for a gaussian, sqrt(pi/2)
MEANAD_SCALE = 1.2533141373155


def _vals(data) -> np.ndarray:
    return data.values if isinstance(data, TimeSeries) else np.asarray(data, dtype=float)


def _is_constant(x: np.ndarray) -> bool:
    return x.size == 0 or float(np.ptp(x)) <= 1e-12 * max(1.0, float(np.max(np.abs(x))))


# ---------------------------------------------------------------- apply / concat


@dataclass(frozen=True)
class FnSpec:
    kind: str  # log | diff | zscore | abs | scale | clip
    c: float | None = None
    lo: float | None = None
    hi: float | None = None

    KINDS = ("log", "diff", "zscore", "abs", "scale", "clip")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InvalidValue(f"unknown function {self.kind!r}; choose from {', '.join(self.KINDS)}")
        if self.kind == "scale" and (self.c is None or not math.isfinite(self.c)):
            raise InvalidValue("scale needs a finite constant c")
        if self.kind == "clip":
            if self.lo is None or self.hi is None or self.lo > self.hi:
                raise InvalidValue("clip needs lo <= hi")


def apply(data: TimeSeries, fn: FnSpec) -> TimeSeries:
    x = data.values
    if fn.kind == "log":
        if np.any(x <= 0):
            raise DomainError("log requires strictly positive values")
        out = np.log(x)
    elif fn.kind == "diff":
        if x.size < 2:
            raise EmptyAfterDiff("differencing a length-1 series leaves nothing")
        return TimeSeries(np.diff(x), data.start + data.step, data.step, data.name)
    elif fn.kind == "zscore":
        if _is_constant(x):
            raise ConstantSeries("zscore of a constant series is undefined")
        out = (x - x.mean()) / x.std(ddof=1)
    elif fn.kind == "abs":
        out = np.abs(x)
    elif fn.kind == "scale":
        out = x * fn.c
    else:
        out = np.clip(x, fn.lo, fn.hi)
    return data.with_values(out)


def concat(a: TimeSeries | Frame, b: TimeSeries | Frame) -> Frame:
    cols_a = a.columns if isinstance(a, Frame) else (a,)
    cols_b = b.columns if isinstance(b, Frame) else (b,)
    if len(cols_a[0]) != len(cols_b[0]):
        raise LengthMismatch(f"cannot concatenate lengths {len(cols_a[0])} and {len(cols_b[0])}")
    names_a = {c.name for c in cols_a}
    dup = [c.name for c in cols_b if c.name in names_a]
    if dup:
        raise DuplicateColumn(f"column(s) {dup} present on both sides")
    start, step = cols_a[0].start, cols_a[0].step
    # right-hand columns are re-indexed onto the left-hand timestamps
    return Frame(tuple(cols_a) + tuple(TimeSeries(c.values, start, step, c.name) for c in cols_b))


# ---------------------------------------------------------------- correlation


def acf(data: TimeSeries, max_lag: int) -> np.ndarray:
    x = _vals(data)
    n = x.size
    if max_lag < 0 or max_lag >= n:
        raise LagTooLarge(f"max_lag {max_lag} must be in [0, {n - 1}]")
    if _is_constant(x):
        raise ConstantSeries("autocorrelation of a constant series is undefined")
    d = x - x.mean()
    denom = float(d @ d)
    return np.array([1.0] + [float(d[k:] @ d[:n - k]) / denom for k in range(1, max_lag + 1)])


def max_corr_lag(x: TimeSeries, y: TimeSeries, max_lag: int) -> int:
    """Lag k in [0, max_lag] maximizing |corr(x[t-k], y[t])|; smallest k wins ties."""
    a, b = _vals(x), _vals(y)
    n = a.size
    if b.size != n:
        raise LengthMismatch("x and y must have equal length")
    if max_lag < 0 or max_lag >= n / 2:
        raise LagTooLarge(f"max_lag must be below n/2 = {n / 2}")
    if _is_constant(a) or _is_constant(b):
        raise ConstantSeries("correlation with a constant series is undefined")
    best_k, best = 0, -1.0
    for k in range(max_lag + 1):
        xa, yb = a[: n - k], b[k:]
        if _is_constant(xa) or _is_constant(yb):
            continue
        r = abs(float(np.corrcoef(xa, yb)[0, 1]))
        if r > best + 1e-12:
            best_k, best = k, r
    return best_k


# ---------------------------------------------------------------- decomposition


@dataclass(frozen=True)
class DecompResult:
    trend: TimeSeries
    seasonal: TimeSeries
    residual: TimeSeries

    def as_frame(self) -> Frame:
        return Frame((self.trend.with_values(self.trend.values, "trend"),
                      self.seasonal.with_values(self.seasonal.values, "seasonal"),
                      self.residual.with_values(self.residual.values, "residual")))


def _centered_ma(x: np.ndarray, period: int) -> np.ndarray:
    n = x.size
    if period % 2:
        w = np.ones(period) / period
    else:
        # 2 x period moving average keeps the window centred
        w = np.r_[0.5, np.ones(period - 1), 0.5] / period
    half = (w.size - 1) // 2
    valid = np.convolve(x, w, mode="valid")
    trend = np.empty(n)
    trend[half:half + valid.size] = valid
    trend[:half] = valid[0]
    trend[half + valid.size:] = valid[-1]
    return trend


def decompose(data: TimeSeries, period: int) -> DecompResult:
    """Classical additive decomposition with a centred moving-average trend."""
    x = data.values
    n = x.size
    if period < 2:
        raise InvalidValue("period must be at least 2")
    if n < 2 * period:
        raise SeriesTooShort(f"need at least {2 * period} points for period {period}, got {n}")
    trend = _centered_ma(x, period)
    detrended = x - trend
    phase = np.arange(n) % period
    means = np.array([detrended[phase == k].mean() for k in range(period)])
    means -= means.mean()
    seasonal = means[phase]
    residual = x - trend - seasonal
    return DecompResult(data.with_values(trend, "trend"),
                        data.with_values(seasonal, "seasonal"),
                        data.with_values(residual, "residual"))


# ---------------------------------------------------------------- features


def _ols_line(x: np.ndarray) -> tuple[float, float]:
    t = np.arange(x.size, dtype=float)
    slope, intercept = np.polyfit(t, x, 1)
    return float(slope), float(intercept)


def trend_slope(data) -> float:
    return _ols_line(_vals(data))[0]


def amplitude(data) -> float:
    x = _vals(data)
    slope, icpt = _ols_line(x)
    r = x - (icpt + slope * np.arange(x.size))
    return float((r.max() - r.min()) / 2)


def dominant_period(data) -> int:
    """Period with the largest periodogram power among periods in [2, n/2]."""
    x = _vals(data)
    n = x.size
    slope, icpt = _ols_line(x)
    r = x - (icpt + slope * np.arange(n))
    if _is_constant(r):
        raise ConstantSeries("no periodic component in a (detrended) constant series")
    power = np.abs(np.fft.rfft(r)) ** 2
    # frequency index k <-> period n/k; keep 2 <= n/k <= n/2
    ks = np.arange(2, n // 2 + 1)
    ks = ks[ks < power.size]
    k = int(ks[np.argmax(power[ks])])
    return int(round(n / k))


def sliding_variance(data: TimeSeries, window: int) -> TimeSeries:
    x = data.values
    if window < 1 or window > x.size:
        raise WindowTooLarge(f"window {window} must be in [1, {x.size}]")
    view = np.lib.stride_tricks.sliding_window_view(x, window)
    out = view.var(axis=1)
    return TimeSeries(out, data.start + (window - 1) * data.step, data.step, f"{data.name}_var")


def volatility(data: TimeSeries, window: int) -> TimeSeries:
    x = data.values
    prev = x[:-1]
    if np.any(np.abs(prev) < 1e-12):
        raise DomainError("relative changes undefined where the series is zero")
    rel = np.diff(x) / np.abs(prev)
    if window < 2 or window > rel.size:
        raise WindowTooLarge(f"window {window} must be in [2, {rel.size}]")
    out = np.lib.stride_tricks.sliding_window_view(rel, window).std(axis=1, ddof=1)
    return TimeSeries(out, data.start + window * data.step, data.step, f"{data.name}_vol")


FEATURE_KINDS = ("trend_slope", "amplitude", "period", "sliding_variance", "volatility")


def feature(data: TimeSeries, kind: str, window: int | None = None):
    if len(data) < 3:
        raise SeriesTooShort("features need at least 3 points")
    if kind == "trend_slope":
        return trend_slope(data)
    if kind == "amplitude":
        return amplitude(data)
    if kind == "period":
        return dominant_period(data)
    if kind in ("sliding_variance", "volatility"):
        if window is None:
            raise InvalidValue(f"{kind} needs a window")
        return sliding_variance(data, window) if kind == "sliding_variance" else volatility(data, window)
    raise InvalidValue(f"unknown feature {kind!r}; choose from {', '.join(FEATURE_KINDS)}")


# ---------------------------------------------------------------- spikes


def detect_spikes(data: TimeSeries, z: float = 3.0) -> IntVec:
    """Indices whose robust z-score exceeds ``z``.

    Spread is 1.4826*MAD; when more than half the points are identical the MAD
    collapses to 0 and the scaled mean absolute deviation around the median is
    used instead.
    """
    x = _vals(data)
    if z <= 0:
        raise InvalidValue("z must be positive")
    if x.size < 10:
        raise SeriesTooShort("spike detection needs at least 10 points")
    med = float(np.median(x))
    dev = np.abs(x - med)
    scale = MAD_SCALE * float(np.median(dev))
    if scale <= 0:
        scale = MEANAD_SCALE * float(dev.mean())
    if scale <= 0:
        raise ConstantSeries("spread of a constant series is zero")
    return IntVec(np.flatnonzero(dev > z * scale))


# ---------------------------------------------------------------- hypothesis tests

# Dickey-Fuller tau distribution, regression with constant: quantiles by sample size
_DF_PROBS = np.array([0.01, 0.025, 0.05, 0.10, 0.90, 0.95, 0.975, 0.99])
_DF_TABLE = {
    25: [-3.75, -3.33, -3.00, -2.63, -0.37, 0.00, 0.34, 0.72],
    50: [-3.58, -3.22, -2.93, -2.60, -0.40, -0.03, 0.29, 0.66],
    100: [-3.51, -3.17, -2.89, -2.58, -0.42, -0.05, 0.26, 0.63],
    250: [-3.46, -3.14, -2.88, -2.57, -0.42, -0.06, 0.24, 0.62],
    500: [-3.44, -3.13, -2.87, -2.57, -0.43, -0.07, 0.24, 0.61],
    10**9: [-3.43, -3.12, -2.86, -2.57, -0.44, -0.07, 0.23, 0.60],
}
# KPSS with constant + trend (asymptotic upper-tail critical values)
_KPSS_PROBS = np.array([0.10, 0.05, 0.025, 0.01])
_KPSS_CRIT = np.array([0.119, 0.146, 0.176, 0.216])


def _df_quantiles(nobs: int) -> np.ndarray:
    sizes = np.array(sorted(_DF_TABLE))
    rows = np.array([_DF_TABLE[s] for s in sizes])
    inv = 1.0 / sizes
    target = 1.0 / max(nobs, 25)
    # interpolate each quantile linearly in 1/T (inv is decreasing)
    return np.array([np.interp(target, inv[::-1], rows[::-1, j]) for j in range(rows.shape[1])])


def _df_pvalue(stat: float, nobs: int) -> float:
    q = _df_quantiles(nobs)
    if stat <= q[0]:
        return float(_DF_PROBS[0])
    if stat >= q[-1]:
        return float(_DF_PROBS[-1])
    return float(np.interp(stat, q, _DF_PROBS))


def adf_test(x: np.ndarray, lags: int | None = None) -> TestResult:
    n = x.size
    if lags is None:
        lags = int(12 * (n / 100) ** 0.25)
    lags = max(0, min(lags, n // 2 - 3))
    dx = np.diff(x)
    rows = dx.size - lags
    y = dx[lags:]
    cols = [np.ones(rows), x[lags:-1]]
    for i in range(1, lags + 1):
        cols.append(dx[lags - i: dx.size - i])
    X = np.column_stack(cols)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    dof = rows - X.shape[1]
    sigma2 = float(resid @ resid) / dof
    try:
        cov = sigma2 * np.linalg.inv(X.T @ X)
    except np.linalg.LinAlgError as exc:
        raise SingularRegression("ADF regression is singular") from exc
    se = math.sqrt(cov[1, 1])
    if se == 0:
        raise ConstantSeries("ADF undefined for a constant series")
    stat = float(beta[1] / se)
    p = _df_pvalue(stat, rows)
    return TestResult(stat, p, p < ALPHA, "adf")


def kpss_test(x: np.ndarray, lags: int | None = None) -> TestResult:
    """KPSS around a linear trend; verdict True = trend-stationary."""
    n = x.size
    if lags is None:
        lags = int(math.ceil(12 * (n / 100) ** 0.25))
    lags = min(lags, n - 1)
    t = np.arange(n, dtype=float)
    X = np.column_stack([np.ones(n), t])
    beta, *_ = np.linalg.lstsq(X, x, rcond=None)
    e = x - X @ beta
    s = np.cumsum(e)
    lr_var = float(e @ e) / n
    for k in range(1, lags + 1):
        w = 1 - k / (lags + 1)
        lr_var += 2 * w * float(e[k:] @ e[:-k]) / n
    if lr_var <= 0:
        raise ConstantSeries("KPSS long-run variance is zero")
    stat = float(s @ s) / (n**2 * lr_var)
    p = float(np.interp(stat, _KPSS_CRIT, _KPSS_PROBS))  # clamps to [0.01, 0.10]
    return TestResult(stat, p, p > ALPHA, "kpss")


def ljung_box_test(x: np.ndarray, lags: int) -> TestResult:
    n = x.size
    if lags < 1 or lags >= n:
        raise LagTooLarge(f"lags must be in [1, {n - 1}]")
    r = acf(x, lags)[1:]
    k = np.arange(1, lags + 1)
    q = float(n * (n + 2) * np.sum(r**2 / (n - k)))
    p = float(stats.chi2.sf(q, lags))
    return TestResult(q, p, p > ALPHA, "ljung_box")


def ks_test(a: np.ndarray, b: np.ndarray) -> TestResult:
    res = stats.ks_2samp(a, b)
    p = float(min(1.0, max(0.0, res.pvalue)))
    return TestResult(float(res.statistic), p, p > ALPHA, "ks")


TEST_KINDS = ("adf", "kpss", "ks", "ljung_box")


def stat_test(kind: str, a: TimeSeries, b: Optional[TimeSeries] = None, lags: Optional[int] = None) -> TestResult:
    x = _vals(a)
    if x.size < 20:
        raise SeriesTooShort("statistical tests need at least 20 points")
    if kind == "adf":
        return adf_test(x, lags)
    if kind == "kpss":
        return kpss_test(x, lags)
    if kind == "ks":
        if b is None:
            raise MissingSecondSeries("ks test compares two samples; pass the second series")
        return ks_test(x, _vals(b))
    if kind == "ljung_box":
        if lags is None or lags < 1:
            raise InvalidValue("ljung_box needs lags >= 1")
        return ljung_box_test(x, lags)
    raise InvalidValue(f"unknown test {kind!r}; choose from {', '.join(TEST_KINDS)}")


# ---------------------------------------------------------------- thresholds


def calibrate_threshold(scores) -> float:
    """mean + 3 sample standard deviations."""
    x = _vals(scores)
    if x.size < 2:
        raise SeriesTooShort("need at least 2 scores")
    if _is_constant(x):
        raise ConstantSeries("cannot calibrate a threshold on constant scores")
    return float(x.mean() + 3 * x.std(ddof=1))


def threshold_to_binary(scores, threshold: float | None = None, percentile: float | None = None) -> BinVec:
    x = _vals(scores)
    if (threshold is None) == (percentile is None):
        raise BothOrNeitherGiven("give exactly one of threshold or percentile")
    if percentile is not None:
        if not 0 < percentile < 1:
            raise InvalidValue("percentile must lie in (0, 1)")
        k = max(1, math.ceil(percentile * x.size - 1e-9))
        if k >= x.size:
            threshold = -math.inf
        else:
            threshold = float(np.sort(x)[x.size - k - 1])
    return BinVec((x > threshold).astype(int))


# ---------------------------------------------------------------- causality


def _lag_block(x: np.ndarray, p: int) -> np.ndarray:
    n = x.size
    return np.column_stack([x[p - k: n - k] for k in range(1, p + 1)])


def granger_pvalue(cause: np.ndarray, effect: np.ndarray, max_lag: int) -> float:
    """F-test p-value that lags of ``cause`` improve an AR(max_lag) of ``effect``."""
    p = max_lag
    y = effect[p:]
    rows = y.size
    ones = np.ones((rows, 1))
    trend = np.arange(rows, dtype=float)[:, None] / rows
    restricted = np.hstack([ones, trend, _lag_block(effect, p)])
    full = np.hstack([restricted, _lag_block(cause, p)])
    if np.linalg.matrix_rank(full) < full.shape[1]:
        raise SingularRegression("lagged regression design is rank deficient (collinear columns)")
    rss = []
    for X in (restricted, full):
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        r = y - X @ beta
        rss.append(float(r @ r))
    dof = rows - full.shape[1]
    if rss[1] <= 0:
        return 0.0
    f = ((rss[0] - rss[1]) / p) / (rss[1] / dof)
    return float(stats.f.sf(max(f, 0.0), p, dof))


def causal_matrix(data: Frame, max_lag: int) -> np.ndarray:
    """d x d Granger p-values; entry (i, j) tests column i -> column j."""
    d = data.width
    n = len(data)
    if d < 2:
        raise InvalidValue("causal matrix needs at least two columns")
    if max_lag < 1:
        raise InvalidValue("max_lag must be >= 1")
    if n < 10 * max_lag:
        raise SeriesTooShort(f"need n >= 10*max_lag = {10 * max_lag}, got {n}")
    X = data.to_array()
    out = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            if i != j:
                out[i, j] = granger_pvalue(X[:, i], X[:, j], max_lag)
    return out


def select_top_ratio(pvals, ratio: float) -> np.ndarray:
    """Binary adjacency keeping the round(ratio*d(d-1)) smallest off-diagonal p-values."""
    P = np.asarray(pvals, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InvalidValue("p-value matrix must be square")
    if not 0 <= ratio <= 1:
        raise InvalidValue("ratio must lie in [0, 1]")
    d = P.shape[0]
    k = int(math.floor(ratio * d * (d - 1) + 0.5))
    pairs = sorted(((P[i, j], i, j) for i in range(d) for j in range(d) if i != j))
    out = np.zeros((d, d))
    for _, i, j in pairs[:k]:
        out[i, j] = 1.0
    return out
