"""Forecasting and anomaly-scoring backends behind uniform operator signatures.

Five classical univariate backends (seasonal naive, drift, additive
Holt-Winters, least-squares AR, theta) plus a ridge lagged regression for
covariate-driven forecasting. Everything here is deterministic.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import Frame, Metric, ModelHandle, Quality, TimeSeries, safe_mape
from .errors import (
    HistoryTooShort,
    InvalidValue,
    LengthMismatch,
    SeriesTooShort,
    SingularRegression,
    UnknownModel,
)
from .stats_ops import decompose, dominant_period

MODEL_NAMES = ("seasonal_naive", "drift", "holt_winters", "ar_ls", "theta", "lagged_regression")

# accepted spellings from LLM output; foundation models have no local backend
MODEL_ALIASES = {
    "arima": "ar_ls",
    "ar": "ar_ls",
    "naive": "seasonal_naive",
    "snaive": "seasonal_naive",
    "hw": "holt_winters",
    "ets": "holt_winters",
    "exponential_smoothing": "holt_winters",
    "linear_regression": "lagged_regression",
    "linreg": "lagged_regression",
}

HW_DEFAULTS = (0.2, 0.05, 0.1)


@dataclass(frozen=True)
class ModelSpec:
    name: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        name = MODEL_ALIASES.get(self.name.lower(), self.name.lower())
        if name not in MODEL_NAMES:
            raise UnknownModel(
                f"model {self.name!r} is not available; choose from {', '.join(MODEL_NAMES)}"
            )
        object.__setattr__(self, "name", name)
        params = {k: v for k, v in dict(self.params).items() if v is not None}
        if "period" in params:
            if int(params["period"]) != params["period"] or params["period"] < 2:
                raise InvalidValue("period must be an integer >= 2")
            params["period"] = int(params["period"])
        if "ar_order" in params:
            if int(params["ar_order"]) != params["ar_order"] or params["ar_order"] < 1:
                raise InvalidValue("ar_order must be an integer >= 1")
            params["ar_order"] = int(params["ar_order"])
        if params.get("ridge", 0) < 0:
            raise InvalidValue("ridge penalty must be >= 0")
        for k in ("alpha", "beta", "gamma"):
            if k in params and not 0 <= params[k] <= 1:
                raise InvalidValue(f"{k} must lie in [0, 1]")
        object.__setattr__(self, "params", params)

    @property
    def period(self) -> int | None:
        return self.params.get("period")

    @property
    def ar_order(self) -> int:
        if "ar_order" in self.params:
            return self.params["ar_order"]
        return self.period or 3

    def label(self) -> str:
        inner = ", ".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.name}({inner})" if inner else self.name


@dataclass(frozen=True, eq=False)
class Forecast(TimeSeries):
    """Forecast values continuing the history's index, tagged with the model."""

    model_used: ModelSpec = ModelSpec("drift")


def _vals(data) -> np.ndarray:
    return data.values if isinstance(data, TimeSeries) else np.asarray(data, dtype=float)


def _is_flat(x: np.ndarray) -> bool:
    return float(np.ptp(x)) <= 1e-12 * max(1.0, float(np.max(np.abs(x))))


def _required_history(spec: ModelSpec) -> int:
    need = 8
    if spec.name in ("seasonal_naive", "holt_winters") or spec.period:
        need = max(need, 2 * (spec.period or 2))
    if spec.name in ("ar_ls", "lagged_regression"):
        need = max(need, 3 * spec.ar_order)
    return need


# ---------------------------------------------------------------- backends


def _seasonal_naive(x: np.ndarray, h: int, period: int) -> np.ndarray:
    last = x[-period:]
    return np.array([last[i % period] for i in range(h)])


def _drift(x: np.ndarray, h: int) -> np.ndarray:
    slope = (x[-1] - x[0]) / (x.size - 1)
    return x[-1] + slope * np.arange(1, h + 1)


def _holt_winters(x: np.ndarray, h: int, period: int, alpha: float, beta: float, gamma: float) -> np.ndarray:
    m = period
    level = x[:m].mean()
    trend = (x[m:2 * m].mean() - x[:m].mean()) / m
    season = list(x[:m] - level)
    for t in range(m, x.size):
        s = season[t - m]
        prev_level = level
        level = alpha * (x[t] - s) + (1 - alpha) * (level + trend)
        trend = beta * (level - prev_level) + (1 - beta) * trend
        season.append(gamma * (x[t] - level) + (1 - gamma) * s)
    n = x.size
    return np.array([level + (i + 1) * trend + season[n - m + (i % m)] for i in range(h)])


def _ar_design(x: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    n = x.size
    X = np.column_stack([np.ones(n - p)] + [x[p - k: n - k] for k in range(1, p + 1)])
    return X, x[p:]


def _solve(X: np.ndarray, y: np.ndarray, ridge: float = 0.0, strict: bool = False) -> np.ndarray:
    if strict and np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularRegression("regression design is rank deficient")
    if ridge > 0:
        pen = ridge * np.eye(X.shape[1])
        pen[0, 0] = 0.0  # never shrink the intercept
        return np.linalg.solve(X.T @ X + pen, X.T @ y)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    return beta


def _ar_iterate(x: np.ndarray, beta: np.ndarray, h: int) -> np.ndarray:
    p = beta.size - 1
    buf = list(x[-p:])
    out = []
    for _ in range(h):
        nxt = beta[0] + sum(beta[k] * buf[-k] for k in range(1, p + 1))
        buf.append(nxt)
        out.append(nxt)
    return np.array(out)


def _ses(x: np.ndarray, alpha: float) -> float:
    level = x[0]
    for v in x[1:]:
        level = alpha * v + (1 - alpha) * level
    return level


def _theta(x: np.ndarray, h: int, period: int | None, alpha: float) -> np.ndarray:
    seasonal = None
    if period and x.size >= 2 * period:
        seasonal = decompose(TimeSeries(x), period).seasonal.values
        x = x - seasonal
    n = x.size
    t = np.arange(n)
    slope, icpt = np.polyfit(t, x, 1)
    # theta=0 line extrapolated linearly, theta=2 line smoothed by SES
    line0 = icpt + slope * np.arange(n, n + h)
    theta2 = 2 * x - (icpt + slope * t)
    ses = _ses(theta2, alpha)
    out = 0.5 * line0 + 0.5 * ses
    if seasonal is not None:
        out = out + np.array([seasonal[n - period + (i % period)] for i in range(h)])
    return out


def _univariate(x: np.ndarray, h: int, spec: ModelSpec, handle: ModelHandle | None = None) -> np.ndarray:
    if _is_flat(x):
        return np.full(h, x[-1])
    name = spec.name
    if name == "seasonal_naive":
        return _seasonal_naive(x, h, spec.period or 1)
    if name == "drift":
        return _drift(x, h)
    if name == "holt_winters":
        a, b, g = (spec.params.get(k, d) for k, d in zip(("alpha", "beta", "gamma"), HW_DEFAULTS))
        return _holt_winters(x, h, spec.period, a, b, g)
    if name in ("ar_ls", "lagged_regression"):
        if handle is not None:
            beta = np.r_[handle.intercept, handle.coefficients]
        else:
            X, y = _ar_design(x, spec.ar_order)
            beta = _solve(X, y, spec.params.get("ridge", 0.0))
        return _ar_iterate(x, beta, h)
    if name == "theta":
        return _theta(x, h, spec.period, spec.params.get("alpha", 0.5))
    raise UnknownModel(name)


def _check_history(n: int, spec: ModelSpec):
    if spec.name in ("seasonal_naive", "holt_winters") and not spec.period:
        raise InvalidValue(f"{spec.name} needs a period parameter")
    need = _required_history(spec)
    if n < need:
        raise HistoryTooShort(f"{spec.label()} needs at least {need} points of history, got {n}")


def forecast_uni(data: TimeSeries, horizon: int, model: ModelSpec | ModelHandle) -> Forecast:
    handle = None
    if isinstance(model, ModelHandle):
        handle = model
        model = ModelSpec("ar_ls", {"ar_order": model.order})
    if horizon < 1:
        raise InvalidValue("horizon must be >= 1")
    x = data.values
    _check_history(x.size, model)
    vals = _univariate(x, horizon, model, handle)
    if not np.all(np.isfinite(vals)):
        raise SingularRegression(f"{model.label()} produced non-finite forecasts")
    return Forecast(vals, data.end, data.step, data.name, model_used=model)


def _extend_covariate(x: np.ndarray, h: int, period: int | None) -> np.ndarray:
    if period and x.size >= period:
        return _seasonal_naive(x, h, period)
    return np.full(h, x[-1])


def _lagged_design(y: np.ndarray, covs: list[np.ndarray], p: int) -> tuple[np.ndarray, np.ndarray]:
    n = y.size
    blocks = [np.ones(n - p)]
    for series in [y, *covs]:
        blocks += [series[p - k: n - k] for k in range(1, p + 1)]
    return np.column_stack(blocks), y[p:]


def fit_lagged_regression(target: np.ndarray, covs: list[np.ndarray], p: int, ridge: float) -> np.ndarray:
    X, y = _lagged_design(target, covs, p)
    return _solve(X, y, ridge)


def forecast_multi(target: TimeSeries, covariates: Frame | TimeSeries | None, horizon: int, model: ModelSpec) -> Forecast:
    if horizon < 1:
        raise InvalidValue("horizon must be >= 1")
    cols = [] if covariates is None else list(covariates.columns if isinstance(covariates, Frame) else (covariates,))
    for c in cols:
        if len(c) != len(target):
            raise LengthMismatch(f"covariate {c.name!r} has length {len(c)}, target has {len(target)}")
    if model.name != "lagged_regression":
        return forecast_uni(target, horizon, model)
    _check_history(len(target), model)
    p = model.ar_order
    y = target.values
    covs = [c.values for c in cols]
    beta = fit_lagged_regression(y, covs, p, model.params.get("ridge", 0.0))
    # future covariates are unknown: continue each one seasonally
    ext = [np.r_[c, _extend_covariate(c, horizon, model.period)] for c in covs]
    hist = list(y)
    n = y.size
    out = []
    for step in range(horizon):
        t = n + step
        row = [1.0]
        for series in [np.asarray(hist)] + ext:
            row += [series[t - k] for k in range(1, p + 1)]
        nxt = float(np.dot(beta, row))
        hist.append(nxt)
        out.append(nxt)
    vals = np.array(out)
    if not np.all(np.isfinite(vals)):
        raise SingularRegression("lagged regression produced non-finite forecasts")
    return Forecast(vals, target.end, target.step, target.name, model_used=model)


# ---------------------------------------------------------------- fitting and scoring


def fit_ar(data: TimeSeries, order: int) -> ModelHandle:
    x = data.values
    if order < 1:
        raise InvalidValue("order must be >= 1")
    if x.size < 3 * order + 5:
        raise HistoryTooShort(f"AR({order}) needs at least {3 * order + 5} points, got {x.size}")
    X, y = _ar_design(x, order)
    beta = _solve(X, y, strict=True)
    digest = hashlib.sha256(np.asarray(beta).tobytes()).hexdigest()[:12]
    return ModelHandle("ar_ls", order, tuple(float(b) for b in beta[1:]), float(beta[0]), f"ar{order}-{digest}")


ANOMALY_MODELS = ("decomp_z", "ar_residual")


def anomaly_score(data: TimeSeries, model: str = "decomp_z", period: int | None = None,
                  handle: ModelHandle | None = None) -> TimeSeries:
    """Non-negative per-timestamp anomaly score, same length as the input."""
    x = data.values
    if model == "decomp_z":
        if period is None:
            period = dominant_period(data)
        if x.size < 2 * period:
            raise SeriesTooShort(f"decomp_z needs at least {2 * period} points")
        resid = decompose(data, period).residual.values
        sd = resid.std(ddof=1)
        # residuals at rounding level carry no signal
        floor = 1e-9 * max(1.0, float(np.max(np.abs(x))))
        score = np.abs(resid) / sd if sd > floor else np.zeros_like(resid)
    elif model == "ar_residual":
        if x.size < 20:
            raise SeriesTooShort("ar_residual needs at least 20 points")
        if handle is None:
            order = min(period or 3, max(1, (x.size - 5) // 3))
            handle = fit_ar(data, order)
        p = handle.order
        beta = np.r_[handle.intercept, handle.coefficients]
        X, y = _ar_design(x, p)
        score = np.r_[np.zeros(p), np.abs(y - X @ beta)]
    else:
        raise InvalidValue(f"unknown anomaly model {model!r}; choose from {', '.join(ANOMALY_MODELS)}")
    return data.with_values(score, f"{data.name}_score")


def backtest_forecast(data: TimeSeries, covariates: Frame | None, horizon: int, model: ModelSpec) -> Forecast:
    """Forecast of the last ``horizon`` points made from the preceding history only."""
    n = len(data)
    if n < 2 * horizon:
        raise HistoryTooShort(f"backtest needs at least {2 * horizon} points, got {n}")
    train = data.slice(0, n - horizon)
    if model.name == "lagged_regression":
        covs = covariates.slice(0, n - horizon) if covariates is not None else None
        return forecast_multi(train, covs, horizon, model)
    return forecast_uni(train, horizon, model)


def backtest(data: TimeSeries, covariates: Frame | None, horizon: int, model: ModelSpec) -> Quality:
    fc = backtest_forecast(data, covariates, horizon, model)
    holdout = data.values[len(data) - horizon:]
    return Quality(Metric.MAPE, safe_mape(holdout, fc.values))
