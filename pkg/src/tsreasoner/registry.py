"""Operator catalog: names, signatures, aliases and dispatch.

Canonical operator names are snake_case; the CamelCase ``...OP`` names an LLM
is shown in the prompt are aliases resolving to exactly one implementation.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from typing import Any, Callable, Mapping, Optional

import numpy as np

from . import model_ops, stats_ops
from .constraints import KINDS as CONSTRAINT_KINDS
from .constraints import ConstraintSpec, project
from .core import Frame, ModelHandle, TimeSeries, value_kind
from .errors import InvalidValue, TypeMismatch
from .model_ops import ANOMALY_MODELS, MODEL_ALIASES, MODEL_NAMES, ModelSpec

# static kinds each parameter kind accepts ("any" = unknown at validation time)
ACCEPTS = {
    "series": {"series", "vector"},
    "frame": {"frame", "series"},
    "data": {"series", "frame", "vector"},
    "int": {"int"},
    "number": {"int", "float", "scalar"},
    "text": {"text"},
    "model": {"text", "model"},
    "matrix": {"matrix"},
    "list": {"list"},
}

# which runtime variants satisfy an output contract
CONTRACT_KINDS = {
    "series": {"series", "vector"},
    "binvec": {"binvec"},
    "matrix": {"matrix"},
}


@dataclass(frozen=True)
class Param:
    name: str
    kind: str
    required: bool = True
    default: Any = None
    doc: str = ""
    choices: tuple = ()


@dataclass(frozen=True)
class OpDef:
    canonical: str
    display: str
    params: tuple[Param, ...]
    returns: str
    summary: str
    fn: Optional[Callable[..., Any]] = None
    substitute: Optional[str] = None

    @property
    def implemented(self) -> bool:
        return self.fn is not None

    def param(self, name: str) -> Optional[Param]:
        return next((p for p in self.params if p.name == name), None)

    def signature(self) -> str:
        parts = []
        for p in self.params:
            parts.append(p.name if p.required else f"{p.name}={p.default!r}")
        return f"{self.display}({', '.join(parts)})"


# ---------------------------------------------------------------- runtime coercion


def coerce(value: Any, kind: str, name: str) -> Any:
    vk = value_kind(value)
    if kind == "series":
        if vk == "series":
            return value
        if vk == "vector":
            return TimeSeries(value, name=name)
        if vk == "frame" and value.width == 1:
            return value.columns[0]
    elif kind == "frame":
        if vk == "frame":
            return value
        if vk == "series":
            return Frame((value,))
    elif kind == "data":
        if vk in ("series", "frame"):
            return value
        if vk == "vector":
            return TimeSeries(value, name=name)
    elif kind == "int":
        if vk == "scalar" and not isinstance(value, (bool, np.bool_)) and float(value) == int(value):
            return int(value)
    elif kind == "number":
        if vk == "scalar" and not isinstance(value, (bool, np.bool_)):
            return float(value)
    elif kind == "text":
        if vk == "text":
            return value
    elif kind == "model":
        if vk in ("text", "model"):
            return value
    elif kind == "matrix":
        if vk == "matrix":
            return value
        if isinstance(value, list):
            return np.asarray(value, dtype=float)
    elif kind == "list":
        if isinstance(value, list):
            return value
    elif kind == "any":
        return value
    raise TypeMismatch(f"argument {name!r} expects {kind}, got {vk}")


# ---------------------------------------------------------------- operator adapters


def _model_spec(model: str, **params) -> ModelSpec:
    return ModelSpec(model, {k: v for k, v in params.items() if v is not None})


def _uni(data, future_length, model, period=None, ar_order=None, alpha=None, beta=None, gamma=None):
    if isinstance(model, ModelHandle):
        return model_ops.forecast_uni(data, future_length, model)
    spec = _model_spec(model, period=period, ar_order=ar_order, alpha=alpha, beta=beta, gamma=gamma)
    return model_ops.forecast_uni(data, future_length, spec)


def _multi(data, covariates, future_length, model="lagged_regression", period=None, ar_order=None, ridge=None):
    spec = _model_spec(model, period=period, ar_order=ar_order, ridge=ridge)
    return model_ops.forecast_multi(data, covariates, future_length, spec)


def _backtest(data, future_length, model, covariates=None, period=None, ar_order=None):
    spec = _model_spec(model, period=period, ar_order=ar_order)
    return model_ops.backtest(data, covariates, future_length, spec).value


def _anomaly(data, model="decomp_z", period=None, handle=None):
    if handle is not None and not isinstance(handle, ModelHandle):
        raise TypeMismatch("handle must be a fitted model")
    return model_ops.anomaly_score(data, model, period, handle)


def _apply(data, fn, c=None, lo=None, hi=None):
    return stats_ops.apply(data, stats_ops.FnSpec(fn, c, lo, hi))


def _project(data, kind, value, anchor=None, history=None):
    if anchor is None and history is not None:
        anchor = float(history.values[-1])
    return project(data, ConstraintSpec(kind, value, anchor))


def _decompose_part(part):
    def run(data, period=None):
        if period is None:
            period = stats_ops.dominant_period(data)
        return getattr(stats_ops.decompose(data, period), part)
    return run


def _decompose(data, period=None):
    if period is None:
        period = stats_ops.dominant_period(data)
    return stats_ops.decompose(data, period).as_frame()


def _feature(kind):
    def run(data, window=None):
        return stats_ops.feature(data, kind, window)
    return run


def _stat(kind):
    def run(data, other=None, lags=None):
        return stats_ops.stat_test(kind, data, other, lags)
    return run


def _scalar(fn):
    def run(data):
        return fn(data)
    return run


def _parse_time(s: str) -> datetime:
    try:
        return datetime.fromisoformat(s)
    except ValueError as exc:
        raise InvalidValue(f"bad timestamp {s!r}; use ISO-8601") from exc


# ---------------------------------------------------------------- catalog


def P(name, kind, default=..., doc="", choices=()):
    if default is ...:
        return Param(name, kind, True, None, doc, choices)
    return Param(name, kind, False, default, doc, choices)


_MODEL_CHOICES = tuple(MODEL_NAMES) + tuple(MODEL_ALIASES)
UNIMPLEMENTED = {
    "getChptOP": ("bayesian changepoint detection", "detectSpikesOP"),
    "getCyclePatternOP": ("cycle pattern extraction", "decomposeOP"),
    "detectFlippedOP": ("flipped-segment detection", "AnomalDetOP"),
    "detectSpeedUpDownOP": ("speed-up / slow-down detection", "VolDetOP"),
    "detectCutoffOP": ("cutoff detection", "AnomalDetOP"),
    "RefGenOP": ("free-form code generation", "ProjectOP"),
}


def _catalog(retrieval) -> list[OpDef]:
    forecast_params = (
        P("period", "int", None, "seasonal period in steps"),
        P("ar_order", "int", None, "autoregressive order"),
    )
    ops = [
        OpDef("forecast_uni", "UniPreOP",
              (P("data", "series", doc="history of the target"),
               P("future_length", "int", doc="number of steps to forecast"),
               P("model", "model", doc="backend name or a fitted model handle", choices=_MODEL_CHOICES),
               *forecast_params,
               P("alpha", "number", None), P("beta", "number", None), P("gamma", "number", None)),
              "series",
              "Univariate forecast. Backends: seasonal_naive, drift, holt_winters, ar_ls, theta.",
              _uni),
        OpDef("forecast_multi", "MultiPreOP",
              (P("data", "series", doc="history of the target"),
               P("covariates", "frame", doc="aligned covariate history"),
               P("future_length", "int"),
               P("model", "model", "lagged_regression", choices=_MODEL_CHOICES),
               *forecast_params,
               P("ridge", "number", None, "ridge penalty")),
              "series",
              "Forecast a target from its own lags and lagged covariates (ridge regression).",
              _multi),
        OpDef("anomaly_score", "AnomalDetOP",
              (P("data", "series"),
               P("model", "text", "decomp_z", choices=ANOMALY_MODELS),
               P("period", "int", None),
               P("handle", "model", None, "fitted AR model for ar_residual")),
              "series",
              "Per-timestamp anomaly score from reconstruction error (decomposition residual z or AR residual).",
              _anomaly),
        OpDef("fit_ar", "trainForecastOP",
              (P("data", "series"), P("order", "int")),
              "model",
              "Fit an AR(order) model by least squares; the handle feeds UniPreOP or AnomalDetOP.",
              lambda data, order: model_ops.fit_ar(data, order)),
        OpDef("fit_ar_detector", "trainADOP",
              (P("data", "series"), P("order", "int")),
              "model",
              "Fit an AR(order) model whose one-step residuals serve as anomaly scores.",
              lambda data, order: model_ops.fit_ar(data, order)),
        OpDef("backtest", "backtestOP",
              (P("data", "series"), P("future_length", "int"),
               P("model", "text", choices=_MODEL_CHOICES),
               P("covariates", "frame", None), *forecast_params),
              "scalar",
              "MAPE of a backend forecasting the last future_length points of the history.",
              _backtest),
        OpDef("apply", "ApplyOP",
              (P("data", "series"), P("fn", "text", choices=stats_ops.FnSpec.KINDS),
               P("c", "number", None), P("lo", "number", None), P("hi", "number", None)),
              "series",
              "Elementwise transform: log, diff, zscore, abs, scale(c), clip(lo, hi).",
              _apply),
        OpDef("concat", "ConcatOP",
              (P("a", "data"), P("b", "data")),
              "frame",
              "Concatenate two series/frames horizontally into one frame.",
              lambda a, b: stats_ops.concat(a, b)),
        OpDef("causal_matrix", "CausalMatrixOP",
              (P("data", "frame"), P("max_lag", "int", 5)),
              "matrix",
              "Granger-causality p-value for every ordered pair of columns; entry (i, j) tests i -> j.",
              lambda data, max_lag=5: stats_ops.causal_matrix(data, max_lag)),
        OpDef("select_top_ratio", "selectTopRatioOP",
              (P("data", "matrix", doc="p-value matrix"), P("ratio", "number", doc="fraction of pairs in [0, 1]")),
              "matrix",
              "Binary adjacency keeping the given fraction of pairs with the smallest p-values.",
              lambda data, ratio: stats_ops.select_top_ratio(data, ratio)),
        OpDef("threshold_to_binary", "thToBinaryOP",
              (P("data", "series"), P("threshold", "number", None), P("percentile", "number", None)),
              "binvec",
              "1 where the score exceeds a threshold, or flag the top `percentile` fraction.",
              lambda data, threshold=None, percentile=None: stats_ops.threshold_to_binary(data, threshold, percentile)),
        OpDef("convert_binary", "convertBinaryOP",
              (P("data", "series"), P("threshold", "number", None), P("percentile", "number", None)),
              "binvec",
              "Same as thToBinaryOP.",
              lambda data, threshold=None, percentile=None: stats_ops.threshold_to_binary(data, threshold, percentile)),
        OpDef("calibrate_threshold", "calibrateThreshOP",
              (P("data", "series"),),
              "scalar",
              "Threshold at mean + 3 standard deviations of the input scores.",
              _scalar(stats_ops.calibrate_threshold)),
        OpDef("adf", "checkStationaryOP",
              (P("data", "series"), P("lags", "int", None)),
              "test_result", "Augmented Dickey-Fuller test; verdict true = stationary.", _stat("adf")),
        OpDef("kpss", "checkTrendStationaryOP",
              (P("data", "series"), P("lags", "int", None)),
              "test_result", "KPSS test around a trend; verdict true = trend-stationary.", _stat("kpss")),
        OpDef("ks", "compareDisOP",
              (P("data", "series"), P("other", "series")),
              "test_result", "Two-sample Kolmogorov-Smirnov test; verdict true = same distribution.", _stat("ks")),
        OpDef("ljung_box", "testWhiteNoiseOP",
              (P("data", "series"), P("lags", "int", 10)),
              "test_result", "Ljung-Box test; verdict true = white noise.",
              lambda data, lags=10: stats_ops.stat_test("ljung_box", data, None, lags)),
        OpDef("trend_slope", "getTrendCoefOP", (P("data", "series"),), "scalar",
              "OLS slope of the series against the time index.", _feature("trend_slope")),
        OpDef("trend_component", "getTrendOP", (P("data", "series"), P("period", "int", None)), "series",
              "Moving-average trend component.", _decompose_part("trend")),
        OpDef("noise_component", "getNoiseCompOP", (P("data", "series"), P("period", "int", None)), "series",
              "Residual component after removing trend and seasonality.", _decompose_part("residual")),
        OpDef("decompose", "decomposeOP", (P("data", "series"), P("period", "int", None)), "frame",
              "Additive decomposition into trend, seasonal and residual columns.", _decompose),
        OpDef("amplitude", "getAmplitudeOP", (P("data", "series"),), "scalar",
              "Half the peak-to-peak range of the detrended series.", _feature("amplitude")),
        OpDef("period", "getPeriodOP", (P("data", "series"),), "int",
              "Dominant period (periodogram argmax).", _feature("period")),
        OpDef("sliding_variance", "getSlidingVarOP", (P("data", "series"), P("window", "int")), "series",
              "Rolling variance over a window.", _feature("sliding_variance")),
        OpDef("volatility", "VolDetOP", (P("data", "series"), P("window", "int")), "series",
              "Rolling standard deviation of one-step relative changes.", _feature("volatility")),
        OpDef("acf", "getAutoCorrOP", (P("data", "series"), P("max_lag", "int")), "vector",
              "Sample autocorrelations for lags 0..max_lag.",
              lambda data, max_lag: stats_ops.acf(data, max_lag)),
        OpDef("max_corr_lag", "getMaxCorrLagOP", (P("x", "series"), P("y", "series"), P("max_lag", "int")), "int",
              "Lag of x that correlates most strongly with y.",
              lambda x, y, max_lag: stats_ops.max_corr_lag(x, y, max_lag)),
        OpDef("detect_spikes", "detectSpikesOP", (P("data", "series"), P("z", "number", 3.0)), "intvec",
              "Indices whose robust (median/MAD) z-score exceeds z.",
              lambda data, z=3.0: stats_ops.detect_spikes(data, z)),
        OpDef("project", "ProjectOP",
              (P("data", "series"), P("kind", "text", choices=CONSTRAINT_KINDS), P("value", "number"),
               P("anchor", "number", None, "last observed value (ramp_rate)"),
               P("history", "series", None, "history whose last value anchors ramp_rate")),
              "series",
              "Make a forecast satisfy a max_load, min_load, ramp_rate or variability constraint.",
              _project),
    ]
    if retrieval is not None:
        ops += [
            OpDef("fetch_weather", "getEnvDataOP",
                  (P("lat", "number"), P("lon", "number"), P("start", "text"), P("end", "text"),
                   P("variables", "list"), P("resolution", "text", "hourly", choices=("hourly", "daily"))),
                  "frame", "Retrieve weather variables for a location and time range.",
                  lambda lat, lon, start, end, variables, resolution="hourly": retrieval.fetch_weather_args(
                      lat, lon, _parse_time(start), _parse_time(end), variables, resolution)),
            OpDef("fetch_electricity", "getElectricityDataOP",
                  (P("zone", "text"), P("start", "text"), P("end", "text"),
                   P("variables", "list"), P("resolution", "text", "hourly", choices=("hourly", "daily"))),
                  "frame", "Retrieve electricity load data for a grid zone and time range.",
                  lambda zone, start, end, variables, resolution="hourly": retrieval.fetch_electricity_args(
                      zone, _parse_time(start), _parse_time(end), variables, resolution)),
        ]
    for name, (what, sub) in UNIMPLEMENTED.items():
        ops.append(OpDef(name.lower(), name, (), "any", f"Not available ({what}).", None, sub))
    return ops


class Registry:
    """Immutable operator table with alias resolution."""

    def __init__(self, ops: list[OpDef]):
        self._by_name: dict[str, OpDef] = {}
        for op in ops:
            for key in (op.canonical, op.display):
                if key in self._by_name and self._by_name[key] is not op:
                    raise ValueError(f"operator name clash: {key}")
                self._by_name[key] = op
        self._ops = tuple(ops)

    def __len__(self):
        return len(self._ops)

    def __iter__(self):
        return iter(self._ops)

    def lookup(self, name: str) -> Optional[OpDef]:
        return self._by_name.get(name)

    def implemented(self) -> list[OpDef]:
        return [op for op in self._ops if op.implemented]

    def alias_table(self) -> dict[str, str]:
        return {op.display: op.canonical for op in self._ops}

    def call(self, name: str, kwargs: Mapping[str, Any]) -> Any:
        op = self.lookup(name)
        if op is None:
            raise TypeMismatch(f"unknown operator {name!r}")
        if not op.implemented:
            raise TypeMismatch(f"operator {name} is not available")
        bound = {}
        for p in op.params:
            if p.name in kwargs and kwargs[p.name] is not None:
                bound[p.name] = coerce(kwargs[p.name], p.kind, p.name)
            elif p.required:
                raise TypeMismatch(f"{op.display} is missing required argument {p.name!r}")
        extra = set(kwargs) - {p.name for p in op.params}
        if extra:
            raise TypeMismatch(f"{op.display} got unexpected argument(s) {sorted(extra)}")
        return op.fn(**bound)


def default_registry(retrieval=None) -> Registry:
    return Registry(_catalog(retrieval))
