"""Synthetic benchmark generation: predictive constraint tasks, anomaly
detection tasks and causal discovery tasks, each with ground truth.

Everything is a pure function of the seed. Per-instance seeds are derived
from (master seed, family, index) so instances can be built independently.
"""

from __future__ import annotations

import hashlib
import json
import math
import string
from dataclasses import asdict, dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from .constraints import KINDS as CONSTRAINT_KINDS
from .constraints import ConstraintSpec, check, project
from .core import (
    BinVec,
    Frame,
    OutputContract,
    TaskInstance,
    TaskKind,
    TimeSeries,
    mape,
    read_csv,
    value_from_jsonable,
    value_to_jsonable,
    write_csv,
)
from .errors import (
    CyclicRelation,
    DatasetNotFound,
    InfeasibleSample,
    InvalidValue,
    MissingPlaceholder,
    ZeroDenominator,
)

HOUR = timedelta(hours=1)
START = datetime(2023, 1, 1)
MAX_RESAMPLES = 20
CAUSAL_NAMES = ("temperature", "humidity", "pressure", "wind_speed", "cloud_cover", "precipitation")
PREDICTIVE_VARIANTS = ("cov", "nocov", "multigrid")
DEFAULT_COUNTS = {"predictive": 20, "anomaly": 25, "causal": 25}

# A -> {B, D}, B -> D, C -> {B, D}; diagonal set by convention
EXAMPLE_RELATION = np.array([
    [1, 1, 0, 1],
    [0, 1, 0, 1],
    [0, 1, 1, 1],
    [0, 0, 0, 1],
])


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    T: int = 500
    trend_slope_range: tuple[float, float] = (-0.004, 0.004)
    season_period_range: tuple[int, int] = (12, 48)
    season_amp_range: tuple[float, float] = (0.5, 1.5)
    noise_sigma_range: tuple[float, float] = (0.1, 0.3)
    lag_range: tuple[int, int] = (1, 5)
    coef_range: tuple[float, float] = (0.5, 0.9)
    # predictive tasks
    history_days_range: tuple[int, int] = (14, 28)
    horizon_range: tuple[int, int] = (24, 72)
    covariate_lag: int = 2
    # anomaly tasks
    anomaly_days_range: tuple[int, int] = (15, 30)
    anomaly_count_range: tuple[int, int] = (3, 8)
    anomaly_width_range: tuple[int, int] = (1, 3)
    anomaly_magnitude_range: tuple[float, float] = (2.5, 5.0)

    def __post_init__(self):
        for name in ("trend_slope_range", "season_period_range", "season_amp_range", "noise_sigma_range",
                     "lag_range", "coef_range", "history_days_range", "horizon_range", "anomaly_days_range",
                     "anomaly_count_range", "anomaly_width_range", "anomaly_magnitude_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise InvalidValue(f"{name} must satisfy lo < hi, got ({lo}, {hi})")
        if self.T < 50:
            raise InvalidValue("T must be at least 50")
        if self.lag_range[0] < 1:
            raise InvalidValue("lags must be >= 1")

    def with_seed(self, seed: int) -> "GenConfig":
        return GenConfig(**{**asdict(self), "seed": seed})


def instance_seed(master_seed: int, family: str, index: int) -> int:
    digest = hashlib.sha256(f"{master_seed}:{family}:{index}".encode()).hexdigest()
    return int(digest[:15], 16)


def _u(rng: np.random.Generator, bounds) -> float:
    return float(rng.uniform(*bounds))


def _i(rng: np.random.Generator, bounds) -> int:
    return int(rng.integers(bounds[0], bounds[1] + 1))


# ---------------------------------------------------------------- relations


@dataclass(frozen=True)
class RelationMatrix:
    """d x d 0/1 matrix; entry (i, j) = 1 means variable i drives variable j."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=int).copy()
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidValue("relation matrix must be square")
        if not np.isin(m, (0, 1)).all():
            raise InvalidValue("relation matrix entries must be 0 or 1")
        np.fill_diagonal(m, 1)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.matrix.sum() - self.d)

    @property
    def ratio(self) -> float:
        return self.n_edges / (self.d * (self.d - 1))

    def topological_order(self) -> list[int]:
        adj = self.matrix.copy()
        np.fill_diagonal(adj, 0)
        indeg = adj.sum(axis=0)
        ready = [j for j in range(self.d) if indeg[j] == 0]
        order = []
        while ready:
            i = ready.pop(0)
            order.append(i)
            for j in np.flatnonzero(adj[i]):
                indeg[j] -= 1
                if indeg[j] == 0:
                    ready.append(int(j))
        if len(order) != self.d:
            raise CyclicRelation("relation matrix has a directed cycle among distinct variables")
        return order


def random_relation(rng: np.random.Generator, d: int | None = None, n_edges: int | None = None) -> RelationMatrix:
    """Random DAG: edges only go forward in a random variable ordering."""
    d = d if d is not None else _i(rng, (3, 6))
    pairs = d * (d - 1) // 2
    if n_edges is None:
        n_edges = _i(rng, (max(1, round(0.2 * d * (d - 1))), pairs))
    if not 0 <= n_edges <= pairs:
        raise InvalidValue(f"a DAG on {d} variables has at most {pairs} edges")
    order = rng.permutation(d)
    forward = [(order[a], order[b]) for a in range(d) for b in range(a + 1, d)]
    chosen = rng.choice(len(forward), size=n_edges, replace=False)
    m = np.zeros((d, d), dtype=int)
    for c in chosen:
        i, j = forward[c]
        m[i, j] = 1
    return RelationMatrix(m)


def gen_causal_dataset(relation: RelationMatrix | np.ndarray, cfg: GenConfig,
                       names: Sequence[str] | None = None) -> tuple[Frame, RelationMatrix]:
    """Trend + seasonality + noise per variable plus lagged parent influence."""
    rel = relation if isinstance(relation, RelationMatrix) else RelationMatrix(relation)
    order = rel.topological_order()
    rng = np.random.default_rng(cfg.seed)
    d = rel.d
    warm = cfg.lag_range[1]
    n = cfg.T + warm
    t = np.arange(n, dtype=float)
    slope = [_u(rng, cfg.trend_slope_range) for _ in range(d)]
    period = [_i(rng, cfg.season_period_range) for _ in range(d)]
    amp = [_u(rng, cfg.season_amp_range) for _ in range(d)]
    phase = [_u(rng, (0, 2 * math.pi)) for _ in range(d)]
    sigma = [_u(rng, cfg.noise_sigma_range) for _ in range(d)]
    coef = {(i, j): _u(rng, cfg.coef_range) * rng.choice((-1, 1))
            for i in range(d) for j in range(d) if i != j and rel.matrix[i, j]}
    lag = {k: _i(rng, cfg.lag_range) for k in sorted(coef)}
    X = np.zeros((n, d))
    for j in order:
        x = slope[j] * t + amp[j] * np.sin(2 * math.pi * t / period[j] + phase[j]) + rng.normal(0, sigma[j], n)
        for i in range(d):
            if (i, j) in coef:
                L = lag[(i, j)]
                x[L:] += coef[(i, j)] * X[:-L, i]
        X[:, j] = x
    names = list(names) if names is not None else list(CAUSAL_NAMES[:d]) if d <= len(CAUSAL_NAMES) \
        else [f"x{k}" for k in range(d)]
    return Frame.from_array(X[warm:], names, START, HOUR), rel


# ---------------------------------------------------------------- series


def _ar1(rng, n: int, phi: float, sigma: float) -> np.ndarray:
    e = rng.normal(0, sigma, n)
    out = np.empty(n)
    out[0] = e[0] / math.sqrt(1 - phi ** 2)
    for k in range(1, n):
        out[k] = phi * out[k - 1] + e[k]
    return out


def electricity_frame(rng: np.random.Generator, n: int, lag: int = 2, n_grids: int = 1) -> Frame:
    """Hourly load column(s) driven by lagged temperature and humidity proxies."""
    t = np.arange(n + lag, dtype=float)
    temp_phase = _u(rng, (12, 16))
    temperature = (10 + _u(rng, (3, 6)) * np.sin(2 * math.pi * (t - temp_phase + 6) / 24)
                   + _ar1(rng, t.size, 0.97, 0.5))
    humidity = 60 - _u(rng, (5, 10)) * np.sin(2 * math.pi * (t - temp_phase + 6) / 24) + _ar1(rng, t.size, 0.95, 1.5)
    loads = []
    for _ in range(n_grids):
        base = _u(rng, (400, 800))
        daily = base * _u(rng, (0.08, 0.15))
        weekly = base * _u(rng, (0.03, 0.06))
        beta_t = base * _u(rng, (0.01, 0.02))
        beta_h = base * _u(rng, (0.001, 0.003))
        tt = t[lag:]
        # load peaks follow the temperature cycle by `lag` hours
        season = daily * np.sin(2 * math.pi * (tt - lag - temp_phase + 6) / 24)
        weekend = -weekly * ((tt // 24) % 7 >= 5)
        drive = beta_t * (temperature[:-lag] - 10) + beta_h * (humidity[:-lag] - 60)
        noise = _ar1(rng, n, 0.6, base * 0.006)
        loads.append(base + season + weekend + drive + noise)
    names = ["load"] if n_grids == 1 else [f"grid_{k + 1}" for k in range(n_grids)]
    cols = np.column_stack([*loads, temperature[lag:], humidity[lag:]])
    return Frame.from_array(cols, [*names, "temperature", "humidity"], START, HOUR)


def temperature_frame(rng: np.random.Generator, n: int, n_events: int = 0, width_range=(1, 3),
                      magnitude_range=(2.5, 5.0)) -> tuple[TimeSeries, BinVec, list[dict]]:
    """Hourly 2m temperature with injected extreme events and their labels."""
    t = np.arange(n, dtype=float)
    x = (_u(rng, (-5, 25)) + _u(rng, (3, 7)) * np.sin(2 * math.pi * (t - _u(rng, (12, 16)) + 6) / 24)
         + np.cumsum(rng.normal(0, 0.03, n)) + rng.normal(0, 0.3, n))
    labels = np.zeros(n, dtype=int)
    events = []
    margin = 24
    tries = 0
    while len(events) < n_events:
        tries += 1
        if tries > 1000:
            raise InfeasibleSample("could not place all anomaly events without overlap")
        w = _i(rng, width_range)
        loc = _i(rng, (margin, n - margin - w))
        if labels[max(0, loc - 3): loc + w + 3].any():
            continue
        mag = _u(rng, magnitude_range) * rng.choice((-1, 1))
        x[loc:loc + w] += mag
        labels[loc:loc + w] = 1
        events.append({"location": loc, "width": w, "magnitude": mag})
    return TimeSeries(x, START, HOUR, "t2m"), BinVec(labels), sorted(events, key=lambda e: e["location"])


def gen_series(domain: str, cfg: GenConfig, n: int | None = None, **kwargs):
    rng = np.random.default_rng(cfg.seed)
    if domain == "electricity_like":
        return electricity_frame(rng, n or cfg.T, lag=kwargs.get("lag", cfg.covariate_lag),
                                 n_grids=kwargs.get("n_grids", 1))
    if domain == "temperature_like":
        return temperature_frame(rng, n or cfg.T, kwargs.get("n_events", 0),
                                 kwargs.get("width_range", cfg.anomaly_width_range),
                                 kwargs.get("magnitude_range", cfg.anomaly_magnitude_range))
    raise InvalidValue(f"unknown domain {domain!r}; choose electricity_like or temperature_like")


# ---------------------------------------------------------------- questions

CONSTRAINT_CLAUSES = {
    "max_load": "I need to ensure that the maximum allowable system load does not exceed {value} MW.",
    "min_load": "I require that the system load is maintained above a minimum of {value} MW.",
    "ramp_rate": "I must monitor the load ramp rate to ensure it does not exceed {value} MW for each time step.",
    "variability": "I need to manage the load variability so that it does not exceed {value} MW over the given period.",
}

TEMPLATES = {
    "predictive": (
        "I have historical {target} data for the past {history_length} hours. {constraint} "
        "Please give me a forecast for the next {horizon} hours for {target}. Your goal is to make the most "
        "accurate forecast as possible, refine prediction result based on the constraint previously described. "
        "Please return a 1D numpy array. The historical data is stored in variable VAL."
    ),
    "predictive_cov": (
        "I have historical {influence} data and the corresponding {target} data for the past {history_length} "
        "hours. {constraint} Think about how {influence} influence {target}. Please give me a forecast for the "
        "next {horizon} hours for {target}. Your goal is to make the most accurate forecast as possible, refine "
        "prediction result based on the constraint previously described. Please return a 1D numpy array. "
        "The historical {target} data is stored in variable VAL and the {influence} data in variable COV."
    ),
    "anomaly_reference": (
        "I have 2m temperature data that spans {length} hours. Please tell me whether there are anomalies "
        "(extreme weather events) and where are anomalies if present in this sequence. I also have some "
        "anomaly-free 2m temperature data from the same region. Please return a 1D array of 0/1 labels, one per "
        "hour. The data is stored in variable VAL and the anomaly-free data in variable NORM_VAL."
    ),
    "anomaly_rate": (
        "I have 2m temperature data that spans {length} hours. Please tell me whether there are anomalies "
        "(extreme weather events) and where are anomalies if present in this sequence. I know that {rate} "
        "percent of the times have anomalies. Please return a 1D array of 0/1 labels, one per hour. The data is "
        "stored in variable VAL and the anomaly rate as a fraction in variable ANOMALY_RATE."
    ),
    "causal": (
        "I have historical {names} data and want to get the causal relationship between each pair of the "
        "variables. I know that {ratio}% of the variable pairs have relationship. Consider the potential "
        "influence of each variable on the others in this variable list: {names}. Please return a {d} x {d} 0/1 "
        "matrix whose entry (i, j) is 1 when variable i influences variable j. The data is stored in variable "
        "DATA with one column per variable."
    ),
}


def _fmt(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.4f}"
    return str(v)


def render_question(template_id: str, params: Mapping[str, Any]) -> str:
    try:
        template = TEMPLATES[template_id]
    except KeyError:
        raise InvalidValue(f"unknown template {template_id!r}") from None
    fields = [f for _, f, _, _ in string.Formatter().parse(template) if f]
    for f in fields:
        if f not in params:
            raise MissingPlaceholder(f)
    if "constraint" in fields and isinstance(params["constraint"], ConstraintSpec):
        c = params["constraint"]
        params = {**params, "constraint": CONSTRAINT_CLAUSES[c.kind].format(value=_fmt(c.value))}
    return template.format(**{f: _fmt(params[f]) for f in fields})


# ---------------------------------------------------------------- tasks


def _round4(x: float) -> float:
    return float(round(float(x), 4))


def sample_constraint(rng: np.random.Generator, kind: str, truth: np.ndarray, anchor: float) -> ConstraintSpec:
    """Limit inside the range of the true future so it usually binds."""
    if kind == "max_load":
        return ConstraintSpec(kind, _round4(np.quantile(truth, _u(rng, (0.8, 0.97)))))
    if kind == "min_load":
        return ConstraintSpec(kind, _round4(np.quantile(truth, _u(rng, (0.03, 0.2)))))
    if kind == "ramp_rate":
        steps = np.abs(np.diff(np.r_[anchor, truth]))
        return ConstraintSpec(kind, _round4(np.quantile(steps, _u(rng, (0.75, 0.95)))), anchor=float(anchor))
    if kind == "variability":
        return ConstraintSpec(kind, _round4(np.std(truth, ddof=1) * _u(rng, (0.75, 0.95))))
    raise InvalidValue(f"unknown constraint kind {kind!r}")


def _admits_solution(truth: TimeSeries, spec: ConstraintSpec) -> bool:
    fixed = project(truth, spec)
    if check(fixed, spec):
        return False
    if np.std(fixed.values) == 0 and spec.value > 0:
        return False
    try:
        return mape(truth.values, fixed.values) < 1
    except ZeroDenominator:
        return False


def make_predictive_task(cfg: GenConfig, constraint_kind: str, variant: str = "nocov", task_id: str = "",
                         grid_index: int = 0, source: Optional[TimeSeries] = None) -> TaskInstance:
    """Forecasting task with one operational constraint.

    ``source`` replaces the synthetic load with a real series (no covariates).
    """
    if constraint_kind not in CONSTRAINT_KINDS:
        raise InvalidValue(f"unknown constraint kind {constraint_kind!r}")
    if variant not in PREDICTIVE_VARIANTS:
        raise InvalidValue(f"unknown predictive variant {variant!r}")
    rng = np.random.default_rng(cfg.seed)
    for _ in range(MAX_RESAMPLES):
        hist_len = 24 * _i(rng, cfg.history_days_range)
        horizon = _i(rng, cfg.horizon_range)
        n = hist_len + horizon
        if source is not None:
            if len(source) < n:
                raise InvalidValue(f"source series too short for history {hist_len} + horizon {horizon}")
            off = _i(rng, (0, len(source) - n)) if len(source) > n else 0
            part = source.slice(off, off + n)
            frame = Frame((part.with_values(part.values, "load"),))
            target = "load"
        else:
            grids = 3 if variant == "multigrid" else 1
            frame = electricity_frame(rng, n, cfg.covariate_lag, grids)
            target = f"grid_{grid_index % 3 + 1}" if grids > 1 else "load"
        full = frame[target]
        hist, truth = full.slice(0, hist_len), full.slice(hist_len, n)
        spec = sample_constraint(rng, constraint_kind, truth.values, float(hist.values[-1]))
        if spec.value <= 0 and constraint_kind in ("ramp_rate", "variability"):
            continue
        if _admits_solution(truth, spec):
            break
    else:
        raise InfeasibleSample(f"no feasible {constraint_kind} constraint after {MAX_RESAMPLES} samples")

    env: dict[str, Any] = {"VAL": hist.with_values(hist.values, target)}
    if variant == "nocov" or source is not None:
        question = render_question("predictive", {"target": f"{target} (MW)", "history_length": hist_len,
                                                  "horizon": horizon, "constraint": spec})
    else:
        cov_names = [c for c in frame.names if c != target]
        env["COV"] = Frame(tuple(frame[c].slice(0, hist_len) for c in cov_names))
        influence = ", ".join(cov_names)
        question = render_question("predictive_cov", {"target": target, "influence": influence,
                                                      "history_length": hist_len, "horizon": horizon,
                                                      "constraint": spec})
    return TaskInstance(
        id=task_id, kind=TaskKind.PREDICTIVE, question=question, env=env, ground_truth=truth,
        output_contract=OutputContract("series", (horizon,)), constraint=spec, horizon=horizon,
        family=f"predictive:{constraint_kind}:{variant}", seed=cfg.seed,
        meta={"binding": bool(check(truth, spec)), "history_var": "VAL"},
    )


def make_diagnostic_task(cfg: GenConfig, variant: str, task_id: str = "") -> TaskInstance:
    rng = np.random.default_rng(cfg.seed)
    if variant in ("reference", "anomaly_rate"):
        n = 24 * _i(rng, cfg.anomaly_days_range)
        k = _i(rng, cfg.anomaly_count_range)
        sub = GenConfig(**{**asdict(cfg), "seed": int(rng.integers(2 ** 62))})
        val, labels, events = gen_series("temperature_like", sub, n, n_events=k)
        env: dict[str, Any] = {"VAL": val}
        if variant == "reference":
            # same generator, fresh noise, no events
            norm, _, _ = temperature_frame(np.random.default_rng(sub.seed + 1), n, 0)
            env["NORM_VAL"] = norm
            question = render_question("anomaly_reference", {"length": n})
        else:
            rate = sum(labels) / n
            env["ANOMALY_RATE"] = rate
            question = render_question("anomaly_rate", {"length": n, "rate": 100 * rate})
        family = "anomaly:reference" if variant == "reference" else "anomaly:rate"
        return TaskInstance(
            id=task_id, kind=TaskKind.DIAGNOSTIC_ANOMALY, question=question, env=env, ground_truth=labels,
            output_contract=OutputContract("binvec", (n,)), family=family, seed=cfg.seed,
            meta={"events": events},
        )
    if variant == "causal":
        rel = random_relation(rng)
        data_cfg = GenConfig(**{**asdict(cfg), "seed": int(rng.integers(2 ** 62))})
        data, rel = gen_causal_dataset(rel, data_cfg)
        ratio = rel.ratio
        question = render_question("causal", {"names": ", ".join(data.names), "ratio": 100 * ratio, "d": rel.d})
        return TaskInstance(
            id=task_id, kind=TaskKind.DIAGNOSTIC_CAUSAL, question=question, env={"DATA": data},
            ground_truth=rel.matrix.astype(float), output_contract=OutputContract("matrix", (rel.d, rel.d)),
            knowledge={"relation_ratio": ratio}, family="causal", seed=cfg.seed,
        )
    raise InvalidValue(f"unknown diagnostic variant {variant!r}; choose reference, anomaly_rate or causal")


# ---------------------------------------------------------------- families


def expand_families(spec: str) -> list[str]:
    """Expand a family selector into concrete families.

    ``all``, ``predictive``, ``predictive:<kind>``, ``predictive:<kind>:<variant>``,
    ``anomaly``, ``anomaly:reference``, ``anomaly:rate`` and ``causal``.
    """
    parts = spec.split(":")
    head = parts[0]
    if spec == "all":
        return expand_families("predictive") + expand_families("anomaly") + ["causal"]
    if head == "predictive" and len(parts) <= 3:
        kinds = CONSTRAINT_KINDS if len(parts) == 1 else (parts[1],)
        variants = PREDICTIVE_VARIANTS if len(parts) < 3 else (parts[2],)
        if all(k in CONSTRAINT_KINDS for k in kinds) and all(v in PREDICTIVE_VARIANTS for v in variants):
            return [f"predictive:{k}:{v}" for k in kinds for v in variants]
    if spec == "anomaly":
        return ["anomaly:reference", "anomaly:rate"]
    if spec in ("anomaly:reference", "anomaly:rate", "causal"):
        return [spec]
    raise InvalidValue(f"unknown task family {spec!r}")


def family_slug(family: str) -> str:
    return family.replace(":", "-")


def make_task(family: str, index: int, master_seed: int, base: GenConfig | None = None) -> TaskInstance:
    cfg = (base or GenConfig()).with_seed(instance_seed(master_seed, family, index))
    task_id = f"{family_slug(family)}-{index:03d}"
    parts = family.split(":")
    if parts[0] == "predictive":
        return make_predictive_task(cfg, parts[1], parts[2], task_id, grid_index=index)
    if family == "anomaly:reference":
        return make_diagnostic_task(cfg, "reference", task_id)
    if family == "anomaly:rate":
        return make_diagnostic_task(cfg, "anomaly_rate", task_id)
    if family == "causal":
        return make_diagnostic_task(cfg, "causal", task_id)
    raise InvalidValue(f"unknown task family {family!r}")


def default_count(family: str) -> int:
    return DEFAULT_COUNTS[family.split(":")[0]]


def generate(master_seed: int, families: Iterable[str], n: int | None = None,
             base: GenConfig | None = None) -> list[TaskInstance]:
    tasks = []
    for fam in families:
        for concrete in expand_families(fam):
            count = n if n is not None else default_count(concrete)
            tasks += [make_task(concrete, i, master_seed, base) for i in range(count)]
    return tasks


# ---------------------------------------------------------------- persistence


def _dump_value(v: Any, name: str, folder: Path) -> Any:
    if isinstance(v, (TimeSeries, Frame)):
        fname = f"{name}.csv"
        (folder / fname).write_text(write_csv(v))
        return {"type": "frame" if isinstance(v, Frame) else "series", "file": fname,
                **({"name": v.name} if isinstance(v, TimeSeries) else {})}
    return value_to_jsonable(v)


def _load_value(d: Mapping, folder: Path) -> Any:
    if "file" in d:
        frame = read_csv(folder / d["file"])
        if d["type"] == "series":
            col = frame.columns[0]
            return col.with_values(col.values, d.get("name", col.name))
        return frame
    return value_from_jsonable(d)


def task_to_json(task: TaskInstance, folder: Path) -> dict:
    folder.mkdir(parents=True, exist_ok=True)
    env = {k: _dump_value(v, k, folder) for k, v in sorted(task.env.items())}
    return {
        "id": task.id,
        "kind": task.kind.value,
        "family": task.family,
        "seed": task.seed,
        "question": task.question,
        "env": env,
        "ground_truth": _dump_value(task.ground_truth, "ground_truth", folder),
        "output_contract": task.output_contract.to_dict(),
        "constraint": None if task.constraint is None else task.constraint.to_dict(),
        "knowledge": None if task.knowledge is None else dict(task.knowledge),
        "horizon": task.horizon,
        "tau": task.tau,
        "meta": dict(task.meta),
    }


def save_task(task: TaskInstance, folder: Path) -> Path:
    folder = Path(folder)
    doc = task_to_json(task, folder)
    path = folder / "task.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def load_task(folder: Path) -> TaskInstance:
    folder = Path(folder)
    doc = json.loads((folder / "task.json").read_text())
    gt = _load_value(doc["ground_truth"], folder)
    if doc["output_contract"]["variant"] == "binvec":
        gt = BinVec(gt)
    return TaskInstance(
        id=doc["id"], kind=TaskKind(doc["kind"]), question=doc["question"],
        env={k: _load_value(v, folder) for k, v in doc["env"].items()},
        ground_truth=gt, output_contract=OutputContract.from_dict(doc["output_contract"]),
        constraint=None if doc["constraint"] is None else ConstraintSpec.from_dict(doc["constraint"]),
        knowledge=doc["knowledge"], horizon=doc["horizon"], family=doc["family"], seed=doc["seed"],
        tau=doc.get("tau", 0.1), meta=doc.get("meta", {}),
    )


def write_dataset(tasks: Sequence[TaskInstance], out_dir: Path, master_seed: int) -> dict:
    out_dir = Path(out_dir)
    entries = []
    for task in tasks:
        rel = Path(family_slug(task.family)) / task.id
        save_task(task, out_dir / rel)
        entries.append({"id": task.id, "family": task.family, "seed": task.seed, "path": rel.as_posix()})
    counts: dict[str, int] = {}
    for e in entries:
        counts[e["family"]] = counts.get(e["family"], 0) + 1
    manifest = {"schema": 1, "master_seed": master_seed, "counts": counts, "tasks": entries}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def load_dataset(path: Path) -> list[TaskInstance]:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise DatasetNotFound(f"no manifest.json under {path}")
    manifest = json.loads(manifest_path.read_text())
    return [load_task(path / e["path"]) for e in manifest["tasks"]]


def manifest_hash(out_dir: Path) -> str:
    return hashlib.sha256((Path(out_dir) / "manifest.json").read_bytes()).hexdigest()
