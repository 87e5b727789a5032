"""Command-line entry point: gen, run, eval, plan, ops.

Exit codes: 0 normal completion, 1 invalid plan (``plan`` only), 2 usage
error, 3 environment error (missing dataset, endpoint or file problems).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import benchgen, evaluator
from .core import value_kind, value_to_jsonable
from .decomposer import EndpointConfig, FixtureRecorder, LLMDecomposer, ScriptedDecomposer
from .dsl import parse_plan, serialize_plan, validate_plan
from .errors import DatasetNotFound, EndpointError, InvalidValue, PlanSyntaxError, TSReasonerError
from .executor import DEFAULT_BUDGET, EpisodeTrace, Success, run_episode
from .registry import default_registry
from .retrieval import RetrievalClient

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("tsreasoner")

EXIT_OK, EXIT_INVALID_PLAN, EXIT_USAGE, EXIT_ENV = 0, 1, 2, 3
DEFAULT_ENV_NAMES = ("VAL", "COV", "NORM_VAL", "ANOMALY_RATE", "DATA")


class UsageError(Exception):
    pass


class EnvironmentProblem(Exception):
    pass


# ---------------------------------------------------------------- config


@dataclass
class RunConfig:
    dataset: Optional[Path] = None
    decomposer: str = "scripted"
    budget: int = DEFAULT_BUDGET
    tau: Optional[float] = None
    parallelism: int = 1
    seed: int = 0
    use_project: bool = True
    out: Path = Path("run_out")
    report_out: Optional[Path] = None
    trace_out: Optional[Path] = None
    record_fixtures: Optional[Path] = None
    endpoint: dict = field(default_factory=dict)
    retrieval: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.dataset is None:
            raise UsageError("run needs --dataset (or 'dataset' in the config file)")
        if self.decomposer not in ("scripted", "llm"):
            raise UsageError(f"decomposer must be scripted or llm, got {self.decomposer!r}")
        if self.budget < 1:
            raise UsageError("budget must be >= 1")
        if self.parallelism < 1:
            raise UsageError("parallelism must be >= 1")
        if self.tau is not None and self.tau < 0:
            raise UsageError("tau must be >= 0")
        if self.decomposer == "scripted" and self.endpoint.get("mode") == "live":
            raise UsageError("the scripted decomposer does not use an endpoint")

    def endpoint_config(self) -> EndpointConfig:
        e = self.endpoint
        fixture_dir = e.get("fixture_dir")
        return EndpointConfig(
            base_url=e.get("base_url", EndpointConfig.base_url),
            model=e.get("model", EndpointConfig.model),
            api_key_env=e.get("api_key_env", EndpointConfig.api_key_env),
            mode=e.get("mode", "replay"),
            fixture_dir=Path(fixture_dir) if fixture_dir else None,
            timeout=float(e.get("timeout", EndpointConfig.timeout)),
        )


def load_config_file(path: Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise EnvironmentProblem(f"cannot read config {path}: {exc}") from exc
    try:
        if str(path).endswith(".toml"):
            return tomllib.loads(text)
        return json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from exc


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Config file values overridden by any flag given on the command line."""
    doc = load_config_file(args.config) if args.config else {}
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(**{k: v for k, v in doc.items() if k not in ("endpoint", "retrieval")})
    cfg.endpoint = dict(doc.get("endpoint", {}))
    cfg.retrieval = dict(doc.get("retrieval", {}))
    for name in ("dataset", "decomposer", "budget", "tau", "parallelism", "seed", "out", "report_out",
                 "trace_out", "record_fixtures"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if args.no_project:
        cfg.use_project = False
    for flag, key in (("base_url", "base_url"), ("model", "model"), ("api_key_env", "api_key_env"),
                      ("endpoint_mode", "mode"), ("fixture_dir", "fixture_dir")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg.endpoint[key] = value
    for flag, key in (("retrieval_mode", "mode"), ("cache_dir", "cache_dir")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg.retrieval[key] = value
    for name in ("dataset", "out", "report_out", "trace_out", "record_fixtures"):
        value = getattr(cfg, name)
        if value is not None:
            setattr(cfg, name, Path(value))
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- commands


def cmd_gen(args: argparse.Namespace) -> int:
    families = args.family or ["all"]
    try:
        for f in families:
            benchgen.expand_families(f)
    except InvalidValue as exc:
        raise UsageError(str(exc)) from exc
    if args.n is not None and args.n < 1:
        raise UsageError("--n must be >= 1")
    tasks = benchgen.generate(args.seed, families, args.n)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = benchgen.write_dataset(tasks, out, args.seed)
    except OSError as exc:
        raise EnvironmentProblem(f"cannot write dataset to {out}: {exc}") from exc
    for fam, count in sorted(manifest["counts"].items()):
        print(f"{fam}: {count}")
    print(f"wrote {len(tasks)} tasks to {out}")
    return EXIT_OK


def _make_decomposer(cfg: RunConfig, registry):
    if cfg.decomposer == "scripted":
        scripted = ScriptedDecomposer(use_project=cfg.use_project)
        if cfg.record_fixtures is not None:
            ep = cfg.endpoint_config()
            ep.fixture_dir = cfg.record_fixtures
            return FixtureRecorder(scripted, LLMDecomposer(ep, registry))
        return scripted
    return LLMDecomposer(cfg.endpoint_config(), registry)


def _answer_doc(trace: EpisodeTrace) -> Optional[dict]:
    if isinstance(trace.final, Success):
        try:
            return value_to_jsonable(trace.final.result)
        except TSReasonerError:
            return None
    return None


def run_tasks(tasks, cfg: RunConfig) -> tuple[dict, list[EpisodeTrace]]:
    retrieval = RetrievalClient(mode=cfg.retrieval.get("mode", "offline"),
                                cache_dir=cfg.retrieval.get("cache_dir"))
    registry = default_registry(retrieval)
    decomposer = _make_decomposer(cfg, registry)

    def one(task):
        trace = run_episode(task, decomposer, cfg.budget, registry, cfg.tau)
        if isinstance(trace.final, Success):
            result = evaluator.evaluate(trace.final.result, task)
        else:
            e = trace.final.error
            result = evaluator.execution_failed(task, f"{e.code}: {e.message}")
        return trace, result

    if cfg.parallelism == 1:
        pairs = [one(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            pairs = list(pool.map(one, tasks))
    traces = [p[0] for p in pairs]
    report = evaluator.aggregate(p[1] for p in pairs)
    return report, traces


def cmd_run(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    try:
        tasks = benchgen.load_dataset(cfg.dataset)
    except DatasetNotFound as exc:
        raise EnvironmentProblem(str(exc)) from exc
    if not tasks:
        raise EnvironmentProblem(f"dataset {cfg.dataset} has no tasks")
    t0 = time.perf_counter()
    try:
        report, traces = run_tasks(tasks, cfg)
    except EndpointError as exc:
        raise EnvironmentProblem(f"{exc.code}: {exc}") from exc
    elapsed = time.perf_counter() - t0

    report_path = cfg.report_out or cfg.out / "report.json"
    trace_dir = cfg.trace_out or cfg.out / "traces"
    answers_dir = cfg.out / "answers"
    try:
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text(evaluator.report_json(report))
        trace_dir.mkdir(parents=True, exist_ok=True)
        for tr in traces:
            (trace_dir / f"{tr.task_id}.json").write_text(tr.to_json() + "\n")
            doc = _answer_doc(tr)
            if doc is not None:
                (answers_dir / tr.task_id).mkdir(parents=True, exist_ok=True)
                (answers_dir / tr.task_id / "answer.json").write_text(json.dumps(doc, sort_keys=True) + "\n")
    except OSError as exc:
        raise EnvironmentProblem(f"cannot write outputs: {exc}") from exc
    print(evaluator.render_table(report), end="")
    print(f"report: {report_path}  traces: {trace_dir}  ({elapsed:.1f}s)")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        tasks = benchgen.load_dataset(Path(args.dataset))
    except DatasetNotFound as exc:
        raise EnvironmentProblem(str(exc)) from exc
    outputs = Path(args.outputs_dir)
    if not outputs.is_dir():
        raise EnvironmentProblem(f"outputs directory {outputs} does not exist")
    results = [evaluator.evaluate_answer_dir(t, outputs) for t in tasks]
    report = evaluator.aggregate(results)
    if args.report_out:
        Path(args.report_out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report_out).write_text(evaluator.report_json(report))
    print(evaluator.render_table(report), end="")
    return EXIT_OK


def cmd_plan(args: argparse.Namespace) -> int:
    try:
        text = Path(args.plan_file).read_text()
    except OSError as exc:
        raise EnvironmentProblem(f"cannot read {args.plan_file}: {exc}") from exc
    env_kinds = None
    variant = None
    if args.task:
        task = benchgen.load_task(Path(args.task))
        env_names = list(task.env)
        env_kinds = {k: value_kind(v) for k, v in task.env.items()}
        variant = task.output_contract.variant
    else:
        env_names = args.env or list(DEFAULT_ENV_NAMES)
    try:
        plan = parse_plan(text)
    except PlanSyntaxError as exc:
        print(f"error: line {exc.line}, column {exc.column}: {exc}")
        return EXIT_INVALID_PLAN
    diags = validate_plan(plan, env_names, default_registry(RetrievalClient()), env_kinds, variant)
    print(serialize_plan(plan), end="")
    for d in diags:
        print(f"{d.severity}: step {d.step_index}: {d.code}: {d.message}")
    return EXIT_INVALID_PLAN if any(d.severity == "error" for d in diags) else EXIT_OK


def cmd_ops(args: argparse.Namespace) -> int:
    registry = default_registry(RetrievalClient())
    if args.json:
        doc = [{"name": op.canonical, "display": op.display, "signature": op.signature(),
                "summary": op.summary, "implemented": op.implemented, "substitute": op.substitute}
               for op in registry]
        print(json.dumps(doc, indent=1))
        return EXIT_OK
    for op in registry:
        if op.implemented:
            print(f"{op.display:<24} {op.canonical:<22} {op.signature()}")
            print(f"{'':<24} {op.summary}")
        else:
            print(f"{op.display:<24} (not available; use {op.substitute})")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsreasoner", description="Operator-program reasoning over time series tasks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic benchmark")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--family", action="append",
                   help="family selector (repeatable): all, predictive[:kind[:variant]], anomaly[:reference|:rate], causal")
    g.add_argument("--n", type=int, default=None, help="instances per concrete family (default: family size)")
    g.add_argument("--out", default="dataset")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run episodes over a dataset and score them")
    r.add_argument("--dataset")
    r.add_argument("--config", help="JSON or TOML run configuration; flags override it")
    r.add_argument("--decomposer", choices=("scripted", "llm"))
    r.add_argument("--budget", type=int)
    r.add_argument("--tau", type=float)
    r.add_argument("--parallelism", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--no-project", action="store_true", help="ablation: drop the projection step from plans")
    r.add_argument("--out", help="output directory for report, traces and answers")
    r.add_argument("--report-out")
    r.add_argument("--trace-out")
    r.add_argument("--base-url")
    r.add_argument("--model")
    r.add_argument("--api-key-env")
    r.add_argument("--endpoint-mode", choices=("replay", "live", "record"))
    r.add_argument("--fixture-dir")
    r.add_argument("--record-fixtures", help="with the scripted decomposer, store its plans as LLM replay fixtures")
    r.add_argument("--retrieval-mode", choices=("offline", "live"))
    r.add_argument("--cache-dir")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="score third-party answers against a dataset")
    e.add_argument("outputs_dir")
    e.add_argument("--dataset", required=True)
    e.add_argument("--report-out")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plan", help="parse and validate a plan file")
    pl.add_argument("plan_file")
    pl.add_argument("--task", help="task directory supplying environment names and kinds")
    pl.add_argument("--env", action="append", help="environment variable name (repeatable)")
    pl.set_defaults(func=cmd_plan)

    o = sub.add_parser("ops", help="list the operator registry")
    o.add_argument("--json", action="store_true")
    o.set_defaults(func=cmd_ops)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EnvironmentProblem as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
