import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import series
from tsreasoner.benchgen import make_task
from tsreasoner.constraints import ConstraintSpec, project
from tsreasoner.core import Metric, OutputContract, Quality, TaskInstance, TaskKind
from tsreasoner.errors import EmptyResults
from tsreasoner.evaluator import (
    EvalResult,
    Stage1,
    aggregate,
    evaluate,
    evaluate_answer_dir,
    execution_failed,
    render_table,
    report_json,
    score_solution,
    validate_solution,
)


def predictive(truth, spec=None, tid="p"):
    truth = np.asarray(truth, dtype=float)
    return TaskInstance(tid, TaskKind.PREDICTIVE, "q", {"VAL": series(truth)}, series(truth),
                        OutputContract("series", (truth.size,)), constraint=spec, horizon=truth.size,
                        family="predictive:test")


def anomaly(truth, tid="a"):
    return TaskInstance(tid, TaskKind.DIAGNOSTIC_ANOMALY, "q", {}, np.asarray(truth),
                        OutputContract("binvec", (len(truth),)), family="anomaly:test")


TRUTH = np.array([100.0, 110.0, 120.0, 130.0])


class TestValidate:
    def test_happy_path(self):
        task = predictive(TRUTH, ConstraintSpec("max_load", 125))
        out = project(TRUTH * 1.08, task.constraint)
        r = evaluate(out, task)
        assert r.passed and r.stage2.value < 0.1

    def test_shape(self):
        assert validate_solution(TRUTH[:3], predictive(TRUTH)).reason == "ShapeMismatch"
        assert validate_solution(np.array([1, np.nan, 1, 1.0]), predictive(TRUTH)).reason == "ShapeMismatch"
        assert validate_solution("x", predictive(TRUTH)).reason == "ShapeMismatch"

    def test_constraint_any_amount(self):
        task = predictive(TRUTH, ConstraintSpec("max_load", 130))
        assert validate_solution(TRUTH + [0, 0, 0, 1e-6], task).reason == "ConstraintViolated"

    def test_constant_forecast(self):
        assert validate_solution(np.full(4, 115.0), predictive(TRUTH)).reason == "TrivialOutput"

    def test_forced_constant_exempt(self):
        task = predictive(TRUTH, ConstraintSpec("variability", 0))
        assert validate_solution(np.full(4, 115.0), task).passed

    def test_unreasonable_mape(self):
        r = evaluate(TRUTH * 2.2, predictive(TRUTH))
        assert r.stage1.reason == "UnreasonableMape" and r.stage2 is None

    def test_all_zero_labels(self):
        assert validate_solution(np.zeros(10), anomaly([0] * 7 + [1] * 3)).reason == "TrivialOutput"

    def test_all_zero_allowed_when_truth_is_clean(self):
        assert validate_solution(np.zeros(5), anomaly([0] * 5)).passed

    def test_non_binary_labels(self):
        assert validate_solution(np.array([0, 2, 0]), anomaly([0, 1, 0])).reason == "ShapeMismatch"

    def test_causal_diagonal_ignored(self):
        task = make_task("causal", 0, 7)
        d = task.ground_truth.shape[0]
        assert validate_solution(np.eye(d), task).reason == "TrivialOutput"
        assert validate_solution(task.ground_truth, task).passed

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4), st.floats(90, 140),
           st.sampled_from(["max_load", "min_load", "ramp_rate", "variability"]))
    def test_projected_never_violates(self, noise, limit, kind):
        spec = ConstraintSpec(kind, limit if kind in ("max_load", "min_load") else limit / 10, anchor=95.0)
        out = project(TRUTH + np.array(noise) / 100, spec)
        assert validate_solution(out, predictive(TRUTH, spec)).reason != "ConstraintViolated"


class TestScore:
    def test_perfect(self):
        assert score_solution(TRUTH, predictive(TRUTH)).value == 0
        assert score_solution(np.array([0, 1, 1]), anomaly([0, 1, 1])).value == 1.0

    def test_causal_oracle_pvalues(self):
        from tsreasoner import stats_ops as so
        accs = []
        for i in range(10):
            task = make_task("causal", i, 7)
            p = so.causal_matrix(task.env["DATA"], 5)
            out = so.select_top_ratio(p, task.knowledge["relation_ratio"])
            accs.append(score_solution(out, task).value)
        assert np.mean(accs) >= 0.75


def _res(tid, passed, value=None, reason=None):
    if passed:
        return EvalResult(tid, "fam", TaskKind.PREDICTIVE, Stage1(True), Quality(Metric.MAPE, value))
    return EvalResult(tid, "fam", TaskKind.PREDICTIVE, Stage1(False, reason))


class TestAggregate:
    def test_nine_of_ten(self):
        rs = [_res(f"t{i}", True, 0.1) for i in range(9)] + [_res("t9", False, reason="ConstraintViolated")]
        rep = aggregate(rs)
        assert rep["success_rate"] == 0.9
        assert rep["families"]["fam"]["mean"] == pytest.approx(0.1)
        assert rep["errors"] == {"ConstraintViolated": 1}

    def test_all_fail(self):
        rep = aggregate([_res("a", False, reason="ExecutionFailed")])
        assert rep["success_rate"] == 0 and rep["families"]["fam"]["mean"] is None

    def test_single_pass_std_zero(self):
        assert aggregate([_res("a", True, 0.2)])["families"]["fam"]["std"] == 0.0

    def test_empty(self):
        with pytest.raises(EmptyResults):
            aggregate([])

    def test_failures_do_not_move_mean(self):
        base = [_res("a", True, 0.1), _res("b", True, 0.3)]
        more = base + [_res("c", False, reason="UnreasonableMape")]
        assert aggregate(base)["families"]["fam"]["mean"] == aggregate(more)["families"]["fam"]["mean"]

    def test_order_independent(self):
        rs = [_res("b", True, 0.1), _res("a", True, 0.3), _res("c", False, reason="TrivialOutput")]
        assert report_json(aggregate(rs)) == report_json(aggregate(rs[::-1]))

    def test_mape_above_one_excluded(self):
        task = predictive(TRUTH, tid="x")
        good = evaluate(TRUTH * 1.1, predictive(TRUTH, tid="y"))
        bad = evaluate(TRUTH * 2.2, task)
        rep = aggregate([good, bad])
        assert bad.stage1.reason == "UnreasonableMape"
        assert rep["families"]["predictive:test"]["mean"] == pytest.approx(0.1)

    def test_stage2_iff_stage1(self):
        with pytest.raises(ValueError):
            EvalResult("a", "f", TaskKind.PREDICTIVE, Stage1(True))

    def test_table(self):
        text = render_table(aggregate([_res("a", True, 0.2), _res("b", False, reason="TrivialOutput")]))
        assert "Success Rate" in text and "TrivialOutput=1" in text and "0.5000" in text


class TestAnswerDir:
    def test_missing_answer(self, tmp_path):
        r = evaluate_answer_dir(predictive(TRUTH, tid="t1"), tmp_path)
        assert r.stage1.reason == "ExecutionFailed"

    def test_json_list(self, tmp_path):
        (tmp_path / "t1").mkdir()
        (tmp_path / "t1" / "answer.json").write_text(json.dumps(list(TRUTH * 1.05)))
        assert evaluate_answer_dir(predictive(TRUTH, tid="t1"), tmp_path).passed

    def test_plain_csv_with_header(self, tmp_path):
        (tmp_path / "t1").mkdir()
        (tmp_path / "t1" / "answer.csv").write_text("value\n" + "\n".join(str(v) for v in TRUTH * 0.95))
        assert evaluate_answer_dir(predictive(TRUTH, tid="t1"), tmp_path).passed

    def test_malformed(self, tmp_path):
        (tmp_path / "t1").mkdir()
        (tmp_path / "t1" / "answer.csv").write_text("a,b\n1,x\n")
        assert evaluate_answer_dir(predictive(TRUTH, tid="t1"), tmp_path).stage1.reason == "ShapeMismatch"
        (tmp_path / "t1" / "answer.csv").unlink()
        (tmp_path / "t1" / "answer.json").write_text("{not json")
        assert evaluate_answer_dir(predictive(TRUTH, tid="t1"), tmp_path).stage1.reason == "ShapeMismatch"

    def test_execution_failed_helper(self):
        r = execution_failed(predictive(TRUTH), "boom")
        assert not r.passed and r.stage1.detail == "boom"
