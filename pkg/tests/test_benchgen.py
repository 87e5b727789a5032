import json

import numpy as np
import pytest

from tsreasoner import benchgen as bg
from tsreasoner import stats_ops as so
from tsreasoner.constraints import check, parse_constraint, project
from tsreasoner.core import BinVec, TaskKind, mape, write_csv
from tsreasoner.errors import CyclicRelation, DatasetNotFound, InvalidValue, MissingPlaceholder

MASTER = 7


class TestRelations:
    def test_example_matrix(self):
        rel = bg.RelationMatrix(bg.EXAMPLE_RELATION)
        assert rel.n_edges == 5
        assert rel.ratio == pytest.approx(5 / 12)
        assert f"{100 * rel.ratio:.2f}" == "41.67"

    def test_example_dataset(self):
        data, rel = bg.gen_causal_dataset(bg.EXAMPLE_RELATION, bg.GenConfig(seed=1))
        assert data.width == 4 and len(data) == 500
        np.testing.assert_array_equal(rel.matrix, bg.EXAMPLE_RELATION)

    def test_diagonal_forced(self):
        assert np.all(np.diag(bg.RelationMatrix(np.zeros((3, 3), dtype=int)).matrix) == 1)

    def test_cycle(self):
        with pytest.raises(CyclicRelation):
            bg.gen_causal_dataset(np.array([[1, 1, 0], [0, 1, 1], [1, 0, 1]]), bg.GenConfig())

    @pytest.mark.parametrize("seed", range(20))
    def test_random_relation_is_dag(self, seed):
        rel = bg.random_relation(np.random.default_rng(seed))
        assert 3 <= rel.d <= 6
        assert len(rel.topological_order()) == rel.d

    def test_requested_edge_count(self):
        rel = bg.random_relation(np.random.default_rng(0), d=5, n_edges=4)
        assert rel.n_edges == 4

    def test_parent_drives_child(self):
        data, _ = bg.gen_causal_dataset(np.array([[1, 1], [0, 1]]), bg.GenConfig(seed=3))
        p = so.causal_matrix(data, 5)
        assert p[0, 1] < 0.01

    @pytest.mark.slow
    def test_independent_columns_rarely_flagged(self):
        false, pairs = 0, 0
        for s in range(50):
            d = 3 + s % 4
            data, _ = bg.gen_causal_dataset(np.eye(d, dtype=int), bg.GenConfig(seed=s))
            p = so.causal_matrix(data, 5)
            off = ~np.eye(d, dtype=bool)
            false += int((p[off] < 0.05).sum())
            pairs += int(off.sum())
        assert false / pairs <= 0.10

    @pytest.mark.slow
    def test_true_edges_detected(self):
        hit, edges = 0, 0
        for s in range(50):
            rel = bg.random_relation(np.random.default_rng(s), 3 + s % 4)
            data, rel = bg.gen_causal_dataset(rel, bg.GenConfig(seed=10_000 + s))
            p = so.causal_matrix(data, 5)
            mask = (rel.matrix == 1) & ~np.eye(rel.d, dtype=bool)
            hit += int((p[mask] < 0.05).sum())
            edges += int(mask.sum())
        assert hit / edges >= 0.80


class TestSeries:
    @pytest.mark.parametrize("seed", range(5))
    def test_load_positive(self, seed):
        f = bg.gen_series("electricity_like", bg.GenConfig(seed=seed), 24 * 28, n_grids=3)
        for name in ("grid_1", "grid_2", "grid_3"):
            assert f[name].values.min() > 0

    def test_injected_events(self):
        val, labels, events = bg.gen_series("temperature_like", bg.GenConfig(seed=2), 200, n_events=3,
                                            width_range=(1, 1))
        assert isinstance(labels, BinVec) and sum(labels) == 3 and len(events) == 3
        assert len(val) == 200

    @pytest.mark.parametrize("lag", [1, 2, 3, 4])
    def test_covariate_lag_recovered(self, lag):
        f = bg.electricity_frame(np.random.default_rng(lag), 500, lag)
        assert so.max_corr_lag(f["temperature"], f["load"], 6) == lag

    def test_unknown_domain(self):
        with pytest.raises(InvalidValue):
            bg.gen_series("solar", bg.GenConfig())

    def test_config_ranges_checked(self):
        with pytest.raises(InvalidValue):
            bg.GenConfig(lag_range=(3, 3))


class TestQuestions:
    def test_predictive_numbers(self):
        from tsreasoner.constraints import ConstraintSpec
        q = bg.render_question("predictive", {"target": "load", "history_length": 336, "horizon": 69,
                                              "constraint": ConstraintSpec("max_load", 694.4796)})
        assert "69 hours" in q and "does not exceed 694.4796 MW" in q
        assert parse_constraint(q) == ConstraintSpec("max_load", 694.4796)

    def test_deterministic(self):
        p = {"length": 240}
        assert bg.render_question("anomaly_reference", p) == bg.render_question("anomaly_reference", p)

    def test_missing_placeholder(self):
        with pytest.raises(MissingPlaceholder, match="horizon"):
            bg.render_question("predictive", {"target": "load", "history_length": 3, "constraint": ""})

    def test_four_decimals(self):
        assert "12.5000%" in bg.render_question("causal", {"names": "a, b", "ratio": 12.5, "d": 2})


class TestTasks:
    def test_predictive_nocov_env(self):
        t = bg.make_task("predictive:max_load:nocov", 0, MASTER)
        assert set(t.env) == {"VAL"}
        assert "maximum allowable system load does not exceed" in t.question
        assert t.output_contract.shape == (t.horizon,)
        assert parse_constraint(t.question).value == t.constraint.value

    def test_predictive_cov_env(self):
        t = bg.make_task("predictive:ramp_rate:cov", 0, MASTER)
        assert set(t.env) == {"VAL", "COV"}
        assert t.env["COV"].names == ["temperature", "humidity"]
        assert t.constraint.anchor == t.env["VAL"].values[-1]

    def test_multigrid_targets_rotate(self):
        names = {bg.make_task("predictive:min_load:multigrid", i, MASTER).env["VAL"].name for i in range(3)}
        assert names == {"grid_1", "grid_2", "grid_3"}

    @pytest.mark.parametrize("kind", ["max_load", "min_load", "ramp_rate", "variability"])
    def test_feasible_solution_exists(self, kind):
        for i in range(10):
            t = bg.make_task(f"predictive:{kind}:nocov", i, MASTER)
            fixed = project(t.ground_truth, t.constraint)
            assert check(fixed, t.constraint) == []
            assert np.ptp(fixed.values) > 0
            assert mape(t.ground_truth.values, fixed.values) < 1

    @pytest.mark.parametrize("kind", ["max_load", "min_load", "ramp_rate", "variability"])
    def test_constraints_mostly_bind(self, kind):
        tasks = [bg.make_task(f"predictive:{kind}:{v}", i, MASTER) for i in range(20) for v in ("cov", "nocov")]
        assert np.mean([t.meta["binding"] for t in tasks]) >= 0.5

    def test_reference_variant(self):
        t = bg.make_task("anomaly:reference", 0, MASTER)
        assert set(t.env) == {"VAL", "NORM_VAL"}
        assert "anomaly-free 2m temperature data" in t.question
        assert len(t.env["NORM_VAL"]) == len(t.env["VAL"])

    def test_rate_variant_density(self):
        for i in range(10):
            t = bg.make_task("anomaly:rate", i, MASTER)
            n = len(t.ground_truth)
            assert abs(sum(t.ground_truth) / n - t.env["ANOMALY_RATE"]) <= 1 / n

    def test_causal_ratio_matches_question(self):
        for i in range(10):
            t = bg.make_task("causal", i, MASTER)
            d = t.ground_truth.shape[0]
            density = (t.ground_truth.sum() - d) / (d * (d - 1))
            assert density == pytest.approx(t.knowledge["relation_ratio"])
            assert f"{100 * density:.4f}%" in t.question
            assert t.kind is TaskKind.DIAGNOSTIC_CAUSAL

    def test_family_expansion(self):
        assert len(bg.expand_families("predictive")) == 12
        assert bg.expand_families("predictive:max_load:cov") == ["predictive:max_load:cov"]
        assert len(bg.expand_families("all")) == 15
        with pytest.raises(InvalidValue):
            bg.expand_families("weather")

    def test_instance_seed_stable(self):
        assert bg.instance_seed(7, "causal", 3) == bg.instance_seed(7, "causal", 3)
        assert bg.instance_seed(7, "causal", 3) != bg.instance_seed(7, "causal", 4)

    def test_real_source(self):
        from conftest import series
        src = series(500 + 50 * np.sin(np.arange(24 * 40) * 2 * np.pi / 24), "whatever")
        t = bg.make_predictive_task(bg.GenConfig(seed=1), "max_load", "nocov", "x", source=src)
        assert set(t.env) == {"VAL"} and t.env["VAL"].name == "load"


class TestPersistence:
    def test_same_seed_byte_identical_csv(self):
        a, _ = bg.gen_causal_dataset(bg.EXAMPLE_RELATION, bg.GenConfig(seed=9))
        b, _ = bg.gen_causal_dataset(bg.EXAMPLE_RELATION, bg.GenConfig(seed=9))
        assert write_csv(a) == write_csv(b)

    def test_dataset_round_trip(self, tmp_path):
        tasks = bg.generate(MASTER, ["predictive:ramp_rate:cov", "anomaly", "causal"], n=2)
        manifest = bg.write_dataset(tasks, tmp_path, MASTER)
        assert manifest["counts"] == {"predictive:ramp_rate:cov": 2, "anomaly:reference": 2,
                                      "anomaly:rate": 2, "causal": 2}
        back = bg.load_dataset(tmp_path)
        for t, u in zip(tasks, back):
            assert (t.id, t.question, t.constraint, t.horizon) == (u.id, u.question, u.constraint, u.horizon)
            assert sorted(t.env) == sorted(u.env)
            np.testing.assert_array_equal(np.asarray(t.ground_truth.values if hasattr(t.ground_truth, "values")
                                                     else t.ground_truth, dtype=float),
                                          np.asarray(u.ground_truth.values if hasattr(u.ground_truth, "values")
                                                     else u.ground_truth, dtype=float))

    def test_regeneration_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            bg.write_dataset(bg.generate(MASTER, ["predictive:max_load:nocov", "causal"], n=2), tmp_path / sub, MASTER)
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert files
        for rel in files:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
        assert bg.manifest_hash(tmp_path / "a") == bg.manifest_hash(tmp_path / "b")

    def test_manifest_layout(self, tmp_path):
        bg.write_dataset(bg.generate(MASTER, ["causal"], n=1), tmp_path, MASTER)
        m = json.loads((tmp_path / "manifest.json").read_text())
        assert m["tasks"][0]["path"] == "causal/causal-000"
        assert (tmp_path / "causal" / "causal-000" / "task.json").exists()

    def test_missing_dataset(self, tmp_path):
        with pytest.raises(DatasetNotFound):
            bg.load_dataset(tmp_path / "nope")
