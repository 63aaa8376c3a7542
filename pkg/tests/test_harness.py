"""Experiment harness: interval math, generators, reports, determinism."""

import json

import numpy as np
import pytest

from rocrs.crs import CrsInstance
from rocrs.errors import InputError
from rocrs.harness import (CSV_HEADER, ExperimentConfig, ExperimentReport,
                           ReportRow, brute_force_set_opt, generate_instance,
                           instance_bytes, load_instance, run_experiment,
                           scale_into_polytopes, wilson_interval)
from rocrs.knapsack import KnapsackConstraint, in_knapsack_polytope
from rocrs.matroids import Matroid, in_polytope
from rocrs.submodular import SubmodularOracle


class TestWilsonInterval:
    def test_no_trials_is_undefined(self):
        assert wilson_interval(0, 0, 1.96) is None

    def test_half_split_at_z196(self):
        lo, hi = wilson_interval(50, 100, 1.96)
        assert lo == pytest.approx(0.404, abs=5e-4)
        assert hi == pytest.approx(0.596, abs=5e-4)

    def test_boundaries_close_exactly(self):
        assert wilson_interval(100, 100, 1.96)[1] == 1.0
        assert wilson_interval(0, 100, 1.96)[0] == 0.0

    def test_successes_out_of_range(self):
        with pytest.raises(InputError):
            wilson_interval(5, 3, 1.96)
        with pytest.raises(InputError):
            wilson_interval(-1, 3, 1.96)

    def test_wider_z_nests_the_interval(self):
        narrow = wilson_interval(30, 80, 1.0)
        wide = wilson_interval(30, 80, 2.576)
        assert wide[0] < narrow[0] < narrow[1] < wide[1]


class TestExperimentConfig:
    def test_rejects_unknown_kind(self):
        with pytest.raises(InputError, match="unknown experiment kind"):
            ExperimentConfig(kind="plotting", instance="x.json")

    def test_requires_exactly_one_source(self):
        with pytest.raises(InputError, match="exactly one"):
            ExperimentConfig(kind="crs")
        with pytest.raises(InputError, match="exactly one"):
            ExperimentConfig(kind="crs", instance="a.json",
                             generator={"kind": "knapsack"})

    def test_validates_numeric_ranges(self):
        with pytest.raises(InputError, match="trials"):
            ExperimentConfig(kind="crs", instance="a.json", trials=0)
        with pytest.raises(InputError, match="eps"):
            ExperimentConfig(kind="crs", instance="a.json", eps=1.0)
        with pytest.raises(InputError, match="jobs"):
            ExperimentConfig(kind="crs", instance="a.json", jobs=0)
        with pytest.raises(InputError, match="seed"):
            ExperimentConfig(kind="crs", instance="a.json", seed=1 << 64)

    def test_from_json_names_unknown_key(self):
        with pytest.raises(InputError, match="'trails'"):
            ExperimentConfig.from_json({"kind": "crs", "instance": "a.json",
                                        "trails": 10})

    def test_from_json_names_missing_kind(self):
        with pytest.raises(InputError, match="'kind'"):
            ExperimentConfig.from_json({"instance": "a.json"})


class TestReportRow:
    def test_csv_line_renders_floats_and_none(self):
        row = ReportRow("acceptance", "000003", 0.5, None, None, None, 0.25, True)
        assert row.csv_line() == "acceptance,000003,0.5,undefined,undefined,undefined,0.25,true"

    def test_csv_line_false_flag(self):
        row = ReportRow("value", "total", np.float64(0.125), 0.0, 0.125,
                        0.125, 0.5, False)
        # numpy scalars must not leak their repr into the file
        assert row.csv_line() == "value,total,0.125,0.0,0.125,0.125,0.5,false"

    def test_report_exit_code_tracks_failures(self):
        cfg = ExperimentConfig(kind="crs", instance="a.json")
        ok = ReportRow("m", "0", 1.0, 0.0, None, None, 0.5, True)
        bad = ReportRow("m", "1", 0.1, 0.0, None, None, 0.5, False)
        undef = ReportRow("m", "2", 0.1, 0.0, None, None, 0.5, None)
        assert ExperimentReport(cfg, [ok, undef], {}).exit_code == 0
        assert ExperimentReport(cfg, [ok, bad], {}).exit_code == 1


class TestScaleIntoPolytopes:
    def test_fits_matroid_and_knapsack(self):
        m = Matroid.uniform(4, 1)
        k = KnapsackConstraint([0.4, 0.4, 0.4, 0.4])
        x = scale_into_polytopes(np.ones(4), matroids=[m], knapsacks=[k])
        assert in_polytope(m, x)
        assert in_knapsack_polytope(k, x)
        assert x.sum() == pytest.approx(0.9, abs=1e-12)

    def test_inner_multiplier_constrains_too(self):
        outer = Matroid.uniform(3, 3)
        inner = Matroid.uniform(3, 1)
        p = np.array([1.0, 1.0, 1.0])
        x = scale_into_polytopes(np.ones(3), matroids=[outer],
                                 inner=(p, [inner]))
        assert in_polytope(inner, p * x)
        assert (p * x).sum() == pytest.approx(0.9, abs=1e-12)


class TestGenerators:
    def test_unknown_kind(self):
        with pytest.raises(InputError, match="unknown generator kind"):
            generate_instance("bipartite", {}, 1)

    def test_bad_parameter_named(self):
        with pytest.raises(InputError, match="'edges'"):
            generate_instance("graphic_matroid", {"edges": 0}, 1)

    @pytest.mark.parametrize("kind,params", [
        ("graphic_matroid", {"vertices": 4, "edges": 5}),
        ("partition_matroid", {"caps": [1, 1], "n": 4}),
        ("knapsack", {"n": 5, "bounded": True}),
        ("knapsack", {"n": 5, "bounded": False}),
        ("coverage", {"n": 5, "points": 8}),
        ("auction", {"items": 3, "B": 2, "groups": 2}),
        ("packing", {"n": 3, "rows": 2, "rank": 1}),
        ("probing", {"n": 4, "k_in": 1, "k_out": 1}),
    ])
    def test_seeded_generation_is_byte_identical(self, kind, params):
        a = instance_bytes(generate_instance(kind, params, seed=42))
        b = instance_bytes(generate_instance(kind, params, seed=42))
        c = instance_bytes(generate_instance(kind, params, seed=43))
        assert a == b
        assert a != c

    @pytest.mark.parametrize("kind,params", [
        ("graphic_matroid", {"vertices": 4, "edges": 6}),
        ("partition_matroid", {"caps": [2, 1], "n": 7}),
        ("knapsack", {"n": 6, "bounded": True}),
        ("knapsack", {"n": 6, "bounded": False}),
    ])
    def test_generated_x_is_inside_every_polytope(self, kind, params):
        for seed in range(8):
            payload = generate_instance(kind, params, seed)
            # construction revalidates membership in every polytope
            inst = CrsInstance.from_json(payload)
            assert inst.n == len(payload["x"])
            assert (inst.x > 0).any()

    def test_partition_example_shape(self):
        payload = generate_instance("partition_matroid",
                                    {"caps": [1, 1], "n": 4}, seed=5)
        inst = CrsInstance.from_json(payload)
        m = inst.constraints[0]
        # caps (1, 1) over four elements: two blocks of two
        assert not m.is_independent([0, 1])
        assert not m.is_independent([2, 3])
        assert m.is_independent([0, 2])
        assert m.is_independent([1, 3])

    def test_graphic_edges_have_no_self_loops(self):
        for seed in range(6):
            payload = generate_instance("graphic_matroid",
                                        {"vertices": 3, "edges": 8}, seed)
            mat = payload["constraints"][0]
            assert mat["kind"] == "graphic"
            assert all(a != b for a, b in mat["edges"])

    def test_probing_payload_x_is_feasible(self):
        from rocrs.probing import ProbingInstance
        for seed in range(5):
            payload = generate_instance("probing",
                                        {"n": 5, "k_in": 1, "k_out": 2}, seed)
            inst = ProbingInstance.from_json(payload)
            x = np.asarray(payload["x"])
            assert all(in_polytope(m, x) for m in inst.out_matroids)
            assert all(in_polytope(m, inst.p * x) for m in inst.in_matroids)

    def test_packing_payload_round_trips(self):
        from rocrs.probing import PackingInstance
        payload = generate_instance("packing", {"n": 4, "rows": 2, "rank": 2}, 9)
        inst = PackingInstance.from_json(payload)
        assert inst.n == 4
        assert inst.d == 2
        assert (inst.marginals >= 0).all()

    def test_auction_pmfs_sum_to_one(self):
        payload = generate_instance("auction", {"items": 3, "B": 3, "groups": 3}, 2)
        for pmf in payload["pmfs"]:
            assert sum(pmf) == pytest.approx(1.0, abs=1e-9)
            assert all(v > 0 for v in pmf)


class TestLoadInstance:
    def test_malformed_json_names_location(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"kind": "crs", "x": [0.1,]}')
        with pytest.raises(InputError, match=r"bad\.json at line 1"):
            load_instance(str(bad))

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError, match="cannot read"):
            load_instance(str(tmp_path / "nope.json"))

    def test_missing_kind_key(self, tmp_path):
        p = tmp_path / "inst.json"
        p.write_text('{"x": [0.5]}')
        with pytest.raises(InputError, match="'kind'"):
            load_instance(str(p))


def _write_instance(tmp_path, kind, params, seed, name):
    payload = generate_instance(kind, params, seed)
    path = tmp_path / name
    path.write_bytes(instance_bytes(payload))
    return str(path)


class TestRunExperiment:
    def test_kind_mismatch_is_reported(self, tmp_path):
        path = _write_instance(tmp_path, "auction",
                               {"items": 2, "B": 1, "groups": 1}, 3, "a.json")
        cfg = ExperimentConfig(kind="crs", instance=path, trials=10)
        with pytest.raises(InputError, match="kind 'auction'"):
            run_experiment(cfg)

    def test_crs_experiment_reports_and_passes(self, tmp_path):
        path = _write_instance(tmp_path, "graphic_matroid",
                               {"vertices": 4, "edges": 5}, 7, "g.json")
        cfg = ExperimentConfig(kind="crs", instance=path, trials=400, seed=3,
                               out=str(tmp_path / "rep"))
        rep = run_experiment(cfg)
        assert rep.all_pass and rep.exit_code == 0
        metrics = {r.metric for r in rep.rows}
        assert {"acceptance", "martingale", "step_block_rate",
                "feasibility_violations"} <= metrics

    def test_reports_are_byte_identical_across_reruns_and_jobs(self, tmp_path):
        path = _write_instance(tmp_path, "graphic_matroid",
                               {"vertices": 4, "edges": 5}, 7, "g.json")

        def render(tag, jobs):
            cfg = ExperimentConfig(kind="crs", instance=path, trials=300,
                                   seed=5, jobs=jobs, out=str(tmp_path / tag))
            rep = run_experiment(cfg)
            return (open(rep.csv_path, "rb").read(),
                    open(rep.json_path, "rb").read())

        first = render("r1", 1)
        again = render("r2", 1)
        parallel = render("r3", 4)
        assert first == again == parallel

    def test_crs_csv_uses_acceptance_columns(self, tmp_path):
        path = _write_instance(tmp_path, "partition_matroid",
                               {"caps": [1, 1], "n": 4}, 1, "p.json")
        cfg = ExperimentConfig(kind="crs", instance=path, trials=100,
                               out=str(tmp_path / "report.csv"))
        rep = run_experiment(cfg)
        assert rep.csv_path == str(tmp_path / "report.csv")
        assert rep.json_path == str(tmp_path / "report.json")
        text = open(rep.csv_path, "r", encoding="utf-8").read()
        lines = text.split("\n")
        assert lines[0] == ("element,conditioning_count,accept_count,mean,"
                            "stderr,wilson_lo,wilson_hi,bound,pass")
        assert len(lines) == 6  # header + one row per element + final LF
        assert text.endswith("\n") and "\r" not in text

    def test_auction_csv_is_per_trial(self, tmp_path):
        path = _write_instance(tmp_path, "auction",
                               {"items": 2, "B": 1, "groups": 1}, 1, "a.json")
        cfg = ExperimentConfig(kind="auction", instance=path, trials=25,
                               seed=4, out=str(tmp_path / "rep"))
        rep = run_experiment(cfg)
        lines = open(rep.csv_path, "r", encoding="utf-8").read().splitlines()
        assert lines[0] == "trial,revenue,lp_bound,ratio"
        assert len(lines) == 26

    def test_generic_csv_shape(self, tmp_path):
        path = _write_instance(tmp_path, "partition_matroid",
                               {"caps": [1, 1], "n": 4}, 1, "p.json")
        cfg = ExperimentConfig(kind="diagnostics", instance=path, trials=100,
                               out=str(tmp_path / "rep"))
        rep = run_experiment(cfg)
        text = open(rep.csv_path, "r", encoding="utf-8").read()
        lines = text.split("\n")
        assert lines[0] == CSV_HEADER
        assert text.endswith("\n") and "\r" not in text
        body = lines[1:-1]
        assert body == sorted(body)  # stable key order
        assert all(len(line.split(",")) == 8 for line in body)

    def test_diagnostics_kind_drops_acceptance_rows(self, tmp_path):
        path = _write_instance(tmp_path, "knapsack", {"n": 4}, 2, "k.json")
        cfg = ExperimentConfig(kind="diagnostics", instance=path, trials=200)
        rep = run_experiment(cfg)
        assert rep.all_pass
        assert "acceptance" not in {r.metric for r in rep.rows}

    def test_generator_config_runs_inline(self):
        cfg = ExperimentConfig(kind="crs", trials=150, seed=9,
                               generator={"kind": "knapsack",
                                          "params": {"n": 4}, "seed": 8})
        rep = run_experiment(cfg)
        assert rep.all_pass

    def test_bad_generator_spec(self):
        cfg = ExperimentConfig(kind="crs", trials=10,
                               generator={"params": {"n": 4}})
        with pytest.raises(InputError, match="'kind'"):
            run_experiment(cfg)

    def test_auction_experiment(self, tmp_path):
        path = _write_instance(tmp_path, "auction",
                               {"items": 3, "B": 2, "groups": 2}, 4, "a.json")
        cfg = ExperimentConfig(kind="auction", instance=path, trials=300,
                               seed=2, eps=0.2, out=str(tmp_path / "rep"))
        rep = run_experiment(cfg)
        assert rep.all_pass
        revenue = [r for r in rep.rows if r.metric == "revenue"]
        assert len(revenue) == 1 and revenue[0].bound is not None

    def test_packing_experiment(self, tmp_path):
        path = _write_instance(tmp_path, "packing",
                               {"n": 3, "rows": 2, "rank": 1}, 6, "pk.json")
        cfg = ExperimentConfig(kind="packing", instance=path, trials=400, seed=2)
        rep = run_experiment(cfg)
        assert rep.all_pass
        assert {"value", "take_rate"} <= {r.metric for r in rep.rows}
        assert rep.headline["lp_objective"] > 0

    def test_probing_experiment_solves_for_x_when_absent(self, tmp_path):
        payload = generate_instance("probing", {"n": 4, "k_in": 1, "k_out": 1}, 3)
        del payload["x"]
        path = tmp_path / "pr.json"
        path.write_bytes(instance_bytes(payload))
        cfg = ExperimentConfig(kind="probing", instance=str(path), trials=200,
                               seed=5, eps=0.3)
        rep = run_experiment(cfg)
        assert rep.all_pass
        assert rep.headline["cr_bound"] >= 0

    def test_probing_experiment_uses_payload_x(self, tmp_path):
        path = _write_instance(tmp_path, "probing",
                               {"n": 4, "k_in": 1, "k_out": 1}, 3, "pr.json")
        cfg = ExperimentConfig(kind="probing", instance=path, trials=200, seed=5)
        rep = run_experiment(cfg)
        assert rep.all_pass
        assert {"value", "probe_rate"} <= {r.metric for r in rep.rows}

    def test_greedy_experiment_checks_envelope_and_final_value(self, tmp_path):
        path = _write_instance(tmp_path, "coverage", {"n": 5, "points": 8},
                               11, "c.json")
        cfg = ExperimentConfig(kind="greedy", instance=path, trials=1, seed=1,
                               eps=0.05, out=str(tmp_path / "rep"))
        rep = run_experiment(cfg)
        assert rep.all_pass
        envelope = [r for r in rep.rows if r.metric == "envelope_violation"]
        final = [r for r in rep.rows if r.metric == "final_value"]
        assert envelope[0].passed is True
        assert final[0].bound is not None and final[0].passed is True
        assert rep.headline["set_optimum"] > 0


class TestBruteForceSetOpt:
    def test_matroid_plus_knapsack(self):
        f = SubmodularOracle.modular([3.0, 2.0, 1.0])
        m = Matroid.uniform(3, 2)
        k = KnapsackConstraint([0.6, 0.6, 0.3])
        # matroid allows pairs; knapsack forbids {0, 1} together
        assert brute_force_set_opt(f, [m, k]) == pytest.approx(4.0)

    def test_respects_desk_cap(self):
        from rocrs.errors import CapacityError
        f = SubmodularOracle.modular([1.0] * 17)
        with pytest.raises(CapacityError):
            brute_force_set_opt(f, [Matroid.uniform(17, 1)])
