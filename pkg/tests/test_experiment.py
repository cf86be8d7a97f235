import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from wyperm.core import InputError, PermutationPlan
from wyperm.experiment import (
    METHODS,
    TABLE_FIELDS,
    benchmark,
    derived_seed,
    emit_outputs,
    preset_scenarios,
    read_table,
    run_experiment,
    table_rows,
    write_table,
)
from wyperm.simulate import SimulationScenario

SMALL = SimulationScenario(m=40, n1=8, n2=8, rho=0.5, block_size=10, n_alternatives=4,
                           alternative_pool=40, shift=1.5, seed=2)


def small_report(**kw):
    args = dict(n_runs=4, plan=PermutationPlan(count=99), seed=1, oracle_sims=200)
    args.update(kw)
    return run_experiment(SMALL, **args)


@pytest.fixture(scope="module")
def report():
    return small_report()


class TestRunExperiment:
    def test_summary_keys(self, report):
        assert set(report.summary) == set(METHODS)
        for metrics in report.summary.values():
            assert metrics["n_runs"] == 4
            assert 0 <= metrics["fwer"] <= 1
            assert 0 <= metrics["mean_tp"] <= 4

    def test_records(self, report):
        for rec in report.runs:
            assert len(rec["alternatives"]) == 4
            assert rec["stepdown_contains_single_step"]
            assert rec["methods"]["holm"]["rejections"] >= rec["methods"]["bonferroni"]["rejections"]

    def test_deterministic_json(self, report):
        assert small_report().to_json() == report.to_json()

    def test_seed_changes_runs(self, report):
        assert small_report(seed=2).to_json() != report.to_json()

    def test_complete_null_has_no_true_positives(self):
        null = SMALL.complete_null()
        rep = run_experiment(null, ("bonferroni", "wy"), n_runs=3, plan=PermutationPlan(count=49))
        assert all(m["mean_tp"] == 0 for m in rep.summary.values())

    def test_empty_method_list(self):
        rep = run_experiment(SMALL, (), n_runs=2)
        assert rep.summary == {} and len(rep.runs) == 2

    def test_zero_runs(self):
        rep = run_experiment(SMALL, ("holm",), n_runs=0)
        assert rep.summary["holm"]["n_runs"] == 0

    def test_unknown_method(self):
        with pytest.raises(InputError):
            run_experiment(SMALL, ("sidak",), n_runs=1)

    def test_timing_outside_report(self, report):
        assert "timing" not in report.to_dict()
        assert report.timing["total"] >= 0


def test_derived_seed_stable():
    assert derived_seed(1, 2) == derived_seed(1, 2) != derived_seed(2, 1)


class TestOutputs:
    def test_csv_round_trip(self, report, tmp_path):
        rows = table_rows([report])
        path = tmp_path / "t.csv"
        write_table(rows, path)
        back = read_table(path)
        assert back == [{k: r[k] for k in TABLE_FIELDS} for r in rows]

    def test_emit_outputs(self, report, tmp_path):
        paths = emit_outputs([report], tmp_path, "exp")
        assert set(paths) == {"csv", "json", "svg", "timing"}
        doc = json.loads(paths["json"].read_text())
        assert doc[0]["summary"] == report.summary
        first = {k: p.read_bytes() for k, p in paths.items() if k != "timing"}
        again = emit_outputs([report], tmp_path / "b", "exp")
        assert {k: p.read_bytes() for k, p in again.items() if k != "timing"} == first

    def test_figure_has_one_group_per_cell(self, tmp_path):
        reports = [small_report(n_runs=1, seed=s) for s in (1,)]
        other = run_experiment(SimulationScenario(m=20, n1=4, n2=4, rho=0.9, block_size=5,
                                                  n_alternatives=2, alternative_pool=20),
                               ("holm", "wy"), n_runs=1, plan=PermutationPlan(count=19))
        paths = emit_outputs(reports + [other], tmp_path)
        ids = [el.get("id") for el in ET.parse(paths["svg"]).iter() if el.get("id", "").startswith("bar-")]
        assert len(ids) == len(METHODS) + 2
        cells = {i.rsplit("-", 1)[0] for i in ids}
        assert cells == {"bar-block-m40-rho0.5", "bar-block-m20-rho0.9"}

    def test_unwritable_directory(self, report, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(InputError):
            emit_outputs([report], blocker / "sub")


class TestPresets:
    def test_desk(self):
        scs = preset_scenarios("desk")
        assert len(scs) == 2 * 2 * 3
        assert {s.structure for s in scs} == {"toeplitz", "block"}

    def test_unknown(self):
        with pytest.raises(InputError):
            preset_scenarios("huge")
        with pytest.raises(InputError):
            preset_scenarios("desk", ("perfect_block",))


class TestBenchmark:
    def test_phases_sum_to_total(self):
        b = benchmark(200, permutations=50, n=20)
        assert all(v > 0 for v in b["phases"].values())
        assert sum(b["phases"].values()) == pytest.approx(b["total"], rel=1e-9)
        assert b["per_hypothesis"] == pytest.approx(b["total"] / 200)
        assert {"platform", "python", "cpu_count"} <= set(b["machine"])

    def test_threshold_on_lattice(self):
        from wyperm.marginal import rank_sum_lattice

        b = benchmark(50, permutations=50, n=10)
        assert b["threshold"] == 0 or np.isclose(rank_sum_lattice(5, 5).values, b["threshold"]).any()

    def test_invalid(self):
        with pytest.raises(InputError):
            benchmark(0)
