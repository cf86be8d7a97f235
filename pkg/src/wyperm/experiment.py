"""Power and FWER study over simulated scenarios, plus a sweep benchmark."""

from __future__ import annotations

import csv
import json
import math
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import InputError, PermutationPlan
from .engine import single_step, step_down, sweep, wy_threshold
from .marginal import MarginalTest
from .oracle import (
    bonferroni,
    candidate_lattice,
    holm,
    oracle_single_step,
    oracle_step_down,
    simulate_null_pvalues,
    true_null_minima,
)
from .simulate import SimulationScenario

METHODS = ("bonferroni", "holm", "oracle", "oracle_stepdown", "wy", "wy_stepdown")
TABLE_FIELDS = ("m", "structure", "rho", "method", "mean_tp", "tp_se", "fwer", "fwer_se",
                "mean_rejections", "n_runs")

PRESETS = {
    "desk": {"m": (100, 1000), "n_runs": 50, "permutations": 200, "oracle_sims": 1000},
    "full": {"m": (100, 1000, 10000), "n_runs": 250, "permutations": 1000, "oracle_sims": 1000},
}
RHOS = {"toeplitz": (0.95, 0.975, 0.99), "block": (0.6, 0.75, 0.9)}


def derived_seed(*words: int) -> int:
    return int(np.random.SeedSequence([int(w) for w in words]).generate_state(1, np.uint64)[0])


@dataclass
class ExperimentReport:
    config: dict
    summary: dict
    runs: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Everything except wall-clock timing, so equal configs give equal dicts."""
        return {"config": self.config, "summary": self.summary, "runs": self.runs}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table_rows(self) -> list[dict]:
        sc = self.config["scenario"]
        return [
            {"m": sc["m"], "structure": sc["structure"], "rho": sc["rho"], "method": method, **metrics}
            for method, metrics in self.summary.items()
        ]


def _summarise(per_run: list[dict], methods) -> dict:
    out = {}
    n = len(per_run)
    for method in methods:
        tp = np.array([r["methods"][method]["tp"] for r in per_run], dtype=float)
        fr = np.array([r["methods"][method]["false_rejection"] for r in per_run], dtype=float)
        nrej = np.array([r["methods"][method]["rejections"] for r in per_run], dtype=float)
        fwer = float(fr.mean()) if n else 0.0
        out[method] = {
            "mean_tp": float(tp.mean()) if n else 0.0,
            "tp_se": float(tp.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
            "fwer": fwer,
            "fwer_se": math.sqrt(fwer * (1 - fwer) / n) if n else 0.0,
            "mean_rejections": float(nrej.mean()) if n else 0.0,
            "n_runs": n,
        }
    return out


def _record(result, alternatives: set[int]) -> dict:
    rej = set(result.rejections.tolist())
    return {
        "tp": len(rej & alternatives),
        "false_rejection": bool(rej - alternatives),
        "rejections": len(rej),
    }


def raw_pvalues(W, test: MarginalTest) -> np.ndarray:
    # exact tests do not need permutations for the observed p-values
    exact = test.kind in ("wilcoxon", "fisher_exact")
    return sweep(W, test, PermutationPlan.identity_only() if exact else test.plan, keep=False).observed


def run_experiment(scenario: SimulationScenario, methods=METHODS, alpha: float = 0.05,
                   n_runs: int = 250, plan: PermutationPlan | None = None, seed: int = 0,
                   oracle_sims: int = 1000, test: MarginalTest | None = None,
                   workers: int = 1) -> ExperimentReport:
    """Simulate ``n_runs`` datasets and record true positives and false rejections per method.

    The oracle uses one independent set of ``oracle_sims`` complete-null
    simulations; each run takes the min over its own true nulls.
    """
    methods = tuple(methods)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise InputError(f"unknown methods {sorted(unknown)}; choose from {', '.join(METHODS)}")
    if n_runs < 0:
        raise InputError("n_runs must be >= 0")
    plan = plan or PermutationPlan(count=1000)
    test = test or MarginalTest("wilcoxon")
    timing = {"simulate": 0.0, "oracle": 0.0, "sweep": 0.0, "adjust": 0.0}

    null_p = lattice = None
    if {"oracle", "oracle_stepdown"} & set(methods):
        t0 = time.perf_counter()
        null_p = simulate_null_pvalues(scenario, test, oracle_sims, derived_seed(seed, 1))
        lattice = candidate_lattice(scenario, test)
        timing["oracle"] += time.perf_counter() - t0

    per_run = []
    for run in range(n_runs):
        t0 = time.perf_counter()
        W, alts = scenario.generate(run, stream=seed)
        alt_set = set(alts.tolist())
        true_nulls = scenario.partition(alts).true_nulls
        t1 = time.perf_counter()
        timing["simulate"] += t1 - t0

        results = {}
        if {"wy", "wy_stepdown"} & set(methods):
            run_plan = PermutationPlan(plan.mode, plan.count, derived_seed(seed, 2, run),
                                       plan.include_identity)
            s = sweep(W, test, run_plan, keep="wy_stepdown" in methods, workers=workers)
            raw = s.observed
            t2 = time.perf_counter()
            timing["sweep"] += t2 - t1
            t1 = t2
            if "wy" in methods:
                results["wy"] = single_step(raw, s.minp, s.lattice, alpha)
            if "wy_stepdown" in methods:
                results["wy_stepdown"] = step_down(raw, s.permuted, alpha)
        else:
            raw = raw_pvalues(W, test)
        if "bonferroni" in methods:
            results["bonferroni"] = bonferroni(raw, alpha)
        if "holm" in methods:
            results["holm"] = holm(raw, alpha)
        if "oracle" in methods:
            results["oracle"] = oracle_single_step(raw, true_null_minima(null_p, true_nulls),
                                                   alpha, lattice)
        if "oracle_stepdown" in methods:
            results["oracle_stepdown"] = oracle_step_down(raw, null_p, alpha, true_nulls)
        timing["adjust"] += time.perf_counter() - t1

        record = {
            "run": run,
            "alternatives": sorted(alt_set),
            "methods": {k: _record(results[k], alt_set) for k in methods},
        }
        if "wy" in results:
            record["wy_threshold"] = results["wy"].threshold
        if "oracle" in results:
            record["oracle_threshold"] = results["oracle"].threshold
        if "wy" in results and "wy_stepdown" in results:
            record["stepdown_contains_single_step"] = bool(
                set(results["wy"].rejections.tolist()) <= set(results["wy_stepdown"].rejections.tolist())
            )
        per_run.append(record)

    config = {
        "scenario": scenario.to_dict(),
        "diagnostics": scenario.diagnostics(),
        "methods": list(methods),
        "alpha": alpha,
        "n_runs": n_runs,
        "plan": plan.to_dict(),
        "seed": seed,
        "oracle_sims": oracle_sims,
        "test": test.kind,
    }
    timing["total"] = sum(timing.values())
    return ExperimentReport(config, _summarise(per_run, methods), per_run, timing)


def preset_scenarios(name: str, structures=("toeplitz", "block"), seed: int = 0) -> list[SimulationScenario]:
    if name not in PRESETS:
        raise InputError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    unknown = set(structures) - set(RHOS)
    if unknown:
        raise InputError(f"presets cover {', '.join(RHOS)}; got {sorted(unknown)}")
    return [
        SimulationScenario(m=m, structure=structure, rho=rho, seed=seed)
        for structure in structures
        for m in PRESETS[name]["m"]
        for rho in RHOS[structure]
    ]


# --------------------------------------------------------------------------
# outputs
# --------------------------------------------------------------------------


def table_rows(reports) -> list[dict]:
    return [row for report in reports for row in report.table_rows()]


def write_table(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TABLE_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def read_table(path) -> list[dict]:
    """Parse a table written by :func:`write_table` back into typed rows."""
    ints = {"m", "n_runs"}
    text = {"structure", "method"}
    with open(path, newline="") as fh:
        return [
            {k: (v if k in text else int(v) if k in ints else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def _cell_key(row) -> tuple:
    return (row["structure"], row["m"], row["rho"])


def write_figure(rows, path) -> None:
    """Grouped bars of mean true positives: one group per (structure, m, rho) cell."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cells = list(dict.fromkeys(_cell_key(r) for r in rows))
    methods = list(dict.fromkeys(r["method"] for r in rows))
    width = 0.8 / max(1, len(methods))
    colours = plt.get_cmap("tab10")
    with plt.rc_context({"svg.hashsalt": "wyperm", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(cells) + 2), 4))
        for i, cell in enumerate(cells):
            for k, method in enumerate(methods):
                match = [r for r in rows if _cell_key(r) == cell and r["method"] == method]
                if not match:
                    continue
                r = match[0]
                bars = ax.bar(i + (k - (len(methods) - 1) / 2) * width, r["mean_tp"], width,
                              yerr=r["tp_se"], color=colours(k % 10),
                              label=method if i == 0 else None)
                bars.patches[0].set_gid(f"bar-{cell[0]}-m{cell[1]}-rho{cell[2]}-{method}")
        ax.set_xticks(range(len(cells)))
        ax.set_xticklabels([f"{s}\nm={m}\nrho={rho}" for s, m, rho in cells], fontsize=7)
        ax.set_ylabel("mean true positives")
        if cells:
            ax.legend(fontsize=7, ncol=2)
        else:
            ax.text(0.5, 0.5, "no results", ha="center", va="center", transform=ax.transAxes)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def emit_outputs(reports, out_dir, stem: str = "experiment") -> dict[str, Path]:
    """Write ``stem.csv``, ``stem.json``, ``stem.svg`` and timings to ``stem.timing.json``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {ext: out / f"{stem}.{ext}" for ext in ("csv", "json", "svg")}
        paths["timing"] = out / f"{stem}.timing.json"
        rows = table_rows(reports)
        write_table(rows, paths["csv"])
        paths["json"].write_text(
            json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"
        )
        write_figure(rows, paths["svg"])
        paths["timing"].write_text(json.dumps([r.timing for r in reports], indent=2) + "\n")
    except OSError as exc:
        raise InputError(f"cannot write outputs to {out}: {exc}") from None
    return paths


# --------------------------------------------------------------------------
# benchmark
# --------------------------------------------------------------------------


def machine_info() -> dict:
    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
    }


def benchmark(m: int, permutations: int = 1000, seed: int = 0, n: int = 100,
              alpha: float = 0.05, workers: int = 1) -> dict:
    """Wall-clock time of the Wilcoxon min-p sweep and threshold at the given scale."""
    if m < 1 or permutations < 1 or n < 4:
        raise InputError("benchmark needs m >= 1, permutations >= 1 and n >= 4")
    phases = {}
    t0 = time.perf_counter()
    scenario = SimulationScenario(m=m, n1=n // 2, n2=n - n // 2, structure="independent",
                                  n_alternatives=0, seed=seed)
    W, _ = scenario.generate(0)
    t1 = time.perf_counter()
    phases["generate"] = t1 - t0
    s = sweep(W, MarginalTest("wilcoxon"), PermutationPlan(count=permutations, seed=seed),
              keep=False, workers=workers)
    t2 = time.perf_counter()
    phases["sweep"] = t2 - t1
    threshold = wy_threshold(s.minp, s.lattice, alpha)
    t3 = time.perf_counter()
    phases["threshold"] = t3 - t2
    total = t3 - t0
    return {
        "m": m,
        "n": n,
        "permutations": permutations,
        "workers": workers,
        "threshold": threshold,
        "phases": phases,
        "total": total,
        "per_hypothesis": total / m,
        "machine": machine_info(),
    }
