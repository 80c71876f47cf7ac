"""Acceptance suite: one test per criterion, each recording a pass/fail line.

The default experiment runs once per session, stage by stage, so the stage
timings can be checked against their budgets. Criterion 11 reruns it in full
through the CLI.
"""

from __future__ import annotations

import csv
import io
import math
import random
import time
from collections import defaultdict

import numpy as np
import pytest
from scipy.stats import binomtest

from acceptance_report import record
from oracles import (earliest_view_parents, mean_children_over_internal, pair_count_auc,
                     random_event_log, random_parent_map, total_variation)
from protocascade.branching import Baseline, ConditionalDegreeModel, DegreeModel, fit, generate
from protocascade.cli import main
from protocascade.config import ExperimentConfig
from protocascade.engine import Cascade, CascadeTree, Event, EventKind, build_tree
from protocascade.learn import auc, real_vs_synthetic_task
from protocascade.metrics import ExposureCurve, exposure_curve, reproduction_number, summarize
from protocascade.pipeline import ArtifactDir, Pipeline, forest_params
from protocascade.protocol import TransientCopy
from protocascade.seeding import derive_seed
from protocascade.structure import sample_subtrees

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

COPY = ("transient_copy", "persistent_copy")
OTHER = ("nomination", "volunteer")


class DefaultRun:
    def __init__(self, out_dir):
        self.cfg = ExperimentConfig()
        self.pipe = Pipeline(self.cfg, ArtifactDir(out_dir))
        self.seconds: dict[str, float] = {}

    def timed(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        self.seconds[name] = time.perf_counter() - t0
        return out

    def execute(self):
        p = self.pipe
        # same stage order as Pipeline.run, so the manifest is comparable
        self.timed("generate-graph", p.generate_graph)
        self.timed("calibrate", p.calibrate)
        self.timed("simulate", p.simulate)
        self.timed("summarize", p.summarize)
        self.timed("sample-subtrees", p.sample_subtrees, write_subtrees=False)
        self.timed("fit-model", p.fit_models)
        self.timed("classify", p.classify)
        p.out.write_manifest(self.cfg)
        self.manifest_bytes = p.out.path("manifest.json").read_bytes()
        self.summaries = {
            n: [summarize(c, t, p.graph) for c, t in zip(p.cascades[n], p.trees[n])]
            for n in p.protocols
        }
        return self

    def results(self) -> dict[str, float]:
        rows = csv.DictReader(io.StringIO(self.pipe.out.read("results.csv")))
        return {r["task"]: float(r["auc"]) for r in rows}


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    return DefaultRun(tmp_path_factory.mktemp("default")).execute()


def _fmt(d: dict, spec=".3f") -> str:
    return ", ".join(f"{k}={v:{spec}}" for k, v in d.items())


# ------------------------------------------------------------- pure oracles

def test_01_reproduction_number_oracle():
    rng = random.Random(2024)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(50):
        parent = random_parent_map(rng, rng.randint(2, 50))
        if reproduction_number(CascadeTree.from_parents(parent)) != mean_children_over_internal(parent):
            mismatches += 1
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and dt < 1.0
    assert record(1, "reproduction-number oracle", ok, f"{mismatches} mismatches of 50, {dt:.3f}s")


def test_07_branching_round_trip():
    cond = ConditionalDegreeModel(
        root_pmf=(0.2, 0.3, 0.3, 0.2),
        cond_pmf={1: (0.6, 0.3, 0.1, 0.0), 2: (0.3, 0.4, 0.2, 0.1), 3: (0.1, 0.2, 0.3, 0.4)},
        smoothing_alpha=0.0)
    degree = DegreeModel((0.3, 0.3, 0.25, 0.15))
    t0 = time.perf_counter()
    b = fit("baseline", generate(Baseline(3, 0.5), 100_000, 3, 1))
    d = fit("degree", generate(degree, 100_000, 3, 2))
    c = fit("conditional", generate(cond, 100_000, 3, 3), smoothing_alpha=0.0)
    dt = time.perf_counter() - t0
    tv_d = total_variation(d.indegree_pmf, degree.indegree_pmf)
    tv_c = max([total_variation(c.root_pmf, cond.root_pmf)]
               + [total_variation(c.cond_pmf[j], row) for j, row in cond.cond_pmf.items()])
    ok = b.k == 3 and abs(b.p - 0.5) <= 0.01 and tv_d <= 0.02 and tv_c <= 0.02 and dt < 60
    detail = f"baseline k={b.k} p={b.p:.4f}, degree TV={tv_d:.4f}, conditional max TV={tv_c:.4f}, {dt:.1f}s"
    assert record(7, "branching round trip", ok, detail)


def test_08_auc_oracle():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, n)
        labels[:2] = (0, 1)
        # coarse grid scores so ties are frequent
        scores = rng.integers(0, rng.integers(2, 50), n) / 7.0
        worst = max(worst, abs(auc(scores, labels) - pair_count_auc(scores, labels)))
    ok = worst <= 1e-12
    assert record(8, "AUC oracle", ok, f"max |rank - pair count| = {worst:.2e} over 1000 sets")


def _as_cascade(raw, seeds) -> Cascade:
    kind = {"View": EventKind.View, "Adopt": EventKind.Adopt}
    count: dict[int, int] = defaultdict(int)
    events = []
    for t, k, a, src in raw:
        idx = None
        if k == "View":
            count[a] += 1
            idx = count[a]
        events.append(Event(float(t), kind[k], a, src if k == "View" else None, idx))
    return Cascade(TransientCopy(), "", tuple(seeds), tuple(events))


def test_12_parent_rule_oracle():
    rng = random.Random(1212)
    mismatches = 0
    for _ in range(100):
        raw, seeds = random_event_log(rng)
        tree = build_tree(_as_cascade(raw, seeds))
        if {u: tree.parent.get(u) for u in tree.nodes} != earliest_view_parents(raw, seeds):
            mismatches += 1
    assert record(12, "parent-rule oracle", mismatches == 0, f"{mismatches} mismatches of 100 logs")


# ------------------------------------------------- default experiment checks

def test_02_constant_R_calibration(default_run):
    R = {n: float(np.mean([s.reproduction_number or 0.0 for s in ss]))
         for n, ss in default_run.summaries.items()}
    dt = default_run.seconds["calibrate"]
    ok = all(abs(r - 1.8) <= 0.1 for r in R.values()) and dt < 300
    assert record(2, "constant-R calibration", ok, f"{_fmt(R)}, calibrate {dt:.0f}s")


def test_03_speed_ordering(default_run):
    order = ("transient_copy", "persistent_copy", "volunteer", "nomination")
    reps = default_run.cfg.replicates
    delays = {n: [default_run.summaries[n][r].mean_adoption_delay for r in range(reps)] for n in order}
    held = [all(delays[a][r] < delays[b][r] for a, b in zip(order, order[1:])) for r in range(reps)]
    dt = default_run.seconds["simulate"] + default_run.seconds["summarize"]
    ok = all(held) and dt < 120
    means = {n: np.mean(v) / 3600 for n, v in delays.items()}
    detail = f"ordered in {sum(held)}/{reps} replicates, mean hours {_fmt(means, '.1f')}, {dt:.0f}s"
    assert record(3, "speed ordering", ok, detail)


def test_04_hub_share_ordering(default_run):
    share = {n: float(np.mean([s.top1pct_share for s in ss])) for n, ss in default_run.summaries.items()}
    worst_ratio = min(share[c] for c in COPY) / max(share[o] for o in OTHER)
    dt = default_run.seconds["simulate"] + default_run.seconds["summarize"]
    ok = worst_ratio >= 2 and dt < 120
    assert record(4, "hub-share ordering", ok, f"{_fmt(share)}, min ratio {worst_ratio:.2f}, {dt:.0f}s")


def test_05_complex_diffusion_direction(default_run):
    want_up = {"transient_copy": False, "nomination": False, "persistent_copy": True, "volunteer": True}
    parts, ok = [], True
    for n, up in want_up.items():
        curve = ExposureCurve.pooled([exposure_curve(c) for c in default_run.pipe.cascades[n]])
        p1, p2 = curve[1], curve[2]
        lo, hi = binomtest(p1.n_adopted, p1.n_at_risk).proportion_ci(0.95, method="wilson")
        outside = p2.p_k > hi if up else p2.p_k < lo
        ok &= outside and min(p1.n_at_risk, p2.n_at_risk) >= 1000
        parts.append(f"{n} p1={p1.p_k:.4f} [{lo:.4f},{hi:.4f}] p2={p2.p_k:.4f} "
                     f"(n={p1.n_at_risk}/{p2.n_at_risk})")
    assert record(5, "complex-diffusion direction", ok, "; ".join(parts))


def test_06_tie_strength_ordering(default_run):
    mf = {n: float(np.mean([s.mean_mutual_friends for s in ss])) for n, ss in default_run.summaries.items()}
    ok = min(mf, key=mf.get) == "transient_copy"
    assert record(6, "tie-strength ordering", ok, _fmt(mf, ".2f"))


def test_09_model_fidelity_ordering(default_run):
    pipe = default_run.pipe
    a = default_run.cfg.analysis
    t0 = time.perf_counter()
    parts, ok = [], True
    for n in pipe.protocols:
        real = sample_subtrees(pipe.trees[n][0], 20_000, 3, derive_seed(pipe.master, "acceptance", n))
        res = {}
        for kind in a.model_kinds:
            label = f"acceptance:{n}:{kind}"
            model = fit(kind, real, a.smoothing_alpha)
            res[kind] = real_vs_synthetic_task(real, model, derive_seed(pipe.master, label),
                                               forest_params(default_run.cfg, label)).auc
        ok &= (res["baseline"] >= res["degree"] >= res["conditional"] - 0.02
               and res["conditional"] <= 0.58)
        parts.append(f"{n} " + "/".join(f"{res[k]:.3f}" for k in a.model_kinds))
    dt = time.perf_counter() - t0
    ok &= dt < 300
    assert record(9, "model-fidelity ordering", ok,
                  "baseline/degree/conditional " + "; ".join(parts) + f", {dt:.0f}s")


def test_10_differentiation_sanity(default_run):
    res = default_run.results()
    same = {k.split(":")[1]: v for k, v in res.items() if k.startswith("same:")}
    cross = res["differentiate:transient_copy:volunteer"]
    ok = len(same) == 4 and all(v <= 0.57 for v in same.values()) and cross >= 0.60
    assert record(10, "differentiation sanity", ok, f"same {_fmt(same)}; transient vs volunteer {cross:.3f}")


def test_11_determinism(default_run, tmp_path):
    out = tmp_path / "rerun"
    code = main(["run", "--out", str(out), "--quiet"])
    again = (out / "manifest.json").read_bytes() if code == 0 else b""
    ok = again == default_run.manifest_bytes
    n_art = len(default_run.pipe.out.manifest(default_run.cfg)["artifacts"])
    assert record(11, "determinism", ok, f"exit {code}, manifest identical={ok} ({n_art} artifacts)")
