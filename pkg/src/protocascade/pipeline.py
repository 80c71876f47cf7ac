"""Experiment stages and the artifact directory they write.

Every stage is a pure function of (config, master seed) plus the artifacts of
earlier stages. Files are written to a temporary name and renamed into place;
the manifest, which hashes every artifact, is written last.

Layout of an output directory::

    graph.txt                       social graph
    seeds.txt                       seed node ids, one per line
    protocols.toml                  protocols after calibration
    cascades/<protocol>/rep<i>.log  event logs
    summary.csv                     one row per cascade
    curves/<protocol>/rep<i>.csv    exposure curves, plus pooled.csv
    subtrees/<protocol>.txt         fitting sample (sample-subtrees)
    features/<protocol>.csv         features of the fitting sample
    models/<protocol>_<kind>.txt    fitted branching models
    synthetic/<protocol>_<kind>.txt generated subtrees (generate-synthetic)
    results.csv                     classification AUCs
    manifest.json                   sha256 of every artifact plus config hash
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from . import config as cfgmod
from .branching import BranchingModel, fit, generate, model_to_text, parse_model
from .engine import Cascade, CascadeTree, build_tree, cascade_to_text, parse_cascade, simulate
from .errors import ConfigError, InsufficientDataError
from .learn import (ForestParams, TaskResult, adoption_task, differentiate_task,
                    real_vs_synthetic_task, results_to_csv)
from .metrics import (ExposureCurve, calibrate_reproduction, exposure_curve, summaries_to_csv,
                      summarize)
from .netgen import SocialGraph, generate_graph, graph_to_text, parse_graph
from .protocol import ProtocolSpec, protocol_from_dict, protocol_to_dict
from .seeding import derive_seed
from .structure import (Subtree, feature_matrix, features_to_csv, parse_subtrees,
                        sample_subtrees, subtrees_to_text)

log = logging.getLogger("protocascade")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")


@contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except (StageError, ConfigError):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


# ------------------------------------------------------------------ artifacts

class ArtifactDir:
    def __init__(self, root):
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StageError("output", exc) from exc
        if not os.access(self.root, os.W_OK):
            raise StageError("output", PermissionError(f"{self.root} is not writable"))
        self.written: list[str] = []

    def path(self, rel: str) -> Path:
        return self.root / rel

    def exists(self, rel: str) -> bool:
        return self.path(rel).exists()

    def read(self, rel: str) -> str:
        p = self.path(rel)
        if not p.exists():
            raise FileNotFoundError(f"missing artifact {rel}; run the stage that produces it first")
        return p.read_text()

    def write(self, rel: str, text: str) -> None:
        p = self.path(rel)
        p.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=p.parent, prefix=f".{p.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.chmod(tmp, 0o644)
            os.replace(tmp, p)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        if rel not in self.written:
            self.written.append(rel)

    def manifest(self, cfg: cfgmod.ExperimentConfig) -> dict:
        artifacts = {}
        for rel in sorted(self.written):
            artifacts[rel] = hashlib.sha256(self.path(rel).read_bytes()).hexdigest()
        return {"config_hash": cfg.config_hash(), "master_seed": cfg.master_seed,
                "artifacts": artifacts}

    def write_manifest(self, cfg: cfgmod.ExperimentConfig) -> dict:
        m = self.manifest(cfg)
        self.write("manifest.json", json.dumps(m, indent=2, sort_keys=True) + "\n")
        return m


def forest_params(cfg: cfgmod.ExperimentConfig, key: str) -> ForestParams:
    f = cfg.analysis.forest
    return ForestParams(n_trees=f.n_trees, max_depth=f.max_depth,
                        subsample_fraction=f.subsample_fraction,
                        features_per_split=f.features_per_split or None,
                        rng_seed=derive_seed(cfg.master_seed, "forest", key))


# ---------------------------------------------------------------- parallelism

_WORKER_GRAPH: Optional[SocialGraph] = None


def _init_worker(graph: SocialGraph) -> None:
    global _WORKER_GRAPH
    _WORKER_GRAPH = graph


def _simulate_job(args) -> str:
    spec, seeds, horizon, seed = args
    return cascade_to_text(simulate(_WORKER_GRAPH, spec, seeds, horizon, seed))


def _calibrate_job(args) -> dict:
    spec, seeds, cal, seed, horizon = args
    out = calibrate_reproduction(_WORKER_GRAPH, spec, seeds, cal.target_R, cal.tol, cal.runs,
                                 rng_seed=seed, horizon=horizon)
    return protocol_to_dict(out)


def _map(fn, items: list, graph: SocialGraph, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        _init_worker(graph)
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items)), initializer=_init_worker,
                             initargs=(graph,)) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------- stages

@dataclass
class Pipeline:
    cfg: cfgmod.ExperimentConfig
    out: ArtifactDir
    jobs: int = 1
    graph: Optional[SocialGraph] = None
    seeds: Optional[list[int]] = None
    protocols: Optional[dict[str, ProtocolSpec]] = None
    cascades: dict[str, list[Cascade]] = field(default_factory=dict)
    trees: dict[str, list[CascadeTree]] = field(default_factory=dict)
    samples: dict[tuple[str, str], list[Subtree]] = field(default_factory=dict)
    models: dict[tuple[str, str], BranchingModel] = field(default_factory=dict)

    @property
    def master(self) -> int:
        return self.cfg.master_seed

    # graph and seeds are cheap and deterministic, so they are rebuilt when absent
    def ensure_graph(self) -> SocialGraph:
        if self.graph is None:
            if self.out.exists("graph.txt"):
                with stage("generate-graph"):
                    self.graph = parse_graph(self.out.read("graph.txt"))
            else:
                self.generate_graph(write=False)
        return self.graph

    def ensure_seeds(self) -> list[int]:
        if self.seeds is None:
            self.seeds = self.cfg.seeds.select(self.ensure_graph(), self.master)
        return self.seeds

    def ensure_protocols(self) -> dict[str, ProtocolSpec]:
        if self.protocols is None:
            if self.out.exists("protocols.toml"):
                raw = cfgmod.tomllib.loads(self.out.read("protocols.toml"))
                self.protocols = {n: protocol_from_dict(b, f"protocols.{n}") for n, b in raw.items()}
            else:
                self.protocols = dict(self.cfg.protocols)
        return self.protocols

    def generate_graph(self, write: bool = True) -> SocialGraph:
        with stage("generate-graph"):
            self.graph = generate_graph(self.cfg.graph)
            if write:
                self.out.write("graph.txt", graph_to_text(self.graph))
        return self.graph

    def calibrate(self) -> dict[str, ProtocolSpec]:
        graph, seeds = self.ensure_graph(), self.ensure_seeds()
        with stage("calibrate"):
            names = list(self.cfg.protocols)
            if self.cfg.calibration.enabled:
                items = [(self.cfg.protocols[n], seeds, self.cfg.calibration,
                          derive_seed(self.master, "calibrate", n), self.cfg.horizon) for n in names]
                dicts = _map(_calibrate_job, items, graph, self.jobs)
                self.protocols = {n: protocol_from_dict(d, f"protocols.{n}") for n, d in zip(names, dicts)}
            else:
                self.protocols = dict(self.cfg.protocols)
            for n, spec in self.protocols.items():
                log.info("  %s base_rate=%.6g", n, spec.response.base_rate)
            self.out.write("seeds.txt", "".join(f"{u}\n" for u in seeds))
            self.out.write("protocols.toml", cfgmod.tomli_w.dumps(
                {n: protocol_to_dict(s) for n, s in self.protocols.items()}))
        return self.protocols

    def simulate(self, names=None) -> None:
        graph, seeds, protocols = self.ensure_graph(), self.ensure_seeds(), self.ensure_protocols()
        names = list(names or protocols)
        with stage("simulate"):
            items, keys = [], []
            for n in names:
                for rep in range(self.cfg.replicates):
                    items.append((protocols[n], seeds, self.cfg.horizon,
                                  derive_seed(self.master, "simulate", n, rep)))
                    keys.append((n, rep))
            texts = _map(_simulate_job, items, graph, self.jobs)
            for (n, rep), text in zip(keys, texts):
                self.out.write(f"cascades/{n}/rep{rep}.log", text)
                c = parse_cascade(text)
                self.cascades.setdefault(n, []).append(c)
                self.trees.setdefault(n, []).append(build_tree(c))
            for n in names:
                log.info("  %s adoptions per replicate: %s", n, [len(t) for t in self.trees[n]])

    def ensure_cascades(self, name: str) -> None:
        if name in self.cascades:
            return
        with stage("simulate"):
            cs = [parse_cascade(self.out.read(f"cascades/{name}/rep{r}.log"))
                  for r in range(self.cfg.replicates)]
            self.cascades[name] = cs
            self.trees[name] = [build_tree(c) for c in cs]

    def summarize(self) -> None:
        graph = self.ensure_graph()
        names = list(self.ensure_protocols())
        for n in names:
            self.ensure_cascades(n)
        with stage("summarize"):
            rows = []
            for n in names:
                curves = []
                for rep, (c, t) in enumerate(zip(self.cascades[n], self.trees[n])):
                    rows.append((n, rep, summarize(c, t, graph)))
                    curve = exposure_curve(c)
                    curves.append(curve)
                    self.out.write(f"curves/{n}/rep{rep}.csv", curve.to_csv())
                self.out.write(f"curves/{n}/pooled.csv", ExposureCurve.pooled(curves).to_csv())
            self.out.write("summary.csv", summaries_to_csv(rows))

    def sample(self, name: str, purpose: str) -> list[Subtree]:
        """Subtrees from replicate 0; ``purpose`` is fit, differentiate or same."""
        key = (name, purpose)
        if key not in self.samples:
            self.ensure_cascades(name)
            a = self.cfg.analysis
            count = a.fit_count if purpose == "fit" else a.differentiate_count
            with stage("sample-subtrees"):
                self.samples[key] = sample_subtrees(self.trees[name][0], count, a.subtree_d,
                                                    derive_seed(self.master, "subtrees", name, purpose))
        return self.samples[key]

    def sample_subtrees(self, write_subtrees: bool = True) -> None:
        for n in self.ensure_protocols():
            sts = self.sample(n, "fit")
            with stage("sample-subtrees"):
                if write_subtrees:
                    self.out.write(f"subtrees/{n}.txt", subtrees_to_text(sts))
                self.out.write(f"features/{n}.csv", features_to_csv(feature_matrix(sts)))

    def fit_sample(self, name: str) -> list[Subtree]:
        if (name, "fit") not in self.samples and self.out.exists(f"subtrees/{name}.txt"):
            with stage("fit-model"):
                self.samples[(name, "fit")] = parse_subtrees(self.out.read(f"subtrees/{name}.txt"))
        return self.sample(name, "fit")

    def fit_models(self) -> None:
        for n in self.ensure_protocols():
            sts = self.fit_sample(n)
            with stage("fit-model"):
                for kind in self.cfg.analysis.model_kinds:
                    m = fit(kind, sts, self.cfg.analysis.smoothing_alpha)
                    self.models[(n, kind)] = m
                    self.out.write(f"models/{n}_{kind}.txt", model_to_text(m))

    def model(self, name: str, kind: str) -> BranchingModel:
        if (name, kind) not in self.models:
            with stage("fit-model"):
                self.models[(name, kind)] = parse_model(self.out.read(f"models/{name}_{kind}.txt"))
        return self.models[(name, kind)]

    def generate_synthetic(self) -> None:
        a = self.cfg.analysis
        for n in self.ensure_protocols():
            for kind in a.model_kinds:
                m = self.model(n, kind)
                with stage("generate-synthetic"):
                    sts = generate(m, a.fit_count, a.subtree_d,
                                   derive_seed(self.master, "synthetic", n, kind))
                    self.out.write(f"synthetic/{n}_{kind}.txt", subtrees_to_text(sts))

    def classify(self) -> list[tuple[str, str, TaskResult, int]]:
        a = self.cfg.analysis
        protocols = self.ensure_protocols()
        chash = self.cfg.config_hash()
        rows = []
        for i, task in enumerate(a.tasks):
            kind, names = cfgmod.parse_task(task, protocols, f"analysis.tasks[{i}]")
            runs = [task] if kind != "real_vs_synthetic" else [f"{task}:{m}" for m in a.model_kinds]
            for label in runs:
                seed = derive_seed(self.master, "task", label)
                params = forest_params(self.cfg, label)
                try:
                    res = self._task(kind, names, label, seed, params)
                except StageError as exc:
                    if not isinstance(exc.cause, InsufficientDataError):
                        raise
                    log.warning("  %s skipped: %s", label, exc.cause)
                    res = TaskResult(float("nan"), 0, 0)
                log.info("  %-45s AUC %.3f", label, res.auc)
                rows.append((label, chash, res, seed))
        with stage("classify"):
            self.out.write("results.csv", results_to_csv(rows))
        return rows

    def _task(self, kind, names, label, seed, params) -> TaskResult:
        a = self.cfg.analysis
        if kind == "adoption":
            self.ensure_cascades(names[0])
            graph = self.ensure_graph()
            with stage("classify"):
                return adoption_task(self.cascades[names[0]][0], self.trees[names[0]][0],
                                     graph, seed, params, jobs=self.jobs)
        if kind == "same":
            a_side, b_side = self.sample(names[0], "differentiate"), self.sample(names[0], "same")
            with stage("classify"):
                return differentiate_task(a_side, b_side, seed, params, jobs=self.jobs)
        if kind == "differentiate":
            a_side, b_side = self.sample(names[0], "differentiate"), self.sample(names[1], "differentiate")
            with stage("classify"):
                return differentiate_task(a_side, b_side, seed, params, jobs=self.jobs)
        mkind = label.rsplit(":", 1)[1]
        real = self.fit_sample(names[0])
        model = self.model(names[0], mkind)
        with stage("classify"):
            rel = f"synthetic/{names[0]}_{mkind}.txt"
            if self.out.exists(rel):
                synth = parse_subtrees(self.out.read(rel))
            else:
                synth = generate(model, len(real), a.subtree_d,
                                 derive_seed(self.master, "synthetic", names[0], mkind))
            return real_vs_synthetic_task(real, model, seed, params, synthetic=synth, jobs=self.jobs)

    def run(self) -> dict:
        self.generate_graph()
        self.calibrate()
        self.simulate()
        self.summarize()
        self.sample_subtrees(write_subtrees=False)
        self.fit_models()
        self.classify()
        with stage("manifest"):
            return self.out.write_manifest(self.cfg)


def run(cfg: cfgmod.ExperimentConfig, out_dir=None, jobs: int = 1) -> dict:
    """Full pipeline; returns the manifest."""
    pipe = Pipeline(cfg, ArtifactDir(out_dir or cfg.output_dir), jobs=jobs)
    return pipe.run()


def with_seed(cfg: cfgmod.ExperimentConfig, seed: Optional[int]) -> cfgmod.ExperimentConfig:
    if seed is None:
        return cfg
    cfg = replace(cfg, master_seed=int(seed))
    cfg.validate()
    return cfg
