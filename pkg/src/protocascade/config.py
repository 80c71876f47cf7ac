"""Experiment configuration: one TOML file holds every parameter.

Unknown keys are rejected and every failure names the offending field as a
dotted path, e.g. ``analysis.tasks[2]``.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .branching import MODEL_KINDS
from .engine import DEFAULT_HORIZON
from .errors import ConfigError
from .netgen import GraphConfig, SocialGraph
from .protocol import ProtocolSpec, default_protocols, protocol_from_dict, protocol_to_dict
from .seeding import derive_rng

SEED_RULES = ("random_k", "top_degree_k", "explicit")
TASK_KINDS = ("adoption", "differentiate", "same", "real_vs_synthetic")


@dataclass(frozen=True)
class SeedRule:
    rule: str = "random_k"
    k: int = 1000
    nodes: tuple[int, ...] = ()

    def select(self, graph: SocialGraph, master_seed: int) -> list[int]:
        if self.rule == "explicit":
            for u in self.nodes:
                if not 0 <= u < graph.n:
                    raise ConfigError("seeds.nodes", f"node {u} is not in the graph")
            return sorted(set(self.nodes))
        k = min(self.k, graph.n)
        if self.rule == "top_degree_k":
            order = np.lexsort((np.arange(graph.n), -graph.degree))
            return sorted(order[:k].tolist())
        rng = derive_rng(master_seed, "seeds")
        return sorted(rng.choice(graph.n, size=k, replace=False).tolist())


@dataclass(frozen=True)
class CalibrationConfig:
    enabled: bool = True
    target_R: float = 1.8
    # tighter than the +-0.1 acceptance band so fresh replicates stay inside it
    tol: float = 0.05
    runs: int = 5


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 8
    subsample_fraction: float = 0.8
    features_per_split: int = 0  # 0 -> round(sqrt(#features))


@dataclass(frozen=True)
class AnalysisConfig:
    subtree_d: int = 3
    # per-side sample for differentiation tasks, and the fitting sample per protocol
    differentiate_count: int = 400_000
    fit_count: int = 200_000
    model_kinds: tuple[str, ...] = MODEL_KINDS
    smoothing_alpha: float = 0.5
    # "adoption:P", "differentiate:P:Q", "same:P", "real_vs_synthetic:P"
    tasks: tuple[str, ...] = ()
    test_fraction: float = 0.2
    forest: ForestConfig = field(default_factory=ForestConfig)


def default_tasks(names) -> tuple[str, ...]:
    names = list(names)
    tasks = [f"adoption:{p}" for p in names]
    tasks += [f"same:{p}" for p in names]
    tasks += [f"differentiate:{a}:{b}" for i, a in enumerate(names) for b in names[i + 1:]]
    tasks += [f"real_vs_synthetic:{p}" for p in names]
    return tuple(tasks)


@dataclass(frozen=True)
class ExperimentConfig:
    graph: GraphConfig = field(default_factory=GraphConfig)
    protocols: dict[str, ProtocolSpec] = field(default_factory=default_protocols)
    seeds: SeedRule = field(default_factory=SeedRule)
    horizon: float = DEFAULT_HORIZON
    replicates: int = 5
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    analysis: AnalysisConfig = field(default_factory=lambda: AnalysisConfig(tasks=default_tasks(default_protocols())))
    output_dir: str = "out"
    master_seed: int = 1

    def validate(self) -> None:
        try:
            self.graph.validate()
        except ValueError as exc:
            raise ConfigError("graph", str(exc)) from None
        if not self.protocols:
            raise ConfigError("protocols", "at least one protocol is required")
        if self.seeds.rule not in SEED_RULES:
            raise ConfigError("seeds.rule", f"expected one of {SEED_RULES}")
        if self.seeds.rule == "explicit" and not self.seeds.nodes:
            raise ConfigError("seeds.nodes", "explicit rule needs at least one node")
        if self.seeds.rule != "explicit" and self.seeds.k < 1:
            raise ConfigError("seeds.k", "must be >= 1")
        if not self.horizon > 0:
            raise ConfigError("horizon", "must be positive")
        if self.replicates < 1:
            raise ConfigError("replicates", "must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed", "must be a 64-bit unsigned integer")
        cal = self.calibration
        if not cal.target_R > 0 or not cal.tol > 0 or cal.runs < 1:
            raise ConfigError("calibration", "target_R and tol must be positive, runs >= 1")
        a = self.analysis
        if a.subtree_d < 1:
            raise ConfigError("analysis.subtree_d", "must be >= 1")
        if a.differentiate_count < 100 or a.fit_count < 1:
            raise ConfigError("analysis.subtree_counts", "differentiate >= 100 and fit >= 1 required")
        for i, kind in enumerate(a.model_kinds):
            if kind not in MODEL_KINDS:
                raise ConfigError(f"analysis.model_kinds[{i}]", f"expected one of {MODEL_KINDS}")
        if a.smoothing_alpha < 0:
            raise ConfigError("analysis.smoothing_alpha", "must be >= 0")
        if not 0 < a.test_fraction < 1:
            raise ConfigError("analysis.test_fraction", "must lie in (0, 1)")
        if a.forest.n_trees < 1 or a.forest.max_depth < 1 or not 0 < a.forest.subsample_fraction <= 1:
            raise ConfigError("analysis.forest", "n_trees, max_depth >= 1 and subsample_fraction in (0, 1]")
        for i, task in enumerate(a.tasks):
            parse_task(task, self.protocols, f"analysis.tasks[{i}]")

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(to_dict(self), sort_keys=True).encode()).hexdigest()


def parse_task(task: str, protocols, where: str = "task") -> tuple[str, tuple[str, ...]]:
    kind, *names = task.split(":")
    arity = {"adoption": 1, "same": 1, "real_vs_synthetic": 1, "differentiate": 2}
    if kind not in arity:
        raise ConfigError(where, f"unknown task kind {kind!r}; expected one of {TASK_KINDS}")
    if len(names) != arity[kind]:
        raise ConfigError(where, f"{kind} takes {arity[kind]} protocol name(s)")
    for name in names:
        if name not in protocols:
            raise ConfigError(where, f"undefined protocol {name!r}")
    return kind, tuple(names)


# ------------------------------------------------------------------ mappings

def _graph_to_dict(g: GraphConfig) -> dict:
    d = asdict(g)
    d.pop("edges")
    d["max_degree"] = d["max_degree"] or 0
    return d


def to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    a = cfg.analysis
    return {
        "master_seed": cfg.master_seed,
        "output_dir": cfg.output_dir,
        "horizon": float(cfg.horizon),
        "replicates": cfg.replicates,
        "graph": _graph_to_dict(cfg.graph),
        "seeds": {"rule": cfg.seeds.rule, "k": cfg.seeds.k, "nodes": list(cfg.seeds.nodes)},
        "calibration": asdict(cfg.calibration),
        "analysis": {
            "subtree_d": a.subtree_d,
            "subtree_counts": {"differentiate": a.differentiate_count, "fit": a.fit_count},
            "model_kinds": list(a.model_kinds),
            "smoothing_alpha": a.smoothing_alpha,
            "test_fraction": a.test_fraction,
            "tasks": list(a.tasks),
            "forest": asdict(a.forest),
        },
        "protocols": {name: protocol_to_dict(spec) for name, spec in cfg.protocols.items()},
    }


def _take(raw: dict, where: str, cls, convert=None):
    """Fill dataclass ``cls`` from ``raw``, rejecting unknown keys and bad types."""
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{where}.{key}" if where else key, "unknown key")
        default = getattr(cls(), key)
        kwargs[key] = _coerce(value, default, f"{where}.{key}" if where else key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(where or "config", str(exc)) from None


def _coerce(value, default, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(where, "expected a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(where, "expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(where, "expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(where, "expected a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(where, "expected a list")
        return tuple(value)
    return value


def from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    raw = dict(raw)
    top = {f.name for f in fields(ExperimentConfig)}
    for key in raw:
        if key not in top:
            raise ConfigError(key, "unknown key")
    base = ExperimentConfig()
    kw: dict[str, Any] = {}
    for key in ("horizon", "replicates", "output_dir", "master_seed"):
        if key in raw:
            kw[key] = _coerce(raw[key], getattr(base, key), key)

    g = dict(raw.get("graph", {}))
    if "edges" in g:
        raise ConfigError("graph.edges", "explicit edge lists are not configurable")
    if g.get("max_degree", None) == 0:
        g.pop("max_degree")
        graph = _take(g, "graph", GraphConfig)
        graph = replace(graph, max_degree=None)
    else:
        graph = _take(g, "graph", GraphConfig)
    kw["graph"] = graph

    if "protocols" in raw:
        if not isinstance(raw["protocols"], dict):
            raise ConfigError("protocols", "expected a table of named protocols")
        protocols = {}
        for name, body in raw["protocols"].items():
            if not isinstance(body, dict):
                raise ConfigError(f"protocols.{name}", "expected a table")
            try:
                protocols[name] = protocol_from_dict(body, f"protocols.{name}")
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"protocols.{name}", str(exc)) from None
        kw["protocols"] = protocols
    else:
        protocols = base.protocols

    seeds = dict(raw.get("seeds", {}))
    if "nodes" in seeds:
        seeds["nodes"] = [int(u) for u in seeds["nodes"]]
    kw["seeds"] = _take(seeds, "seeds", SeedRule)
    kw["calibration"] = _take(raw.get("calibration", {}), "calibration", CalibrationConfig)

    a = dict(raw.get("analysis", {}))
    counts = a.pop("subtree_counts", {})
    for key in counts:
        if key not in ("differentiate", "fit"):
            raise ConfigError(f"analysis.subtree_counts.{key}", "unknown key")
    if "differentiate" in counts:
        a["differentiate_count"] = counts["differentiate"]
    if "fit" in counts:
        a["fit_count"] = counts["fit"]
    forest = _take(a.pop("forest", {}), "analysis.forest", ForestConfig)
    if "tasks" not in a:
        a["tasks"] = list(default_tasks(protocols))
    analysis = _take(a, "analysis", AnalysisConfig)
    kw["analysis"] = replace(analysis, forest=forest)

    cfg = ExperimentConfig(**kw)
    cfg.validate()
    return cfg


def loads(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"not valid TOML: {exc}") from None
    return from_dict(raw)


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return loads(text)


def dumps(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


# ----------------------------------------------------------------- reference

_DOCS = {
    "master_seed": "root of every derived RNG stream (64-bit unsigned)",
    "output_dir": "artifact directory; the OUTPUT_DIR environment variable and --out override it",
    "horizon": "simulated seconds per cascade",
    "replicates": "independent cascades per protocol",
    "graph.n": "node count",
    "graph.page_fraction": "fraction of nodes that are pages",
    "graph.degree_exponent": "power-law exponent of person degrees",
    "graph.page_degree_scale": "page degree multiplier",
    "graph.communities": "number of planted communities",
    "graph.p_in": "intra-community attachment weight",
    "graph.p_out": "inter-community attachment weight",
    "graph.rng_seed": "graph generation seed",
    "graph.min_degree": "smallest person degree",
    "graph.max_degree": "person-degree cutoff; 0 uses the structural cutoff",
    "seeds.rule": f"one of {', '.join(SEED_RULES)}",
    "seeds.k": "seed count for random_k and top_degree_k",
    "seeds.nodes": "node ids for the explicit rule",
    "calibration.enabled": "rescale each protocol's base_rate to hit target_R before simulating",
    "calibration.target_R": "target reproduction number",
    "calibration.tol": "accepted distance from target_R",
    "calibration.runs": "simulations averaged per calibration probe",
    "analysis.subtree_d": "subtree depth limit",
    "analysis.subtree_counts.differentiate": "subtrees per side for differentiation tasks",
    "analysis.subtree_counts.fit": "subtrees per protocol for model fitting and real-vs-synthetic tasks",
    "analysis.model_kinds": f"branching models to fit ({', '.join(MODEL_KINDS)})",
    "analysis.smoothing_alpha": "additive smoothing of conditional-model rows",
    "analysis.test_fraction": "held-out share of every classification task",
    "analysis.tasks": "adoption:P, same:P, differentiate:P:Q or real_vs_synthetic:P",
    "analysis.forest.n_trees": "trees per forest",
    "analysis.forest.max_depth": "depth limit of each tree",
    "analysis.forest.subsample_fraction": "bootstrap sample size relative to the training set",
    "analysis.forest.features_per_split": "candidate features per split; 0 uses round(sqrt(d))",
    "protocols.<name>": "one table per protocol; kind is transient_copy, persistent_copy, nomination or volunteer",
}


def _flatten(d: dict, prefix: str = "") -> list[tuple[str, Any]]:
    out = []
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out += _flatten(v, key + ".")
        else:
            out.append((key, v))
    return out


def reference() -> str:
    """Markdown table of every configuration key with its default."""
    d = to_dict(ExperimentConfig())
    lines = ["# Configuration reference", "",
             "Every key, its shipped default and meaning. Omitted keys take the default.", "",
             "| key | default | meaning |", "|---|---|---|"]
    for key, value in _flatten({k: v for k, v in d.items() if k != "protocols"}):
        shown = json.dumps(value)
        if key == "analysis.tasks":
            shown = f"{len(value)} tasks (see default config)"
        lines.append(f"| `{key}` | `{shown}` | {_DOCS.get(key, '')} |")
    lines += ["", "## Protocols", "", _DOCS["protocols.<name>"] + ".", "",
              "| key | default | ", "|---|---|"]
    for key, value in _flatten(d["protocols"]):
        lines.append(f"| `protocols.{key}` | `{json.dumps(value)}` |")
    return "\n".join(lines) + "\n"
