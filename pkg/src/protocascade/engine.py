"""Discrete-event cascade simulation and adopter-tree construction."""

from __future__ import annotations

import functools
import hashlib
import heapq
import itertools
import json
import math
import random
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

from .errors import CorruptLogError
from .netgen import SocialGraph
from .protocol import (
    Nomination,
    PersistentCopy,
    ProtocolSpec,
    Volunteer,
    exposure_gain,
    protocol_from_dict,
    protocol_to_dict,
    sample_delay,
)

DAY = 86_400.0
DEFAULT_HORIZON = 28 * DAY


class EventKind(IntEnum):
    # value doubles as the tie-break rank for simultaneous events
    View = 0
    Signup = 1
    Assign = 2
    Adopt = 3
    Post = 4


class Event(NamedTuple):
    time: float
    kind: EventKind
    actor: int
    source: Optional[int] = None
    # View: which exposure of the actor this is; Signup/Assign/Adopt: the
    # exposure whose decision led to it
    exposure_index: Optional[int] = None


@dataclass(frozen=True)
class Cascade:
    protocol: ProtocolSpec
    graph_ref: str
    seeds: tuple[int, ...]
    events: tuple[Event, ...]
    horizon: float = DEFAULT_HORIZON
    rng_seed: Optional[int] = None

    def config_hash(self) -> str:
        payload = json.dumps({
            "protocol": protocol_to_dict(self.protocol),
            "graph": self.graph_ref,
            "seeds": list(self.seeds),
            "horizon": self.horizon,
        }, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    def adopters(self) -> list[int]:
        return [e.actor for e in self.events if e.kind == EventKind.Adopt]


@dataclass
class CascadeTree:
    """Adopters (in adoption order) with first-exposure parent links."""

    adoption_time: dict[int, float] = field(default_factory=dict)
    parent: dict[int, int] = field(default_factory=dict)
    children: dict[int, list[int]] = field(default_factory=dict)
    roots: list[int] = field(default_factory=list)

    @property
    def nodes(self) -> list[int]:
        return list(self.adoption_time)

    def __len__(self) -> int:
        return len(self.adoption_time)

    def __contains__(self, node: int) -> bool:
        return node in self.adoption_time

    def n_children(self, node: int) -> int:
        return len(self.children[node])

    def internal_nodes(self) -> list[int]:
        return [u for u in self.adoption_time if self.children[u]]

    def depths(self) -> dict[int, int]:
        # adoption order is a topological order
        depth = {}
        for u in self.adoption_time:
            p = self.parent.get(u)
            depth[u] = 0 if p is None else depth[p] + 1
        return depth

    def edges(self) -> list[tuple[int, int]]:
        """(child, parent) pairs in child adoption order."""
        return [(c, p) for c, p in self.parent.items()]

    @classmethod
    def from_parents(cls, parent: dict[int, Optional[int]],
                     adoption_time: Optional[dict[int, float]] = None) -> "CascadeTree":
        """Tree from an explicit child -> parent map (None marks a root).

        Without adoption times, nodes are ordered parents-first by depth.
        """
        if adoption_time is None:
            depth: dict[int, int] = {}

            def _depth(u, trail=()):
                if u in depth:
                    return depth[u]
                if u in trail:
                    raise ValueError("parent map contains a cycle")
                p = parent[u]
                depth[u] = 0 if p is None else _depth(p, trail + (u,)) + 1
                return depth[u]

            for u in parent:
                _depth(u)
            order = sorted(parent, key=lambda u: (depth[u], u))
            adoption_time = {u: float(depth[u]) for u in order}
        tree = cls()
        for u in sorted(adoption_time, key=lambda u: (adoption_time[u], u)):
            tree.adoption_time[u] = adoption_time[u]
            tree.children[u] = []
            p = parent.get(u)
            if p is None:
                tree.roots.append(u)
            else:
                if p not in tree.adoption_time:
                    raise ValueError(f"parent {p} of {u} is not an earlier node")
                tree.parent[u] = p
                tree.children[p].append(u)
        return tree


def simulate(graph: SocialGraph, spec: ProtocolSpec, seeds: Sequence[int],
             horizon: float = DEFAULT_HORIZON, rng=None) -> Cascade:
    """Run one cascade to the horizon or until the event queue drains.

    ``rng`` is a ``random.Random`` or an integer seed.
    """
    if not seeds:
        raise ValueError("at least one seed is required")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    seeds = tuple(dict.fromkeys(int(s) for s in seeds))
    for s in seeds:
        if not 0 <= s < graph.n:
            raise KeyError(f"unknown seed id {s}")
    rng_seed = rng if isinstance(rng, int) else None
    if not isinstance(rng, random.Random):
        rng = random.Random(rng)

    n = graph.n
    adjacency = graph.adjacency
    adj_mutual = graph.adj_mutual
    response = spec.response
    base = response.base_rate
    tie_boost = response.tie_boost
    cost_mult = 1.0 + response.social_cost_boost
    flat = response.shape == "flat"
    delays = spec.delays
    view_prob = spec.view_prob
    rand = rng.random

    is_persistent = isinstance(spec, PersistentCopy)
    is_nomination = isinstance(spec, Nomination)
    is_volunteer = isinstance(spec, Volunteer)
    if is_volunteer:
        base *= spec.signup_prob
        slots = [0] * n
        max_assign = spec.max_assignments
    window = getattr(spec, "visibility_window", math.inf)

    committed = bytearray(n)
    exposures = [0] * n
    events: list[Event] = []
    log = events.append
    heap: list = []
    push = functools.partial(heapq.heappush, heap)
    pop = functools.partial(heapq.heappop, heap)
    seq = itertools.count()

    VIEW, SIGNUP, ASSIGN, ADOPT, POST = (EventKind.View, EventKind.Signup, EventKind.Assign,
                                         EventKind.Adopt, EventKind.Post)

    for s in seeds:
        committed[s] = 1
        push((0.0, ADOPT, s, next(seq), None, None, None))

    while heap:
        t, kind, actor, _, source, k, payload = pop()
        if kind == VIEW:
            if committed[actor]:
                continue
            if is_volunteer and slots[source] >= max_assign:
                # the call for volunteers closes once every slot is filled
                continue
            k = exposures[actor] + 1
            exposures[actor] = k
            log(Event(t, VIEW, actor, source, k))
            targeted, mutual, post_time = payload
            p = base if flat else base * exposure_gain(response, k)
            if mutual:
                p *= 1.0 + tie_boost * (mutual / (1.0 + mutual))
            if targeted:
                p *= cost_mult
            if rand() < p:
                if is_volunteer:
                    push((t, SIGNUP, actor, next(seq), source, k, None))
                else:
                    committed[actor] = 1
                    ta = t + sample_delay(delays, "effort", rng)
                    if ta <= horizon:
                        push((ta, ADOPT, actor, next(seq), source, k, None))
            elif is_persistent:
                tn = t + rng.expovariate(spec.repeat_view_rate)
                if tn <= post_time + window and tn <= horizon:
                    push((tn, VIEW, actor, next(seq), source, None, payload))
        elif kind == SIGNUP:
            if committed[actor]:
                continue
            log(Event(t, SIGNUP, actor, source, k))
            if slots[source] < max_assign:
                slots[source] += 1
                committed[actor] = 1
                tn = t + sample_delay(delays, "view", rng)
                if tn <= horizon:
                    push((tn, ASSIGN, actor, next(seq), source, k, None))
        elif kind == ASSIGN:
            log(Event(t, ASSIGN, actor, source, k))
            if rand() < spec.completion_prob:
                ta = t + sample_delay(delays, "effort", rng)
                if ta <= horizon:
                    push((ta, ADOPT, actor, next(seq), source, k, None))
        elif kind == ADOPT:
            log(Event(t, ADOPT, actor, source, k))
            push((t, POST, actor, next(seq), None, None, None))
        else:
            log(Event(t, POST, actor))
            friends = adjacency[actor]
            muts = adj_mutual[actor]
            if is_nomination:
                picks = rng.sample(range(len(friends)), min(spec.fanout, len(friends)))
                targets = [(friends[i], muts[i]) for i in picks]
                targeted = True
            else:
                targets = zip(friends, muts)
                targeted = False
            for v, m in targets:
                if committed[v]:
                    continue
                tv = None
                if rand() < view_prob:
                    tv = t + sample_delay(delays, "view", rng)
                    if tv - t > window:
                        tv = None
                if tv is None and is_persistent:
                    # missed in the feed; the profile stays visible
                    tv = t + rng.expovariate(spec.repeat_view_rate)
                    if tv - t > window:
                        tv = None
                if tv is not None and tv <= horizon:
                    push((tv, VIEW, v, next(seq), actor, None, (targeted, m, t)))
    return Cascade(protocol=spec, graph_ref=graph.identity, seeds=seeds,
                   events=tuple(events), horizon=float(horizon), rng_seed=rng_seed)


def build_tree(cascade: Cascade) -> CascadeTree:
    """Adopter tree; each non-seed's parent is the poster of its earliest View."""
    seeds = set(cascade.seeds)
    first_view: dict[int, int] = {}
    tree = CascadeTree()
    for ev in cascade.events:
        if ev.kind == EventKind.View:
            if ev.source is None:
                raise CorruptLogError(f"View by {ev.actor} at t={ev.time} has no source")
            first_view.setdefault(ev.actor, ev.source)
        elif ev.kind == EventKind.Adopt:
            u = ev.actor
            if u in tree.adoption_time:
                raise CorruptLogError(f"node {u} adopts twice")
            tree.children[u] = []
            if u in seeds:
                tree.roots.append(u)
            else:
                p = first_view.get(u)
                if p is None:
                    raise CorruptLogError(f"non-seed {u} adopts without a prior View")
                tp = tree.adoption_time.get(p)
                if tp is None or not tp < ev.time:
                    raise CorruptLogError(f"parent {p} of {u} had not adopted before t={ev.time}")
                tree.parent[u] = p
                tree.children[p].append(u)
            tree.adoption_time[u] = ev.time
    return tree


# ---------------------------------------------------------------- file format

_KIND_BY_NAME = {k.name: k for k in EventKind}


def _fmt_opt(x) -> str:
    return "-" if x is None else str(x)


def cascade_to_text(cascade: Cascade) -> str:
    lines = [
        f"#cascade config_hash={cascade.config_hash()} rng_seed={_fmt_opt(cascade.rng_seed)}",
        f"#graph {cascade.graph_ref}",
        f"#horizon {cascade.horizon!r}",
        "#protocol " + json.dumps(protocol_to_dict(cascade.protocol), sort_keys=True),
        "#seeds " + " ".join(map(str, cascade.seeds)),
    ]
    for e in cascade.events:
        lines.append(f"{e.time!r} {e.kind.name} {e.actor} {_fmt_opt(e.source)} "
                     f"{_fmt_opt(e.exposure_index)}")
    return "\n".join(lines) + "\n"


def write_cascade(cascade: Cascade, path) -> None:
    Path(path).write_text(cascade_to_text(cascade))


def parse_cascade(text: str) -> Cascade:
    meta: dict[str, str] = {}
    events = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, rest = line[1:].partition(" ")
            meta[key] = rest
            continue
        parts = line.split()
        if len(parts) != 5 or parts[1] not in _KIND_BY_NAME:
            raise ValueError(f"line {lineno}: malformed event record")
        src = None if parts[3] == "-" else int(parts[3])
        idx = None if parts[4] == "-" else int(parts[4])
        events.append(Event(float(parts[0]), _KIND_BY_NAME[parts[1]], int(parts[2]), src, idx))
    try:
        protocol = protocol_from_dict(json.loads(meta["protocol"]))
        seeds = tuple(int(s) for s in meta["seeds"].split())
    except KeyError as exc:
        raise ValueError(f"missing header {exc}") from None
    rng_seed = None
    for tok in meta.get("cascade", "").split():
        if tok.startswith("rng_seed=") and tok != "rng_seed=-":
            rng_seed = int(tok.split("=", 1)[1])
    return Cascade(protocol=protocol, graph_ref=meta.get("graph", ""), seeds=seeds,
                   events=tuple(events), horizon=float(meta.get("horizon", DEFAULT_HORIZON)),
                   rng_seed=rng_seed)


def read_cascade(path) -> Cascade:
    return parse_cascade(Path(path).read_text())
