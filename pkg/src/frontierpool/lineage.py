"""Augmentation lineage graph and bottom-up pool-statistic refresh.

Children feed their (difficulty-adjusted) statistics to parents, leaves
first. Two aggregators are provided: a plain mean over immediate children
and a mean weighted by each child's root-to-leaf path count, which equals
the uniform mean over all descendant leaf paths.
"""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

from .errors import CycleInSubtree, DuplicateEdge, NoScoredChildren, SelfLoop
from .records import D_MAX, D_MIN

log = logging.getLogger(__name__)

PHI_EPS = 1e-6


class AggMode(str, Enum):
    CHILD = "child"
    PATH = "path"
    SOFTMAX = "softmax"


def clip(x: float, lo: float = -1.0, hi: float = 1.0) -> float:
    return lo if x < lo else hi if x > hi else x


def clamp_difficulty(d_raw: float | None) -> float:
    if d_raw is None:
        return 1.0
    if not math.isfinite(d_raw):
        log.warning("non-finite difficulty %r treated as absent", d_raw)
        return 1.0
    return min(max(d_raw, D_MIN), D_MAX)


def phi(r_child: float, d_child: float) -> float:
    """Child statistic scaled down by its relative difficulty, clipped to [-1, 1]."""
    return clip(r_child / max(d_child, PHI_EPS))


class LineageGraph:
    """Parent -> children adjacency with per-edge difficulty.

    ``nodes`` is the index of ids currently backed by a record; edges may
    reference ids outside it (dangling) after rejections or evictions.
    """

    def __init__(self) -> None:
        self.children: dict[int, list[tuple[int, float]]] = {}
        self.parents: dict[int, list[int]] = {}
        self.nodes: set[int] = set()
        self._edges: set[tuple[int, int]] = set()

    def __len__(self) -> int:
        return len(self._edges)

    def add_node(self, node_id: int) -> None:
        self.nodes.add(node_id)

    def discard_node(self, node_id: int) -> None:
        self.nodes.discard(node_id)

    def add_edge(self, parent_id: int, child_id: int, d_child: float) -> None:
        if parent_id == child_id:
            raise SelfLoop(f"self loop on {parent_id}")
        if (parent_id, child_id) in self._edges:
            raise DuplicateEdge(f"edge {parent_id}->{child_id} already present")
        if not D_MIN <= d_child <= D_MAX:
            raise ValueError(f"difficulty {d_child} not clamped to [{D_MIN}, {D_MAX}]")
        self._edges.add((parent_id, child_id))
        self.children.setdefault(parent_id, []).append((child_id, d_child))
        self.parents.setdefault(child_id, []).append(parent_id)

    def edges(self) -> Iterable[tuple[int, int, float]]:
        for parent, kids in self.children.items():
            for child, d in kids:
                yield parent, child, d

    def descendants(self, roots: Iterable[int]) -> set[int]:
        """Known nodes reachable from ``roots`` (roots included when known)."""
        nodes, children = self.nodes, self.children
        seen = {r for r in roots if r in nodes}
        stack = [r for r in seen if r in children]
        while stack:
            for c, _ in children[stack.pop()]:
                if c in nodes and c not in seen:
                    seen.add(c)
                    if c in children:
                        stack.append(c)
        return seen

    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for parent, child, d in self.edges():
                fh.write(json.dumps({"parent": parent, "child": child, "d": d}) + "\n")

    @classmethod
    def from_jsonl(cls, path: str | Path) -> LineageGraph:
        graph = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    graph.add_edge(row["parent"], row["child"], row["d"])
                    graph.nodes.update((row["parent"], row["child"]))
        return graph


@dataclass
class RefreshReport:
    updated: int = 0
    cycle_detected: int = 0
    dangling: int = 0
    max_depth: int = 0
    mode: str = AggMode.PATH.value

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class Levels:
    depth: dict[int, int]
    order: list[int]  # increasing (depth, id)
    cycle_detected: int
    dangling: int
    work: int
    kids: dict[int, list[int]] = field(default_factory=dict)  # in-scope children


def compute_levels(graph: LineageGraph, scope: Iterable[int] | None = None) -> Levels:
    """Depth of every node in ``scope``: 0 at leaves, 1 + max child depth above.

    Acyclic parts are resolved in topological order. Nodes left over (on or
    above a cycle) are relaxed for at most as many passes as there are
    leftover nodes; any still changing on the final pass are frozen and
    counted as cycle-affected.
    """
    gnodes = graph.nodes
    gchildren = graph.children
    nodes = set(gnodes) if scope is None else set(scope) & gnodes
    dangling_ids: set[int] = set()
    kids: dict[int, list[int]] = {}
    rev: dict[int, list[int]] = {u: [] for u in nodes}
    outdeg: dict[int, int] = {}
    work = 0
    for u in nodes:
        ch = gchildren.get(u)
        if not ch:
            kids[u] = []
            outdeg[u] = 0
            continue
        work += len(ch)
        lst = [c for c, _ in ch if c in nodes]
        if len(lst) != len(ch):
            dangling_ids.update(c for c, _ in ch if c not in gnodes)
        kids[u] = lst
        outdeg[u] = len(lst)
        for c in lst:
            rev[c].append(u)

    depth = dict.fromkeys(nodes, 0)
    queue = deque(u for u, k in outdeg.items() if k == 0)
    done: list[int] = []
    while queue:
        u = queue.popleft()
        done.append(u)
        parents = rev[u]
        work += 1 + len(parents)
        du = depth[u] + 1
        for p in parents:
            if du > depth[p]:
                depth[p] = du
            outdeg[p] -= 1
            if outdeg[p] == 0:
                queue.append(p)

    cycle_detected = 0
    leftover = sorted(nodes.difference(done)) if len(done) < len(nodes) else []
    if leftover:
        changed: list[int] = []
        for _ in range(len(leftover)):
            changed = []
            for u in leftover:
                new = 1 + max((depth[c] for c in kids[u]), default=-1)
                work += 1 + len(kids[u])
                if new != depth[u]:
                    depth[u] = new
                    changed.append(u)
            if not changed:
                break
        cycle_detected = len(changed)
        if cycle_detected:
            log.info("lineage cycle: %d node depths frozen", cycle_detected)

    buckets: dict[int, list[int]] = {}
    for u in sorted(nodes):
        buckets.setdefault(depth[u], []).append(u)
    order = [u for dep in sorted(buckets) for u in buckets[dep]]
    return Levels(depth, order, cycle_detected, len(dangling_ids), work, kids)


def subtree_path_counts(
    graph: LineageGraph, levels: Levels | None = None, scope: Iterable[int] | None = None
) -> dict[int, int]:
    """Number of root-to-leaf paths below each node (1 at leaves)."""
    levels = levels or compute_levels(graph, scope)
    kids = levels.kids
    s: dict[int, int] = {}
    for u in levels.order:
        lst = kids.get(u)
        # cycle-frozen children not reached yet count as a single path
        s[u] = sum([s.get(c, 1) for c in lst]) if lst else 1
    return s


def _scored(
    graph: LineageGraph, node: int, scores: Mapping[int, float | None]
) -> list[tuple[int, float]]:
    out = []
    for c, d in graph.children.get(node, ()):
        if c in graph.nodes:
            value = scores.get(c)
            if value is not None:
                out.append((c, phi(value, d)))
    return out


def child_agg(graph: LineageGraph, node: int, scores: Mapping[int, float | None]) -> float:
    vals = _scored(graph, node, scores)
    if not vals:
        raise NoScoredChildren(f"node {node} has no scored children")
    return sum(v for _, v in vals) / len(vals)


def path_agg(
    graph: LineageGraph,
    node: int,
    scores: Mapping[int, float | None],
    s: Mapping[int, int],
    temperature: float | None = None,
) -> float:
    """Path-count weighted mean; with ``temperature`` the weights are s**(1/T), renormalised."""
    vals = _scored(graph, node, scores)
    if not vals:
        raise NoScoredChildren(f"node {node} has no scored children")
    if temperature is None:
        weights = [float(s.get(c, 1)) for c, _ in vals]
    else:
        weights = [math.exp(math.log(s.get(c, 1)) / temperature) for c, _ in vals]
    total = sum(weights)
    return sum(w * v for w, (_, v) in zip(weights, vals)) / total


def refresh_pass(
    graph: LineageGraph,
    scores: Mapping[int, float | None],
    mode: AggMode | str = AggMode.PATH,
    scope: Iterable[int] | None = None,
    blend: float = 0.5,
    temperature: float = 1.0,
) -> tuple[dict[int, float | None], RefreshReport]:
    """One leaves-first refresh; returns the new statistics and a report.

    ``scores`` is never mutated. Nodes with a prior statistic are blended
    ``(1 - blend) * old + blend * agg``; nodes without one take the bare
    aggregate. Children read values already refreshed in this pass.
    """
    mode = AggMode(mode)
    levels = compute_levels(graph, scope)
    s = subtree_path_counts(graph, levels) if mode is not AggMode.CHILD else {}
    out: dict[int, float | None] = dict(scores)
    report = RefreshReport(
        cycle_detected=levels.cycle_detected,
        dangling=levels.dangling,
        max_depth=max(levels.depth.values(), default=0),
        mode=mode.value,
    )
    nodes, gchildren, depth = graph.nodes, graph.children, levels.depth
    weight = None
    if mode is AggMode.PATH:
        weight = lambda c: float(s.get(c, 1))  # noqa: E731
    elif mode is AggMode.SOFTMAX:
        weight = lambda c: math.exp(math.log(s.get(c, 1)) / temperature)  # noqa: E731
    keep = 1.0 - blend
    for u in levels.order:
        if depth[u] == 0:
            continue
        # same arithmetic as child_agg / path_agg, inlined for speed
        num = den = 0.0
        for c, d in gchildren.get(u, ()):
            if c in nodes:
                value = out.get(c)
                if value is not None:
                    w = 1.0 if weight is None else weight(c)
                    num += w * clip(value / max(d, PHI_EPS))
                    den += w
        if den == 0.0:
            continue
        agg = num / den
        old = out.get(u)
        out[u] = clip(agg) if old is None else clip(keep * old + blend * agg)
        report.updated += 1
    return out, report


def leaf_mean_oracle(
    graph: LineageGraph, node: int, leaf_values: Mapping[int, float]
) -> float:
    """Mean leaf value over every root-to-leaf path below ``node``, by enumeration."""
    total = 0.0
    count = 0
    stack: list[tuple[int, frozenset[int]]] = [(node, frozenset((node,)))]
    while stack:
        u, on_path = stack.pop()
        kids = [c for c, _ in graph.children.get(u, ()) if c in graph.nodes]
        if not kids:
            total += leaf_values[u]
            count += 1
            continue
        for c in kids:
            if c in on_path:
                raise CycleInSubtree(f"cycle through {c} below {node}")
            stack.append((c, on_path | {c}))
    return total / count
