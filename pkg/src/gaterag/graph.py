"""Layered knowledge graph: entity layer, module layers and the three edge kinds.

The graph is built once (by :mod:`gaterag.ingest` and :mod:`gaterag.hierarchy`)
and then treated as read-only.  Installing a new gate set produces a new graph
via :meth:`KnowledgeGraph.with_gates`.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

from .errors import DataError, NodeNotFoundError

Vector = tuple[float, ...]


class EdgeKind(str, Enum):
    STRUCTURAL = "structural"
    HIERARCHICAL = "hierarchical"
    CAUSAL_GATE = "causal_gate"


ALL_KINDS = frozenset(EdgeKind)
NO_GATES = frozenset({EdgeKind.STRUCTURAL, EdgeKind.HIERARCHICAL})


def unit(vec: Iterable[float]) -> Vector:
    arr = np.asarray(list(vec), dtype=float)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise DataError("cannot normalize a zero vector")
    return tuple(float(x) for x in arr / norm)


@dataclass(frozen=True)
class Chunk:
    id: str
    doc_id: str
    text: str
    char_span: tuple[int, int]


@dataclass(frozen=True)
class EntityNode:
    id: str
    name: str
    description: str = ""
    aliases: frozenset[str] = frozenset()
    source_chunks: frozenset[str] = frozenset()
    embedding: Vector = ()

    @property
    def text(self) -> str:
        return f"{self.name}: {self.description}" if self.description else self.name


@dataclass(frozen=True)
class ModuleNode:
    id: str
    level: int
    member_ids: frozenset[str]
    summary: str = ""
    summary_embedding: Vector = ()
    summary_fallback: bool = False

    @property
    def name(self) -> str:
        return self.id

    @property
    def text(self) -> str:
        return self.summary


@dataclass(frozen=True)
class RelationEdge:
    src: str
    dst: str
    kind: EdgeKind
    description: str = ""
    weight_hint: float = 1.0

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.kind.value, self.src, self.dst)


@dataclass(frozen=True)
class CausalGate:
    """A verified directed gate between two modules, with its provenance."""

    src: str
    dst: str
    score: float
    verdict: str
    request_key: str = ""
    raw_response: str = ""

    def as_edge(self) -> RelationEdge:
        return RelationEdge(self.src, self.dst, EdgeKind.CAUSAL_GATE, self.verdict, self.score)


@dataclass(frozen=True)
class ModuleLink:
    """Aggregated link between two modules of the same level (partitioning input only)."""

    level: int
    a: str
    b: str
    weight: float


@dataclass(frozen=True)
class KnowledgeGraph:
    chunks: Mapping[str, Chunk] = field(default_factory=dict)
    entities: Mapping[str, EntityNode] = field(default_factory=dict)
    modules: Mapping[str, ModuleNode] = field(default_factory=dict)
    edges: tuple[RelationEdge, ...] = ()
    gates: tuple[CausalGate, ...] = ()
    module_links: tuple[ModuleLink, ...] = ()
    meta: Mapping[str, object] = field(default_factory=dict)

    # -- node access ---------------------------------------------------

    def has_node(self, node_id: str) -> bool:
        return node_id in self.entities or node_id in self.modules

    def node(self, node_id: str) -> EntityNode | ModuleNode:
        if node_id in self.entities:
            return self.entities[node_id]
        if node_id in self.modules:
            return self.modules[node_id]
        raise NodeNotFoundError(node_id)

    def level_of(self, node_id: str) -> int:
        if node_id in self.entities:
            return 0
        return self.node(node_id).level  # type: ignore[union-attr]

    def embedding(self, node_id: str) -> Vector:
        node = self.node(node_id)
        return node.embedding if isinstance(node, EntityNode) else node.summary_embedding

    @property
    def dimension(self) -> int:
        for ent in self.entities.values():
            return len(ent.embedding)
        return int(self.meta.get("dimension", 0))  # type: ignore[arg-type]

    @cached_property
    def levels(self) -> tuple[tuple[str, ...], ...]:
        """Node ids per level, H0 (entities) first."""
        out: list[list[str]] = [sorted(self.entities)]
        for mod in self.modules.values():
            while len(out) <= mod.level:
                out.append([])
            out[mod.level].append(mod.id)
        return tuple(tuple(sorted(ids)) for ids in out)

    @property
    def depth(self) -> int:
        """Number of module levels L."""
        return len(self.levels) - 1

    @cached_property
    def _parents(self) -> dict[str, str]:
        parents = {}
        for mod in self.modules.values():
            for child in mod.member_ids:
                parents[child] = mod.id
        return parents

    def parent(self, node_id: str) -> str | None:
        if not self.has_node(node_id):
            raise NodeNotFoundError(node_id)
        return self._parents.get(node_id)

    def ancestors(self, node_id: str) -> list[str]:
        """Strict ancestors, nearest first."""
        out = []
        cur = self.parent(node_id)
        while cur is not None:
            out.append(cur)
            cur = self._parents.get(cur)
        return out

    def children(self, module_id: str) -> frozenset[str]:
        if module_id not in self.modules:
            raise NodeNotFoundError(module_id)
        return self.modules[module_id].member_ids

    # -- edges ---------------------------------------------------------

    def unified_edges(self, kinds: Iterable[EdgeKind] = ALL_KINDS) -> list[RelationEdge]:
        kinds = frozenset(kinds)
        out = [e for e in self.edges if e.kind in kinds]
        if EdgeKind.CAUSAL_GATE in kinds:
            out.extend(g.as_edge() for g in self.gates)
        return out

    @cached_property
    def _adjacency(self) -> dict[str, list[tuple[str, RelationEdge]]]:
        adj: dict[str, list[tuple[str, RelationEdge]]] = {n: [] for n in self.entities}
        adj.update({m: [] for m in self.modules})
        for e in self.unified_edges():
            adj[e.src].append((e.dst, e))
            adj[e.dst].append((e.src, e))
        for items in adj.values():
            items.sort(key=lambda item: (item[0], item[1].kind.value, item[1].src, item[1].dst))
        return adj

    def neighbors(
        self, node_id: str, allowed_kinds: Iterable[EdgeKind] = ALL_KINDS
    ) -> list[tuple[str, RelationEdge]]:
        return neighbors(self, node_id, allowed_kinds)

    def with_gates(self, gates: Iterable[CausalGate], meta_update: Mapping[str, object] | None = None) -> KnowledgeGraph:
        meta = dict(self.meta)
        if meta_update:
            meta.update(meta_update)
        return replace(self, gates=tuple(sorted(gates, key=lambda g: (g.src, g.dst))), meta=meta)

    def stats(self) -> dict[str, object]:
        """Per-level node counts plus edge totals."""
        per_level = [len(ids) for ids in self.levels]
        return {
            "nodes": len(self.entities),
            "edges": sum(1 for e in self.edges if e.kind is EdgeKind.STRUCTURAL),
            "modules": len(self.modules),
            "levels": self.depth,
            "modules_per_level": {str(i): n for i, n in enumerate(per_level) if i > 0},
            "module_links_per_level": {
                str(lvl): sum(1 for link in self.module_links if link.level == lvl)
                for lvl in range(1, self.depth + 1)
            },
            "hierarchical_edges": sum(1 for e in self.edges if e.kind is EdgeKind.HIERARCHICAL),
            "gates": len(self.gates),
            "chunks": len(self.chunks),
        }

    # -- invariants ----------------------------------------------------

    def validate(self) -> None:
        """Raise :class:`DataError` if any structural invariant is violated."""
        levels = self.levels
        for lvl in range(1, len(levels)):
            below = set(levels[lvl - 1])
            seen: set[str] = set()
            for mid in levels[lvl]:
                members = self.modules[mid].member_ids
                if not members:
                    raise DataError(f"module {mid} has no members")
                if seen & members:
                    raise DataError(f"level {lvl} member sets overlap at {mid}")
                if not members <= below:
                    raise DataError(f"module {mid} has members outside level {lvl - 1}")
                seen |= members
            if seen != below:
                raise DataError(f"level {lvl} does not cover level {lvl - 1}")
        keys = set()
        for e in self.unified_edges():
            if not (self.has_node(e.src) and self.has_node(e.dst)):
                raise DataError(f"dangling edge {e.key}")
            if e.key in keys:
                raise DataError(f"duplicate edge {e.key}")
            keys.add(e.key)
            if e.kind is EdgeKind.STRUCTURAL and (e.src == e.dst or e.src not in self.entities or e.dst not in self.entities):
                raise DataError(f"bad structural edge {e.key}")
            if e.kind is EdgeKind.HIERARCHICAL:
                if self.level_of(e.src) != self.level_of(e.dst) + 1 or e.dst not in self.modules[e.src].member_ids:
                    raise DataError(f"hierarchical edge {e.key} skips levels")
            if e.kind is EdgeKind.CAUSAL_GATE:
                if e.src == e.dst or e.src not in self.modules or e.dst not in self.modules:
                    raise DataError(f"bad gate {e.key}")
                if self._parents.get(e.src) == e.dst or self._parents.get(e.dst) == e.src:
                    raise DataError(f"gate {e.key} parallels a hierarchical edge")


def neighbors(
    graph: KnowledgeGraph, node_id: str, allowed_kinds: Iterable[EdgeKind] = ALL_KINDS
) -> list[tuple[str, RelationEdge]]:
    """Incident edges of ``node_id`` whose kind is allowed, ordered by neighbor id."""
    try:
        items = graph._adjacency[node_id]
    except KeyError:
        raise NodeNotFoundError(node_id) from None
    allowed = frozenset(allowed_kinds)
    return [(nbr, e) for nbr, e in items if e.kind in allowed]


def min_hops(
    graph: KnowledgeGraph,
    sources: Iterable[str],
    targets: Iterable[str],
    allowed_kinds: Iterable[EdgeKind] = ALL_KINDS,
) -> int | None:
    """Undirected shortest-path length between two node sets; ``None`` if unreachable."""
    sources, targets = set(sources), set(targets)
    if not sources or not targets:
        raise ValueError("min_hops needs non-empty source and target sets")
    for nid in sources | targets:
        if not graph.has_node(nid):
            raise NodeNotFoundError(nid)
    if sources & targets:
        return 0
    allowed = frozenset(allowed_kinds)
    dist = {s: 0 for s in sources}
    queue = deque(sorted(sources))
    while queue:
        u = queue.popleft()
        for v, _ in neighbors(graph, u, allowed):
            if v in dist:
                continue
            if v in targets:
                return dist[u] + 1
            dist[v] = dist[u] + 1
            queue.append(v)
    return None
