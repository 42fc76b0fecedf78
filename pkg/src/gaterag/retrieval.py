"""Online retrieval: hybrid seeding with MMR, then gated best-first expansion."""

from __future__ import annotations

import heapq
import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .diagnostics import Diagnostics
from .errors import DataError, EmptyTextError, NodeNotFoundError
from .graph import ALL_KINDS, NO_GATES, EdgeKind, EntityNode, KnowledgeGraph, RelationEdge, Vector
from .providers import EmbeddingProvider
from .text import tokenize

log = logging.getLogger(__name__)

DEFAULT_EDGE_WEIGHTS = {
    EdgeKind.CAUSAL_GATE: 1.2,
    EdgeKind.HIERARCHICAL: 1.0,
    EdgeKind.STRUCTURAL: 0.8,
}


@dataclass(frozen=True)
class HybridScoreConfig:
    alpha: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass(frozen=True)
class ExpansionConfig:
    gamma: float = 0.85
    edge_weights: Mapping[EdgeKind, float] = field(default_factory=lambda: dict(DEFAULT_EDGE_WEIGHTS))
    hop_limit: int = 4
    gain_floor: float = 0.05
    budget_chars: int | None = 12000
    entity_seeds: int = 3
    top_seeds: int = 3
    intermediate_seeds: int = 0
    mmr_lambda: float = 0.7

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if any(w <= 0 for w in self.edge_weights.values()) or set(self.edge_weights) != set(EdgeKind):
            raise ValueError("edge_weights needs a positive weight for every edge kind")
        if self.hop_limit < 1:
            raise ValueError("hop_limit must be >= 1")
        if min(self.entity_seeds, self.top_seeds, self.intermediate_seeds) < 0:
            raise ValueError("seed budgets must be >= 0")
        if self.budget_chars is not None and self.budget_chars < 0:
            raise ValueError("budget_chars must be >= 0")
        if not 0.0 <= self.mmr_lambda <= 1.0:
            raise ValueError("mmr_lambda must lie in [0, 1]")

    def seeds_for_level(self, level: int, depth: int) -> int:
        if level == 0:
            return self.entity_seeds
        if level == depth:
            return self.top_seeds
        return self.intermediate_seeds

    def to_dict(self) -> dict:
        out = asdict(self)
        out["edge_weights"] = {k.value: v for k, v in self.edge_weights.items()}
        return out


# -- scoring -------------------------------------------------------------


def node_title_text(node) -> str:
    if isinstance(node, EntityNode):
        return f"{node.name} {node.description}"
    return node.summary


def lexical_overlap(query: str, text: str) -> float:
    """Share of distinct query tokens that also occur in ``text``."""
    q = set(tokenize(query))
    if not q:
        return 0.0
    return len(q & set(tokenize(text))) / len(q)


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


def hybrid_score(query: str, node, config: HybridScoreConfig, embedder: EmbeddingProvider) -> float:
    """``alpha * cos(Enc(q), Enc(x)) + (1 - alpha) * Lex(q, x)`` for one node."""
    return QueryScorer(query, embedder, config).score_node(node)


class QueryScorer:
    """Caches the query embedding and per-node hybrid scores for one query."""

    def __init__(
        self,
        query: str,
        embedder: EmbeddingProvider,
        config: HybridScoreConfig = HybridScoreConfig(),
        graph: KnowledgeGraph | None = None,
        diagnostics: Diagnostics | None = None,
    ):
        if not query.strip():
            raise DataError("query is empty")
        self.query = query
        self.config = config
        self.graph = graph
        self.diagnostics = diagnostics if diagnostics is not None else Diagnostics()
        self._q_tokens = set(tokenize(query))
        if not self._q_tokens:
            self.diagnostics.add("query_no_tokens", query)
        try:
            self.q_vec: Vector | None = embedder.embed([query])[0]
        except EmptyTextError:
            self.q_vec = None
        self._cache: dict[str, float] = {}

    def score_node(self, node) -> float:
        emb = node.embedding if isinstance(node, EntityNode) else node.summary_embedding
        cos = cosine(self.q_vec, emb) if self.q_vec is not None else 0.0
        lex = (
            len(self._q_tokens & set(tokenize(node_title_text(node)))) / len(self._q_tokens)
            if self._q_tokens
            else 0.0
        )
        a = self.config.alpha
        return a * cos + (1.0 - a) * lex

    def __call__(self, node_id: str) -> float:
        s = self._cache.get(node_id)
        if s is None:
            if self.graph is None:
                raise DataError("scorer has no graph to look up node ids")
            s = self._cache[node_id] = self.score_node(self.graph.node(node_id))
        return s


# -- seeding ---------------------------------------------------------------


def mmr_select(
    candidates: Sequence[str],
    scores: Mapping[str, float],
    embeddings: Mapping[str, Sequence[float]],
    k: int,
    lam: float,
) -> list[str]:
    """Greedy maximal marginal relevance; ties go to the higher score, then the smaller id."""
    picked: list[str] = []
    remaining = sorted(candidates)
    if not remaining or k <= 0:
        return picked
    vecs = {c: np.asarray(embeddings[c], dtype=float) for c in remaining}
    max_sim = {c: 0.0 for c in remaining}
    while remaining and len(picked) < k:
        # max() keeps the first of equal keys, i.e. the smallest id
        best = max(remaining, key=lambda c: (lam * scores[c] - (1.0 - lam) * max_sim[c], scores[c]))
        picked.append(best)
        remaining.remove(best)
        for c in remaining:
            max_sim[c] = max(max_sim[c], cosine(vecs[c], vecs[best]))
    return picked


def select_seeds(
    graph: KnowledgeGraph,
    scorer: QueryScorer,
    config: ExpansionConfig = ExpansionConfig(),
    diagnostics: Diagnostics | None = None,
) -> list[tuple[str, float]]:
    """Pick ``K_l`` seeds per level by MMR over hybrid scores; union over levels."""
    seeds: list[tuple[str, float]] = []
    depth = graph.depth
    for level, ids in enumerate(graph.levels):
        k = config.seeds_for_level(level, depth)
        if k <= 0 or not ids:
            continue
        if len(ids) < k and diagnostics is not None:
            diagnostics.add("seed_level_small", f"level {level} has {len(ids)} < {k} nodes")
        scores = {nid: scorer(nid) for nid in ids}
        embs = {nid: graph.embedding(nid) for nid in ids}
        for nid in mmr_select(ids, scores, embs, k, config.mmr_lambda):
            seeds.append((nid, scores[nid]))
    return seeds


# -- gated expansion ---------------------------------------------------------


@dataclass(frozen=True)
class Visit:
    """One admitted node.  ``gain`` is its best simple-path gain and ``hop``
    the fewest valid hops to it; ``predecessor`` and ``entry_kind`` name the
    admitted neighbor and edge that brought it in, so predecessor links form
    a tree rooted at the seeds."""

    gain: float
    hop: int
    predecessor: str | None
    entry_kind: EdgeKind | None
    score: float
    order: int

    def to_dict(self) -> dict:
        return {
            "gain": self.gain,
            "hop": self.hop,
            "predecessor": self.predecessor,
            "entry_kind": self.entry_kind.value if self.entry_kind else None,
            "score": self.score,
            "order": self.order,
        }


@dataclass
class RetrievalResult:
    query: str
    seeds: list[tuple[str, float]]
    visited: dict[str, Visit]
    edges: list[RelationEdge]
    stats: dict[str, object]
    config: dict[str, object] = field(default_factory=dict)

    @property
    def node_ids(self) -> list[str]:
        """Visited nodes in admission order."""
        return sorted(self.visited, key=lambda n: self.visited[n].order)

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "seeds": [{"id": nid, "score": s} for nid, s in self.seeds],
            "visited": {nid: self.visited[nid].to_dict() for nid in self.node_ids},
            "edges": [
                {"src": e.src, "dst": e.dst, "kind": e.kind.value, "description": e.description}
                for e in self.edges
            ],
            "stats": self.stats,
            "config": self.config,
        }


def expansion_gain(score: float, hop: int, weight: float, gamma: float) -> float:
    return score * gamma**hop * weight


def _valid_hops(
    graph: KnowledgeGraph,
    seeds: Sequence[str],
    score_of,
    config: ExpansionConfig,
    allowed: frozenset[EdgeKind],
    exclude: str | None = None,
) -> dict[str, int]:
    """Fewest hops at which each node can be entered with a gain at or above the floor.

    Seeds sit at hop 0 and are never re-entered; ``exclude`` is treated as absent.
    """
    hops = {nid: 0 for nid in seeds}
    layer = sorted(hops)
    for t in range(1, config.hop_limit + 1):
        nxt: list[str] = []
        for u in layer:
            for v, e in graph.neighbors(u, allowed):
                if v in hops or v == exclude:
                    continue
                if expansion_gain(score_of(v), t, config.edge_weights[e.kind], config.gamma) >= config.gain_floor:
                    hops[v] = t
                    nxt.append(v)
        if not nxt:
            break
        layer = sorted(nxt)
    return hops


def gated_expand(
    seeds: Sequence[tuple[str, float]] | Sequence[str],
    graph: KnowledgeGraph,
    scorer: QueryScorer | Mapping[str, float],
    config: ExpansionConfig = ExpansionConfig(),
    allowed_kinds: Iterable[EdgeKind] = ALL_KINDS,
) -> RetrievalResult:
    """Best-first expansion over the unified edge space.

    A node ``v`` entered from ``u`` after ``t`` hops is worth
    ``s(q, v) * gamma**t * w(kind(u, v))``.  Its gain is the best value over
    all simple paths from a seed of at most ``hop_limit`` edges on which every
    entered node meets ``gain_floor``.  Seeds keep their own score at hop 0
    and are never re-entered.

    Gains follow from the fewest valid hops to each neighbor (shorter is always
    better for a fixed edge kind).  When that shortest route could pass back
    through ``v`` itself, the neighbor's hop count is recomputed with ``v``
    removed, so bouncing v -> u -> v over a heavier edge never inflates a gain.

    Nodes are then admitted best gain first, starting from the seeds and
    growing along edges from admitted nodes, until the queue drains or the
    admitted text reaches ``budget_chars``.

    ``scorer`` may be a :class:`QueryScorer` or a plain ``{node_id: score}``
    mapping (missing ids score 0).
    """
    allowed = frozenset(allowed_kinds)
    if callable(scorer):
        score_of = scorer
    else:
        table = dict(scorer)

        def score_of(nid: str) -> float:
            return table.get(nid, 0.0)

    seed_ids = list(dict.fromkeys(s[0] if isinstance(s, tuple) else s for s in seeds))
    if not seed_ids:
        raise DataError("expansion needs at least one seed")
    for nid in seed_ids:
        if not graph.has_node(nid):
            raise NodeNotFoundError(nid)

    gamma, floor, h = config.gamma, config.gain_floor, config.hop_limit
    weights = config.edge_weights
    hops = _valid_hops(graph, seed_ids, score_of, config, allowed)
    seed_set = frozenset(seed_ids)
    without: dict[str, dict[str, int]] = {}
    best: dict[str, float] = {}

    def best_gain(v: str) -> float:
        if v in best:
            return best[v]
        if v in seed_set:
            best[v] = score_of(v)
            return best[v]
        s_v, t_v, top = score_of(v), hops[v], float("-inf")
        offers = sorted(
            ((hops[u], u, e) for u, e in graph.neighbors(v, allowed) if u in hops),
            key=lambda x: (x[0], x[1]),
        )
        for t_u, u, e in offers:
            if t_u + 1 > h or expansion_gain(s_v, t_u + 1, weights[e.kind], gamma) <= top:
                continue
            if t_u > t_v:
                # the shortest route to u may run through v; measure it without v
                if v not in without:
                    without[v] = _valid_hops(graph, seed_ids, score_of, config, allowed, exclude=v)
                t_u = without[v].get(u, h + 1)
                if t_u + 1 > h:
                    continue
            g = expansion_gain(s_v, t_u + 1, weights[e.kind], gamma)
            if g >= floor:
                top = max(top, g)
        best[v] = top
        return top

    visited: dict[str, Visit] = {}
    crossed: dict[tuple[str, str, str], RelationEdge] = {}
    entry: dict[str, tuple[float, str | None, RelationEdge | None]] = {nid: (0.0, None, None) for nid in seed_ids}
    heap = [(-best_gain(nid), -score_of(nid), nid) for nid in seed_ids]
    heapq.heapify(heap)
    pops, gate_crossings, used = 0, 0, 0
    exhausted = False
    while heap:
        neg_gain, neg_s, v = heapq.heappop(heap)
        pops += 1
        _, pred, edge = entry[v]
        if edge is not None:
            crossed.setdefault(edge.key, edge)
            if edge.kind is EdgeKind.CAUSAL_GATE:
                gate_crossings += 1
        visited[v] = Visit(-neg_gain, hops[v], pred, edge.kind if edge else None, -neg_s, len(visited))
        used += len(graph.node(v).text)
        if config.budget_chars is not None and used >= config.budget_chars:
            exhausted = True
            break
        if hops[v] >= h:
            continue
        for u, e in graph.neighbors(v, allowed):
            if u in visited or u not in hops:
                continue
            offer = expansion_gain(score_of(u), hops[v] + 1, weights[e.kind], gamma)
            if offer < floor:
                continue
            if u not in entry:
                heapq.heappush(heap, (-best_gain(u), -score_of(u), u))
                entry[u] = (offer, v, e)
            elif offer > entry[u][0]:
                entry[u] = (offer, v, e)

    return RetrievalResult(
        query=getattr(scorer, "query", ""),
        seeds=[(nid, score_of(nid)) for nid in seed_ids],
        visited=visited,
        edges=list(crossed.values()),
        stats={
            "frontier_pops": pops,
            "pushes": len(entry),
            "gate_crossings": gate_crossings,
            "budget_used": used,
            "budget_exhausted": exhausted,
            "gates_enabled": EdgeKind.CAUSAL_GATE in allowed,
        },
        config=config.to_dict(),
    )


def retrieve(
    query: str,
    graph: KnowledgeGraph,
    embedder: EmbeddingProvider,
    expansion: ExpansionConfig = ExpansionConfig(),
    scoring: HybridScoreConfig = HybridScoreConfig(),
    use_gates: bool = True,
    diagnostics: Diagnostics | None = None,
) -> RetrievalResult:
    """Seed selection followed by gated expansion for one query."""
    scorer = QueryScorer(query, embedder, scoring, graph, diagnostics)
    seeds = select_seeds(graph, scorer, expansion, diagnostics)
    kinds = ALL_KINDS if use_gates else NO_GATES
    result = gated_expand(seeds, graph, scorer, expansion, kinds)
    result.config["alpha"] = scoring.alpha
    return result
