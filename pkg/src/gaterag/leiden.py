"""Leiden community detection (modularity with resolution) for small-to-medium graphs.

Follows Traag, Waltman & van Eck (2019): fast local moving, refinement of each
community into well-connected sub-communities, and aggregation on the refined
partition with the unrefined partition as the starting point.  Randomness
(node visiting order, refinement merges) comes from a seeded ``random.Random``.
"""

from __future__ import annotations

import math
import random
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

_EPS = 1e-12


@dataclass(frozen=True)
class Partition:
    level: int
    assignment: dict[Hashable, int]
    modularity: float

    @property
    def communities(self) -> list[list[Hashable]]:
        out: dict[int, list[Hashable]] = defaultdict(list)
        for node, c in self.assignment.items():
            out[c].append(node)
        return [out[c] for c in sorted(out)]


class _Graph:
    __slots__ = ("n", "adj", "self_w", "k", "two_m")

    def __init__(self, n: int, adj: list[dict[int, float]], self_w: list[float]):
        self.n = n
        self.adj = adj
        self.self_w = self_w
        self.k = [2.0 * self_w[i] + sum(adj[i].values()) for i in range(n)]
        self.two_m = sum(self.k)


def _build(n: int, edges: Iterable[tuple[int, int, float]]) -> _Graph:
    adj: list[dict[int, float]] = [dict() for _ in range(n)]
    self_w = [0.0] * n
    for u, v, w in edges:
        if w < 0:
            raise ValueError("edge weights must be non-negative")
        if u == v:
            self_w[u] += w
        else:
            adj[u][v] = adj[u].get(v, 0.0) + w
            adj[v][u] = adj[v].get(u, 0.0) + w
    return _Graph(n, adj, self_w)


def _move_nodes(g: _Graph, comm: list[int], rng: random.Random, res: float) -> list[int]:
    comm = list(comm)
    tot: dict[int, float] = defaultdict(float)
    size: dict[int, int] = defaultdict(int)
    for i, c in enumerate(comm):
        tot[c] += g.k[i]
        size[c] += 1
    next_id = max(comm, default=-1) + 1
    order = list(range(g.n))
    rng.shuffle(order)
    queue = deque(order)
    queued = set(order)
    while queue:
        i = queue.popleft()
        queued.discard(i)
        ci = comm[i]
        links: dict[int, float] = defaultdict(float)
        for j, w in g.adj[i].items():
            links[comm[j]] += w
        tot[ci] -= g.k[i]
        size[ci] -= 1
        scale = res * g.k[i] / g.two_m
        best_c, best_gain = ci, links.get(ci, 0.0) - scale * tot[ci]
        for c in sorted(links):
            gain = links[c] - scale * tot[c]
            if gain > best_gain + _EPS:
                best_c, best_gain = c, gain
        if best_gain < -_EPS and size[ci] > 0:
            # an empty community beats every neighbor: isolate the node
            best_c, best_gain = next_id, 0.0
            next_id += 1
        comm[i] = best_c
        tot[best_c] += g.k[i]
        size[best_c] += 1
        if best_c != ci:
            for j in g.adj[i]:
                if comm[j] != best_c and j not in queued:
                    queue.append(j)
                    queued.add(j)
    return comm


def _refine(g: _Graph, comm: list[int], rng: random.Random, res: float, theta: float) -> list[int]:
    ref = list(range(g.n))
    members: dict[int, list[int]] = defaultdict(list)
    for i, c in enumerate(comm):
        members[c].append(i)
    m = g.two_m / 2.0
    for c in sorted(members):
        nodes = members[c]
        in_s = set(nodes)
        k_s = sum(g.k[i] for i in nodes)
        tot = {i: g.k[i] for i in nodes}
        ext = {i: sum(w for j, w in g.adj[i].items() if j in in_s) for i in nodes}
        singleton = {i: True for i in nodes}
        order = list(nodes)
        rng.shuffle(order)
        for v in order:
            if not singleton[v]:
                continue
            # only well-connected singletons may move
            if ext[v] < res * g.k[v] * (k_s - g.k[v]) / g.two_m - _EPS:
                continue
            links: dict[int, float] = defaultdict(float)
            for j, w in g.adj[v].items():
                if j in in_s and ref[j] != ref[v]:
                    links[ref[j]] += w
            cands: list[tuple[int, float]] = [(ref[v], 0.0)]
            for rc in sorted(links):
                if ext[rc] < res * tot[rc] * (k_s - tot[rc]) / g.two_m - _EPS:
                    continue
                gain = (links[rc] - res * g.k[v] * tot[rc] / g.two_m) / m
                if gain >= 0.0:
                    cands.append((rc, gain))
            if len(cands) == 1:
                continue
            top = max(gain for _, gain in cands)
            weights = [math.exp((gain - top) / theta) for _, gain in cands]
            target = rng.choices([rc for rc, _ in cands], weights=weights)[0]
            if target == ref[v]:
                continue
            old = ref[v]
            ext[target] = ext[target] + ext[old] - 2.0 * links[target]
            tot[target] += tot[old]
            del tot[old], ext[old]
            ref[v] = target
            singleton[v] = False
            singleton[target] = False
    return ref


def _aggregate(g: _Graph, ref: list[int]) -> tuple[_Graph, list[int]]:
    ids = {c: idx for idx, c in enumerate(sorted(set(ref)))}
    mapping = [ids[c] for c in ref]
    n = len(ids)
    adj: list[dict[int, float]] = [dict() for _ in range(n)]
    self_w = [0.0] * n
    for i in range(g.n):
        a = mapping[i]
        self_w[a] += g.self_w[i]
        for j, w in g.adj[i].items():
            if j < i:
                continue
            b = mapping[j]
            if a == b:
                self_w[a] += w
            else:
                adj[a][b] = adj[a].get(b, 0.0) + w
                adj[b][a] = adj[b].get(a, 0.0) + w
    return _Graph(n, adj, self_w), mapping


def _split_disconnected(g: _Graph, comm: list[int]) -> list[int]:
    out = [-1] * g.n
    next_id = 0
    for start in range(g.n):
        if out[start] != -1:
            continue
        out[start] = next_id
        stack = [start]
        while stack:
            u = stack.pop()
            for v in g.adj[u]:
                if out[v] == -1 and comm[v] == comm[start]:
                    out[v] = next_id
                    stack.append(v)
        next_id += 1
    return out


def _quality(g: _Graph, comm: list[int], res: float) -> float:
    if g.two_m == 0:
        return 0.0
    internal: dict[int, float] = defaultdict(float)
    tot: dict[int, float] = defaultdict(float)
    for i in range(g.n):
        tot[comm[i]] += g.k[i]
        internal[comm[i]] += g.self_w[i]
        for j, w in g.adj[i].items():
            if j > i and comm[j] == comm[i]:
                internal[comm[i]] += w
    m = g.two_m / 2.0
    return sum(internal[c] / m - res * (tot[c] / g.two_m) ** 2 for c in tot)


def _leiden_once(g0: _Graph, start: list[int], rng: random.Random, res: float, theta: float) -> list[int]:
    g = g0
    membership = list(range(g0.n))
    part = list(start)
    while True:
        part = _move_nodes(g, part, rng, res)
        if len(set(part)) == g.n:
            break
        ref = _refine(g, part, rng, res, theta)
        if len(set(ref)) == g.n:
            break
        agg, mapping = _aggregate(g, ref)
        agg_part = [0] * agg.n
        for i, a in enumerate(mapping):
            agg_part[a] = part[i]
        membership = [mapping[x] for x in membership]
        g, part = agg, agg_part
    return [part[membership[i]] for i in range(g0.n)]


def _canonical(comm: Sequence[int]) -> list[int]:
    ids: dict[int, int] = {}
    return [ids.setdefault(c, len(ids)) for c in comm]


def leiden_partition(
    nodes: Sequence[Hashable],
    edges: Iterable[tuple[Hashable, Hashable, float]],
    resolution: float = 1.0,
    seed: int = 0,
    level: int = 0,
    theta: float = 0.01,
    max_iterations: int = 10,
) -> Partition:
    """Partition an undirected weighted graph into connected communities.

    ``edges`` are ``(u, v, weight)`` triples; repeated pairs accumulate.
    Iterates the full Leiden procedure until the partition stops changing
    (at most ``max_iterations`` rounds).  Community indices are numbered in
    order of first appearance in ``nodes``.  An edgeless graph yields
    singletons with modularity 0.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    index = {node: i for i, node in enumerate(nodes)}
    if len(index) != len(nodes):
        raise ValueError("duplicate node ids")
    g = _build(len(nodes), ((index[u], index[v], float(w)) for u, v, w in edges))
    if g.two_m == 0:
        comm = list(range(g.n))
    else:
        rng = random.Random(seed)
        comm = list(range(g.n))
        best_q = _quality(g, comm, resolution)
        for _ in range(max_iterations):
            new = _canonical(_split_disconnected(g, _leiden_once(g, comm, rng, resolution, theta)))
            q = _quality(g, new, resolution)
            if q <= best_q + _EPS:
                break
            comm, best_q = new, q
    comm = _canonical(_split_disconnected(g, comm))
    return Partition(level, {node: comm[i] for node, i in index.items()}, _quality(g, comm, resolution))


def modularity(
    nodes: Sequence[Hashable],
    edges: Iterable[tuple[Hashable, Hashable, float]],
    assignment: dict[Hashable, int],
    resolution: float = 1.0,
) -> float:
    index = {node: i for i, node in enumerate(nodes)}
    g = _build(len(nodes), ((index[u], index[v], float(w)) for u, v, w in edges))
    return _quality(g, [assignment[node] for node in nodes], resolution)
