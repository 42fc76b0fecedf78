"""Two-stage entity deduplication: fuzzy name matching, then embedding similarity."""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np
from rapidfuzz import fuzz
from rapidfuzz.process import cdist

from .errors import DimensionMismatchError
from .graph import EntityNode
from .text import normalize_name

DEFAULT_FUZZY_THRESHOLD = 0.85
DEFAULT_EMBED_THRESHOLD = 0.92


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> None:
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)

    def groups(self) -> list[list[int]]:
        out: dict[int, list[int]] = {}
        for i in range(len(self.parent)):
            out.setdefault(self.find(i), []).append(i)
        return list(out.values())


def name_similarity(a: str, b: str) -> float:
    """Normalized Levenshtein (indel) ratio of two names, in [0, 1]."""
    return fuzz.ratio(normalize_name(a), normalize_name(b)) / 100.0


def _check_thresholds(*values: float) -> None:
    for v in values:
        if not 0.0 < v <= 1.0:
            raise ValueError(f"threshold must be in (0, 1], got {v}")


def _representative(nodes: Sequence[EntityNode]) -> EntityNode:
    # longest name wins ("Joe Biden" over "J. Biden"), then lexicographic
    return min(nodes, key=lambda n: (-len(normalize_name(n.name)), normalize_name(n.name), n.id))


def _pool(group: Sequence[EntityNode]) -> EntityNode:
    rep = _representative(group)
    descriptions: list[str] = []
    for node in sorted(group, key=lambda n: n.id):
        for part in node.description.split("\n"):
            if part and part not in descriptions:
                descriptions.append(part)
    aliases = set().union(*(n.aliases for n in group)) | {n.name for n in group}
    aliases.discard(rep.name)
    return replace(
        rep,
        description="\n".join(descriptions),
        aliases=frozenset(aliases),
        source_chunks=frozenset().union(*(n.source_chunks for n in group)),
    )


def canonicalize_entities(
    raw_nodes: Sequence[EntityNode],
    fuzzy_threshold: float = DEFAULT_FUZZY_THRESHOLD,
    embed_threshold: float = DEFAULT_EMBED_THRESHOLD,
) -> tuple[list[EntityNode], dict[str, str]]:
    """Merge aliased entities.

    Stage 1 links every pair whose normalized name similarity reaches
    ``fuzzy_threshold``; stage 2 links every pair whose embedding cosine
    reaches ``embed_threshold``.  Merged groups are the connected components
    of the union of both link sets.  Each group keeps the representative's id,
    name and embedding and pools descriptions, aliases and source chunks.

    Returns the merged nodes (ordered by id) and a map from every input id to
    the id of the node that absorbed it.
    """
    _check_thresholds(fuzzy_threshold, embed_threshold)
    n = len(raw_nodes)
    if n == 0:
        return [], {}
    dims = {len(node.embedding) for node in raw_nodes}
    if len(dims) != 1 or 0 in dims:
        raise DimensionMismatchError(f"embedding dimensions differ or are empty: {sorted(dims)}")

    uf = UnionFind(n)
    names = [normalize_name(node.name) for node in raw_nodes]
    # stage 1: surface-level fuzzy match
    sims = cdist(names, names, scorer=fuzz.ratio, score_cutoff=fuzzy_threshold * 100.0 - 1e-9)
    for i, j in zip(*np.nonzero(np.triu(sims, k=1))):
        uf.union(int(i), int(j))
    # stage 2: semantic match
    emb = np.array([node.embedding for node in raw_nodes], dtype=float)
    cos = emb @ emb.T
    for i, j in zip(*np.nonzero(np.triu(cos >= embed_threshold - 1e-12, k=1))):
        uf.union(int(i), int(j))

    merged: list[EntityNode] = []
    merge_map: dict[str, str] = {}
    for group in uf.groups():
        members = [raw_nodes[i] for i in group]
        node = _pool(members) if len(members) > 1 else members[0]
        merged.append(node)
        for m in members:
            merge_map[m.id] = node.id
    merged.sort(key=lambda node: node.id)
    return merged, merge_map
