"""Recursive module construction on top of the entity graph."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Sequence

from . import prompts
from .diagnostics import Diagnostics
from .errors import DataError, ProviderError
from .graph import EdgeKind, KnowledgeGraph, ModuleLink, ModuleNode, RelationEdge
from .leiden import leiden_partition
from .providers import ChatProvider, ChatRequest, EmbeddingProvider, bounded_map

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HierarchyConfig:
    resolution: float = 1.0
    seed: int = 0
    context_budget: int = 4000
    summary_max_chars: int = 600
    prompt_member_chars: int = 12000
    max_levels: int = 8
    max_inflight: int = 8


def summarize_module(
    member_texts: Sequence[str],
    chat: ChatProvider,
    max_chars: int = 600,
    prompt_member_chars: int = 12000,
) -> tuple[str, bool]:
    """Summarize a module from its members' texts.

    Returns ``(summary, used_fallback)``.  A single-member module reuses the
    member text without an LLM call.  On provider failure or an empty reply
    the summary falls back to the concatenated member texts.  The result is
    always cut to ``max_chars``.
    """
    if not member_texts:
        raise DataError("cannot summarize a module with no members")
    if len(member_texts) == 1:
        return member_texts[0][:max_chars], False
    listing, used = [], 0
    for text in member_texts:
        line = "- " + " ".join(text.split())
        if used + len(line) > prompt_member_chars and listing:
            break
        listing.append(line)
        used += len(line) + 1
    request = ChatRequest(
        prompts.SUMMARY_SYSTEM,
        prompts.SUMMARY_USER.format(max_chars=max_chars, members="\n".join(listing)),
        max_tokens=max(64, max_chars // 2),
    )
    try:
        summary = " ".join(chat.chat(request).text.split())
    except ProviderError as exc:
        log.warning("summarizer failed, using fallback: %s", exc)
        summary = ""
    if not summary:
        return " ".join(" ".join(t.split()) for t in member_texts)[:max_chars], True
    return summary[:max_chars], False


def _aggregate_links(
    edges: Sequence[tuple[str, str, float]], owner: dict[str, str]
) -> list[tuple[str, str, float]]:
    acc: dict[tuple[str, str], float] = defaultdict(float)
    for u, v, w in edges:
        a, b = owner[u], owner[v]
        if a != b:
            acc[tuple(sorted((a, b)))] += w
    return [(a, b, w) for (a, b), w in sorted(acc.items())]


def build_hierarchy(
    base: KnowledgeGraph,
    chat: ChatProvider,
    embedder: EmbeddingProvider,
    config: HierarchyConfig = HierarchyConfig(),
    diagnostics: Diagnostics | None = None,
) -> KnowledgeGraph:
    """Partition level by level until the level's summaries fit the context budget.

    Level 1 partitions the entity graph (one unit of weight per structural
    edge); each higher level partitions the module graph of the level below,
    whose link weights count the underlying entity edges.  Building stops
    when a level has a single module, when the concatenated summaries of a
    level fit ``config.context_budget``, when partitioning no longer merges
    anything, or at ``config.max_levels``.
    """
    if not base.entities:
        raise DataError("cannot build a hierarchy over an empty graph")
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    level_nodes = list(base.entities)
    texts = {eid: ent.text for eid, ent in base.entities.items()}
    level_edges = [(e.src, e.dst, 1.0) for e in base.edges if e.kind is EdgeKind.STRUCTURAL]

    modules: dict[str, ModuleNode] = {}
    hier_edges: list[RelationEdge] = []
    links: list[ModuleLink] = []
    for level in range(1, config.max_levels + 1):
        part = leiden_partition(level_nodes, level_edges, config.resolution, config.seed + level, level)
        groups = [sorted(c) for c in part.communities]
        if level > 1 and len(groups) == len(level_nodes):
            log.info("level %d would not merge any module; stopping", level)
            break
        ids = [f"m{level}-{i:04d}" for i in range(len(groups))]

        def _summ(members: list[str]) -> tuple[str, bool]:
            return summarize_module(
                [texts[m] for m in members], chat, config.summary_max_chars, config.prompt_member_chars
            )

        results = bounded_map(_summ, groups, config.max_inflight)
        vectors = embedder.embed([s for s, _ in results])
        owner = {}
        for mid, members, (summary, fallback), vec in zip(ids, groups, results, vectors):
            if fallback:
                diagnostics.add("summary_fallback", mid)
            modules[mid] = ModuleNode(mid, level, frozenset(members), summary, vec, fallback)
            hier_edges.extend(RelationEdge(mid, m, EdgeKind.HIERARCHICAL, "contains") for m in members)
            texts[mid] = summary
            for m in members:
                owner[m] = mid
        level_edges = _aggregate_links(level_edges, owner)
        links.extend(ModuleLink(level, a, b, w) for a, b, w in level_edges)
        level_nodes = ids
        log.info("level %d: %d modules (Q=%.4f)", level, len(ids), part.modularity)
        if len(ids) == 1:
            break
        if len("\n".join(modules[m].summary for m in ids)) <= config.context_budget:
            break

    hier_edges.sort(key=lambda e: (e.src, e.dst))
    return replace(
        base,
        modules=dict(sorted(modules.items())),
        edges=tuple(base.edges) + tuple(hier_edges),
        module_links=tuple(links),
    )


def hierarchy_report(graph: KnowledgeGraph) -> dict[str, object]:
    """Nodes / edges / modules-per-level summary, the shape of a graph statistics table."""
    return graph.stats()
