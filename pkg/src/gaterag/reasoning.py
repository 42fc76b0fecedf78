"""Causal path selection over the retrieved subgraph, then grounded answer generation."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from . import prompts
from .diagnostics import Diagnostics
from .errors import DataError, ProviderError
from .graph import EdgeKind, EntityNode, KnowledgeGraph, RelationEdge
from .providers import ChatProvider, ChatRequest
from .retrieval import RetrievalResult

log = logging.getLogger(__name__)


class SelectionMode(str, Enum):
    SPURIOUS_AWARE = "spurious"
    STANDARD = "standard"


@dataclass(frozen=True)
class Row:
    short_id: str
    kind: str  # "node" or "edge"
    text: str
    ref: str | tuple[str, str, str]  # node id or edge key
    label: str = ""
    endpoints: tuple[str, str] | None = None

    def render(self) -> str:
        return f"{self.short_id}: {self.text}"


@dataclass(frozen=True)
class Subgraph:
    nodes: tuple[str, ...]
    edges: tuple[RelationEdge, ...]

    def edge_keys(self) -> set[tuple[str, str, str]]:
        return {e.key for e in self.edges}

    def issubset(self, other: Subgraph) -> bool:
        return set(self.nodes) <= set(other.nodes) and self.edge_keys() <= other.edge_keys()


@dataclass(frozen=True)
class LinearizedGraph:
    rows: tuple[Row, ...]
    edges: dict[tuple[str, str, str], RelationEdge] = field(default_factory=dict, compare=False)

    @property
    def by_id(self) -> dict[str, Row]:
        return {r.short_id: r for r in self.rows}

    def short_id_of(self, ref) -> str:
        for r in self.rows:
            if r.ref == ref:
                return r.short_id
        raise KeyError(ref)

    def table(self, ids: Sequence[str] | None = None) -> str:
        keep = None if ids is None else set(ids)
        return "\n".join(r.render() for r in self.rows if keep is None or r.short_id in keep)

    def reconstruct(self, ids: Sequence[str]) -> Subgraph:
        """Subgraph made of the given short ids (unknown ids are ignored)."""
        by_id = self.by_id
        nodes = tuple(by_id[i].ref for i in sorted(set(ids) & set(by_id), key=_id_order) if by_id[i].kind == "node")
        edges = tuple(
            self.edges[by_id[i].ref] for i in sorted(set(ids) & set(by_id), key=_id_order) if by_id[i].kind == "edge"
        )
        return Subgraph(nodes, edges)  # type: ignore[arg-type]

    @property
    def all_ids(self) -> list[str]:
        return [r.short_id for r in self.rows]


def _id_order(short_id: str) -> tuple[int, int]:
    return (0 if short_id[0] == "N" else 1, int(short_id[1:]))


def _flat(text: str) -> str:
    return "; ".join(part.strip() for part in text.splitlines() if part.strip())


def node_label(graph: KnowledgeGraph, node_id: str) -> str:
    node = graph.node(node_id)
    return node.name if isinstance(node, EntityNode) else f"Module {node.id}"


def node_body(graph: KnowledgeGraph, node_id: str) -> str:
    node = graph.node(node_id)
    body = node.description if isinstance(node, EntityNode) else node.summary
    return f"{node_label(graph, node_id)} - {_flat(body)}" if body else node_label(graph, node_id)


def edge_label(edge: RelationEdge) -> str:
    if edge.kind is EdgeKind.HIERARCHICAL:
        return "contains"
    if edge.kind is EdgeKind.CAUSAL_GATE:
        return "causes"  # gates are stored cause -> effect whatever the verdict wording
    return _flat(edge.description) or "related to"


def linearize(result: RetrievalResult, graph: KnowledgeGraph) -> LinearizedGraph:
    """Map retrieved nodes to N-ids (by descending gain, then id) and crossed edges to R-ids."""
    if not result.visited:
        raise DataError("cannot linearize an empty subgraph")
    order = sorted(result.visited, key=lambda n: (-result.visited[n].gain, n))
    short = {nid: f"N{i}" for i, nid in enumerate(order, 1)}
    rows = [Row(short[nid], "node", node_body(graph, nid), nid, node_label(graph, nid)) for nid in order]
    edges = sorted(
        (e for e in result.edges if e.src in short and e.dst in short),
        key=lambda e: (_id_order(short[e.src]), _id_order(short[e.dst]), e.kind.value),
    )
    for i, e in enumerate(edges, 1):
        label = edge_label(e)
        rows.append(Row(f"R{i}", "edge", f"{short[e.src]} →({label})→ {short[e.dst]}", e.key, label, (short[e.src], short[e.dst])))
    return LinearizedGraph(tuple(rows), {e.key: e for e in edges})


@dataclass
class CausalSelection:
    mode: SelectionMode
    precise: list[str]
    ct_precise: list[str]
    selected_ids: list[str]
    subgraph: Subgraph
    dropped_ids: list[str] = field(default_factory=list)
    fallback: bool = False
    raw_responses: list[str] = field(default_factory=list)
    request_keys: list[str] = field(default_factory=list)
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def audit(self) -> dict:
        return {
            "mode": self.mode.value,
            "precise": self.precise,
            "ct_precise": self.ct_precise,
            "selected_ids": self.selected_ids,
            "dropped_ids": self.dropped_ids,
            "fallback": self.fallback,
            "request_keys": self.request_keys,
            "diagnostics": self.diagnostics.to_dict(),
        }


_FENCE = re.compile(r"^```(?:json)?\s*|\s*```$", re.MULTILINE)
_SHORT_ID = re.compile(r"\b[NR]\d+\b")


def _load_json(text: str):
    text = _FENCE.sub("", text.strip())
    try:
        return json.loads(text)
    except ValueError:
        pass
    for open_, close in (("{", "}"), ("[", "]")):
        start, end = text.find(open_), text.rfind(close)
        if start != -1 and end > start:
            try:
                return json.loads(text[start : end + 1])
            except ValueError:
                continue
    return None


def parse_selection(text: str, mode: SelectionMode) -> tuple[list[str], list[str]] | None:
    """Extract ``(precise, ct_precise)`` id lists; ``None`` when nothing is parseable."""
    obj = _load_json(text)
    if isinstance(obj, dict) and isinstance(obj.get("precise"), list):
        ct = obj.get("ct_precise") or []
        precise = [str(x).strip().upper() for x in obj["precise"]]
        spurious = [str(x).strip().upper() for x in ct] if isinstance(ct, list) else []
        if mode is SelectionMode.STANDARD:
            spurious = []
        return precise, spurious
    if isinstance(obj, list):
        return [str(x).strip().upper() for x in obj], []
    if mode is SelectionMode.STANDARD:
        ids = _SHORT_ID.findall(text)
        if ids:
            return ids, []
    return None


def _dedupe(ids: Sequence[str]) -> list[str]:
    return list(dict.fromkeys(ids))


def select_causal(
    lin: LinearizedGraph,
    query: str,
    chat: ChatProvider,
    mode: SelectionMode = SelectionMode.SPURIOUS_AWARE,
    max_tokens: int = 1024,
) -> CausalSelection:
    """Ask the LLM which rows form causal paths to the answer, and build S* from them.

    Unknown ids are dropped.  An id listed as both causal and spurious is
    treated as spurious.  Selecting an edge pulls in its endpoints, unless an
    endpoint was marked spurious, in which case the edge is dropped.  If no
    parseable reply arrives after one retry, S* falls back to the whole
    subgraph with ``fallback`` set.
    """
    if not lin.rows:
        raise DataError("linearized subgraph is empty")
    template = prompts.SELECT_SPURIOUS_USER if mode is SelectionMode.SPURIOUS_AWARE else prompts.SELECT_STANDARD_USER
    request = ChatRequest(prompts.SELECT_SYSTEM, template.format(question=query, table=lin.table()), max_tokens=max_tokens)
    diag = Diagnostics()
    raws: list[str] = []
    parsed = None
    for _ in range(2):
        try:
            raw = chat.chat(request).text
        except ProviderError as exc:
            diag.add("selection_provider_error", str(exc))
            continue
        raws.append(raw)
        parsed = parse_selection(raw, mode)
        if parsed is not None:
            break
        diag.add("selection_unparseable", raw[:80])

    if parsed is None:
        return CausalSelection(
            mode, [], [], lin.all_ids, lin.reconstruct(lin.all_ids), [], True, raws, [request.key], diag
        )

    by_id = lin.by_id
    precise_raw, ct_raw = (_dedupe(x) for x in parsed)
    dropped = [i for i in _dedupe(precise_raw + ct_raw) if i not in by_id]
    for i in dropped:
        diag.add("selection_unknown_id", i)
    spurious = [i for i in ct_raw if i in by_id]
    spurious_set = set(spurious)
    precise = []
    for i in precise_raw:
        if i not in by_id:
            continue
        if i in spurious_set:
            diag.add("selection_conflict", i)
            continue
        precise.append(i)

    node_ids = {by_id[i].ref: i for i in by_id if by_id[i].kind == "node"}
    selected = [i for i in precise if by_id[i].kind == "node"]
    for i in precise:
        if by_id[i].kind != "edge":
            continue
        edge = lin.edges[by_id[i].ref]  # type: ignore[index]
        ends = [node_ids[edge.src], node_ids[edge.dst]]
        if any(end in spurious_set for end in ends):
            diag.add("selection_edge_spurious_endpoint", i)
            continue
        selected.append(i)
        selected.extend(ends)
    selected = sorted(set(selected), key=_id_order)
    return CausalSelection(
        mode, precise, spurious, selected, lin.reconstruct(selected), dropped, False, raws, [request.key], diag
    )


@dataclass
class Answer:
    text: str
    evidence_ids: list[str]
    abstained: bool
    prompt: str
    request_key: str


def evidence_block(lin: LinearizedGraph, ids: Sequence[str]) -> str:
    by_id = lin.by_id
    lines = []
    for i in sorted(ids, key=_id_order):
        row = by_id[i]
        if row.kind == "node":
            lines.append(f"- {row.text}")
        else:
            src, dst = row.endpoints  # type: ignore[misc]
            lines.append(f"- {by_id[src].label} → {row.label} → {by_id[dst].label}")
    return "\n".join(lines)


def generate_answer(
    query: str,
    lin: LinearizedGraph,
    selected_ids: Sequence[str],
    chat: ChatProvider,
    max_tokens: int = 512,
) -> Answer:
    """Generate the answer from the selected rows only; an empty selection abstains."""
    ids = [i for i in selected_ids if i in lin.by_id]
    evidence = evidence_block(lin, ids) if ids else prompts.NO_EVIDENCE
    request = ChatRequest(prompts.ANSWER_SYSTEM, prompts.ANSWER_USER.format(evidence=evidence, question=query), max_tokens=max_tokens)
    text = chat.chat(request).text.strip()
    return Answer(text, sorted(ids, key=_id_order), not ids, request.user, request.key)
