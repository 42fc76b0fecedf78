"""JSON persistence for :class:`KnowledgeGraph` and a node/edge-list export.

File layout (one JSON object, keys sorted)::

    schema_version  int, must equal SCHEMA_VERSION
    chunks          [{id, doc_id, text, char_span: [start, end]}]
    entities        [{id, name, description, aliases, source_chunks, embedding}]
    modules         [{id, level, member_ids, summary, summary_embedding, summary_fallback}]
    edges           [{src, dst, kind, description, weight_hint}]   structural + hierarchical
    gates           [{src, dst, score, verdict, request_key, raw_response}]
    module_links    [{level, a, b, weight}]
    meta            free-form object (dimension, config, gate stats)

Chunk, entity and module lists are sorted by id; edges and gates keep the
graph's own order.  Floats are written with
``repr`` precision, so embeddings round-trip bit-exact.
"""

from __future__ import annotations

import json
import math
import random
from pathlib import Path

from .errors import GraphParseError, GraphVersionError
from .graph import CausalGate, Chunk, EdgeKind, EntityNode, KnowledgeGraph, ModuleLink, ModuleNode, RelationEdge

SCHEMA_VERSION = 1
EXPORT_FORMATS = ("edgelist",)


def graph_to_dict(graph: KnowledgeGraph) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "chunks": [
            {"id": c.id, "doc_id": c.doc_id, "text": c.text, "char_span": list(c.char_span)}
            for c in sorted(graph.chunks.values(), key=lambda c: c.id)
        ],
        "entities": [
            {
                "id": e.id,
                "name": e.name,
                "description": e.description,
                "aliases": sorted(e.aliases),
                "source_chunks": sorted(e.source_chunks),
                "embedding": list(e.embedding),
            }
            for e in sorted(graph.entities.values(), key=lambda e: e.id)
        ],
        "modules": [
            {
                "id": m.id,
                "level": m.level,
                "member_ids": sorted(m.member_ids),
                "summary": m.summary,
                "summary_embedding": list(m.summary_embedding),
                "summary_fallback": m.summary_fallback,
            }
            for m in sorted(graph.modules.values(), key=lambda m: m.id)
        ],
        "edges": [
            {"src": e.src, "dst": e.dst, "kind": e.kind.value, "description": e.description, "weight_hint": e.weight_hint}
            for e in graph.edges
        ],
        "gates": [
            {
                "src": g.src,
                "dst": g.dst,
                "score": g.score,
                "verdict": g.verdict,
                "request_key": g.request_key,
                "raw_response": g.raw_response,
            }
            for g in graph.gates
        ],
        "module_links": [{"level": k.level, "a": k.a, "b": k.b, "weight": k.weight} for k in graph.module_links],
        "meta": dict(graph.meta),
    }


def graph_from_dict(data: dict) -> KnowledgeGraph:
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise GraphVersionError(f"graph schema version {version!r}, expected {SCHEMA_VERSION}")
    try:
        chunks = {
            c["id"]: Chunk(c["id"], c["doc_id"], c["text"], (int(c["char_span"][0]), int(c["char_span"][1])))
            for c in data["chunks"]
        }
        entities = {
            e["id"]: EntityNode(
                e["id"],
                e["name"],
                e["description"],
                frozenset(e["aliases"]),
                frozenset(e["source_chunks"]),
                tuple(float(x) for x in e["embedding"]),
            )
            for e in data["entities"]
        }
        modules = {
            m["id"]: ModuleNode(
                m["id"],
                int(m["level"]),
                frozenset(m["member_ids"]),
                m["summary"],
                tuple(float(x) for x in m["summary_embedding"]),
                bool(m["summary_fallback"]),
            )
            for m in data["modules"]
        }
        edges = tuple(
            RelationEdge(e["src"], e["dst"], EdgeKind(e["kind"]), e["description"], float(e["weight_hint"]))
            for e in data["edges"]
        )
        gates = tuple(
            CausalGate(g["src"], g["dst"], float(g["score"]), g["verdict"], g["request_key"], g["raw_response"])
            for g in data["gates"]
        )
        links = tuple(ModuleLink(int(k["level"]), k["a"], k["b"], float(k["weight"])) for k in data["module_links"])
        meta = dict(data["meta"])
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise GraphParseError(f"malformed graph document: {exc!r}", 0) from exc
    return KnowledgeGraph(chunks, entities, modules, edges, gates, links, meta)


def dumps_graph(graph: KnowledgeGraph) -> str:
    return json.dumps(graph_to_dict(graph), sort_keys=True, ensure_ascii=False, indent=1) + "\n"


def save_graph(graph: KnowledgeGraph, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(dumps_graph(graph), encoding="utf-8")
    tmp.replace(path)
    return path


def loads_graph(text: str) -> KnowledgeGraph:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise GraphParseError(f"corrupt graph file at byte {offset}: {exc.msg}", offset) from exc
    if not isinstance(data, dict):
        raise GraphParseError("graph document is not a JSON object", 0)
    return graph_from_dict(data)


def load_graph(path: str | Path) -> KnowledgeGraph:
    return loads_graph(Path(path).read_text(encoding="utf-8"))


def sample_gates(gates, ratio: float, seed: int = 0) -> list[CausalGate]:
    """A seeded subset of ``ceil(ratio * len(gates))`` gates, kept in the original order."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("gate sample ratio must be in [0, 1]")
    gates = list(gates)
    # rounding first keeps 0.2 * 15 from becoming 3.0000000000000004 -> 4
    k = math.ceil(round(ratio * len(gates), 9))
    picked = set(random.Random(seed).sample(range(len(gates)), k))
    return [g for i, g in enumerate(gates) if i in picked]


def export_edgelist(graph: KnowledgeGraph, gate_sample: float | None = None, seed: int = 0) -> dict:
    """Generic interchange: nodes with their level, edges with their kind."""
    gates = graph.gates if gate_sample is None else sample_gates(graph.gates, gate_sample, seed)
    nodes = [{"id": e.id, "label": e.name, "level": 0} for e in sorted(graph.entities.values(), key=lambda e: e.id)]
    nodes += [{"id": m.id, "label": m.id, "level": m.level} for m in sorted(graph.modules.values(), key=lambda m: m.id)]
    edges = [{"source": e.src, "target": e.dst, "kind": e.kind.value, "label": e.description} for e in graph.edges]
    edges += [{"source": g.src, "target": g.dst, "kind": EdgeKind.CAUSAL_GATE.value, "label": g.verdict} for g in gates]
    return {"nodes": nodes, "edges": edges}

