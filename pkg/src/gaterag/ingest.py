"""Corpus loading, chunking, LLM extraction and assembly of the entity graph."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from . import prompts
from .canonical import DEFAULT_EMBED_THRESHOLD, DEFAULT_FUZZY_THRESHOLD, canonicalize_entities
from .diagnostics import Diagnostics
from .errors import DataError, ExtractionParseError
from .graph import Chunk, EdgeKind, EntityNode, KnowledgeGraph, RelationEdge
from .providers import ChatProvider, ChatRequest, EmbeddingProvider, bounded_map
from .text import normalize_name, slug

log = logging.getLogger(__name__)

DEFAULT_CHUNK_CHARS = 1200
DEFAULT_OVERLAP_CHARS = 100


@dataclass(frozen=True)
class ExtractedEntity:
    name: str
    type: str
    description: str


@dataclass(frozen=True)
class ExtractedRelation:
    src: str
    dst: str
    description: str
    strength: float = 1.0


@dataclass
class ExtractionRecord:
    chunk_id: str
    entities: list[ExtractedEntity] = field(default_factory=list)
    relations: list[ExtractedRelation] = field(default_factory=list)
    skipped_lines: int = 0


def load_corpus(path: str | Path) -> list[tuple[str, str]]:
    """Read ``(doc_id, text)`` pairs from a directory of ``.txt`` files or a JSON-lines file."""
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix == ".txt" and p.is_file())
        return [(p.stem, p.read_text(encoding="utf-8")) for p in files]
    if path.is_file():
        docs = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    docs.append((str(row["doc_id"]), str(row["text"])))
                except (ValueError, KeyError, TypeError) as exc:
                    raise DataError(f"{path}:{lineno}: expected {{doc_id, text}} JSON") from exc
        return docs
    raise DataError(f"corpus path not found: {path}")


def chunk_corpus(
    docs: Iterable[tuple[str, str]],
    chunk_chars: int = DEFAULT_CHUNK_CHARS,
    overlap_chars: int = DEFAULT_OVERLAP_CHARS,
) -> list[Chunk]:
    """Split each document into fixed-size windows overlapping by ``overlap_chars``."""
    if not chunk_chars > overlap_chars >= 0:
        raise ValueError("need chunk_chars > overlap_chars >= 0")
    chunks = []
    for doc_id, text in docs:
        if not text:
            log.warning("document %s is empty; no chunks", doc_id)
            continue
        start, i = 0, 0
        while True:
            end = min(start + chunk_chars, len(text))
            chunks.append(Chunk(f"{doc_id}:{i}", doc_id, text[start:end], (start, end)))
            if end == len(text):
                break
            start, i = end - overlap_chars, i + 1
    return chunks


def _split_records(text: str) -> list[str]:
    out = []
    for line in text.replace("##", "\n").splitlines():
        line = line.strip().replace(prompts.COMPLETION_MARKER, "").strip()
        if line:
            out.append(line)
    return out


def parse_extraction(text: str, chunk_id: str) -> ExtractionRecord:
    """Parse tuple-delimited extraction output; malformed lines are counted and skipped."""
    record = ExtractionRecord(chunk_id)
    lines = _split_records(text)
    for line in lines:
        body = line
        if body.startswith("(") and body.endswith(")"):
            body = body[1:-1]
        fields = [f.strip().strip('"').strip() for f in body.split(prompts.RECORD_DELIM)]
        tag = fields[0].lower()
        if tag == "entity" and len(fields) == 4 and fields[1]:
            record.entities.append(ExtractedEntity(fields[1], fields[2].lower(), fields[3]))
        elif tag == "relationship" and len(fields) == 5 and fields[1] and fields[2]:
            try:
                strength = float(fields[4])
            except ValueError:
                record.skipped_lines += 1
                continue
            record.relations.append(ExtractedRelation(fields[1], fields[2], fields[3], max(strength, 0.0)))
        else:
            record.skipped_lines += 1
    if lines and not record.entities and not record.relations:
        raise ExtractionParseError(f"no parseable records for chunk {chunk_id}", text)
    return record


def extract_chunk(
    chunk: Chunk,
    chat: ChatProvider,
    diagnostics: Diagnostics | None = None,
    retry: bool = False,
    max_tokens: int = 2048,
) -> ExtractionRecord:
    """Run the extraction prompt on one chunk and parse the response."""
    if not chunk.text.strip():
        raise DataError(f"chunk {chunk.id} is empty")
    request = ChatRequest(
        prompts.EXTRACTION_SYSTEM,
        prompts.EXTRACTION_USER.format(d=prompts.RECORD_DELIM, done=prompts.COMPLETION_MARKER, text=chunk.text),
        max_tokens=max_tokens,
    )
    attempts = 2 if retry else 1
    for attempt in range(attempts):
        raw = chat.chat(request).text
        try:
            record = parse_extraction(raw, chunk.id)
        except ExtractionParseError:
            if attempt + 1 == attempts:
                raise
            continue
        if diagnostics is not None and record.skipped_lines:
            diagnostics.add("extraction_skipped_lines", chunk.id, record.skipped_lines)
        return record
    raise AssertionError("unreachable")


def extract_corpus(
    chunks: Sequence[Chunk],
    chat: ChatProvider,
    diagnostics: Diagnostics | None = None,
    max_inflight: int = 8,
    retry: bool = False,
) -> list[ExtractionRecord]:
    return bounded_map(lambda c: extract_chunk(c, chat, diagnostics, retry), chunks, max_inflight)


def build_base_graph(
    records: Sequence[ExtractionRecord],
    embedder: EmbeddingProvider,
    chunks: Sequence[Chunk] = (),
    fuzzy_threshold: float = DEFAULT_FUZZY_THRESHOLD,
    embed_threshold: float = DEFAULT_EMBED_THRESHOLD,
    diagnostics: Diagnostics | None = None,
) -> KnowledgeGraph:
    """Canonicalize extracted entities and connect them with structural edges.

    Undirected duplicate relations between the same canonical pair are merged
    (descriptions pooled, strengths summed); self-relations produced by
    merging are dropped.
    """
    if not records:
        raise DataError("no extraction records to build a graph from")
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()

    raw: list[EntityNode] = []
    texts: list[str] = []
    for rec in records:
        for i, ent in enumerate(rec.entities):
            node = EntityNode(
                id=f"{rec.chunk_id}#{i}",
                name=ent.name.strip(),
                description=ent.description.strip(),
                source_chunks=frozenset({rec.chunk_id}),
            )
            raw.append(node)
            texts.append(node.text)
    if not raw:
        raise DataError("extraction produced no entities")
    vectors = embedder.embed(texts)
    raw = [replace(node, embedding=vec) for node, vec in zip(raw, vectors)]

    merged, merge_map = canonicalize_entities(raw, fuzzy_threshold, embed_threshold)
    rename = {node.id: f"ent:{slug(node.name) or node.id}" for node in merged}
    final_texts = [node.text for node in merged]
    final_vecs = embedder.embed(final_texts)
    entities = {}
    for node, vec in zip(merged, final_vecs):
        entities[rename[node.id]] = replace(node, id=rename[node.id], embedding=vec)

    # name resolution: same-record names first, then any canonical name or alias
    by_name: dict[str, str] = {}
    for ent in entities.values():
        for name in (ent.name, *sorted(ent.aliases)):
            by_name.setdefault(normalize_name(name), ent.id)
    raw_by_record: dict[str, dict[str, str]] = {}
    for node in raw:
        chunk_id = node.id.rsplit("#", 1)[0]
        raw_by_record.setdefault(chunk_id, {})[normalize_name(node.name)] = rename[merge_map[node.id]]

    pairs: dict[tuple[str, str], RelationEdge] = {}
    for rec in records:
        local = raw_by_record.get(rec.chunk_id, {})
        for rel in rec.relations:
            ends = []
            for name in (rel.src, rel.dst):
                key = normalize_name(name)
                ends.append(local.get(key) or by_name.get(key))
            src, dst = ends
            if src is None or dst is None:
                diagnostics.add("relation_unresolved", f"{rel.src} -> {rel.dst}")
                continue
            if src == dst:
                diagnostics.add("relation_self_loop", f"{rel.src} -> {rel.dst}")
                continue
            key = tuple(sorted((src, dst)))
            prev = pairs.get(key)
            if prev is None:
                pairs[key] = RelationEdge(src, dst, EdgeKind.STRUCTURAL, rel.description, rel.strength)
            else:
                desc = prev.description
                if rel.description and rel.description not in desc.split("\n"):
                    desc = f"{desc}\n{rel.description}" if desc else rel.description
                pairs[key] = replace(prev, description=desc, weight_hint=prev.weight_hint + rel.strength)

    edges = tuple(pairs[k] for k in sorted(pairs))
    chunk_map = {c.id: c for c in chunks}
    return KnowledgeGraph(
        chunks=chunk_map,
        entities=dict(sorted(entities.items())),
        edges=edges,
        meta={"dimension": embedder.dimension},
    )
