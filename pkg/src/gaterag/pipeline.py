"""Stage orchestration shared by the CLI and the tests."""

from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .config import PipelineConfig
from .diagnostics import Diagnostics
from .errors import ConfigError, DataError, ExtractionParseError, GateRAGError
from .evaluation import QAExample, quality_row, token_f1
from .gates import build_gates
from .graph import KnowledgeGraph
from .hierarchy import build_hierarchy
from .ingest import build_base_graph, chunk_corpus, extract_chunk, load_corpus
from .providers import (
    ChatProvider,
    EmbeddingProvider,
    HashEmbedder,
    HttpChat,
    HttpEmbedder,
    MockChat,
    RecordingChat,
    ReplayChat,
    Transcript,
    bounded_map,
)
from .reasoning import SelectionMode, generate_answer, linearize, select_causal
from .retrieval import retrieve

log = logging.getLogger(__name__)


@dataclass
class Providers:
    chat: ChatProvider
    embedder: EmbeddingProvider
    transcript: Transcript | None = None


def make_providers(config: PipelineConfig) -> Providers:
    """Instantiate chat and embedding backends for the configured mode."""
    p = config.provider
    transcript = Transcript(p.transcript) if p.transcript else None
    if p.mode == "replay":
        chat: ChatProvider = ReplayChat(transcript)  # type: ignore[arg-type]
    elif p.mode == "mock":
        if not p.script:
            raise ConfigError("mock mode needs provider.script")
        chat = MockChat.from_script(p.script)
    else:
        chat = HttpChat(p.endpoint)
    if transcript is not None and p.mode != "replay":
        chat = RecordingChat(chat, transcript)
    if p.embedder == "http":
        embedder: EmbeddingProvider = HttpEmbedder(p.endpoint, p.embedding_dimension)
    else:
        embedder = HashEmbedder(p.embedding_dimension)
    return Providers(chat, embedder, transcript)


@contextmanager
def stage(name: str):
    """Tag any package error escaping the block with the stage it came from."""
    try:
        yield
    except GateRAGError as exc:
        if not hasattr(exc, "stage"):
            exc.stage = name  # type: ignore[attr-defined]
        raise


def build_graph(corpus: str | Path, config: PipelineConfig, providers: Providers) -> tuple[KnowledgeGraph, dict]:
    """Corpus to hierarchical graph: load, chunk, extract, canonicalize, partition, summarize."""
    diag = Diagnostics()
    with stage("ingest"):
        docs = load_corpus(corpus)
        chunks = chunk_corpus(docs, config.chunking.chunk_chars, config.chunking.overlap_chars)
        if not chunks:
            raise DataError(f"corpus {corpus} produced no chunks")

    def _extract(chunk):
        try:
            return extract_chunk(chunk, providers.chat, diag, config.extraction_retry)
        except ExtractionParseError as exc:
            diag.add("extraction_unparseable", f"{chunk.id}: {exc.raw[:60]!r}")
            return None

    with stage("extract"):
        records = [r for r in bounded_map(_extract, chunks, config.provider.max_inflight) if r is not None]
    with stage("canonicalize"):
        base = build_base_graph(
            records, providers.embedder, chunks, config.dedup.fuzzy_threshold, config.dedup.embed_threshold, diag
        )
    with stage("hierarchy"):
        graph = build_hierarchy(base, providers.chat, providers.embedder, config.hierarchy, diag)
        graph.validate()
    meta = dict(graph.meta)
    meta["config"] = config.to_dict()
    graph = replace(graph, meta=meta)
    report = {"stats": graph.stats(), "diagnostics": diag.to_dict(), "config": config.to_dict()}
    return graph, report


def run_gates(graph: KnowledgeGraph, config: PipelineConfig, providers: Providers) -> tuple[KnowledgeGraph, dict]:
    with stage("gates"):
        new_graph, gate_set = build_gates(graph, providers.chat, config.gates.tau, config.provider.max_inflight)
        new_graph.validate()
    report = gate_set.report()
    report["config"] = config.to_dict()
    return new_graph, report


def answer_query(
    graph: KnowledgeGraph,
    question: str,
    config: PipelineConfig,
    providers: Providers,
    use_gates: bool = True,
    mode: str | None = None,
) -> dict:
    """Retrieve, linearize, select and generate; returns the full audit bundle."""
    diag = Diagnostics()
    if use_gates and not graph.gates:
        log.warning("graph has no causal gates; retrieving over structure and hierarchy only")
        diag.add("no_gates")
    with stage("retrieve"):
        result = retrieve(
            question, graph, providers.embedder, config.retrieval.expansion(), config.retrieval.scoring(), use_gates, diag
        )
    with stage("select"):
        lin = linearize(result, graph)
        selection = select_causal(
            lin, question, providers.chat, SelectionMode(mode or config.reasoning.mode), config.reasoning.selection_max_tokens
        )
    with stage("generate"):
        answer = generate_answer(question, lin, selection.selected_ids, providers.chat, config.reasoning.answer_max_tokens)
    s_raw = lin.reconstruct(lin.all_ids)
    return {
        "question": question,
        "answer": answer.text,
        "abstained": answer.abstained,
        "evidence_ids": answer.evidence_ids,
        "use_gates": use_gates,
        "linearized": lin.table(),
        "s_raw": {"nodes": list(s_raw.nodes), "edges": [list(e.key) for e in s_raw.edges]},
        "s_star": {"nodes": list(selection.subgraph.nodes), "edges": [list(e.key) for e in selection.subgraph.edges]},
        "selection": selection.audit(),
        "generation_prompt": answer.prompt,
        "retrieval": result.to_dict(),
        "diagnostics": diag.to_dict(),
        "config": config.to_dict(),
    }


def evaluate_answers(
    graph: KnowledgeGraph,
    examples: Sequence[QAExample],
    config: PipelineConfig,
    providers: Providers,
    name: str = "qa",
) -> dict:
    """Answer every example and report token F1 (judge metrics stay placeholders)."""

    def run(ex: QAExample) -> dict:
        audit = answer_query(graph, ex.question, config, providers)
        return {"id": ex.id, "answer": audit["answer"], "gold": ex.answer, "f1": token_f1(audit["answer"], ex.answer)}

    rows = bounded_map(run, examples, config.provider.max_inflight)
    return {
        "table": [quality_row(name, [r["f1"] for r in rows])],
        "per_example": rows,
        "config": config.to_dict(),
    }
