"""Answer F1 and structural gate A/B metrics (reachability, DWR, coverage, min hops)."""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DataError
from .graph import ALL_KINDS, NO_GATES, EdgeKind, KnowledgeGraph, min_hops
from .providers import EmbeddingProvider, bounded_map
from .retrieval import ExpansionConfig, HybridScoreConfig, RetrievalResult, retrieve

log = logging.getLogger(__name__)

JUDGE_PLACEHOLDER = "requires judge provider"

# (question, answer, contexts, gold answer) -> score in [0, 1]
JudgeMetric = Callable[[str, str, Sequence[str], str], float]


def token_f1(prediction: str, gold: str) -> float:
    """Multiset token F1 over lowercase whitespace tokens."""
    pred, ref = prediction.lower().split(), gold.lower().split()
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    overlap = sum((Counter(pred) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    p, r = overlap / len(pred), overlap / len(ref)
    return 2 * p * r / (p + r)


def depth_weighted_reachability(hops: int | None) -> float:
    return 0.0 if hops is None else 1.0 / (1.0 + hops)


@dataclass
class QAExample:
    id: str
    question: str
    answer: str
    context: list[str] = field(default_factory=list)
    gold_node_ids: set[str] = field(default_factory=set)


def load_qa(path: str | Path) -> list[QAExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                out.append(
                    QAExample(
                        id=str(row.get("id", lineno)),
                        question=row["question"],
                        answer=row.get("answer", ""),
                        context=list(row.get("context", [])),
                        gold_node_ids=set(row.get("gold_node_ids", [])),
                    )
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad QA record") from exc
    return out


def _norm(text: str) -> str:
    return " ".join(text.lower().split())


def map_gold_nodes(example: QAExample, graph: KnowledgeGraph) -> set[str]:
    """Gold entities for an example.

    Explicit ``gold_node_ids`` that exist in the graph are kept.  Each gold
    context span adds the entities sourced from chunks that contain the span
    (or are contained in it), plus entities whose name equals the span.
    """
    gold = {nid for nid in example.gold_node_ids if graph.has_node(nid)}
    for span in example.context:
        s = _norm(span)
        if not s:
            continue
        chunks = {cid for cid, c in graph.chunks.items() if s in _norm(c.text) or _norm(c.text) in s}
        for ent in graph.entities.values():
            if ent.source_chunks & chunks or _norm(ent.name) == s:
                gold.add(ent.id)
    return gold


@dataclass(frozen=True)
class ExampleMetrics:
    reachable: bool
    min_hops: int | None
    dwr: float
    coverage: float

    def to_dict(self) -> dict:
        return {"reachable": self.reachable, "min_hops": self.min_hops, "dwr": self.dwr, "coverage": self.coverage}


def structural_metrics(
    result: RetrievalResult,
    gold: Iterable[str],
    graph: KnowledgeGraph,
    allowed_kinds: Iterable[EdgeKind] = ALL_KINDS,
) -> ExampleMetrics:
    """Per-example gate metrics.

    ``min_hops`` is the shortest seed-to-gold distance over the enabled edge
    kinds, reported only when a gold node was retrieved; DWR is
    ``1 / (1 + min_hops)`` and 0 when nothing was retrieved.
    """
    gold = set(gold)
    if not gold:
        raise DataError("example has no mappable gold nodes")
    hit = set(result.visited) & gold
    coverage = len(hit) / len(gold)
    if not hit:
        return ExampleMetrics(False, None, 0.0, coverage)
    hops = min_hops(graph, [s for s, _ in result.seeds], gold, allowed_kinds)
    return ExampleMetrics(True, hops, depth_weighted_reachability(hops), coverage)


def bootstrap_ci(
    values: Sequence[float], resamples: int = 1000, seed: int = 0, level: float = 0.95
) -> tuple[float, float, float] | None:
    """Mean and percentile bootstrap interval; ``None`` for an empty sample."""
    if len(values) == 0:
        return None
    arr = np.asarray(values, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(arr), size=(resamples, len(arr)))
    means = arr[idx].mean(axis=1)
    tail = (1.0 - level) / 2.0 * 100.0
    lo, hi = np.percentile(means, [tail, 100.0 - tail])
    return float(arr.mean()), float(lo), float(hi)


def _summary(values: Sequence[float], resamples: int, seed: int) -> dict:
    ci = bootstrap_ci(values, resamples, seed)
    if ci is None:
        return {"mean": None, "ci_low": None, "ci_high": None, "n": 0}
    return {"mean": ci[0], "ci_low": ci[1], "ci_high": ci[2], "n": len(values)}


def gate_ab_test(
    graph: KnowledgeGraph,
    examples: Sequence[QAExample],
    embedder: EmbeddingProvider,
    expansion: ExpansionConfig = ExpansionConfig(),
    scoring: HybridScoreConfig = HybridScoreConfig(),
    resamples: int = 1000,
    seed: int = 0,
    max_inflight: int = 8,
) -> dict:
    """Retrieve every example with gates off and on and compare the four metrics.

    Examples without mappable gold nodes are excluded and listed.  Mean min
    hops is computed over examples whose gold is reached in both arms.
    """
    if not graph.gates:
        log.warning("graph has no gates; both arms will be identical")

    def run(ex: QAExample) -> dict | None:
        gold = map_gold_nodes(ex, graph)
        if not gold:
            return None
        off = retrieve(ex.question, graph, embedder, expansion, scoring, use_gates=False)
        on = retrieve(ex.question, graph, embedder, expansion, scoring, use_gates=True)
        return {
            "id": ex.id,
            "gold": sorted(gold),
            "off": structural_metrics(off, gold, graph, NO_GATES).to_dict(),
            "on": structural_metrics(on, gold, graph, ALL_KINDS).to_dict(),
        }

    rows = bounded_map(run, examples, max_inflight)
    per_example = [r for r in rows if r is not None]
    excluded = [ex.id for ex, r in zip(examples, rows) if r is None]
    if not per_example:
        log.warning("no example has mappable gold nodes; metrics are empty")

    report: dict = {
        "n_examples": len(per_example),
        "excluded": excluded,
        "bootstrap": {"resamples": resamples, "seed": seed, "level": 0.95},
        "off": {},
        "on": {},
        "per_example": per_example,
    }
    both = [r for r in per_example if r["off"]["reachable"] and r["on"]["reachable"]]
    for arm in ("off", "on"):
        report[arm] = {
            "reachability": _summary([float(r[arm]["reachable"]) for r in per_example], resamples, seed),
            "dwr": _summary([r[arm]["dwr"] for r in per_example], resamples, seed),
            "coverage": _summary([r[arm]["coverage"] for r in per_example], resamples, seed),
            "min_hops": _summary([float(r[arm]["min_hops"]) for r in both], resamples, seed),
        }
    return report


def write_ab_csv(report: dict, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "off_mean", "off_ci_low", "off_ci_high", "on_mean", "on_ci_low", "on_ci_high", "n"])
        for metric in ("reachability", "dwr", "coverage", "min_hops"):
            off, on = report["off"][metric], report["on"][metric]
            w.writerow([metric, off["mean"], off["ci_low"], off["ci_high"], on["mean"], on["ci_low"], on["ci_high"], on["n"]])


def quality_row(
    name: str,
    f1_scores: Sequence[float],
    context_recall: JudgeMetric | None = None,
    answer_relevancy: JudgeMetric | None = None,
    judged: Sequence[tuple[str, str, Sequence[str], str]] = (),
) -> dict:
    """One results-table row: mean F1, plus judge metrics when judges are supplied."""
    row: dict = {"dataset": name, "F1": float(np.mean(f1_scores)) * 100.0 if f1_scores else None}
    for col, judge in (("CR", context_recall), ("AR", answer_relevancy)):
        if judge is None or not judged:
            row[col] = JUDGE_PLACEHOLDER
        else:
            row[col] = float(np.mean([judge(*item) for item in judged])) * 100.0
    return row


def write_quality_csv(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["dataset", "F1", "CR", "AR"])
        w.writeheader()
        for row in rows:
            w.writerow(row)
