"""Causal gate construction with top-down hierarchical pruning.

Layers are processed from the top of the hierarchy down.  At each layer all
module pairs are verified; then each module is checked against the layer
below, skipping its own children and the children of every peer it was just
gated to (a gate between parents already covers their subtrees).
"""

from __future__ import annotations

import json
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations

from . import prompts
from .diagnostics import Diagnostics
from .errors import DataError, ProviderError
from .graph import CausalGate, KnowledgeGraph
from .providers import ChatProvider, ChatRequest, bounded_map

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.5
DIRECTIONS = ("forward", "backward", "both", "none")


class SkipReason(str, Enum):
    OWN_CHILD = "own_child"
    COVERED_BY_PARENT_GATE = "covered_by_parent_gate"


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    direction: str
    score: float
    parsed: bool
    request_key: str = ""
    raw: str = ""


@dataclass
class GateCandidate:
    src: str
    dst: str
    level: int
    stage: str  # "intra" or "inter"
    reason_skipped: SkipReason | None = None
    verification: Verdict | None = None

    def to_dict(self) -> dict:
        out = {
            "src": self.src,
            "dst": self.dst,
            "level": self.level,
            "stage": self.stage,
            "reason_skipped": self.reason_skipped.value if self.reason_skipped else None,
        }
        if self.verification is not None:
            v = self.verification
            out["verdict"] = {"accepted": v.accepted, "direction": v.direction, "score": v.score, "parsed": v.parsed}
        return out


@dataclass
class GateSet:
    gates: list[CausalGate]
    call_count: int
    exhaustive_count: int
    tau: float
    candidates: list[GateCandidate] = field(default_factory=list)
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def report(self) -> dict:
        return {
            "tau": self.tau,
            "call_count": self.call_count,
            "exhaustive_count": self.exhaustive_count,
            "gate_count": len(self.gates),
            "skipped": {
                r.value: sum(1 for c in self.candidates if c.reason_skipped is r) for r in SkipReason
            },
            "gates": [
                {"src": g.src, "dst": g.dst, "score": g.score, "verdict": g.verdict, "request_key": g.request_key}
                for g in self.gates
            ],
            "candidates": [c.to_dict() for c in self.candidates],
            "diagnostics": self.diagnostics.to_dict(),
        }


def intra_candidates(graph: KnowledgeGraph, level: int) -> list[GateCandidate]:
    mods = graph.levels[level]
    return [GateCandidate(a, b, level, "intra") for a, b in combinations(mods, 2)]


def inter_candidates(
    graph: KnowledgeGraph, level: int, connected_peers: dict[str, set[str]] | None = None
) -> list[GateCandidate]:
    """Pairs (module at ``level``, module at ``level - 1``), tagging pruned ones."""
    if level <= 1:
        return []
    connected_peers = connected_peers or {}
    below = graph.levels[level - 1]
    out = []
    for u in graph.levels[level]:
        own = graph.children(u)
        covered = set().union(*(graph.children(v) for v in connected_peers.get(u, ())))
        for w in below:
            if w in own:
                reason = SkipReason.OWN_CHILD
            elif w in covered:
                reason = SkipReason.COVERED_BY_PARENT_GATE
            else:
                reason = None
            out.append(GateCandidate(u, w, level, "inter", reason))
    return out


def enumerate_candidates(
    graph: KnowledgeGraph, level: int, connected_peers: dict[str, set[str]] | None = None
) -> list[GateCandidate]:
    """All intra-layer pairs at ``level`` plus the tagged inter-layer pairs."""
    return intra_candidates(graph, level) + inter_candidates(graph, level, connected_peers)


_NUMBER = re.compile(r"^\s*([-+]?\d+(?:\.\d+)?)\s*$")
_WORDS = re.compile(r"[a-z]+")
_KEYWORDS = {"forward": "forward", "backward": "backward", "both": "both", "none": "none", "yes": "forward", "no": "none"}


def parse_verdict(text: str) -> tuple[str, float] | None:
    """Map a verification reply to ``(direction, score)``; ``None`` if unparseable."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            obj = json.loads(stripped)
        except ValueError:
            obj = None
        if isinstance(obj, dict):
            direction = str(obj.get("direction", "")).lower() or None
            score = obj.get("score")
            if direction not in DIRECTIONS and direction is not None:
                direction = _KEYWORDS.get(direction)
            if isinstance(score, (int, float)):
                return (direction or "forward", float(score))
            if direction:
                return (direction, 0.0 if direction == "none" else 1.0)
        return None
    m = _NUMBER.match(stripped)
    if m:
        return ("forward", float(m.group(1)))
    words = _WORDS.findall(stripped.lower())
    if not words:
        return None
    if words[0] in _KEYWORDS:
        direction = _KEYWORDS[words[0]]
    else:
        found = {_KEYWORDS[w] for w in words if w in _KEYWORDS}
        if len(found) != 1:
            return None
        direction = found.pop()
    return (direction, 0.0 if direction == "none" else 1.0)


def verify_gate(
    summary_a: str,
    summary_b: str,
    chat: ChatProvider,
    tau: float = DEFAULT_TAU,
    diagnostics: Diagnostics | None = None,
) -> Verdict:
    """Ask the LLM whether module A and module B are causally linked, and in which direction.

    A numeric reply is a score (accepted iff ``score >= tau``, direction
    forward); a word reply scores 1 for forward/backward/both/yes and 0 for
    none/no.  Anything else is rejected and counted in ``diagnostics``.
    """
    if not summary_a.strip() or not summary_b.strip():
        raise DataError("gate verification needs two non-empty summaries")
    request = ChatRequest(prompts.GATE_SYSTEM, prompts.GATE_USER.format(a=summary_a, b=summary_b), max_tokens=16)
    raw = chat.chat(request).text
    parsed = parse_verdict(raw)
    if parsed is None:
        if diagnostics is not None:
            diagnostics.add("gate_unparseable", raw[:80])
        return Verdict(False, "none", 0.0, False, request.key, raw)
    direction, score = parsed
    accepted = direction != "none" and score >= tau
    return Verdict(accepted, direction if accepted else "none", score, True, request.key, raw)


def _gates_from(cand: GateCandidate, v: Verdict) -> list[CausalGate]:
    if not v.accepted:
        return []
    fwd = CausalGate(cand.src, cand.dst, v.score, v.direction, v.request_key, v.raw)
    bwd = CausalGate(cand.dst, cand.src, v.score, v.direction, v.request_key, v.raw)
    return {"forward": [fwd], "backward": [bwd], "both": [fwd, bwd]}[v.direction]


def build_gates(
    graph: KnowledgeGraph,
    chat: ChatProvider,
    tau: float = DEFAULT_TAU,
    max_inflight: int = 8,
) -> tuple[KnowledgeGraph, GateSet]:
    """Verify candidate pairs layer by layer and install the accepted gates.

    Returns a new graph carrying exactly the new gate set (any previous gates
    are replaced) together with the full audit record.
    """
    if graph.depth < 1:
        raise DataError("graph has no module hierarchy; build it before gates")
    diagnostics = Diagnostics()

    def check(cand: GateCandidate) -> Verdict:
        a, b = graph.modules[cand.src].summary, graph.modules[cand.dst].summary
        try:
            return verify_gate(a, b, chat, tau, diagnostics)
        except ProviderError as exc:
            diagnostics.add("gate_provider_error", f"{cand.src}/{cand.dst}: {exc}")
            return Verdict(False, "none", 0.0, False)

    gates: dict[tuple[str, str], CausalGate] = {}
    candidates: list[GateCandidate] = []
    calls = 0
    for level in range(graph.depth, 0, -1):
        intra = intra_candidates(graph, level)
        peers: dict[str, set[str]] = defaultdict(set)
        for cand, verdict in zip(intra, bounded_map(check, intra, max_inflight)):
            cand.verification = verdict
            calls += 1
            for g in _gates_from(cand, verdict):
                gates.setdefault((g.src, g.dst), g)
            if verdict.accepted:
                peers[cand.src].add(cand.dst)
                peers[cand.dst].add(cand.src)
        candidates.extend(intra)

        inter = inter_candidates(graph, level, peers)
        todo = [c for c in inter if c.reason_skipped is None]
        for cand, verdict in zip(todo, bounded_map(check, todo, max_inflight)):
            cand.verification = verdict
            calls += 1
            for g in _gates_from(cand, verdict):
                gates.setdefault((g.src, g.dst), g)
        candidates.extend(inter)
        log.info("gate layer %d: %d calls so far, %d gates", level, calls, len(gates))

    n = len(graph.modules)
    gate_set = GateSet(
        gates=[gates[k] for k in sorted(gates)],
        call_count=calls,
        exhaustive_count=n * (n - 1) // 2,
        tau=tau,
        candidates=candidates,
        diagnostics=diagnostics,
    )
    new_graph = graph.with_gates(
        gate_set.gates, {"gates": {"tau": tau, "call_count": calls, "exhaustive_count": gate_set.exhaustive_count}}
    )
    return new_graph, gate_set


def gate_covers(graph: KnowledgeGraph, a: str, b: str) -> bool:
    """True if a gate links ``a`` (or an ancestor) with ``b`` (or an ancestor), in either direction,
    or if one module contains the other."""
    up_a = {a, *graph.ancestors(a)}
    up_b = {b, *graph.ancestors(b)}
    if a in up_b or b in up_a:
        return True
    for g in graph.gates:
        if (g.src in up_a and g.dst in up_b) or (g.src in up_b and g.dst in up_a):
            return True
    return False
