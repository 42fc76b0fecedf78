import json

import pytest

from gaterag.errors import DataError, TransientProviderError
from gaterag.graph import EdgeKind, KnowledgeGraph, RelationEdge
from gaterag.prompts import NO_EVIDENCE
from gaterag.providers import MockChat
from gaterag.reasoning import (
    SelectionMode,
    Subgraph,
    generate_answer,
    linearize,
    parse_selection,
    select_causal,
)
from gaterag.retrieval import RetrievalResult, Visit

from graphs import entity, structural


def result_for(graph, gains, edges):
    visited = {nid: Visit(g, 0, None, None, g, i) for i, (nid, g) in enumerate(gains.items())}
    return RetrievalResult("q", [], visited, list(edges), {})


def small():
    ents = {
        "a": entity("a", "Drought", "a dry summer"),
        "b": entity("b", "Harvest failure", "wheat lost"),
        "c": entity("c", "Port Lune", "a busy harbour city"),
    }
    edges = (structural("a", "b", "ruined"), structural("b", "c", "hit"))
    return KnowledgeGraph(entities=ents, edges=edges, meta={"dimension": 8})


def test_two_nodes_one_edge_gives_three_rows():
    g = small()
    lin = linearize(result_for(g, {"a": 0.9, "b": 0.5}, [g.edges[0]]), g)
    assert [r.short_id for r in lin.rows] == ["N1", "N2", "R1"]
    assert lin.rows[0].render() == "N1: Drought - a dry summer"
    assert lin.rows[2].render() == "R1: N1 →(ruined)→ N2"


def test_rows_ordered_by_gain_then_id():
    g = small()
    lin = linearize(result_for(g, {"c": 0.5, "a": 0.5, "b": 0.9}, g.edges), g)
    assert [r.ref for r in lin.rows if r.kind == "node"] == ["b", "a", "c"]


def test_reconstruct_all_is_identity():
    g = small()
    res = result_for(g, {"a": 0.9, "b": 0.5, "c": 0.1}, g.edges)
    lin = linearize(res, g)
    sub = lin.reconstruct(lin.all_ids)
    assert set(sub.nodes) == set(res.visited) and sub.edge_keys() == {e.key for e in res.edges}


def test_thirty_element_subgraph_row_count():
    ents = {f"e{i:02d}": entity(f"e{i:02d}", f"node {i}", "") for i in range(18)}
    edges = [structural(f"e{i:02d}", f"e{i + 1:02d}") for i in range(12)]
    g = KnowledgeGraph(entities=ents, edges=tuple(edges), meta={"dimension": 8})
    lin = linearize(result_for(g, {n: 1.0 / (i + 1) for i, n in enumerate(ents)}, edges), g)
    ids = [r.short_id for r in lin.rows]
    assert len(ids) == 30 == len(set(ids))
    node_ids = {r.short_id for r in lin.rows if r.kind == "node"}
    assert all(set(r.endpoints) <= node_ids for r in lin.rows if r.kind == "edge")


def test_linearize_rejects_empty_result():
    with pytest.raises(DataError):
        linearize(RetrievalResult("q", [], {}, [], {}), small())


def test_edges_with_missing_endpoint_are_not_rendered():
    g = small()
    lin = linearize(result_for(g, {"a": 0.9}, [g.edges[0]]), g)
    assert [r.short_id for r in lin.rows] == ["N1"]


def test_gate_and_hierarchy_edges_have_fixed_labels():
    g = small()
    edges = [RelationEdge("a", "b", EdgeKind.CAUSAL_GATE, "backward"), RelationEdge("c", "a", EdgeKind.HIERARCHICAL)]
    lin = linearize(result_for(g, {"a": 0.9, "b": 0.5, "c": 0.2}, edges), g)
    labels = sorted(r.label for r in lin.rows if r.kind == "edge")
    assert labels == ["causes", "contains"]


# -- selection ---------------------------------------------------------------


def lin_abc():
    g = small()
    return linearize(result_for(g, {"a": 0.9, "b": 0.5, "c": 0.1}, g.edges), g)


def test_parse_selection_shapes():
    assert parse_selection('["N1", "r1"]', SelectionMode.STANDARD) == (["N1", "R1"], [])
    assert parse_selection('```json\n{"precise": ["N1"], "ct_precise": ["N2"]}\n```', SelectionMode.SPURIOUS_AWARE) == (["N1"], ["N2"])
    assert parse_selection("Relevant: N1, R2", SelectionMode.STANDARD) == (["N1", "R2"], [])
    assert parse_selection("no idea", SelectionMode.SPURIOUS_AWARE) is None


def test_scripted_selection_two_nodes_one_edge():
    sel = select_causal(lin_abc(), "q", MockChat([(".", '["N1", "R1", "N2"]')]), SelectionMode.STANDARD)
    assert len(sel.subgraph.nodes) == 2 and len(sel.subgraph.edges) == 1
    assert not sel.fallback


def test_unknown_id_is_dropped_with_one_diagnostic():
    sel = select_causal(lin_abc(), "q", MockChat([(".", '["N1", "N42"]')]), SelectionMode.STANDARD)
    assert sel.dropped_ids == ["N42"]
    assert sel.diagnostics["selection_unknown_id"] == 1
    assert sel.selected_ids == ["N1"]


def hub_lin():
    ents = {f"x{i}": entity(f"x{i}", f"item {i}", "") for i in range(1, 10)}
    edges = [structural("x9", f"x{i}") for i in range(1, 9)]  # x9 is the hub
    g = KnowledgeGraph(entities=ents, edges=tuple(edges), meta={"dimension": 8})
    return linearize(result_for(g, {f"x{i}": 1.0 - i / 20 for i in range(1, 10)}, edges), g)


def test_hub_marked_spurious_is_excluded():
    lin = hub_lin()
    hub = lin.short_id_of("x9")
    assert hub == "N9"
    edge_to_hub = next(r.short_id for r in lin.rows if r.kind == "edge")
    reply = json.dumps({"precise": ["N1", "N2", edge_to_hub], "ct_precise": [hub]})
    sel = select_causal(lin, "q", MockChat([(".", reply)]))
    assert "x9" not in sel.subgraph.nodes and "x9" in lin.reconstruct(lin.all_ids).nodes
    assert set(sel.precise).isdisjoint(sel.ct_precise)
    assert sel.diagnostics["selection_edge_spurious_endpoint"] == 1


def test_conflicting_id_is_treated_as_spurious():
    reply = json.dumps({"precise": ["N1", "N2"], "ct_precise": ["N2"]})
    sel = select_causal(lin_abc(), "q", MockChat([(".", reply)]))
    assert sel.precise == ["N1"] and sel.ct_precise == ["N2"]


def test_selected_edge_pulls_in_endpoints():
    sel = select_causal(lin_abc(), "q", MockChat([(".", '["R2"]')]), SelectionMode.STANDARD)
    assert sel.selected_ids == ["N2", "N3", "R2"]


def test_unparseable_twice_falls_back_to_everything():
    chat = MockChat([(".", "I cannot help with that")])
    lin = lin_abc()
    sel = select_causal(lin, "q", chat)
    assert sel.fallback and sel.selected_ids == lin.all_ids
    assert len(chat.calls) == 2 and sel.diagnostics["selection_unparseable"] == 2


def test_retry_recovers():
    replies = iter(["garbage", '{"precise": ["N1"]}'])
    sel = select_causal(lin_abc(), "q", MockChat([(".", lambda r, m: next(replies))]))
    assert not sel.fallback and sel.selected_ids == ["N1"]


class DownChat:
    def chat(self, request):
        raise TransientProviderError("down")


def test_provider_failure_falls_back_without_abort():
    sel = select_causal(lin_abc(), "q", DownChat())
    assert sel.fallback and sel.subgraph.nodes
    assert sel.diagnostics["selection_provider_error"] == 2


def test_selection_is_always_a_subset_of_the_table():
    lin = lin_abc()
    full = lin.reconstruct(lin.all_ids)
    for reply in ['["N1"]', '["R1", "R2"]', '["N3", "N9", "R7"]', "[]", "nonsense"]:
        sel = select_causal(lin, "q", MockChat([(".", reply)]), SelectionMode.STANDARD)
        assert sel.subgraph.issubset(full)


# -- generation --------------------------------------------------------------


def test_prompt_contains_only_selected_text():
    lin = lin_abc()
    chat = MockChat([(".", "answer")])
    ans = generate_answer("why?", lin, ["N1"], chat)
    assert "a dry summer" in ans.prompt
    for row in lin.rows:
        if row.short_id != "N1":
            assert row.text not in ans.prompt
    assert "busy harbour" not in ans.prompt and "wheat lost" not in ans.prompt
    assert ans.evidence_ids == ["N1"] and not ans.abstained


def test_echoed_answer_names_exactly_the_selected_nodes():
    lin = lin_abc()
    ans = generate_answer("why?", lin, ["N1", "N2"], MockChat([(r"EVIDENCE:\n(.*?)\n\n", r"\1")]))
    assert "Drought" in ans.text and "Harvest failure" in ans.text and "Port Lune" not in ans.text


def test_empty_selection_abstains():
    ans = generate_answer("why?", lin_abc(), [], MockChat([(".", "I cannot answer")]))
    assert ans.abstained and NO_EVIDENCE in ans.prompt and ans.evidence_ids == []


def test_generation_errors_surface():
    with pytest.raises(TransientProviderError):
        generate_answer("why?", lin_abc(), ["N1"], DownChat())


def test_subgraph_issubset():
    assert Subgraph(("a",), ()).issubset(Subgraph(("a", "b"), ()))
    assert not Subgraph(("c",), ()).issubset(Subgraph(("a", "b"), ()))
