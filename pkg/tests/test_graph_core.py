import json
import random
from collections import deque

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaterag.canonical import UnionFind, canonicalize_entities, name_similarity
from gaterag.errors import DataError, DimensionMismatchError, GraphParseError, GraphVersionError, NodeNotFoundError
from gaterag.graph import (
    ALL_KINDS,
    CausalGate,
    EdgeKind,
    EntityNode,
    KnowledgeGraph,
    RelationEdge,
    min_hops,
    neighbors,
    unit,
)
from gaterag.storage import SCHEMA_VERSION, dumps_graph, load_graph, loads_graph, save_graph

from graphs import entity, isolation_graph, random_entity_graph, structural


def onehot(i, dim=16):
    return tuple(1.0 if k == i else 0.0 for k in range(dim))


# -- canonicalization --------------------------------------------------------


def test_identical_names_merge_and_pool_aliases():
    a = EntityNode("x1", "Acme Corp", "maker of anvils", frozenset({"ACME"}), frozenset({"c1"}), onehot(0))
    b = EntityNode("x2", "Acme Corp", "sells to coyotes", frozenset({"Acme Inc"}), frozenset({"c2"}), onehot(1))
    merged, mapping = canonicalize_entities([a, b])
    assert len(merged) == 1
    node = merged[0]
    assert node.aliases == {"ACME", "Acme Inc"}
    assert node.source_chunks == {"c1", "c2"}
    assert node.description == "maker of anvils\nsells to coyotes"
    assert mapping == {"x1": node.id, "x2": node.id}


def test_biden_variants_merge_at_08():
    a = EntityNode("p1", "J. Biden", "", frozenset(), frozenset({"c1"}), onehot(0))
    b = EntityNode("p2", "Joe Biden", "", frozenset(), frozenset({"c2"}), onehot(1))
    assert name_similarity("J. Biden", "Joe Biden") >= 0.8
    merged, mapping = canonicalize_entities([a, b], fuzzy_threshold=0.8)
    assert len(merged) == 1
    assert merged[0].name == "Joe Biden"
    assert "J. Biden" in merged[0].aliases


def test_threshold_one_with_orthogonal_embeddings_is_identity():
    rng = random.Random(3)
    nodes = []
    for i in range(10):
        name = "".join(rng.choice("abcdefghijklmnop") for _ in range(8)) + str(i)
        nodes.append(EntityNode(f"n{i}", name, "d", frozenset(), frozenset({"c"}), onehot(i)))
    merged, mapping = canonicalize_entities(nodes, 1.0, 1.0)
    assert merged == sorted(nodes, key=lambda n: n.id)
    assert mapping == {n.id: n.id for n in nodes}


def test_merge_equals_union_find_closure_oracle():
    names = ["river port", "river ports", "rivers port", "mountain pass", "mountain passes", "harbor"]
    nodes = [EntityNode(f"n{i}", nm, "", frozenset(), frozenset({"c"}), onehot(i)) for i, nm in enumerate(names)]
    thr = 0.9
    # oracle: every pair scored independently, closure by a separate union-find walk
    parent = list(range(len(names)))

    def find(i):
        return i if parent[i] == i else find(parent[i])

    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            if name_similarity(names[i], names[j]) >= thr:
                parent[find(j)] = find(i)
    expected = {frozenset(k for k in range(len(names)) if find(k) == find(i)) for i in range(len(names))}
    merged, mapping = canonicalize_entities(nodes, thr, 1.0)
    got = {frozenset(int(src[1:]) for src, dst in mapping.items() if dst == m.id) for m in merged}
    assert got == expected
    assert len(expected) == 3  # port group, pass group, harbor


def test_embedding_stage_merges_close_vectors():
    v = unit([1.0, 0.1, 0.0])
    w = unit([1.0, 0.12, 0.0])
    a = EntityNode("a", "kestrel", "", frozenset(), frozenset({"c"}), v)
    b = EntityNode("b", "windhover", "", frozenset(), frozenset({"c"}), w)
    merged, _ = canonicalize_entities([a, b], 0.99, 0.92)
    assert len(merged) == 1


def test_dimension_mismatch_rejected():
    a = EntityNode("a", "x", "", frozenset(), frozenset({"c"}), onehot(0, 4))
    b = EntityNode("b", "y", "", frozenset(), frozenset({"c"}), onehot(0, 5))
    with pytest.raises(DimensionMismatchError):
        canonicalize_entities([a, b])


@pytest.mark.parametrize("bad", [0.0, -0.1, 1.5])
def test_thresholds_must_be_in_unit_interval(bad):
    a = EntityNode("a", "x", "", frozenset(), frozenset({"c"}), onehot(0))
    with pytest.raises(ValueError):
        canonicalize_entities([a], fuzzy_threshold=bad)


name_st = st.text(alphabet="abcde ", min_size=1, max_size=6).filter(lambda s: s.strip())


@settings(max_examples=60, deadline=None)
@given(st.lists(name_st, min_size=1, max_size=8), st.floats(0.5, 1.0))
def test_canonicalization_is_idempotent(names, thr):
    nodes = [EntityNode(f"n{i}", nm, f"d{i}", frozenset(), frozenset({f"c{i}"}), onehot(i)) for i, nm in enumerate(names)]
    once, _ = canonicalize_entities(nodes, thr, 0.999)
    twice, mapping = canonicalize_entities(once, thr, 0.999)
    assert twice == once
    assert set(mapping) == {n.id for n in once}


def test_union_find_groups():
    uf = UnionFind(5)
    uf.union(0, 3)
    uf.union(3, 4)
    assert sorted(map(sorted, uf.groups())) == [[0, 3, 4], [1], [2]]


# -- neighbors / min_hops ------------------------------------------------


def test_neighbors_isolated_node_is_empty():
    g = KnowledgeGraph(entities={"a": entity("a", "a")})
    assert neighbors(g, "a", ALL_KINDS) == []


def test_neighbors_filter_by_kind():
    g = isolation_graph()
    # mA: 3 hierarchical children and one gate from mB
    assert len(neighbors(g, "mA", {EdgeKind.HIERARCHICAL})) == 3
    assert len(neighbors(g, "mA", {EdgeKind.CAUSAL_GATE})) == 1
    assert len(neighbors(g, "a1", {EdgeKind.STRUCTURAL})) == 2


def test_neighbors_unknown_node():
    with pytest.raises(NodeNotFoundError):
        neighbors(isolation_graph(), "nope", ALL_KINDS)


def test_neighbors_match_linear_edge_scan():
    g = random_entity_graph(20, 0.2, seed=11)
    for nid in g.entities:
        expected = sorted(
            [(e.dst, e.key) for e in g.edges if e.src == nid] + [(e.src, e.key) for e in g.edges if e.dst == nid]
        )
        got = [(n, e.key) for n, e in neighbors(g, nid, ALL_KINDS)]
        assert got == expected  # already sorted by neighbor id


def _bfs_oracle(adj, sources, targets):
    best = None
    for s in sources:
        dist = {s: 0}
        q = deque([s])
        while q:
            u = q.popleft()
            for v in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    q.append(v)
        for t in targets:
            if t in dist and (best is None or dist[t] < best):
                best = dist[t]
    return best


def test_min_hops_basics():
    g = KnowledgeGraph(
        entities={"a": entity("a", "a"), "b": entity("b", "b"), "c": entity("c", "c")}, edges=(structural("a", "b"),)
    )
    assert min_hops(g, {"a"}, {"a", "c"}) == 0
    assert min_hops(g, {"a"}, {"b"}) == 1
    assert min_hops(g, {"b"}, {"a"}) == 1  # undirected
    assert min_hops(g, {"a"}, {"c"}) is None


@pytest.mark.parametrize("seed", range(10))
def test_min_hops_matches_bfs_oracle(seed):
    g = random_entity_graph(30, 0.07, seed=seed)
    adj = {n: set() for n in g.entities}
    for e in g.edges:
        adj[e.src].add(e.dst)
        adj[e.dst].add(e.src)
    rng = random.Random(seed)
    ids = sorted(g.entities)
    for _ in range(10):
        src = set(rng.sample(ids, 2))
        dst = set(rng.sample(ids, 2))
        assert min_hops(g, src, dst) == _bfs_oracle(adj, src, dst)


def test_min_hops_respects_allowed_kinds():
    g = isolation_graph()
    assert min_hops(g, {"a1"}, {"b2"}, {EdgeKind.STRUCTURAL, EdgeKind.HIERARCHICAL}) is None
    assert min_hops(g, {"a1"}, {"b2"}) == 3  # a1 -> mA -> mB -> b2
    assert min_hops(g, {"mA"}, {"b2"}) == 2


def test_min_hops_unknown_id():
    with pytest.raises(NodeNotFoundError):
        min_hops(isolation_graph(), {"zz"}, {"a1"})


# -- invariants ----------------------------------------------------------


def test_edge_kinds_partition_unified_space():
    g = isolation_graph()
    by_kind = {k: {e.key for e in g.unified_edges({k})} for k in EdgeKind}
    union = {e.key for e in g.unified_edges()}
    assert set().union(*by_kind.values()) == union
    assert sum(len(v) for v in by_kind.values()) == len(union)


def test_validate_rejects_overlapping_modules():
    from dataclasses import replace

    from gaterag.graph import ModuleNode

    g = isolation_graph(with_gate=False)
    mods = dict(g.modules)
    mods["mA"] = replace(mods["mA"], member_ids=mods["mA"].member_ids | {"b1"})
    with pytest.raises(DataError):
        replace(g, modules=mods).validate()
    assert isinstance(mods["mA"], ModuleNode)


def test_validate_rejects_gate_parallel_to_hierarchy():
    from graphs import layered_graph

    with pytest.raises(DataError):
        layered_graph({"m1": [("x", "X: y")], "m2": [("z", "Z: w")]}, parents={"p": ["m1", "m2"]}, gates=[("p", "m1")])


# -- persistence ---------------------------------------------------------


def test_empty_graph_round_trips(tmp_path):
    path = save_graph(KnowledgeGraph(), tmp_path / "g.json")
    assert load_graph(path) == KnowledgeGraph()


def test_fixture_graph_round_trips_bit_exact(tmp_path):
    g = isolation_graph()
    g = g.with_gates([CausalGate("mB", "mA", 0.75, "backward", "k" * 64, "backward")])
    path = save_graph(g, tmp_path / "g.json")
    back = load_graph(path)
    assert back == g
    assert {e.kind for e in back.unified_edges()} == set(EdgeKind)
    for nid, ent in g.entities.items():
        assert back.entities[nid].embedding == ent.embedding  # exact float equality
    assert dumps_graph(back) == path.read_text()


def test_large_random_graph_round_trips_field_by_field(tmp_path):
    g = random_entity_graph(1000, 0.002, seed=5, dim=32)
    back = load_graph(save_graph(g, tmp_path / "big.json"))
    assert back.entities.keys() == g.entities.keys()
    for nid in g.entities:
        a, b = g.entities[nid], back.entities[nid]
        for f in ("id", "name", "description", "aliases", "source_chunks", "embedding"):
            assert getattr(a, f) == getattr(b, f)
    assert back.edges == g.edges
    assert back.chunks == g.chunks


def test_version_mismatch(tmp_path):
    path = tmp_path / "g.json"
    data = json.loads(dumps_graph(KnowledgeGraph()))
    data["schema_version"] = SCHEMA_VERSION + 1
    path.write_text(json.dumps(data))
    with pytest.raises(GraphVersionError):
        load_graph(path)


def test_truncated_file_reports_byte_offset(tmp_path):
    text = dumps_graph(isolation_graph())
    path = tmp_path / "g.json"
    path.write_bytes(text.encode("utf-8")[: len(text) // 2])
    with pytest.raises(GraphParseError) as info:
        load_graph(path)
    assert 0 < info.value.offset <= len(text) // 2


def test_byte_offset_counts_multibyte_characters():
    text = '{"a": "ééé", oops}'
    with pytest.raises(GraphParseError) as info:
        loads_graph(text)
    char_pos = text.index("oops")
    assert info.value.offset == char_pos + 3  # three 2-byte characters before it


ident = st.text(alphabet="abcdefgh", min_size=1, max_size=4)


@st.composite
def graphs_st(draw):
    ids = draw(st.lists(ident, min_size=0, max_size=8, unique=True))
    ents = {}
    for i in ids:
        vec = draw(st.lists(st.floats(-1, 1, allow_nan=False), min_size=3, max_size=3).filter(lambda v: any(abs(x) > 1e-3 for x in v)))
        ents[i] = EntityNode(i, draw(st.text(max_size=10)), draw(st.text(max_size=10)), frozenset(), frozenset({"c"}), unit(vec))
    pairs = [(a, b) for a in ids for b in ids if a < b]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=6)) if pairs else []
    edges = tuple(RelationEdge(a, b, EdgeKind.STRUCTURAL, draw(st.text(max_size=5)), draw(st.floats(0, 10))) for a, b in chosen)
    return KnowledgeGraph(entities=ents, edges=edges, meta={"dimension": 3})


@settings(max_examples=50, deadline=None)
@given(graphs_st())
def test_persistence_round_trip_property(g):
    assert loads_graph(dumps_graph(g)) == g
