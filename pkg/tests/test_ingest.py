import json
import random
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaterag.canonical import name_similarity
from gaterag.diagnostics import Diagnostics
from gaterag.errors import DataError, ExtractionParseError
from gaterag.graph import Chunk, EdgeKind
from gaterag.ingest import (
    ExtractedEntity,
    ExtractedRelation,
    ExtractionRecord,
    build_base_graph,
    chunk_corpus,
    extract_chunk,
    extract_corpus,
    load_corpus,
    parse_extraction,
)
from gaterag.providers import HashEmbedder, MockChat
from gaterag.text import normalize_name

FIXTURES = Path(__file__).parent / "fixtures"
D = "<|>"


def test_chunk_single_window():
    chunks = chunk_corpus([("d", "x" * 100)], 100, 0)
    assert [c.char_span for c in chunks] == [(0, 100)]
    assert chunks[0].id == "d:0"


def test_chunk_overlap_arithmetic():
    chunks = chunk_corpus([("d", "y" * 250)], 100, 20)
    assert [c.char_span for c in chunks] == [(0, 100), (80, 180), (160, 250)]


def test_chunk_empty_document():
    assert chunk_corpus([("d", "")], 100, 10) == []


def test_chunk_bad_params():
    with pytest.raises(ValueError):
        chunk_corpus([("d", "abc")], 10, 10)


@settings(max_examples=80, deadline=None)
@given(st.text(min_size=1, max_size=400), st.integers(2, 60), st.data())
def test_chunks_cover_document_with_exact_overlap(text, size, data):
    overlap = data.draw(st.integers(0, size - 1))
    chunks = chunk_corpus([("d", text)], size, overlap)
    assert chunks[0].char_span[0] == 0 and chunks[-1].char_span[1] == len(text)
    for c in chunks:
        start, end = c.char_span
        assert end > start and len(c.text) <= size and c.text == text[start:end]
    for a, b in zip(chunks, chunks[1:]):
        assert a.char_span[1] - b.char_span[0] == overlap


def test_load_corpus_dir_and_jsonl(tmp_path):
    docs = load_corpus(FIXTURES / "corpus")
    assert [d for d, _ in docs] == ["01_drought", "02_prices", "03_riots", "04_football", "05_canal"]
    path = tmp_path / "c.jsonl"
    path.write_text(json.dumps({"doc_id": "a", "text": "hello"}) + "\n\n")
    assert load_corpus(path) == [("a", "hello")]
    path.write_text('{"text": "no id"}\n')
    with pytest.raises(DataError):
        load_corpus(path)
    with pytest.raises(DataError):
        load_corpus(tmp_path / "missing")


def _ent(n, t="concept", d="desc"):
    return f'("entity"{D}{n}{D}{t}{D}{d})'


def _rel(a, b, d="rel", s="5"):
    return f'("relationship"{D}{a}{D}{b}{D}{d}{D}{s})'


def test_parse_two_entities_one_relation():
    text = "\n".join([_ent("ALPHA"), _ent("BETA", "person", "a person"), _rel("ALPHA", "BETA", "knows", "7"), "<|COMPLETE|>"])
    rec = parse_extraction(text, "c:0")
    assert rec.entities == [ExtractedEntity("ALPHA", "concept", "desc"), ExtractedEntity("BETA", "person", "a person")]
    assert rec.relations == [ExtractedRelation("ALPHA", "BETA", "knows", 7.0)]
    assert rec.skipped_lines == 0


def test_parse_accepts_graphrag_record_delimiter():
    rec = parse_extraction(_ent("A") + "##" + _ent("B") + "##" + _rel("A", "B"), "c")
    assert len(rec.entities) == 2 and len(rec.relations) == 1


def test_malformed_relation_line_is_skipped_and_counted():
    text = "\n".join([_ent("A"), _ent("B"), _rel("A", "B", "x", "strong")])
    chat = MockChat([("TEXT:", text)])
    diag = Diagnostics()
    rec = extract_chunk(Chunk("c:0", "c", "some text", (0, 9)), chat, diag)
    assert len(rec.relations) == 0 and len(rec.entities) == 2
    assert diag["extraction_skipped_lines"] == 1


def test_fully_unparseable_response_carries_raw_text():
    with pytest.raises(ExtractionParseError) as info:
        parse_extraction("I could not find anything.", "c:0")
    assert info.value.raw == "I could not find anything."


def test_extract_retry_is_optional():
    answers = iter(["garbage", _ent("A")])
    chat = MockChat([("TEXT:", lambda req, m: next(answers))])
    chunk = Chunk("c:0", "c", "t", (0, 1))
    with pytest.raises(ExtractionParseError):
        extract_chunk(chunk, chat)
    answers = iter(["garbage", _ent("A")])
    assert extract_chunk(chunk, chat, retry=True).entities[0].name == "A"


def test_extract_empty_chunk_rejected():
    with pytest.raises(DataError):
        extract_chunk(Chunk("c:0", "c", "   ", (0, 3)), MockChat([]))


def test_one_record_two_entities_one_edge():
    rec = ExtractionRecord("c:0", [ExtractedEntity("A", "x", "first"), ExtractedEntity("B", "x", "second")], [ExtractedRelation("A", "B", "r", 3)])
    g = build_base_graph([rec], HashEmbedder(16))
    assert len(g.entities) == 2
    assert [e.kind for e in g.edges] == [EdgeKind.STRUCTURAL]
    for ent in g.entities.values():
        assert abs(np.linalg.norm(ent.embedding) - 1) < 1e-9
        assert ent.source_chunks == {"c:0"}


def test_same_name_in_two_chunks_becomes_one_node():
    recs = [
        ExtractionRecord("c:0", [ExtractedEntity("Port Lune", "location", "a city")]),
        ExtractionRecord("c:1", [ExtractedEntity("PORT LUNE", "location", "a harbour")]),
    ]
    g = build_base_graph(recs, HashEmbedder(16))
    (ent,) = g.entities.values()
    assert ent.source_chunks == {"c:0", "c:1"}


def test_unresolvable_relation_dropped_with_diagnostic():
    rec = ExtractionRecord("c:0", [ExtractedEntity("A", "x", "a"), ExtractedEntity("B", "x", "b")], [ExtractedRelation("A", "Zed", "r", 1)])
    diag = Diagnostics()
    g = build_base_graph([rec], HashEmbedder(16), diagnostics=diag)
    assert g.edges == ()
    assert diag["relation_unresolved"] == 1


def test_build_requires_records():
    with pytest.raises(DataError):
        build_base_graph([], HashEmbedder(16))


def _lcs(a, b):
    dp = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a)):
        for j in range(len(b)):
            dp[i + 1][j + 1] = dp[i][j] + 1 if a[i] == b[j] else max(dp[i][j + 1], dp[i + 1][j])
    return dp[-1][-1]


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet="abc .", max_size=10), st.text(alphabet="abc .", max_size=10))
def test_name_similarity_equals_lcs_indel_ratio(a, b):
    na, nb = normalize_name(a), normalize_name(b)
    expected = 1.0 if not na and not nb else 2 * _lcs(na, nb) / (len(na) + len(nb))
    assert name_similarity(a, b) == pytest.approx(expected, abs=1e-9)


def test_randomized_records_node_count_matches_union_find_oracle():
    rng = random.Random(7)
    bases = ["harbour master", "grain exchange", "river authority", "tram depot", "north quarry", "salt works", "city archive"]
    descriptions = {b: f"the {b} of the old town" for b in bases}

    def variant(name):
        return rng.choice([name, name.upper(), name.title(), name + ".", f"The {name}"[4:]])

    records = []
    for i in range(50):
        picked = rng.sample(bases, 3)
        ents = [ExtractedEntity(variant(b), "org", descriptions[b]) for b in picked]
        rels = [ExtractedRelation(ents[0].name, ents[1].name, "linked", 1.0)]
        records.append(ExtractionRecord(f"c:{i}", ents, rels))
    embedder = HashEmbedder(64)
    g = build_base_graph(records, embedder)

    # oracle: union-find over every raw mention pair, fuzzy by LCS ratio, cosine by numpy
    raw = [(e.name, e.description) for r in records for e in r.entities]
    vecs = np.array(embedder.embed([f"{n}: {d}" for n, d in raw]))
    parent = list(range(len(raw)))

    def find(i):
        while parent[i] != i:
            i = parent[i]
        return i

    for i in range(len(raw)):
        for j in range(i + 1, len(raw)):
            na, nb = normalize_name(raw[i][0]), normalize_name(raw[j][0])
            fuzzy = 2 * _lcs(na, nb) / (len(na) + len(nb)) >= 0.85
            if fuzzy or float(vecs[i] @ vecs[j]) >= 0.92:
                parent[find(j)] = find(i)
    assert len(g.entities) == len({find(i) for i in range(len(raw))}) == len(bases)


def test_fixture_corpus_counts_match_hand_count():
    chunks = chunk_corpus(load_corpus(FIXTURES / "corpus"))
    chat = MockChat.from_script(FIXTURES / "mock_script.json")
    diag = Diagnostics()
    g = build_base_graph(extract_corpus(chunks, chat, diag), HashEmbedder(64), chunks, diagnostics=diag)
    # hand count: 11 distinct entity names across the five documents, 11 distinct relation pairs
    assert len(g.entities) == 11
    assert len(g.edges) == 11
    assert diag["extraction_skipped_lines"] == 1  # the planted junk line in 02_prices
    assert g.entities["ent:port_lune"].source_chunks == {"02_prices:0", "03_riots:0", "04_football:0"}
    for e in g.edges:
        assert e.src in g.entities and e.dst in g.entities


def test_base_graph_is_deterministic():
    chunks = chunk_corpus(load_corpus(FIXTURES / "corpus"))
    def build():
        chat = MockChat.from_script(FIXTURES / "mock_script.json")
        return build_base_graph(extract_corpus(chunks, chat), HashEmbedder(64), chunks)

    assert build() == build()
