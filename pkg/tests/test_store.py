import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgrag import store
from kgrag.errors import IntegrityError, NotFoundError, StoreFormatError
from kgrag.store import ChunkNode, ImageNode, KnowledgeGraph, normalize_name

from oracles import random_store


def _graph_with_chunks(n=3):
    g = KnowledgeGraph()
    for i in range(n):
        g.add_chunk(ChunkNode(f"c{i}", f"text {i} <image>", "doc", (i, i + 3), 3))
    return g


def test_normalization_merge():
    g = _graph_with_chunks()
    a = g.add_entity("Stop Sign", "term", "octagon", "c0")
    b = g.add_entity("stop  sign", "term", "red", "c1")
    assert a == b
    assert len(g.entities) == 1
    node = g.entities[a]
    assert node.name == "stop sign"
    assert node.source_chunks == ["c0", "c1"]
    assert node.description == "octagon | red"
    assert g.chunks_of(a) == {"c0", "c1"}


def test_add_entity_unknown_chunk():
    with pytest.raises(IntegrityError):
        KnowledgeGraph().add_entity("stop sign", "term", "", "nope")


def test_merge_is_idempotent():
    g = _graph_with_chunks()
    g.add_entity("Fog", "term", "low visibility", "c0")
    before = g.records()
    g.add_entity("fog", "term", "low visibility", "c0")
    assert g.records() == before


def test_description_cap():
    g = _graph_with_chunks(2)
    eid = g.add_entity("x", "t", "a" * 4000, "c0")
    g.add_entity("x", "t", "b" * 4000, "c1")
    assert len(g.entities[eid].description) == store.MAX_DESCRIPTION_CHARS


def test_entity_count_equals_distinct_normalized_names():
    rng = random.Random(7)
    g = _graph_with_chunks(5)
    names = []
    for _ in range(100):
        parts = [rng.choice(["Stop", "stop", "SIGN", "sign", "Red", "light"]) for _ in range(rng.randint(1, 3))]
        name = (" " * rng.randint(0, 2)) + ("  " if rng.random() < 0.3 else " ").join(parts)
        names.append(name)
        g.add_entity(name, "t", "", f"c{rng.randrange(5)}")
    expected = {" ".join(n.lower().split()) for n in names}
    assert len(g.entities) == len(expected)
    assert {e.name for e in g.entities.values()} == expected


def test_neighbors():
    g = _graph_with_chunks()
    a = g.add_entity("a", "t", "", "c0")
    b = g.add_entity("b", "t", "", "c0")
    c = g.add_entity("c", "t", "", "c1")
    assert g.neighbors(c) == set()
    g.add_ee_edge(b, a, "near")
    assert g.neighbors(a) == {b} and g.neighbors(b) == {a}
    assert len(g.ee_edges) == 1
    (edge,) = g.ee_edges.values()
    assert edge.source <= edge.target
    with pytest.raises(NotFoundError):
        g.neighbors("missing")


def test_neighbors_and_chunks_match_raw_edges():
    g, _, _ = random_store(random.Random(3), max_entities=50, max_chunks=30)
    adj = {n: set() for n in g.entities}
    for e in g.ee_edges.values():
        adj[e.source].add(e.target)
        adj[e.target].add(e.source)
    for n in g.entities:
        assert g.neighbors(n) == adj[n]
        assert g.chunks_of(n) == {ec.chunk for ec in g.ec_edges if ec.entity == n}


def test_chunks_of_unknown():
    with pytest.raises(NotFoundError):
        KnowledgeGraph().chunks_of("nope")


def test_image_requires_placeholder():
    g = KnowledgeGraph()
    g.add_chunk(ChunkNode("c0", "no placeholder here", "d", (0, 3), 3))
    with pytest.raises(IntegrityError):
        g.add_image(ImageNode("img:1", "a.png", "cap", "c0"))


def test_chunk_span_consistency():
    with pytest.raises(IntegrityError):
        ChunkNode("c", "t", "d", (0, 5), 4)


names = st.text(alphabet="abcAB \t", min_size=1, max_size=8).filter(lambda s: s.strip())


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(names, st.integers(0, 3)), max_size=30), st.lists(st.tuples(st.integers(0, 29), st.integers(0, 29)), max_size=30))
def test_integrity_after_random_inserts(inserts, edges):
    g = _graph_with_chunks(4)
    ids = [g.add_entity(n, "t", "", f"c{c}") for n, c in inserts]
    for i, j in edges:
        if i < len(ids) and j < len(ids):
            g.add_ee_edge(ids[i], ids[j])
    g.validate()
    assert all(s <= t for s, t in g.ee_edges)


def test_empty_round_trip(tmp_path):
    g = KnowledgeGraph()
    store.save(g, tmp_path)
    assert store.load(tmp_path) == g


def test_round_trip_and_determinism(tmp_path):
    g, _, _ = random_store(random.Random(11), max_entities=120, max_chunks=80)
    g.meta = {"config_hash": "abc", "tokenizer_id": "ws-v1", "created": 0}
    store.save(g, tmp_path / "a")
    store.save(g, tmp_path / "b")
    for name in (store.GRAPH_FILE, store.MANIFEST_FILE):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    loaded = store.load(tmp_path / "a")
    assert loaded == g
    assert loaded.meta == g.meta
    assert json.loads((tmp_path / "a" / store.MANIFEST_FILE).read_text())["format_version"] == 1


def test_records_sorted_by_kind(tmp_path):
    g, _, _ = random_store(random.Random(5), max_entities=20, max_chunks=10)
    store.save(g, tmp_path)
    kinds = [json.loads(l)["kind"] for l in (tmp_path / store.GRAPH_FILE).read_text().splitlines()]
    assert kinds == sorted(kinds)


def test_load_reports_bad_line(tmp_path):
    g, _, _ = random_store(random.Random(2), max_entities=5, max_chunks=5)
    store.save(g, tmp_path)
    path = tmp_path / store.GRAPH_FILE
    lines = path.read_text().splitlines()
    lines[1] = "{not json"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(StoreFormatError) as err:
        store.load(tmp_path)
    assert "graph.jsonl" in str(err.value) and "line 2" in str(err.value)


def test_load_missing_files(tmp_path):
    with pytest.raises(StoreFormatError, match="manifest.json"):
        store.load(tmp_path)


def test_load_dangling_reference(tmp_path):
    g = _graph_with_chunks(1)
    g.add_entity("fog", "t", "", "c0")
    store.save(g, tmp_path)
    path = tmp_path / store.GRAPH_FILE
    text = path.read_text().replace('"chunk": "c0"', '"chunk": "c9"')
    path.write_text(text)
    with pytest.raises(StoreFormatError, match="graph.jsonl"):
        store.load(tmp_path)


def test_normalize_name():
    assert normalize_name("  Stop \t  SIGN ") == "stop sign"
