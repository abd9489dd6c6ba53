"""Heterogeneous knowledge graph: entity, image and chunk nodes joined by
entity-entity and entity-chunk edges, plus its on-disk JSON-lines format."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from kgrag.errors import IntegrityError, NotFoundError, StoreFormatError

FORMAT_VERSION = 1
DESCRIPTION_SEPARATOR = " | "
MAX_DESCRIPTION_CHARS = 4096
IMAGE_PLACEHOLDER = "<image>"

GRAPH_FILE = "graph.jsonl"
MANIFEST_FILE = "manifest.json"

_WS = re.compile(r"\s+")


def normalize_name(name: str) -> str:
    """Lowercase, trim and collapse internal whitespace."""
    return _WS.sub(" ", name.strip().lower())


def entity_id(name: str) -> str:
    norm = normalize_name(name)
    if not norm:
        raise IntegrityError("entity name is empty after normalization")
    return "ent:" + hashlib.sha1(norm.encode("utf-8")).hexdigest()[:16]


def chunk_id(doc_id: str, index: int) -> str:
    return f"chunk:{doc_id}:{index:05d}"


def image_id(doc_id: str, index: int) -> str:
    return f"img:{doc_id}:{index:04d}"


@dataclass
class EntityNode:
    id: str
    name: str
    entity_type: str
    description: str
    source_chunks: list[str] = field(default_factory=list)


@dataclass
class ImageNode:
    id: str
    uri: str
    caption: str
    placeholder_chunk: str


@dataclass
class ChunkNode:
    id: str
    text: str
    doc_id: str
    token_span: tuple[int, int]
    token_count: int

    def __post_init__(self):
        self.token_span = (int(self.token_span[0]), int(self.token_span[1]))
        if self.token_span[1] - self.token_span[0] != self.token_count:
            raise IntegrityError(
                f"chunk {self.id}: span {self.token_span} does not match token_count {self.token_count}"
            )


@dataclass
class EntityEntityEdge:
    source: str
    target: str
    relation: str = ""
    weight: float = 1.0

    def __post_init__(self):
        if self.source > self.target:
            self.source, self.target = self.target, self.source
        if self.weight < 0:
            raise IntegrityError("edge weight must be non-negative")

    @property
    def key(self) -> tuple[str, str]:
        return (self.source, self.target)


@dataclass(frozen=True, order=True)
class EntityChunkEdge:
    entity: str
    chunk: str


class KnowledgeGraph:
    """In-memory heterogeneous graph.

    Nodes live in id-keyed dicts; adjacency for both edge kinds is kept
    incrementally so ``neighbors`` and ``chunks_of`` are O(degree).
    """

    def __init__(self, meta: dict | None = None):
        self.entities: dict[str, EntityNode] = {}
        self.images: dict[str, ImageNode] = {}
        self.chunks: dict[str, ChunkNode] = {}
        self.ee_edges: dict[tuple[str, str], EntityEntityEdge] = {}
        self.ec_edges: set[EntityChunkEdge] = set()
        self.meta: dict = dict(meta or {})
        self._adj: dict[str, set[str]] = {}
        self._node_chunks: dict[str, set[str]] = {}
        self._chunk_nodes: dict[str, set[str]] = {}

    # -- construction -------------------------------------------------

    def add_chunk(self, chunk: ChunkNode) -> str:
        if chunk.id in self.chunks:
            raise IntegrityError(f"duplicate chunk id {chunk.id}")
        self.chunks[chunk.id] = chunk
        self._chunk_nodes.setdefault(chunk.id, set())
        return chunk.id

    def add_entity(self, name: str, entity_type: str, description: str, chunk: str) -> str:
        """Insert or merge an entity grounded in ``chunk``; returns its id."""
        if chunk not in self.chunks:
            raise IntegrityError(f"unknown chunk id {chunk!r}")
        eid = entity_id(name)
        node = self.entities.get(eid)
        if node is None:
            node = EntityNode(
                id=eid,
                name=normalize_name(name),
                entity_type=entity_type,
                description=description[:MAX_DESCRIPTION_CHARS],
                source_chunks=[],
            )
            self.entities[eid] = node
            self._adj.setdefault(eid, set())
            self._node_chunks.setdefault(eid, set())
        elif description and description not in node.description.split(DESCRIPTION_SEPARATOR):
            merged = node.description + DESCRIPTION_SEPARATOR + description if node.description else description
            node.description = merged[:MAX_DESCRIPTION_CHARS]
        if chunk not in node.source_chunks:
            node.source_chunks.append(chunk)
        self.add_ec_edge(eid, chunk)
        return eid

    def add_image(self, image: ImageNode) -> str:
        host = self.chunks.get(image.placeholder_chunk)
        if host is None:
            raise IntegrityError(f"unknown placeholder chunk {image.placeholder_chunk!r}")
        if IMAGE_PLACEHOLDER not in host.text:
            raise IntegrityError(f"chunk {host.id} has no {IMAGE_PLACEHOLDER} placeholder")
        if image.id in self.images or image.id in self.entities:
            raise IntegrityError(f"duplicate node id {image.id}")
        self.images[image.id] = image
        self._adj.setdefault(image.id, set())
        self._node_chunks.setdefault(image.id, set())
        self.add_ec_edge(image.id, image.placeholder_chunk)
        return image.id

    def add_ee_edge(self, a: str, b: str, relation: str = "", weight: float = 1.0) -> None:
        for node in (a, b):
            if node not in self.entities and node not in self.images:
                raise IntegrityError(f"unknown entity/image id {node!r}")
        if a == b:
            return
        edge = EntityEntityEdge(a, b, relation, weight)
        old = self.ee_edges.get(edge.key)
        if old is None:
            self.ee_edges[edge.key] = edge
            self._adj[a].add(b)
            self._adj[b].add(a)
        elif relation:
            labels = set(filter(None, old.relation.split("; "))) | {relation}
            old.relation = "; ".join(sorted(labels))

    def add_ec_edge(self, node: str, chunk: str) -> None:
        if node not in self.entities and node not in self.images:
            raise IntegrityError(f"unknown entity/image id {node!r}")
        if chunk not in self.chunks:
            raise IntegrityError(f"unknown chunk id {chunk!r}")
        self.ec_edges.add(EntityChunkEdge(node, chunk))
        self._node_chunks[node].add(chunk)
        self._chunk_nodes[chunk].add(node)

    # -- queries ------------------------------------------------------

    def has_node(self, node: str) -> bool:
        return node in self.entities or node in self.images or node in self.chunks

    def neighbors(self, node: str) -> set[str]:
        if node not in self.entities and node not in self.images:
            if node in self.chunks:
                return set()
            raise NotFoundError(f"unknown node {node!r}")
        return set(self._adj[node])

    def chunks_of(self, node: str) -> set[str]:
        if node not in self._node_chunks:
            raise NotFoundError(f"unknown entity/image {node!r}")
        return set(self._node_chunks[node])

    def nodes_of_chunk(self, chunk: str) -> set[str]:
        if chunk not in self._chunk_nodes:
            raise NotFoundError(f"unknown chunk {chunk!r}")
        return set(self._chunk_nodes[chunk])

    def adjacency(self) -> dict[str, set[str]]:
        """Read-only view of the undirected entity/image adjacency."""
        return self._adj

    def node_chunk_map(self) -> dict[str, set[str]]:
        return self._node_chunks

    def validate(self) -> None:
        """Raise IntegrityError if any structural invariant is broken."""
        for e in self.entities.values():
            if not e.source_chunks:
                raise IntegrityError(f"entity {e.id} has no source chunks")
            for c in e.source_chunks:
                if c not in self.chunks:
                    raise IntegrityError(f"entity {e.id} references missing chunk {c}")
                if EntityChunkEdge(e.id, c) not in self.ec_edges:
                    raise IntegrityError(f"entity {e.id} lacks edge to {c}")
        for img in self.images.values():
            host = self.chunks.get(img.placeholder_chunk)
            if host is None or IMAGE_PLACEHOLDER not in host.text:
                raise IntegrityError(f"image {img.id} has invalid placeholder chunk")
        for (s, t), edge in self.ee_edges.items():
            if s > t:
                raise IntegrityError(f"edge {s}-{t} not canonical")
            for n in (s, t):
                if n not in self.entities and n not in self.images:
                    raise IntegrityError(f"edge endpoint {n} missing")
        for ec in self.ec_edges:
            if ec.entity not in self.entities and ec.entity not in self.images:
                raise IntegrityError(f"ec edge entity {ec.entity} missing")
            if ec.chunk not in self.chunks:
                raise IntegrityError(f"ec edge chunk {ec.chunk} missing")

    def counts(self) -> dict[str, int]:
        return {
            "entity": len(self.entities),
            "image": len(self.images),
            "chunk": len(self.chunks),
            "ee_edge": len(self.ee_edges),
            "ec_edge": len(self.ec_edges),
        }

    def records(self) -> list[dict]:
        """Canonical, sorted record list used for persistence and equality."""
        out = []
        for c in sorted(self.chunks.values(), key=lambda n: n.id):
            out.append({
                "kind": "chunk", "id": c.id, "doc_id": c.doc_id, "text": c.text,
                "token_span": list(c.token_span), "token_count": c.token_count,
            })
        for ec in sorted(self.ec_edges):
            out.append({"kind": "ec_edge", "entity": ec.entity, "chunk": ec.chunk})
        for key in sorted(self.ee_edges):
            e = self.ee_edges[key]
            out.append({
                "kind": "ee_edge", "source": e.source, "target": e.target,
                "relation": e.relation, "weight": float(e.weight),
            })
        for e in sorted(self.entities.values(), key=lambda n: n.id):
            out.append({
                "kind": "entity", "id": e.id, "name": e.name, "entity_type": e.entity_type,
                "description": e.description, "source_chunks": list(e.source_chunks),
            })
        for i in sorted(self.images.values(), key=lambda n: n.id):
            out.append({
                "kind": "image", "id": i.id, "uri": i.uri, "caption": i.caption,
                "placeholder_chunk": i.placeholder_chunk,
            })
        out.append({"kind": "meta", **self.meta})
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self.records() == other.records()

    def __repr__(self) -> str:
        c = self.counts()
        return "KnowledgeGraph(" + ", ".join(f"{k}={v}" for k, v in c.items()) + ")"


# -- persistence ---------------------------------------------------------

def _dumps(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, sort_keys=True, allow_nan=False)


def save(graph: KnowledgeGraph, path, manifest: dict | None = None) -> None:
    """Write ``graph.jsonl`` and ``manifest.json`` under directory ``path``.

    Output is byte-deterministic for a given graph and manifest.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / GRAPH_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for rec in graph.records():
            fh.write(_dumps(rec) + "\n")
    man = {
        "format_version": FORMAT_VERSION,
        "config_hash": graph.meta.get("config_hash"),
        "tokenizer_id": graph.meta.get("tokenizer_id"),
    }
    man.update(manifest or {})
    with open(root / MANIFEST_FILE, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(man, ensure_ascii=False, sort_keys=True, indent=2) + "\n")


def read_manifest(path) -> dict:
    mpath = Path(path) / MANIFEST_FILE
    try:
        man = json.loads(mpath.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise StoreFormatError("manifest not found", mpath) from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise StoreFormatError(f"corrupt manifest: {exc}", mpath) from None
    if not isinstance(man, dict) or not isinstance(man.get("format_version"), int):
        raise StoreFormatError("manifest lacks integer format_version", mpath)
    if man["format_version"] > FORMAT_VERSION:
        raise StoreFormatError(f"unsupported format_version {man['format_version']}", mpath)
    return man


def _iter_records(path: Path) -> Iterable[tuple[int, dict]]:
    try:
        fh = open(path, encoding="utf-8")
    except FileNotFoundError:
        raise StoreFormatError("file not found", path) from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise StoreFormatError(f"invalid JSON: {exc.msg}", path, lineno) from None
            if not isinstance(rec, dict) or "kind" not in rec:
                raise StoreFormatError("record without 'kind'", path, lineno)
            yield lineno, rec


def load(path) -> KnowledgeGraph:
    root = Path(path)
    read_manifest(root)
    gpath = root / GRAPH_FILE
    buckets: dict[str, list[tuple[int, dict]]] = {
        k: [] for k in ("chunk", "entity", "image", "ee_edge", "ec_edge", "meta")
    }
    for lineno, rec in _iter_records(gpath):
        kind = rec["kind"]
        if kind not in buckets:
            raise StoreFormatError(f"unknown record kind {kind!r}", gpath, lineno)
        buckets[kind].append((lineno, rec))

    graph = KnowledgeGraph()
    lineno = 0
    try:
        for lineno, r in buckets["meta"]:
            graph.meta = {k: v for k, v in r.items() if k != "kind"}
        for lineno, r in buckets["chunk"]:
            graph.add_chunk(ChunkNode(r["id"], r["text"], r["doc_id"], tuple(r["token_span"]), r["token_count"]))
        for lineno, r in buckets["entity"]:
            node = EntityNode(r["id"], r["name"], r["entity_type"], r["description"], list(r["source_chunks"]))
            graph.entities[node.id] = node
            graph._adj.setdefault(node.id, set())
            graph._node_chunks.setdefault(node.id, set())
        for lineno, r in buckets["image"]:
            graph.add_image(ImageNode(r["id"], r["uri"], r["caption"], r["placeholder_chunk"]))
        for lineno, r in buckets["ec_edge"]:
            graph.add_ec_edge(r["entity"], r["chunk"])
        for lineno, r in buckets["ee_edge"]:
            if r["source"] > r["target"]:
                raise IntegrityError("edge endpoints not in canonical order")
            graph.add_ee_edge(r["source"], r["target"], r.get("relation", ""), float(r.get("weight", 1.0)))
        graph.validate()
    except (KeyError, TypeError, ValueError, IntegrityError) as exc:
        raise StoreFormatError(f"bad record: {exc}", gpath, lineno or None) from None
    return graph
