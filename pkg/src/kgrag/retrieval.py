"""Multi-scale subgraph retrieval.

Pipeline: keywords -> anchor entities (similarity threshold) -> h-hop
expansion over entity-entity edges -> top-k entity selection -> chunk
scoring that blends hop-decayed entity evidence with direct chunk
similarity.
"""

from __future__ import annotations

import json
import re
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from kgrag import embedding as emb
from kgrag.embedding import EmbeddingProvider, VectorIndex, quantize, rank
from kgrag.errors import ArgumentError, KGError
from kgrag.store import ChunkNode, EntityNode, ImageNode, KnowledgeGraph


@dataclass(frozen=True)
class RetrievalParams:
    delta1: float = 0.5
    hops: int = 2
    lam: float = 0.7
    alpha: float = 0.5
    top_k_entities: int = 5
    top_k_chunks: int = 3
    max_anchors_per_keyword: int = 10

    def __post_init__(self):
        if not 0 < self.delta1 <= 1:
            raise ArgumentError("delta1 must be in (0, 1]")
        if self.hops < 0:
            raise ArgumentError("hops must be >= 0")
        if not 0 < self.lam <= 1:
            raise ArgumentError("lam must be in (0, 1]")
        if not 0 <= self.alpha <= 1:
            raise ArgumentError("alpha must be in [0, 1]")
        for name in ("top_k_entities", "top_k_chunks", "max_anchors_per_keyword"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1")


# -- keyword extraction --------------------------------------------------

STOPWORDS = frozenset("""
a about above after again against all also am an and any are aren't as at be because been before
being below between both but by can can't cannot could couldn't did didn't do does doesn't doing
don't down during each either few for from further had hadn't has hasn't have haven't having he
her here hers herself him himself his how i if in into is isn't it it's its itself just let's
may me might more most must mustn't my myself no nor not now of off on once only or other ought
our ours ourselves out over own same shall she should shouldn't so some such than that that's
the their theirs them themselves then there there's these they this those through to too under
until up upon very was wasn't we were weren't what what's when when's where where's which while
who who's whom why why's will with within without won't would wouldn't you your yours yourself
yourselves
""".split())

_WORD = re.compile(r"[^\W_]+(?:['’-][^\W_]+)*")


class KeywordProvider(Protocol):
    provider_id: str

    def keywords(self, question: str) -> list[str]: ...


class SimpleKeywordExtractor:
    """Non-stopword tokens of length >= 3, lowercased, deduplicated in order."""

    provider_id = "simple-v1"

    def __init__(self, stopwords=STOPWORDS, min_length: int = 3):
        self.stopwords = frozenset(stopwords)
        self.min_length = min_length

    def keywords(self, question: str) -> list[str]:
        out: list[str] = []
        for tok in _WORD.findall(question.lower()):
            if len(tok) >= self.min_length and tok not in self.stopwords and tok not in out:
                out.append(tok)
        return out


KEYWORD_PROMPT = """\
List the critical keywords of the following traffic-safety question.
Return them on one line separated by commas, most important first.

QUESTION: {question}
"""


class LLMKeywordExtractor:
    provider_id = "llm"

    def __init__(self, chat):
        self.chat = chat

    def keywords(self, question: str) -> list[str]:
        raw = self.chat.complete(KEYWORD_PROMPT.format(question=question))
        out: list[str] = []
        for part in re.split(r"[,\n;]", raw):
            kw = part.strip().strip("-*•\"'").strip()
            if kw and kw.lower() not in (k.lower() for k in out):
                out.append(kw)
        return out


def extract_keywords(question: str, extractor: KeywordProvider) -> list[str]:
    """Keywords of ``question``; falls back to the whole question."""
    if not question.strip():
        raise ArgumentError("question is empty")
    kws = [k for k in extractor.keywords(question) if k.strip()]
    return kws or [question.strip()]


# -- indexes --------------------------------------------------------------

def entity_text(node: EntityNode) -> str:
    return f"{node.name}: {node.description}" if node.description else node.name


def image_text(node: ImageNode) -> str:
    return node.caption if node.caption.strip() else f"image {node.uri}"


@dataclass
class Indexes:
    """The three per-namespace indexes plus a merged entity+image view."""

    entity: VectorIndex
    image: VectorIndex
    chunk: VectorIndex
    nodes: VectorIndex = field(init=False, repr=False)

    def __post_init__(self):
        merged = {**self.entity.records, **self.image.records}
        dim = self.entity.dim or self.image.dim or self.chunk.dim
        self.nodes = VectorIndex("entity", merged, dim=dim if merged else None)

    def persist(self, path) -> None:
        for idx in (self.entity, self.image, self.chunk):
            emb.persist(idx, path)

    @classmethod
    def restore(cls, path, dim: int | None = None) -> "Indexes":
        return cls(*(emb.restore(path, ns, dim) for ns in ("entity", "image", "chunk")))

    def check(self, graph: KnowledgeGraph) -> None:
        """Every indexed id must exist in the graph under the matching kind."""
        for idx, nodes in ((self.entity, graph.entities), (self.image, graph.images), (self.chunk, graph.chunks)):
            missing = [i for i in idx.ids if i not in nodes]
            if missing:
                raise ArgumentError(f"{idx.namespace} index has ids not in graph: {missing[:3]}")


def build_indexes(graph: KnowledgeGraph, provider: EmbeddingProvider) -> Indexes:
    return Indexes(
        entity=emb.build_index("entity", {i: entity_text(n) for i, n in graph.entities.items()}, provider),
        image=emb.build_index("image", {i: image_text(n) for i, n in graph.images.items()}, provider),
        chunk=emb.build_index("chunk", {i: c.text for i, c in graph.chunks.items()}, provider),
    )


# -- pipeline stages -------------------------------------------------------

@dataclass
class QueryContext:
    question: str
    keywords: list[str]
    query_embedding: np.ndarray
    keyword_embeddings: list[np.ndarray]


@dataclass(frozen=True)
class CandidateEntity:
    id: str
    hop: int
    query_sim: float | None = None


@dataclass
class Providers:
    embedder: EmbeddingProvider
    keywords: KeywordProvider = field(default_factory=SimpleKeywordExtractor)


def make_context(question: str, providers: Providers) -> QueryContext:
    kws = extract_keywords(question, providers.keywords)
    return QueryContext(
        question=question,
        keywords=kws,
        query_embedding=providers.embedder.embed(question),
        keyword_embeddings=list(providers.embedder.embed_many(kws)),
    )


def init_anchors(ctx: QueryContext, node_index: VectorIndex, params: RetrievalParams) -> set[str]:
    """Nodes whose similarity to some keyword reaches ``delta1``.

    At most ``max_anchors_per_keyword`` highest-scoring hits are kept per
    keyword; the result is the union over keywords.
    """
    anchors: set[str] = set()
    if not len(node_index):
        return anchors
    for kv in ctx.keyword_embeddings:
        hits = node_index.top_k(kv, params.max_anchors_per_keyword, threshold=params.delta1)
        anchors.update(nid for nid, _ in hits)
    return anchors


def expand(graph: KnowledgeGraph, anchors, h: int) -> list[CandidateEntity]:
    """Multi-source BFS over entity-entity edges, at most ``h`` hops.

    Each node gets its minimum hop distance from any anchor; the output is
    sorted by (hop, id).
    """
    adj = graph.adjacency()
    dist = {a: 0 for a in anchors}
    frontier = deque(sorted(anchors))
    while frontier:
        node = frontier.popleft()
        d = dist[node]
        if d == h:
            continue
        for nb in adj.get(node, ()):
            if nb not in dist:
                dist[nb] = d + 1
                frontier.append(nb)
    return [CandidateEntity(n, d) for n, d in sorted(dist.items(), key=lambda kv: (kv[1], kv[0]))]


def attach_query_sims(cands: Sequence[CandidateEntity], ctx: QueryContext, node_index: VectorIndex) -> list[CandidateEntity]:
    if not cands:
        return []
    s = node_index.scores(ctx.query_embedding)
    return [CandidateEntity(c.id, c.hop, float(s[node_index.position(c.id)])) for c in cands]


def select_entities(cands: Sequence[CandidateEntity], ctx: QueryContext | None, params: RetrievalParams) -> list[CandidateEntity]:
    if any(c.query_sim is None for c in cands):
        raise ArgumentError("query_sim must be populated before selection")
    return sorted(cands, key=lambda c: (-c.query_sim, c.id))[: params.top_k_entities]


def score_chunks(
    graph: KnowledgeGraph,
    cands: Sequence[CandidateEntity],
    ctx: QueryContext,
    chunk_index: VectorIndex,
    params: RetrievalParams,
    trace: dict | None = None,
) -> list[tuple[str, float]]:
    """Rank chunks by ``alpha * graph_term + (1 - alpha) * s(q, c)``.

    The graph term of chunk c sums ``s(q, v) * lam ** hop(v)`` over the
    candidates v linked to c. Only chunks linked to some candidate are
    scored; with no such chunk the ranking falls back to plain vector
    similarity over every chunk.
    """
    if not len(chunk_index):
        return []
    s_chunk = chunk_index.scores(ctx.query_embedding)
    node_chunks = graph.node_chunk_map()
    graph_term: dict[str, float] = {}
    for c in sorted(cands, key=lambda c: c.id):
        if c.query_sim is None:
            raise ArgumentError("query_sim must be populated before chunk scoring")
        w = c.query_sim * params.lam ** c.hop
        for cid in node_chunks.get(c.id, ()):
            graph_term[cid] = graph_term.get(cid, 0.0) + w

    if not graph_term:
        if trace is not None:
            trace["degraded_to_vector"] = True
        order = rank(s_chunk)[: params.top_k_chunks]
        return [(chunk_index.ids[i], float(s_chunk[i])) for i in order]

    pool = sorted(graph_term)
    pos = np.fromiter((chunk_index.position(cid) for cid in pool), dtype=np.intp, count=len(pool))
    g = np.fromiter((graph_term[cid] for cid in pool), dtype=float, count=len(pool))
    total = quantize(params.alpha * g + (1.0 - params.alpha) * s_chunk[pos])
    order = rank(total)[: params.top_k_chunks]
    if trace is not None:
        trace["degraded_to_vector"] = False
        trace["chunk_pool"] = len(pool)
    return [(pool[i], float(total[i])) for i in order]


# -- result ----------------------------------------------------------------

@dataclass
class SubgraphResult:
    entities: list[CandidateEntity] = field(default_factory=list)
    nodes: dict[str, EntityNode | ImageNode] = field(default_factory=dict)
    images: list[ImageNode] = field(default_factory=list)
    chunks: list[tuple[ChunkNode, float]] = field(default_factory=list)
    trace: dict = field(default_factory=dict)

    @property
    def is_empty(self) -> bool:
        return not (self.entities or self.images or self.chunks)

    def to_dict(self, timings: bool = True) -> dict:
        ents = []
        for c in self.entities:
            node = self.nodes.get(c.id)
            item = {"id": c.id, "hop": c.hop, "query_sim": c.query_sim}
            if isinstance(node, EntityNode):
                item.update(name=node.name, entity_type=node.entity_type, description=node.description)
            elif isinstance(node, ImageNode):
                item.update(uri=node.uri, caption=node.caption)
            ents.append(item)
        trace = dict(self.trace)
        if not timings:
            trace.pop("timings_ms", None)
        return {
            "entities": ents,
            "images": [{"id": i.id, "uri": i.uri, "caption": i.caption} for i in self.images],
            "chunks": [{"id": c.id, "doc_id": c.doc_id, "score": s, "text": c.text} for c, s in self.chunks],
            "trace": trace,
        }

    def to_json(self, timings: bool = False) -> str:
        return json.dumps(self.to_dict(timings=timings), ensure_ascii=False, sort_keys=True)


def retrieve(
    graph: KnowledgeGraph,
    indexes: Indexes,
    question: str,
    params: RetrievalParams | None = None,
    providers: Providers | None = None,
) -> SubgraphResult:
    params = params or RetrievalParams()
    if providers is None:
        raise ArgumentError("providers are required")
    timings: dict[str, float] = {}
    trace: dict = {}
    stage = "keywords"
    try:
        t0 = time.perf_counter()
        ctx = make_context(question, providers)
        t1 = time.perf_counter()
        timings["keywords_embed"] = (t1 - t0) * 1e3

        stage = "anchors"
        anchors = init_anchors(ctx, indexes.nodes, params)
        t2 = time.perf_counter()
        timings["anchors"] = (t2 - t1) * 1e3

        stage = "expand"
        cands = attach_query_sims(expand(graph, anchors, params.hops), ctx, indexes.nodes)
        t3 = time.perf_counter()
        timings["expand"] = (t3 - t2) * 1e3

        stage = "select"
        selected = select_entities(cands, ctx, params)
        t4 = time.perf_counter()
        timings["select"] = (t4 - t3) * 1e3

        stage = "chunks"
        ranked = score_chunks(graph, cands, ctx, indexes.chunk, params, trace)
        t5 = time.perf_counter()
        timings["chunks"] = (t5 - t4) * 1e3
    except KGError as exc:
        exc.stage = stage
        raise

    frontier = [0] * (params.hops + 1)
    for c in cands:
        frontier[c.hop] += 1
    chunks = [(graph.chunks[cid], score) for cid, score in ranked]
    image_ids = {c.id for c in selected if c.id in graph.images}
    for chunk, _ in chunks:
        image_ids.update(n for n in graph.nodes_of_chunk(chunk.id) if n in graph.images)
    trace.update(
        keywords=ctx.keywords,
        anchors=sorted(anchors),
        frontier_sizes=frontier,
        candidates=len(cands),
        timings_ms=timings,
    )
    return SubgraphResult(
        entities=selected,
        nodes={c.id: graph.entities.get(c.id) or graph.images[c.id] for c in selected},
        images=[graph.images[i] for i in sorted(image_ids)],
        chunks=chunks,
        trace=trace,
    )


class Retriever:
    """Bundles a loaded store with its providers for repeated queries."""

    def __init__(self, graph: KnowledgeGraph, indexes: Indexes, providers: Providers, params: RetrievalParams | None = None):
        self.graph = graph
        self.indexes = indexes
        self.providers = providers
        self.params = params or RetrievalParams()

    @classmethod
    def from_store(cls, path, providers: Providers, params: RetrievalParams | None = None) -> "Retriever":
        from kgrag import store

        man = store.read_manifest(path)
        graph = store.load(path)
        indexes = Indexes.restore(path, dim=man.get("embedding", {}).get("dim"))
        indexes.check(graph)
        return cls(graph, indexes, providers, params)

    def retrieve(self, question: str, params: RetrievalParams | None = None) -> SubgraphResult:
        return retrieve(self.graph, self.indexes, question, params or self.params, self.providers)
