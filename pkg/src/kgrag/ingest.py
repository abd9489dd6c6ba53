"""Corpus ingestion: tokenization, sliding-window chunking, entity extraction
and assembly of the knowledge graph."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

from kgrag.errors import ArgumentError, BuildError, KGError, ParseError, StoreFormatError
from kgrag.store import (
    IMAGE_PLACEHOLDER,
    ChunkNode,
    ImageNode,
    KnowledgeGraph,
    chunk_id,
    image_id,
    normalize_name,
)

logger = logging.getLogger(__name__)

DEFAULT_TOKENIZER = "ws-v1"

_NON_WS = re.compile(r"\S+")
_IMAGE_MARKER = re.compile(r"<image\b(?=[^>]*\bsrc\s*=)([^>]*)>", re.IGNORECASE)
_ATTR = re.compile(r'([A-Za-z_][\w-]*)\s*=\s*"([^"]*)"')


# -- tokenization ---------------------------------------------------------

class WhitespaceTokenizer:
    tokenizer_id = DEFAULT_TOKENIZER

    def spans(self, text: str) -> list[tuple[int, int]]:
        return [m.span() for m in _NON_WS.finditer(text)]

    def tokenize(self, text: str) -> list[str]:
        return text.split()


TOKENIZERS = {DEFAULT_TOKENIZER: WhitespaceTokenizer()}


def get_tokenizer(tokenizer_id: str = DEFAULT_TOKENIZER):
    try:
        return TOKENIZERS[tokenizer_id]
    except KeyError:
        raise ArgumentError(f"unknown tokenizer {tokenizer_id!r}") from None


def tokenize(text: str, tokenizer_id: str = DEFAULT_TOKENIZER) -> list[str]:
    return get_tokenizer(tokenizer_id).tokenize(text)


# -- documents and chunking ----------------------------------------------

@dataclass
class Document:
    doc_id: str
    body: str
    source_path: str = ""


@dataclass(frozen=True)
class ChunkingConfig:
    max_chunk_tokens: int = 1200
    overlap_tokens: int = 100
    tokenizer_id: str = DEFAULT_TOKENIZER

    def __post_init__(self):
        if self.max_chunk_tokens < 1:
            raise ArgumentError("max_chunk_tokens must be >= 1")
        if not 0 <= self.overlap_tokens < self.max_chunk_tokens:
            raise ArgumentError("need 0 <= overlap_tokens < max_chunk_tokens")
        get_tokenizer(self.tokenizer_id)

    @property
    def stride(self) -> int:
        return self.max_chunk_tokens - self.overlap_tokens


@dataclass(frozen=True)
class ImagePlacement:
    """An image marker found in a document and the chunk hosting its placeholder."""

    uri: str
    caption: str
    token_index: int
    host_chunk: str


def window_spans(n_tokens: int, max_tokens: int, overlap: int) -> list[tuple[int, int]]:
    stride = max_tokens - overlap
    spans = []
    for start in range(0, n_tokens, stride):
        end = min(start + max_tokens, n_tokens)
        spans.append((start, end))
        if end == n_tokens:
            break
    return spans


def _substitute_images(body: str) -> tuple[str, list[tuple[int, str, str]]]:
    """Replace image markers by the placeholder token.

    Returns the new text and (char_offset, uri, caption) per marker.
    """
    parts, found, pos, out_len = [], [], 0, 0
    for m in _IMAGE_MARKER.finditer(body):
        attrs = dict(_ATTR.findall(m.group(1)))
        parts.append(body[pos:m.start()])
        out_len += m.start() - pos
        left = " " if m.start() > 0 and not body[m.start() - 1].isspace() else ""
        right = " " if m.end() < len(body) and not body[m.end()].isspace() else ""
        repl = f"{left}{IMAGE_PLACEHOLDER}{right}"
        found.append((out_len + len(left), attrs.get("src", ""), attrs.get("caption", "")))
        parts.append(repl)
        out_len += len(repl)
        pos = m.end()
    parts.append(body[pos:])
    return "".join(parts), found


def split_document(doc: Document, cfg: ChunkingConfig) -> tuple[list[ChunkNode], list[ImagePlacement]]:
    """Chunk a document and locate its image markers.

    An image is attributed to the first chunk whose window contains its
    placeholder token.
    """
    text, markers = _substitute_images(doc.body)
    spans = get_tokenizer(cfg.tokenizer_id).spans(text)
    windows = window_spans(len(spans), cfg.max_chunk_tokens, cfg.overlap_tokens)
    chunks = []
    for i, (s, e) in enumerate(windows):
        chunks.append(ChunkNode(
            id=chunk_id(doc.doc_id, i),
            text=text[spans[s][0]:spans[e - 1][1]],
            doc_id=doc.doc_id,
            token_span=(s, e),
            token_count=e - s,
        ))
    starts = {sp[0]: i for i, sp in enumerate(spans)}
    images = []
    for char_off, uri, caption in markers:
        tok = starts[char_off]
        host = next(i for i, (s, e) in enumerate(windows) if s <= tok < e)
        images.append(ImagePlacement(uri, caption, tok, chunks[host].id))
    return chunks, images


def chunk_document(doc: Document, cfg: ChunkingConfig | None = None) -> list[ChunkNode]:
    return split_document(doc, cfg or ChunkingConfig())[0]


# -- entity extraction ---------------------------------------------------

@dataclass
class ExtractedEntity:
    name: str
    entity_type: str
    description: str = ""
    relations: list[tuple[str, str]] = field(default_factory=list)


class ExtractorProvider(Protocol):
    provider_id: str

    def extract(self, text: str) -> list[ExtractedEntity]: ...


TRAFFIC_TERMS = (
    "traffic light", "red light", "green light", "yellow light", "stop sign", "yield sign",
    "speed limit", "seat belt", "crosswalk", "zebra crossing", "pedestrian", "cyclist",
    "intersection", "roundabout", "lane change", "emergency lane", "hard shoulder",
    "headlights", "hazard lights", "turn signal", "blind spot", "following distance",
    "school bus", "ambulance", "fire truck", "motorcycle", "truck", "highway", "expressway",
    "tunnel", "bridge", "underpass", "flooded road", "black ice", "fog", "rain", "snow",
    "overtaking", "right of way", "railway crossing", "parking", "collision", "accident",
    "airbag", "brake", "skid", "drunk driving", "fatigue", "child seat", "work zone",
)

_CAPITALIZED_SPAN = re.compile(r"\b[A-Z][\w'-]*(?:[ \t]+[A-Z][\w'-]*)+\b")
_SENTENCE = re.compile(r"[^.!?\n]+[.!?]?")


def _sentence_at(text: str, pos: int) -> str:
    for m in _SENTENCE.finditer(text):
        if m.start() <= pos < m.end():
            return m.group(0).strip()[:300]
    return ""


class RulesExtractor:
    """Offline extractor: capitalized multi-word spans plus dictionary terms.

    Entities are reported in order of first occurrence; a name is reported
    once per text. No relations are produced.
    """

    provider_id = "rules-v1"

    def __init__(self, dictionary: Sequence[str] | None = TRAFFIC_TERMS):
        terms = sorted({normalize_name(t) for t in (dictionary or ()) if t.strip()})
        self.dictionary = terms
        self._patterns = [
            (t, re.compile(r"(?<!\w)" + r"\s+".join(map(re.escape, t.split())) + r"(?!\w)", re.IGNORECASE))
            for t in terms
        ]

    def extract(self, text: str) -> list[ExtractedEntity]:
        hits: dict[str, tuple[int, str]] = {}
        for m in _CAPITALIZED_SPAN.finditer(text):
            name = normalize_name(m.group(0))
            if name not in hits:
                hits[name] = (m.start(), "proper_noun")
        for term, pat in self._patterns:
            m = pat.search(text)
            if m and (term not in hits or m.start() < hits[term][0]):
                hits[term] = (m.start(), "traffic_term")
        ordered = sorted(hits.items(), key=lambda kv: (kv[1][0], kv[0]))
        return [ExtractedEntity(name, etype, _sentence_at(text, pos)) for name, (pos, etype) in ordered]


EXTRACTION_PROMPT = """\
Extract the key entities from the traffic-safety text below.
Write one record per line using "<|>" as the field delimiter:
entity<|>NAME<|>TYPE<|>SHORT DESCRIPTION
relation<|>SOURCE NAME<|>TARGET NAME<|>RELATION LABEL
Write NONE if there are no entities. Output records only.

TEXT:
{text}
"""


def parse_extraction(raw: str) -> list[ExtractedEntity]:
    """Parse the delimited record format emitted by the LLM extractor."""
    entities: dict[str, ExtractedEntity] = {}
    relations: list[tuple[str, str, str]] = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        line = line.strip().strip("`")
        if not line or line.upper() == "NONE":
            continue
        fields = [f.strip() for f in line.split("<|>")]
        kind = fields[0].lower()
        if kind == "entity" and len(fields) == 4 and fields[1]:
            name = normalize_name(fields[1])
            if name not in entities:
                entities[name] = ExtractedEntity(name, fields[2] or "unknown", fields[3])
        elif kind == "relation" and len(fields) == 4 and fields[1] and fields[2]:
            relations.append((normalize_name(fields[1]), normalize_name(fields[2]), fields[3]))
        else:
            raise ParseError(f"malformed extraction record on line {lineno}", raw)
    for src, dst, label in relations:
        if src not in entities:
            entities[src] = ExtractedEntity(src, "unknown", "")
        entities[src].relations.append((dst, label))
    return list(entities.values())


class LLMExtractor:
    """Extractor backed by a chat-completion provider (see kgrag.generation)."""

    provider_id = "llm"

    def __init__(self, chat):
        self.chat = chat

    def extract(self, text: str) -> list[ExtractedEntity]:
        raw = self.chat.complete(EXTRACTION_PROMPT.format(text=text))
        return parse_extraction(raw)


def extract_entities(chunk: ChunkNode, extractor: ExtractorProvider) -> list[ExtractedEntity]:
    if not chunk.text.strip():
        raise ArgumentError(f"chunk {chunk.id} is empty")
    return extractor.extract(chunk.text)


# -- graph assembly ------------------------------------------------------

CO_OCCURRENCE = "co-occurs"
IMAGE_RELATION = "depicted-with"


def config_hash(cfg: ChunkingConfig, extractor_id: str, extra: dict | None = None) -> str:
    payload = {"chunking": asdict(cfg), "extractor": extractor_id, **(extra or {})}
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def build_graph(
    corpus: Sequence[Document],
    cfg: ChunkingConfig | None = None,
    extractor: ExtractorProvider | None = None,
    workers: int = 1,
    meta: dict | None = None,
) -> KnowledgeGraph:
    """Chunk, extract and merge a corpus into a new graph.

    Extraction may run on ``workers`` threads; merging happens in
    (doc_id, chunk index) order so the result does not depend on it.
    """
    cfg = cfg or ChunkingConfig()
    extractor = extractor or RulesExtractor()
    ids = [d.doc_id for d in corpus]
    if len(set(ids)) != len(ids):
        raise ArgumentError("duplicate doc_id in corpus")

    graph = KnowledgeGraph(meta={
        "config_hash": config_hash(cfg, extractor.provider_id),
        "tokenizer_id": cfg.tokenizer_id,
        "extractor_id": extractor.provider_id,
        **(meta or {}),
    })
    split = []
    for doc in sorted(corpus, key=lambda d: d.doc_id):
        chunks, images = split_document(doc, cfg)
        split.append((doc, chunks, images))
        for c in chunks:
            graph.add_chunk(c)

    jobs = [(doc, c) for doc, chunks, _ in split for c in chunks]

    def run(job):
        doc, c = job
        try:
            return extract_entities(c, extractor)
        except KGError as exc:
            raise BuildError(f"extraction failed: {exc}", doc.doc_id, c.id) from exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            extracted = list(pool.map(run, jobs))
    else:
        extracted = [run(j) for j in jobs]

    chunk_entities: dict[str, list[str]] = {}
    pending: list[tuple[str, str, str, str]] = []
    for (doc, c), ents in zip(jobs, extracted):
        local = []
        for ent in ents:
            eid = graph.add_entity(ent.name, ent.entity_type, ent.description, c.id)
            if eid not in local:
                local.append(eid)
            for other, label in ent.relations:
                pending.append((eid, other, label, c.id))
        chunk_entities[c.id] = local
        for i, a in enumerate(local):
            for b in local[i + 1:]:
                graph.add_ee_edge(a, b, CO_OCCURRENCE)

    for eid, other, label, cid in pending:
        if not normalize_name(other):
            continue
        # relation targets unknown to the graph are grounded in the chunk that mentions them
        oid = graph.add_entity(other, "unknown", "", cid)
        graph.add_ee_edge(eid, oid, label)

    for doc, _, images in split:
        for n, img in enumerate(images):
            node = ImageNode(image_id(doc.doc_id, n), img.uri, img.caption, img.host_chunk)
            graph.add_image(node)
            for eid in chunk_entities.get(img.host_chunk, []):
                graph.add_ee_edge(node.id, eid, IMAGE_RELATION)
    return graph


# -- corpus loading ------------------------------------------------------

def load_corpus(path) -> list[Document]:
    """Read a directory of .txt/.md files or a JSON-lines file of documents."""
    p = Path(path)
    if not p.exists():
        raise StoreFormatError("corpus path does not exist", p)
    docs = []
    if p.is_dir():
        for f in sorted(p.rglob("*")):
            if f.is_file() and f.suffix.lower() in (".txt", ".md"):
                body = f.read_text(encoding="utf-8")
                if not body.strip():
                    logger.warning("skipping empty document %s", f)
                    continue
                docs.append(Document(f.relative_to(p).as_posix(), body, str(f)))
        return docs
    with open(p, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                docs.append(Document(str(rec["doc_id"]), rec["body"], str(p)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise StoreFormatError(f"bad corpus record: {exc}", p, lineno) from None
    return docs
