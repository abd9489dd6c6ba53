"""INI-style configuration and provider construction.

Example::

    [chunking]
    max_chunk_tokens = 1200
    overlap_tokens = 100
    tokenizer_id = ws-v1

    [retrieval]
    delta1 = 0.5
    hops = 2
    lambda = 0.7
    alpha = 0.5
    top_k_entities = 5
    top_k_chunks = 3
    max_anchors_per_keyword = 10

    [providers]
    embedding = hash-v1          ; or: remote (EMBED_API_URL / EMBED_API_KEY)
    embedding_dim = 256
    embedding_seed = 0
    generation = echo            ; or: openai-compatible (LLM_API_URL / LLM_API_KEY)
    model_name = gpt-4o-mini
    max_context_tokens = 8192
    echo_answers =               ; JSON file mapping question -> scripted answer
    extractor = rules-v1         ; or: llm
    extractor_dictionary =       ; text file, one term per line
    keywords = simple-v1         ; or: llm

    [pipeline]
    rag_enabled = true
    workers = 1

Relative file paths are resolved against the config file's directory.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from kgrag.embedding import HashEmbedder, RemoteEmbedder
from kgrag.errors import ArgumentError, StoreFormatError
from kgrag.generation import ChatCompletionsProvider, EchoProvider
from kgrag.ingest import TRAFFIC_TERMS, ChunkingConfig, LLMExtractor, RulesExtractor
from kgrag.retrieval import LLMKeywordExtractor, Providers, RetrievalParams, SimpleKeywordExtractor

EMBEDDING_PROVIDERS = ("hash-v1", "remote")
GENERATION_PROVIDERS = ("echo", "openai-compatible")
EXTRACTORS = ("rules-v1", "llm")
KEYWORD_PROVIDERS = ("simple-v1", "llm")


@dataclass
class ProviderConfig:
    embedding: str = "hash-v1"
    embedding_dim: int = 256
    embedding_seed: int = 0
    generation: str = "echo"
    model_name: str = "gpt-4o-mini"
    max_context_tokens: int = 8192
    echo_answers: str = ""
    extractor: str = "rules-v1"
    extractor_dictionary: str = ""
    keywords: str = "simple-v1"

    def __post_init__(self):
        for value, allowed, name in (
            (self.embedding, EMBEDDING_PROVIDERS, "embedding"),
            (self.generation, GENERATION_PROVIDERS, "generation"),
            (self.extractor, EXTRACTORS, "extractor"),
            (self.keywords, KEYWORD_PROVIDERS, "keywords"),
        ):
            if value not in allowed:
                raise ArgumentError(f"unknown {name} provider {value!r} (expected one of {', '.join(allowed)})")


@dataclass
class Config:
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    retrieval: RetrievalParams = field(default_factory=RetrievalParams)
    providers: ProviderConfig = field(default_factory=ProviderConfig)
    rag_enabled: bool = True
    workers: int = 1

    def to_dict(self) -> dict:
        return {
            "chunking": asdict(self.chunking),
            "retrieval": asdict(self.retrieval),
            "providers": asdict(self.providers),
            "rag_enabled": self.rag_enabled,
            "workers": self.workers,
        }

    def with_retrieval(self, **overrides) -> "Config":
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, retrieval=replace(self.retrieval, **overrides)) if overrides else self


_RETRIEVAL_KEYS = {
    "delta1": ("delta1", float), "hops": ("hops", int), "lambda": ("lam", float),
    "alpha": ("alpha", float), "top_k_entities": ("top_k_entities", int),
    "top_k_chunks": ("top_k_chunks", int), "max_anchors_per_keyword": ("max_anchors_per_keyword", int),
}


def load_config(path=None) -> Config:
    """Read a config file over the built-in defaults (``None`` -> defaults)."""
    if path is None:
        return Config()
    p = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(p, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise StoreFormatError(f"cannot read config: {exc.strerror}", p) from None
    except configparser.Error as exc:
        raise StoreFormatError(f"invalid config: {exc}", p) from None
    try:
        ch = parser["chunking"] if parser.has_section("chunking") else {}
        chunking = ChunkingConfig(
            max_chunk_tokens=int(ch.get("max_chunk_tokens", 1200)),
            overlap_tokens=int(ch.get("overlap_tokens", 100)),
            tokenizer_id=ch.get("tokenizer_id", "ws-v1"),
        )
        rkw = {}
        if parser.has_section("retrieval"):
            for key, value in parser["retrieval"].items():
                if key not in _RETRIEVAL_KEYS:
                    raise ArgumentError(f"unknown retrieval key {key!r}")
                name, conv = _RETRIEVAL_KEYS[key]
                rkw[name] = conv(value)
        retrieval = RetrievalParams(**rkw)
        pkw = {}
        if parser.has_section("providers"):
            defaults = ProviderConfig()
            for key, value in parser["providers"].items():
                if not hasattr(defaults, key):
                    raise ArgumentError(f"unknown providers key {key!r}")
                conv = type(getattr(defaults, key))
                if key in ("echo_answers", "extractor_dictionary") and value:
                    value = str((p.parent / value).resolve())
                pkw[key] = conv(value)
        providers = ProviderConfig(**pkw)
        pipe = parser["pipeline"] if parser.has_section("pipeline") else None
        rag = pipe.getboolean("rag_enabled", True) if pipe is not None else True
        workers = pipe.getint("workers", 1) if pipe is not None else 1
    except (ValueError, ArgumentError) as exc:
        raise StoreFormatError(f"invalid config: {exc}", p) from None
    return Config(chunking, retrieval, providers, rag, workers)


# -- provider factories ------------------------------------------------------

def make_embedder(pc: ProviderConfig, manifest: dict | None = None):
    """Build the embedder; a store manifest, when given, pins provider and dim."""
    desc = (manifest or {}).get("embedding") or {}
    kind = desc.get("provider", pc.embedding)
    if kind == "hash-v1":
        return HashEmbedder(dim=int(desc.get("dim", pc.embedding_dim)), seed=int(desc.get("seed", pc.embedding_seed)))
    if kind == "remote":
        return RemoteEmbedder(dim=desc.get("dim"))
    raise ArgumentError(f"unknown embedding provider {kind!r}")


def make_generator(pc: ProviderConfig):
    if pc.generation == "echo":
        answers = {}
        if pc.echo_answers:
            try:
                answers = json.loads(Path(pc.echo_answers).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise StoreFormatError(f"cannot read echo answers: {exc}", pc.echo_answers) from None
        return EchoProvider(answers, max_context_tokens=pc.max_context_tokens)
    return ChatCompletionsProvider(model_name=pc.model_name, max_context_tokens=pc.max_context_tokens)


def make_extractor(pc: ProviderConfig):
    if pc.extractor == "llm":
        return LLMExtractor(ChatCompletionsProvider(model_name=pc.model_name))
    terms = TRAFFIC_TERMS
    if pc.extractor_dictionary:
        try:
            lines = Path(pc.extractor_dictionary).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise StoreFormatError(f"cannot read dictionary: {exc.strerror}", pc.extractor_dictionary) from None
        terms = [t for t in lines if t.strip() and not t.startswith("#")]
    return RulesExtractor(terms)


def make_keywords(pc: ProviderConfig):
    if pc.keywords == "llm":
        return LLMKeywordExtractor(ChatCompletionsProvider(model_name=pc.model_name))
    return SimpleKeywordExtractor()


def make_providers(cfg: Config, manifest: dict | None = None) -> Providers:
    return Providers(embedder=make_embedder(cfg.providers, manifest), keywords=make_keywords(cfg.providers))
