"""Command-line entry point: ``kgrag index|query|eval|stats``.

Exit codes: 0 success, 1 usage/configuration/store error, 2 provider error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from kgrag import store
from kgrag.config import Config, load_config, make_embedder, make_extractor, make_generator, make_providers
from kgrag.errors import ArgumentError, BuildError, KGError, ProviderError, StoreFormatError
from kgrag.evaluation import EvalPipeline, load_items, run_eval
from kgrag.generation import GenerationRequest, generate
from kgrag.ingest import build_graph, config_hash, load_corpus
from kgrag.retrieval import Indexes, SubgraphResult, build_indexes, retrieve

EXIT_OK, EXIT_USAGE, EXIT_PROVIDER = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fail(message: str, code: int = EXIT_USAGE) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _positive(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def _open_store(path) -> tuple[dict, store.KnowledgeGraph, Indexes]:
    p = Path(path)
    if not p.is_dir():
        raise StoreFormatError("store directory not found", p)
    man = store.read_manifest(p)
    graph = store.load(p)
    dim = (man.get("embedding") or {}).get("dim")
    indexes = Indexes.restore(p, dim=dim)
    try:
        indexes.check(graph)
    except ArgumentError as exc:
        raise StoreFormatError(str(exc), p) from None
    return man, graph, indexes


# -- commands --------------------------------------------------------------

def cmd_index(corpus_path, store_path, config_path=None) -> int:
    try:
        cfg = load_config(config_path)
        docs = load_corpus(corpus_path)
        extractor = make_extractor(cfg.providers)
        embedder = make_embedder(cfg.providers)
        extra = {"embedding": embedder.describe()}
        if hasattr(extractor, "dictionary"):
            extra["dictionary"] = extractor.dictionary
        meta = {"config_hash": config_hash(cfg.chunking, extractor.provider_id, extra)}
        if os.environ.get("SOURCE_DATE_EPOCH"):
            meta["created"] = int(os.environ["SOURCE_DATE_EPOCH"])
        graph = build_graph(docs, cfg.chunking, extractor, workers=cfg.workers, meta=meta)
        indexes = build_indexes(graph, embedder)
        manifest = {
            "embedding": embedder.describe(),
            "extractor_id": extractor.provider_id,
            "counts": graph.counts(),
        }
        store.save(graph, store_path, manifest)
        indexes.persist(store_path)
    except BuildError as exc:
        return _fail(f"build failed: {exc}", EXIT_USAGE)
    except ProviderError as exc:
        return _fail(f"provider failure: {exc}", EXIT_PROVIDER)
    except (KGError, OSError) as exc:
        return _fail(str(exc))
    c = graph.counts()
    print(f"documents: {len(docs)}")
    print(f"nodes: entity={c['entity']} image={c['image']} chunk={c['chunk']}")
    print(f"edges: ee_edge={c['ee_edge']} ec_edge={c['ec_edge']}")
    print(f"embeddings: entity={len(indexes.entity)} image={len(indexes.image)} chunk={len(indexes.chunk)} dim={embedder.dim}")
    return EXIT_OK


def cmd_query(store_path, question, config_path=None, images=(), top_k_entities=None,
              top_k_chunks=None, no_rag=False, trace=False, as_json=False) -> int:
    try:
        cfg: Config = load_config(config_path).with_retrieval(
            top_k_entities=top_k_entities, top_k_chunks=top_k_chunks
        )
        man, graph, indexes = _open_store(store_path)
        providers = make_providers(cfg, man)
        generator = make_generator(cfg.providers)
        rag = cfg.rag_enabled and not no_rag
        ctx = retrieve(graph, indexes, question, cfg.retrieval, providers) if rag else SubgraphResult()
        req = GenerationRequest(question=question, media=list(images), context=ctx, mode="open")
        answer = generate(generator, req)
    except ProviderError as exc:
        return _fail(f"provider failure: {exc}", EXIT_PROVIDER)
    except KGError as exc:
        return _fail(str(exc))
    if as_json:
        out = {"answer": answer, **ctx.to_dict(timings=trace)}
        if not trace:
            out.pop("trace")
        else:
            out["trace"]["effective_config"] = cfg.to_dict()
            if req.trace:
                out["trace"]["prompt"] = req.trace
        print(json.dumps(out, ensure_ascii=False, sort_keys=True, indent=2))
    else:
        print(answer)
        if trace:
            t = ctx.to_dict(timings=True)["trace"]
            t["effective_config"] = cfg.to_dict()
            print(json.dumps(t, ensure_ascii=False, sort_keys=True, indent=2), file=sys.stderr)
    return EXIT_OK


def cmd_eval(store_path, qa_path, config_path=None, out_dir="eval-out", no_rag=False) -> int:
    try:
        cfg = load_config(config_path)
        items = load_items(qa_path)
        man, graph, indexes = _open_store(store_path)
        providers = make_providers(cfg, man)
        pipe = EvalPipeline(
            generator=make_generator(cfg.providers),
            embedder=providers.embedder,
            graph=graph,
            indexes=indexes,
            providers=providers,
            params=cfg.retrieval,
            rag_enabled=cfg.rag_enabled and not no_rag,
            workers=cfg.workers,
        )
        report = run_eval(items, pipe, out_dir)
    except KGError as exc:
        return _fail(str(exc))
    print(report.table(), end="")
    print(f"SafeDrive Score: {report.safedrive_score:.2f}  (failed items: {report.counts['failed']})")
    return EXIT_OK


def cmd_stats(store_path) -> int:
    try:
        man, graph, indexes = _open_store(store_path)
    except KGError as exc:
        return _fail(str(exc))
    c = graph.counts()
    print(f"nodes: entity={c['entity']} image={c['image']} chunk={c['chunk']}")
    print(f"edges: ee_edge={c['ee_edge']} ec_edge={c['ec_edge']}")
    print(
        "embeddings: "
        + " ".join(f"{idx.namespace}={len(idx)}x{idx.dim or 0}" for idx in (indexes.entity, indexes.image, indexes.chunk))
    )
    print("manifest: " + json.dumps(man, sort_keys=True))
    return EXIT_OK


# -- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kgrag", description="Knowledge-graph RAG for traffic-safety QA")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("index", help="build a store from a corpus")
    p.add_argument("corpus")
    p.add_argument("store")
    p.add_argument("--config")

    p = sub.add_parser("query", help="answer one question")
    p.add_argument("store")
    p.add_argument("question")
    p.add_argument("--config")
    p.add_argument("--image", action="append", default=[], metavar="URI")
    p.add_argument("--top-k-entities", type=_positive)
    p.add_argument("--top-k-chunks", type=_positive)
    p.add_argument("--no-rag", action="store_true")
    p.add_argument("--trace", action="store_true")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("eval", help="run the QA benchmark")
    p.add_argument("store")
    p.add_argument("qa")
    p.add_argument("--config")
    p.add_argument("--out", default="eval-out")
    p.add_argument("--no-rag", action="store_true")

    p = sub.add_parser("stats", help="describe a store")
    p.add_argument("store")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if args.command == "index":
        return cmd_index(args.corpus, args.store, args.config)
    if args.command == "query":
        return cmd_query(
            args.store, args.question, args.config, args.image, args.top_k_entities,
            args.top_k_chunks, args.no_rag, args.trace, args.json,
        )
    if args.command == "eval":
        return cmd_eval(args.store, args.qa, args.config, args.out, args.no_rag)
    return cmd_stats(args.store)


if __name__ == "__main__":
    sys.exit(main())
