"""Knowledge-graph retrieval-augmented generation for traffic-safety QA."""

from kgrag.embedding import HashEmbedder, VectorIndex, similarity
from kgrag.evaluation import (
    EvalPipeline,
    QAItem,
    extract_options,
    grade_mcq,
    qa_overall,
    rouge1,
    rougeL,
    run_eval,
    safedrive_score,
    semscore,
)
from kgrag.generation import EchoProvider, GenerationRequest, assemble_prompt, generate
from kgrag.ingest import ChunkingConfig, Document, RulesExtractor, build_graph, chunk_document, tokenize
from kgrag.retrieval import Indexes, Providers, RetrievalParams, Retriever, SubgraphResult, build_indexes, retrieve
from kgrag.store import KnowledgeGraph, load, save

__version__ = "0.1.0"

__all__ = [
    "ChunkingConfig", "Document", "EchoProvider", "EvalPipeline", "GenerationRequest", "HashEmbedder",
    "Indexes", "KnowledgeGraph", "Providers", "QAItem", "RetrievalParams", "Retriever", "RulesExtractor",
    "SubgraphResult", "VectorIndex", "assemble_prompt", "build_graph", "build_indexes", "chunk_document",
    "extract_options", "generate", "grade_mcq", "load", "qa_overall", "retrieve", "rouge1", "rougeL",
    "run_eval", "safedrive_score", "save", "semscore", "similarity", "tokenize",
]
