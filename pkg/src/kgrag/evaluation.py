"""QA benchmark grading: strict multiple-choice matching, ROUGE-1/ROUGE-L,
embedding-based SemScore and the count-weighted composite score."""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from kgrag.embedding import EmbeddingProvider, similarity
from kgrag.errors import ArgumentError, KGError, StoreFormatError
from kgrag.generation import PROMPT_VERSION, GenerationProvider, GenerationRequest, generate
from kgrag.retrieval import Indexes, Providers, RetrievalParams, retrieve
from kgrag.store import KnowledgeGraph

logger = logging.getLogger(__name__)

TASKS = ("accident", "corner_case", "commonsense")
KINDS = ("mcq_single", "mcq_multiple", "open")
NORMALIZATION_VERSION = "rouge-norm-v1"


@dataclass
class QAItem:
    id: str
    task: str
    kind: str
    question: str
    gold: list[str] | str
    options: list[tuple[str, str]] | None = None
    media: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ArgumentError(f"item {self.id}: unknown task {self.task!r}")
        if self.kind not in KINDS:
            raise ArgumentError(f"item {self.id}: unknown kind {self.kind!r}")
        if self.kind == "open":
            if not isinstance(self.gold, str) or not self.gold.strip():
                raise ArgumentError(f"item {self.id}: open item needs a reference answer")
            return
        self.options = [tuple(o) for o in (self.options or [])]
        labels = {label for label, _ in self.options}
        gold = [self.gold] if isinstance(self.gold, str) else list(self.gold)
        self.gold = sorted(set(gold))
        if len(self.options) < 2 or not self.gold or not set(self.gold) <= labels:
            raise ArgumentError(f"item {self.id}: mcq needs >=2 options and gold among the labels")

    @property
    def labels(self) -> set[str]:
        return {label for label, _ in self.options or []}

    @classmethod
    def from_dict(cls, d: dict) -> "QAItem":
        opts = d.get("options")
        if isinstance(opts, dict):
            opts = sorted(opts.items())
        return cls(
            id=str(d["id"]), task=d["task"], kind=d["kind"], question=d["question"],
            gold=d["gold"], options=opts, media=list(d.get("media") or []),
        )


def load_items(path) -> list[QAItem]:
    items = []
    p = Path(path)
    try:
        fh = open(p, encoding="utf-8")
    except OSError as exc:
        raise StoreFormatError(f"cannot read QA file: {exc.strerror}", p) from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                items.append(QAItem.from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise StoreFormatError(f"invalid JSON: {exc.msg}", p, lineno) from None
            except (KeyError, TypeError, ArgumentError) as exc:
                raise StoreFormatError(f"bad QA item: {exc}", p, lineno) from None
    return items


# -- multiple choice -----------------------------------------------------

def extract_options(raw: str, valid_labels: Iterable[str]) -> set[str]:
    """Option letters mentioned in a model answer.

    Capital letters count when they stand alone (``B``, ``(B)``, ``B)``,
    ``B.``). Lowercase letters count only in the bracketed or punctuated
    forms, so the article "a" in prose is not read as option A.
    """
    labels = {label.upper() for label in valid_labels}
    if not labels:
        raise ArgumentError("valid_labels is empty")
    cls = "".join(sorted(labels))
    upper = re.compile(rf"(?<![A-Za-z0-9])\(?([{cls}])(?![A-Za-z0-9])")
    lower = re.compile(rf"(?<![A-Za-z0-9])(?:\(([{cls.lower()}])\)|([{cls.lower()}])[).:])(?![A-Za-z0-9])")
    found = {m.group(1) for m in upper.finditer(raw)}
    for m in lower.finditer(raw):
        found.add((m.group(1) or m.group(2)).upper())
    return found


def grade_mcq(extracted: set[str], gold: set[str]) -> bool:
    """Strict grading: correct only when every valid option and nothing else is chosen."""
    if not gold:
        raise ArgumentError("gold is empty")
    return set(extracted) == set(gold)


# -- open-ended metrics ------------------------------------------------------

def normalize_tokens(text: str) -> list[str]:
    """Lowercase, delete punctuation, split on whitespace."""
    text = "".join(" " if unicodedata.category(ch).startswith("Z") else ch for ch in text.lower())
    text = "".join(ch for ch in text if not unicodedata.category(ch).startswith("P"))
    return text.split()


def _f1(overlap: int, n_cand: int, n_ref: int) -> float:
    if overlap == 0:
        return 0.0
    p, r = overlap / n_cand, overlap / n_ref
    return 2 * p * r / (p + r)


def _prepare(candidate: str, reference: str) -> tuple[list[str], list[str]]:
    ref = normalize_tokens(reference)
    if not ref:
        raise ArgumentError("reference is empty after normalization")
    return normalize_tokens(candidate), ref


def rouge1(candidate: str, reference: str, recall_only: bool = False) -> float:
    cand, ref = _prepare(candidate, reference)
    if not cand:
        return 0.0
    overlap = sum((Counter(cand) & Counter(ref)).values())
    if recall_only:
        return 100.0 * overlap / len(ref)
    return 100.0 * _f1(overlap, len(cand), len(ref))


def lcs_length(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rougeL(candidate: str, reference: str, recall_only: bool = False) -> float:
    cand, ref = _prepare(candidate, reference)
    if not cand:
        return 0.0
    lcs = lcs_length(cand, ref)
    if recall_only:
        return 100.0 * lcs / len(ref)
    return 100.0 * _f1(lcs, len(cand), len(ref))


def semscore(candidate: str, reference: str, provider: EmbeddingProvider) -> float:
    if not candidate.strip() or not reference.strip():
        raise ArgumentError("semscore needs two non-empty texts")
    cos = similarity(provider.embed(candidate), provider.embed(reference))
    return 100.0 * min(max(cos, 0.0), 1.0)


def qa_overall(r1: float, rl: float, sem: float) -> float:
    return round((r1 + rl + sem) / 3, 2)


def mcq_overall(single_acc: float, n_single: int, multiple_acc: float, n_multiple: int) -> float:
    n = n_single + n_multiple
    if n == 0:
        return 0.0
    return round((n_single * single_acc + n_multiple * multiple_acc) / n, 2)


def safedrive_score(mcq: float, n_mcq: int, qa: float, n_qa: int) -> float:
    if n_mcq < 0 or n_qa < 0 or n_mcq + n_qa == 0:
        raise ArgumentError("need a positive total item count")
    return round((n_mcq * mcq + n_qa * qa) / (n_mcq + n_qa), 2)


# -- harness -----------------------------------------------------------------

@dataclass
class GradedItem:
    id: str
    task: str
    kind: str
    raw_output: str
    extracted: list[str] | str | None = None
    mcq_correct: bool | None = None
    rouge1: float | None = None
    rougeL: float | None = None
    semscore: float | None = None
    error: str | None = None


@dataclass
class ReportCard:
    mcq_single_acc: float
    mcq_multiple_acc: float
    mcq_overall: float
    qa_r1: float
    qa_rl: float
    qa_sem: float
    qa_overall: float
    safedrive_score: float
    counts: dict[str, int]
    per_task: dict[str, float] = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, sort_keys=True, indent=2) + "\n"

    def table(self) -> str:
        head = f"{'Single':>8} {'Multiple':>8} {'Overall':>8} | {'R-1':>7} {'R-L':>7} {'SemScore':>8} {'Overall':>8} | {'SafeDrive':>9}"
        row = (
            f"{self.mcq_single_acc:8.2f} {self.mcq_multiple_acc:8.2f} {self.mcq_overall:8.2f} | "
            f"{self.qa_r1:7.2f} {self.qa_rl:7.2f} {self.qa_sem:8.2f} {self.qa_overall:8.2f} | "
            f"{self.safedrive_score:9.2f}"
        )
        counts = ", ".join(f"{k}={v}" for k, v in self.counts.items())
        return f"{'Multi-choice':^26} | {'Question & Answer':^34} |\n{head}\n{row}\n({counts})\n"


@dataclass
class EvalPipeline:
    """Everything needed to answer benchmark items.

    With ``rag_enabled`` false (or no graph) the model sees only the
    question and options.
    """

    generator: GenerationProvider
    embedder: EmbeddingProvider
    graph: KnowledgeGraph | None = None
    indexes: Indexes | None = None
    providers: Providers | None = None
    params: RetrievalParams = field(default_factory=RetrievalParams)
    rag_enabled: bool = True
    workers: int = 1


def grade_item(item: QAItem, raw: str, embedder: EmbeddingProvider) -> GradedItem:
    g = GradedItem(item.id, item.task, item.kind, raw)
    if item.kind == "open":
        g.extracted = " ".join(normalize_tokens(raw))
        g.rouge1 = rouge1(raw, item.gold)
        g.rougeL = rougeL(raw, item.gold)
        g.semscore = semscore(raw, item.gold, embedder) if raw.strip() else 0.0
    else:
        ext = extract_options(raw, item.labels)
        g.extracted = sorted(ext)
        g.mcq_correct = grade_mcq(ext, set(item.gold))
    return g


def _answer(item: QAItem, pipe: EvalPipeline) -> GradedItem:
    try:
        ctx = None
        if pipe.rag_enabled and pipe.graph is not None:
            ctx = retrieve(pipe.graph, pipe.indexes, item.question, pipe.params, pipe.providers)
        req = GenerationRequest(
            question=item.question,
            options=item.options if item.kind != "open" else None,
            media=item.media,
            context=ctx,
            mode="open" if item.kind == "open" else "mcq",
        )
        raw = generate(pipe.generator, req)
    except KGError as exc:
        logger.warning("item %s failed: %s", item.id, exc)
        g = GradedItem(item.id, item.task, item.kind, "", error=f"{type(exc).__name__}: {exc}")
        if item.kind == "open":
            g.rouge1 = g.rougeL = g.semscore = 0.0
        else:
            g.mcq_correct = False
        return g
    return grade_item(item, raw, pipe.embedder)


def _mean(xs: list[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def aggregate(graded: Sequence[GradedItem]) -> ReportCard:
    """Combine graded items. Failed items count as wrong / zero-score.

    Reported figures are rounded to 2 decimals; composites are computed
    from the unrounded means.
    """

    def card(items):
        single = [100.0 * g.mcq_correct for g in items if g.kind == "mcq_single"]
        multi = [100.0 * g.mcq_correct for g in items if g.kind == "mcq_multiple"]
        opens = [g for g in items if g.kind == "open"]
        s_acc, m_acc = _mean(single), _mean(multi)
        n_mcq = len(single) + len(multi)
        mcq = (len(single) * s_acc + len(multi) * m_acc) / n_mcq if n_mcq else 0.0
        r1, rl, sem = (_mean([getattr(g, f) for g in opens]) for f in ("rouge1", "rougeL", "semscore"))
        qa = (r1 + rl + sem) / 3
        total = safedrive_score(mcq, n_mcq, qa, len(opens)) if items else 0.0
        return s_acc, m_acc, mcq, r1, rl, sem, qa, total, len(single), len(multi), len(opens)

    s_acc, m_acc, mcq, r1, rl, sem, qa, total, ns, nm, no = card(graded)
    per_task = {}
    for task in TASKS:
        sub = [g for g in graded if g.task == task]
        if sub:
            per_task[task] = card(sub)[7]
    return ReportCard(
        mcq_single_acc=round(s_acc, 2), mcq_multiple_acc=round(m_acc, 2), mcq_overall=round(mcq, 2),
        qa_r1=round(r1, 2), qa_rl=round(rl, 2), qa_sem=round(sem, 2), qa_overall=qa_overall(r1, rl, sem),
        safedrive_score=total,
        counts={"mcq_single": ns, "mcq_multiple": nm, "open": no, "failed": sum(g.error is not None for g in graded)},
        per_task=per_task,
    )


def run_eval(items: Sequence[QAItem], pipeline: EvalPipeline, out_dir=None) -> ReportCard:
    """Answer and grade every item, optionally writing report.json and items.jsonl."""
    if not items:
        raise ArgumentError("no items to evaluate")
    ids = [i.id for i in items]
    if len(set(ids)) != len(ids):
        raise ArgumentError("duplicate item ids")
    if pipeline.workers > 1:
        with ThreadPoolExecutor(max_workers=pipeline.workers) as pool:
            graded = list(pool.map(lambda it: _answer(it, pipeline), items))
    else:
        graded = [_answer(it, pipeline) for it in items]
    graded.sort(key=lambda g: g.id)
    report = aggregate(graded)
    report.info = {
        "prompt_version": PROMPT_VERSION,
        "normalization": NORMALIZATION_VERSION,
        "generator": pipeline.generator.provider_id,
        "embedder": pipeline.embedder.provider_id,
        "rag_enabled": bool(pipeline.rag_enabled and pipeline.graph is not None),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json(), encoding="utf-8")
        with open(out / "items.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            for g in graded:
                fh.write(json.dumps(asdict(g), ensure_ascii=False, sort_keys=True) + "\n")
    return report
