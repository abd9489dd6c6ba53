"""Grading model answers: strict multiple choice, ROUGE, SemScore and the combined score."""

from kgrag import (
    EchoProvider,
    EvalPipeline,
    HashEmbedder,
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

# Multiple choice is all-or-nothing: the chosen set must equal the gold set.
for raw in ["B", "The answer is (A) and (C).", "A, B and C", "a safe choice is C"]:
    picked = extract_options(raw, "ABCD")
    print(f"{raw!r:<30} -> {sorted(picked)}  correct for A,C: {grade_mcq(picked, {'A', 'C'})}")

# Open answers get unigram overlap, longest-common-subsequence overlap and embedding similarity.
reference = "slow down and keep headlights on"
embedder = HashEmbedder(dim=256)
print()
for cand in ["keep headlights on and slow down", "slow down", "speed up"]:
    r1, rl, sem = rouge1(cand, reference), rougeL(cand, reference), semscore(cand, reference, embedder)
    print(f"{cand!r:<36} R-1 {r1:6.2f}  R-L {rl:6.2f}  Sem {sem:6.2f}  overall {qa_overall(r1, rl, sem):6.2f}")

# The headline score weights the two halves by how many items each has.
print("\n300 mcq at 62.5 + 100 open at 30.5 ->", safedrive_score(62.5, 300, 30.5, 100))

# A whole run with a scripted offline model.
items = [
    QAItem("m1", "commonsense", "mcq_single", "What does a red octagon mean?",
           ["B"], [("A", "Yield"), ("B", "Stop"), ("C", "No entry")]),
    QAItem("m2", "corner_case", "mcq_multiple", "Which help in fog?",
           ["A", "C"], [("A", "Fog lights"), ("B", "High beams"), ("C", "Lower speed")]),
    QAItem("o1", "accident", "open", "What do you do after a minor collision?",
           "stop safely turn on hazard lights and exchange details"),
]
model = EchoProvider({
    "What does a red octagon mean?": "B",
    "Which help in fog?": "A and C",
    "What do you do after a minor collision?": "Stop safely and exchange insurance details.",
})
report = run_eval(items, EvalPipeline(generator=model, embedder=embedder, rag_enabled=False))
print()
print(report.table())
print("per task:", report.per_task)
