"""How the retrieval parameters change what comes back.

Needs the store from 01_build_graph.py.
"""

from pathlib import Path

from kgrag import HashEmbedder, Indexes, Providers, RetrievalParams, load, retrieve

store = Path("demo-store")
if not store.is_dir():
    raise SystemExit("run demos/01_build_graph.py first")

graph = load(store)
indexes = Indexes.restore(store)
providers = Providers(HashEmbedder(dim=256))
question = "What should I do when water floods the underpass?"


def show(label, params):
    res = retrieve(graph, indexes, question, params, providers)
    t = res.trace
    chunks = ", ".join(f"{c.id.split(':', 1)[1]}={s:.3f}" for c, s in res.chunks)
    print(f"{label:<28} anchors={len(t['anchors']):<2} candidates={t['candidates']:<3} "
          f"fallback={t['degraded_to_vector']!s:<5} {chunks}")
    return res


print("question:", question)
res = show("defaults", RetrievalParams(delta1=0.3))
print("  keywords:", res.trace["keywords"])
print("  entities:", [getattr(n, "name", None) or n.uri for n in (res.nodes[c.id] for c in res.entities)])
print("  images:  ", [i.uri for i in res.images])

# alpha trades graph evidence against plain chunk similarity.
print()
for alpha in (0.0, 0.5, 1.0):
    show(f"alpha={alpha}", RetrievalParams(delta1=0.3, alpha=alpha))

# More hops pull in more candidate entities, each discounted by lambda per hop.
print()
for hops in (0, 1, 2, 3):
    show(f"hops={hops}", RetrievalParams(delta1=0.3, hops=hops))

# A strict anchor threshold can leave nothing to expand; scoring then falls back to vectors.
print()
for delta1 in (0.2, 0.4, 0.9):
    show(f"delta1={delta1}", RetrievalParams(delta1=delta1))

print("\nstage timings (ms):", {k: round(v, 3) for k, v in res.trace["timings_ms"].items()})
