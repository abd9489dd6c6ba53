"""Build a small knowledge graph from driving notes and look inside it.

Run from the repository root:  python demos/01_build_graph.py
"""

from pathlib import Path

from _corpus import documents
from kgrag import ChunkingConfig, HashEmbedder, RulesExtractor, build_graph, build_indexes, save

docs = documents()
print(f"{len(docs)} documents, {sum(len(d.body.split()) for d in docs)} whitespace tokens")

# Small chunks so even these short notes split into several windows.
cfg = ChunkingConfig(max_chunk_tokens=30, overlap_tokens=5)
extractor = RulesExtractor(["hazard lights", "black ice", "fog lights", "headlights", "emergency exit", "bridge", "fog"])
graph = build_graph(docs, cfg, extractor)
print("counts:", graph.counts())

# Chunks keep their token span so the window layout is easy to inspect.
for chunk in sorted(graph.chunks.values(), key=lambda c: c.id):
    print(f"  {chunk.id:<26} tokens {chunk.token_span}  {chunk.text[:50]!r}")

# Entity names are normalised, so "Flooded Underpass" and "flooded underpass" are one node.
print("\nentities and the chunks that mention them:")
for ent in sorted(graph.entities.values(), key=lambda e: e.name):
    print(f"  {ent.name:<22} {sorted(graph.chunks_of(ent.id))}")

# Image markers turn into image nodes attached to the chunk holding their placeholder.
print("\nimages:")
for img in graph.images.values():
    print(f"  {img.uri}: {img.caption!r} in {img.placeholder_chunk}")

# Neighbourhood of one entity via entity-entity edges.
ice = next(e for e in graph.entities.values() if e.name == "black ice")
print("\nneighbours of 'black ice':", sorted(graph.entities[n].name for n in graph.neighbors(ice.id)))

# Persist graph plus vectors; 02_retrieval_knobs.py reads this directory.
out = Path("demo-store")
embedder = HashEmbedder(dim=256)
indexes = build_indexes(graph, embedder)
save(graph, out, {"embedding": embedder.describe()})
indexes.persist(out)
print(f"\nstore written to {out}/:", sorted(p.name for p in out.iterdir()))
