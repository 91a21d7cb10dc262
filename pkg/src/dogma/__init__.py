"""dogma: deterministic, knowledge-guided cell graph construction.

Turns a sparse expression matrix plus symbolic priors (cell-type
ontology, gene-function ontology, species phylogeny) into a homogeneous
cell graph with fused dual-view node features and provenance-tagged
edges, and ships the harnesses to measure graph quality.
"""

__version__ = "0.1.0"
