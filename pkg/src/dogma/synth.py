"""Seeded synthetic corpora with full ground truth.

Generative model: per-type base log-mean vectors; designated GO programs
add a conserved expression shift to their target type in every species;
per-domain additive batch shifts and per-species multiplicative gene-scale
noise act in log space; counts come from a gamma-mixed Poisson sampler
(negative-binomial behavior) followed by independent Bernoulli dropout.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .ingest.matrix_market import write_matrix_market
from .ingest.newick import write_newick
from .ingest.obo import write_obo
from .ingest.tables import write_annotations, write_metadata
from .ingest.types import (
    CellMetadata,
    ExpressionMatrix,
    GeneAnnotationMap,
    NormalizationState,
    OntologyDag,
    PhyloNode,
    PhyloTree,
    Split,
)
from .util import write_json

BASE_LOG_MEAN = np.log(0.3)      # background expression rate in log space
TYPE_SIGNATURE_SCALE = 0.5       # per-type background variation
NB_SHAPE = 10.0                  # gamma shape of the count sampler
MITO_GENE_EVERY = 50             # 1 mito gene per 50 genes

CELL_ROOT = "CT:ROOT"
GO_ROOT = "GO:ROOT"


@dataclass
class SynthConfig:
    n_species: int = 3
    n_types: int = 5
    n_domains_per_species: int = 2
    cells_per_type_per_domain: int = 20
    n_genes: int = 400
    n_go_programs: int = 5
    program_size: int = 20
    program_effect: float = 2.0
    batch_effect_scale: float = 1.0
    species_noise_scale: float = 0.5
    dropout_rate: float = 0.3
    seed: int = 0
    # split layout: whole held-out domains and/or a random in-domain fraction
    query_domains_per_species: int = 0
    query_fraction: float = 0.0
    ontology_shape: str = "star"     # "star" or "chain" over the types

    def __post_init__(self):
        for name in ("n_species", "n_types", "n_domains_per_species",
                     "cells_per_type_per_domain", "n_genes", "n_go_programs",
                     "program_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if not (0.0 <= self.query_fraction < 1.0):
            raise ConfigError("query_fraction must lie in [0, 1)")
        if self.query_domains_per_species < 0 or \
                self.query_domains_per_species >= self.n_domains_per_species:
            raise ConfigError("query_domains_per_species must leave at least "
                              "one reference domain")
        if self.ontology_shape not in ("star", "chain"):
            raise ConfigError("ontology_shape must be 'star' or 'chain'")
        n_mito = self.n_genes // MITO_GENE_EVERY
        if n_mito + self.n_go_programs * self.program_size > self.n_genes:
            raise ConfigError(
                f"infeasible sizes: {self.n_go_programs} programs x "
                f"{self.program_size} genes plus {n_mito} mito genes exceed "
                f"n_genes={self.n_genes}")
        if self.program_effect < 0 or self.batch_effect_scale < 0 or \
                self.species_noise_scale < 0:
            raise ConfigError("effect scales must be >= 0")


@dataclass
class GroundTruth:
    config: dict
    cell_type: list
    species: list
    domain: list
    split: list
    program_genes: dict
    program_target_type: dict
    type_signature: list = field(repr=False, default_factory=list)
    batch_shift: dict = field(repr=False, default_factory=dict)
    species_shift: dict = field(repr=False, default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthCorpus:
    matrix: ExpressionMatrix
    meta: CellMetadata
    cell_ontology: OntologyDag
    gene_ontology: OntologyDag
    tree: PhyloTree
    annotations: GeneAnnotationMap
    ground_truth: GroundTruth


def _species_names(n: int) -> list:
    return [f"sp{i:02d}" for i in range(n)]


def _type_terms(n: int) -> list:
    return [f"CT:T{i:02d}" for i in range(n)]


def _balanced_tree(names: list) -> PhyloTree:
    """Balanced topology over the species, unit (defaulted) branch lengths."""
    def build(chunk):
        if len(chunk) == 1:
            return PhyloNode(name=chunk[0], length=1.0, children=[])
        mid = (len(chunk) + 1) // 2
        return PhyloNode(name=None, length=1.0,
                         children=[build(chunk[:mid]), build(chunk[mid:])])

    if len(names) == 1:
        root = PhyloNode(name=names[0], length=None, children=[])
    else:
        root = build(names)
        root.length = None
    return PhyloTree(root, lengths_defaulted=True)


def _cell_ontology(cfg: SynthConfig) -> OntologyDag:
    types = _type_terms(cfg.n_types)
    terms = {CELL_ROOT: "cell"}
    parents = {CELL_ROOT: ()}
    for i, t in enumerate(types):
        terms[t] = f"type {i}"
        if cfg.ontology_shape == "star" or i == cfg.n_types - 1:
            parents[t] = (CELL_ROOT,)
        else:
            parents[t] = (types[i + 1],)
    return OntologyDag(terms, parents)


def _gene_names(cfg: SynthConfig) -> list:
    n_mito = cfg.n_genes // MITO_GENE_EVERY
    names = [f"MT-g{i:04d}" for i in range(n_mito)]
    names += [f"g{i:04d}" for i in range(cfg.n_genes - n_mito)]
    return names


def generate(cfg: SynthConfig) -> SynthCorpus:
    rng = np.random.default_rng(cfg.seed)
    species = _species_names(cfg.n_species)
    types = _type_terms(cfg.n_types)
    genes = _gene_names(cfg)
    n_mito = cfg.n_genes // MITO_GENE_EVERY

    domains = []                       # (species, domain_name, is_query_domain)
    for s_i, s in enumerate(species):
        for d_i in range(cfg.n_domains_per_species):
            is_query = d_i >= cfg.n_domains_per_species - cfg.query_domains_per_species
            domains.append((s, f"{s}_d{d_i}", is_query))

    # GO programs: disjoint gene blocks after the mito genes, one term each,
    # each targeting one type round-robin
    program_terms = [f"GO:P{p:03d}" for p in range(cfg.n_go_programs)]
    program_genes = {}
    program_target = {}
    for p, term in enumerate(program_terms):
        lo = n_mito + p * cfg.program_size
        program_genes[term] = genes[lo:lo + cfg.program_size]
        program_target[term] = types[p % cfg.n_types]

    go_terms = {GO_ROOT: "root"}
    go_parents = {GO_ROOT: ()}
    for p, term in enumerate(program_terms):
        go_terms[term] = f"program {p}"
        go_parents[term] = (GO_ROOT,)
    go_dag = OntologyDag(go_terms, go_parents)
    ann = GeneAnnotationMap({g: {term} for term, gs in program_genes.items()
                             for g in gs})

    # latent shifts, drawn once in a fixed order
    type_sig = rng.normal(0.0, TYPE_SIGNATURE_SCALE, (cfg.n_types, cfg.n_genes))
    batch_shift = rng.normal(0.0, cfg.batch_effect_scale,
                             (len(domains), cfg.n_genes))
    species_shift = rng.normal(0.0, cfg.species_noise_scale,
                               (cfg.n_species, cfg.n_genes))

    gene_index = {g: i for i, g in enumerate(genes)}
    program_cols = {t: np.array([gene_index[g] for g in gs], dtype=np.int64)
                    for t, gs in program_genes.items()}

    blocks = []
    cell_ids, meta_species, meta_type, meta_domain, meta_split = [], [], [], [], []
    cell_no = 0
    for d_i, (s, dom, is_query_dom) in enumerate(domains):
        s_i = species.index(s)
        for t_i, t in enumerate(types):
            logmean = (BASE_LOG_MEAN + type_sig[t_i] + batch_shift[d_i]
                       + species_shift[s_i])
            lam = np.exp(logmean)
            for term, target in program_target.items():
                if target == t:
                    lam = lam.copy()
                    lam[program_cols[term]] *= np.exp(cfg.program_effect)
            shape = (cfg.cells_per_type_per_domain, cfg.n_genes)
            rates = rng.gamma(NB_SHAPE, 1.0 / NB_SHAPE, shape) * lam[None, :]
            counts = rng.poisson(rates).astype(np.float64)
            if cfg.dropout_rate > 0:
                counts[rng.random(shape) < cfg.dropout_rate] = 0.0
            blocks.append(sp.csr_matrix(counts))

            n_block = cfg.cells_per_type_per_domain
            if is_query_dom:
                q_mask = np.ones(n_block, dtype=bool)
            elif cfg.query_fraction > 0:
                q_mask = rng.random(n_block) < cfg.query_fraction
            else:
                q_mask = np.zeros(n_block, dtype=bool)
            for j in range(n_block):
                cell_ids.append(f"c{cell_no:06d}")
                meta_species.append(s)
                meta_type.append(t)
                meta_domain.append(dom)
                meta_split.append(Split.QUERY if q_mask[j] else Split.REFERENCE)
                cell_no += 1

    X = sp.vstack(blocks).tocsr()
    matrix = ExpressionMatrix(cell_ids, genes, X, NormalizationState.RAW)
    meta = CellMetadata(cell_ids, meta_species, list(meta_type), meta_domain,
                        meta_split)

    truth = GroundTruth(
        config=asdict(cfg),
        cell_type=list(meta_type),
        species=list(meta_species),
        domain=list(meta_domain),
        split=[s.value for s in meta_split],
        program_genes={t: list(gs) for t, gs in program_genes.items()},
        program_target_type=dict(program_target),
        type_signature=type_sig.tolist(),
        batch_shift={dom: batch_shift[i].tolist()
                     for i, (_, dom, _) in enumerate(domains)},
        species_shift={s: species_shift[i].tolist()
                       for i, s in enumerate(species)},
    )

    return SynthCorpus(matrix=matrix, meta=meta,
                       cell_ontology=_cell_ontology(cfg),
                       gene_ontology=go_dag,
                       tree=_balanced_tree(species),
                       annotations=ann, ground_truth=truth)


CORPUS_FILES = {
    "matrix": "matrix.mtx",
    "metadata": "metadata.tsv",
    "cell_ontology": "cell_ontology.obo",
    "gene_ontology": "gene_ontology.obo",
    "phylogeny": "phylogeny.nwk",
    "annotations": "annotations.tsv",
    "ground_truth": "ground_truth.json",
}


def write_corpus(corpus: SynthCorpus, outdir) -> dict:
    """Write the full ingest file suite; returns name -> path."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {k: outdir / v for k, v in CORPUS_FILES.items()}
    write_matrix_market(corpus.matrix, paths["matrix"])
    write_metadata(corpus.meta, paths["metadata"])
    write_obo(corpus.cell_ontology, paths["cell_ontology"])
    write_obo(corpus.gene_ontology, paths["gene_ontology"])
    write_newick(corpus.tree, paths["phylogeny"])
    write_annotations(corpus.annotations, paths["annotations"])
    write_json(paths["ground_truth"], corpus.ground_truth.to_dict())
    return paths
