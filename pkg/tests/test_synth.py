import numpy as np
import pytest

from dogma.errors import ConfigError
from dogma.features import FeatureConfig, log_normalize
from dogma.ingest import (
    parse_annotations,
    parse_matrix_market,
    parse_metadata,
    parse_obo,
    read_newick,
)
from dogma.ingest.types import Split
from dogma.synth import SynthConfig, generate, write_corpus


def small_cfg(**kw):
    base = dict(n_species=2, n_types=3, n_domains_per_species=2,
                cells_per_type_per_domain=6, n_genes=120, n_go_programs=3,
                program_size=10, program_effect=2.0, batch_effect_scale=0.8,
                species_noise_scale=0.4, dropout_rate=0.2, seed=0)
    base.update(kw)
    return SynthConfig(**base)


class TestGenerate:
    def test_shapes_and_consistency(self):
        c = generate(small_cfg())
        n = 2 * 3 * 2 * 6
        assert c.matrix.n_cells == n
        assert c.matrix.n_genes == 120
        assert c.meta.n_cells == n
        assert set(c.meta.species) == set(c.tree.leaf_names())
        for t in set(c.meta.cell_type):
            assert t in c.cell_ontology
        for term in c.annotations.all_terms():
            assert term in c.gene_ontology

    def test_seed_determinism_bit_identical(self):
        a = generate(small_cfg())
        b = generate(small_cfg())
        assert a.matrix == b.matrix
        assert a.meta == b.meta
        assert a.ground_truth.to_dict() == b.ground_truth.to_dict()
        c = generate(small_cfg(seed=1))
        assert not (a.matrix == c.matrix)

    def test_noiseless_limit_groups_cohere(self):
        # with batch/species noise and dropout off, same-type groups share
        # one expected profile: same-type centroids across domains must sit
        # far closer together than centroids of different types
        cfg = small_cfg(dropout_rate=0.0, batch_effect_scale=0.0,
                        species_noise_scale=0.0, program_effect=3.0,
                        cells_per_type_per_domain=15)
        c = generate(cfg)
        m = log_normalize(c.matrix, FeatureConfig())
        dense = m.X.toarray()
        types = sorted(set(c.meta.cell_type))
        domains = sorted(set(c.meta.domain))
        cent = {}
        for t in types:
            for d in domains:
                idx = [i for i in range(c.meta.n_cells)
                       if c.meta.cell_type[i] == t and c.meta.domain[i] == d]
                cent[(t, d)] = dense[idx].mean(axis=0)
        within = [np.linalg.norm(cent[(t, a)] - cent[(t, b)])
                  for t in types
                  for ai, a in enumerate(domains) for b in domains[ai + 1:]]
        cross = [np.linalg.norm(cent[(t1, d)] - cent[(t2, d)])
                 for ti, t1 in enumerate(types) for t2 in types[ti + 1:]
                 for d in domains]
        assert np.mean(within) < np.mean(cross)

    def test_planted_program_shift_after_lognorm(self):
        cfg = small_cfg(program_effect=2.0, dropout_rate=0.1)
        c = generate(cfg)
        m = log_normalize(c.matrix, FeatureConfig())
        dense = m.X.toarray()
        gidx = {g: i for i, g in enumerate(c.matrix.gene_ids)}
        truth = c.ground_truth
        background = [i for g, i in gidx.items()
                      if not any(g in gs for gs in truth.program_genes.values())
                      and not g.startswith("MT-")]
        for term, genes in truth.program_genes.items():
            target = truth.program_target_type[term]
            rows = [i for i in range(c.meta.n_cells)
                    if c.meta.cell_type[i] == target]
            prog_cols = [gidx[g] for g in genes]
            prog_mean = dense[np.ix_(rows, prog_cols)].mean()
            bg_mean = dense[np.ix_(rows, background)].mean()
            assert prog_mean - bg_mean >= cfg.program_effect / 2

    def test_query_domain_layout(self):
        cfg = small_cfg(query_domains_per_species=1)
        c = generate(cfg)
        for i in range(c.meta.n_cells):
            is_query_domain = c.meta.domain[i].endswith("_d1")
            assert (c.meta.split[i] is Split.QUERY) == is_query_domain

    def test_query_fraction(self):
        cfg = small_cfg(query_fraction=0.5, seed=3)
        c = generate(cfg)
        n_query = sum(1 for s in c.meta.split if s is Split.QUERY)
        assert 0 < n_query < c.meta.n_cells

    def test_infeasible_sizes_rejected(self):
        with pytest.raises(ConfigError):
            small_cfg(n_go_programs=20, program_size=10, n_genes=100)

    def test_mito_genes_present(self):
        c = generate(small_cfg())
        assert any(g.startswith("MT-") for g in c.matrix.gene_ids)

    def test_chain_ontology_shape(self):
        c = generate(small_cfg(ontology_shape="chain"))
        dag = c.cell_ontology
        depths = {t: len(dag.parents[t]) for t in dag.terms}
        # chain: exactly one term hangs off the root's child chain
        non_root = [t for t in dag.terms if t != "CT:ROOT"]
        assert all(len(dag.parents[t]) == 1 for t in non_root)


class TestWriteCorpus:
    def test_emitted_files_reparse_cleanly(self, tmp_path):
        c = generate(small_cfg())
        paths = write_corpus(c, tmp_path)
        m = parse_matrix_market(paths["matrix"])
        meta = parse_metadata(paths["metadata"])
        cell_dag = parse_obo(paths["cell_ontology"])
        go_dag = parse_obo(paths["gene_ontology"])
        tree = read_newick(paths["phylogeny"])
        ann = parse_annotations(paths["annotations"], go_dag)
        assert m == c.matrix
        assert meta == c.meta
        assert cell_dag == c.cell_ontology
        assert go_dag == c.gene_ontology
        assert tree == c.tree
        assert ann == c.annotations
        meta.validate_against(m)
        meta.validate_species(tree)

    def test_ground_truth_written(self, tmp_path):
        import json
        c = generate(small_cfg())
        paths = write_corpus(c, tmp_path)
        gt = json.loads(paths["ground_truth"].read_text())
        assert gt["cell_type"] == c.ground_truth.cell_type
        assert set(gt["program_genes"]) == set(c.ground_truth.program_genes)


def test_batch_effect_monotone_on_centroid_distance():
    scales = [0.0, 0.5, 1.0, 1.5, 2.0]
    means = []
    for scale in scales:
        dists = []
        for seed in range(10):
            cfg = SynthConfig(n_species=1, n_types=2, n_domains_per_species=2,
                              cells_per_type_per_domain=10, n_genes=80,
                              n_go_programs=2, program_size=8,
                              program_effect=1.5, batch_effect_scale=scale,
                              species_noise_scale=0.0, dropout_rate=0.1,
                              seed=seed)
            c = generate(cfg)
            m = log_normalize(c.matrix, FeatureConfig())
            dense = m.X.toarray()
            for t in sorted(set(c.meta.cell_type)):
                cents = []
                for d in sorted(set(c.meta.domain)):
                    idx = [i for i in range(c.meta.n_cells)
                           if c.meta.cell_type[i] == t and c.meta.domain[i] == d]
                    cents.append(dense[idx].mean(axis=0))
                dists.append(float(np.linalg.norm(cents[0] - cents[1])))
        means.append(float(np.mean(dists)))
    assert all(b > a for a, b in zip(means, means[1:]))
