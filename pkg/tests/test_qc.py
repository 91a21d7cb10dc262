import numpy as np
import pytest
import scipy.sparse as sp

from conftest import random_matrix, simple_metadata
from dogma.errors import DataError
from dogma.ingest.types import ExpressionMatrix, NormalizationState
from dogma.qc import (
    QcConfig,
    QcReport,
    apply_cell_filters,
    cell_filter_thresholds,
    filter_cells,
    filter_genes,
    nearest_rank_percentile,
    run_qc,
)
from oracles import nearest_rank_oracle


def _matrix(rows, cell_ids=None, gene_ids=None):
    arr = np.asarray(rows, dtype=np.float64)
    cells = cell_ids or [f"c{i}" for i in range(arr.shape[0])]
    genes = gene_ids or [f"g{j}" for j in range(arr.shape[1])]
    return ExpressionMatrix(cells, genes, sp.csr_matrix(arr))


class TestFilterGenes:
    def test_gene_in_two_cells_removed_at_threshold_three(self):
        m = _matrix([[1, 1], [1, 0], [1, 0]])   # gene0 in 3 cells, gene1 in 1
        out = filter_genes(m, QcConfig(min_cells_per_gene=3))
        assert out.gene_ids == ["g0"]
        assert out.n_cells == 3

    def test_threshold_zero_is_identity(self):
        m = _matrix([[1, 0], [0, 0]])
        out = filter_genes(m, QcConfig(min_cells_per_gene=0))
        assert out == m

    def test_matches_brute_force_scan(self, rng):
        m = random_matrix(rng, n_cells=200, n_genes=50, density=0.05)
        cfg = QcConfig(min_cells_per_gene=3)
        out = filter_genes(m, cfg)
        dense = m.X.toarray()
        expected = [m.gene_ids[j] for j in range(50)
                    if (dense[:, j] != 0).sum() >= 3]
        assert out.gene_ids == expected

    def test_empty_feature_space_error(self):
        m = _matrix([[1, 0], [0, 0]])
        with pytest.raises(DataError, match="empty feature space"):
            filter_genes(m, QcConfig(min_cells_per_gene=3))

    def test_requires_raw(self):
        m = _matrix([[1.0]])
        m.normalization_state = NormalizationState.LOG_NORMALIZED
        with pytest.raises(DataError):
            filter_genes(m, QcConfig())

    def test_monotone_in_threshold(self, rng):
        m = random_matrix(rng, n_cells=60, n_genes=30, density=0.15)
        kept = None
        for thr in range(0, 8):
            try:
                out = filter_genes(m, QcConfig(min_cells_per_gene=thr))
                genes = set(out.gene_ids)
            except DataError:
                genes = set()
            if kept is not None:
                assert genes <= kept
            kept = genes


class TestFilterCells:
    def test_high_mito_cell_removed(self):
        m = _matrix([[10, 90], [50, 50]], gene_ids=["MT-1", "g1"])
        # cell0 has 10% mito, cell1 has 50%: cap 0.3 keeps only cell0?
        # use wide percentiles so only the mito rule acts
        meta = simple_metadata(m)
        cfg = QcConfig(mito_fraction_max=0.3, count_percentile_low=0,
                       count_percentile_high=100)
        out, _ = filter_cells(m, meta, cfg)
        assert out.cell_ids == ["c0"]

    def test_ten_percent_mito_removed_at_five_percent_cap(self):
        m = _matrix([[10, 90], [2, 98]], gene_ids=["MT-1", "g1"])
        meta = simple_metadata(m)
        cfg = QcConfig(count_percentile_low=0, count_percentile_high=100)
        out, _ = filter_cells(m, meta, cfg)
        assert out.cell_ids == ["c1"]

    def test_single_cell_retained(self):
        m = _matrix([[5, 5]])
        out, _ = filter_cells(m, simple_metadata(m), QcConfig())
        assert out.n_cells == 1

    def test_survivors_match_percentile_oracle(self, rng):
        m = random_matrix(rng, n_cells=500, n_genes=40, density=0.4)
        meta = simple_metadata(m)
        cfg = QcConfig()
        out, _ = filter_cells(m, meta, cfg)
        totals = m.cell_totals()
        lo = nearest_rank_oracle(totals, 5)
        hi = nearest_rank_oracle(totals, 95)
        expected = [m.cell_ids[i] for i in range(500)
                    if lo <= totals[i] <= hi]      # no MT- genes: mito skipped
        assert out.cell_ids == expected

    def test_mito_prefix_case_insensitive(self):
        m = _matrix([[10, 90]], gene_ids=["mt-x", "g1"])
        report = QcReport()
        _ = filter_cells(m, simple_metadata(m),
                         QcConfig(mito_fraction_max=0.5,
                                  count_percentile_low=0,
                                  count_percentile_high=100), report=report)
        assert not report.mito_filter_skipped

    def test_no_mito_gene_warns_and_skips(self):
        m = _matrix([[10, 90], [2, 98]])
        report = QcReport()
        out, _ = filter_cells(m, simple_metadata(m),
                              QcConfig(count_percentile_low=0,
                                       count_percentile_high=100),
                              report=report)
        assert report.mito_filter_skipped
        assert out.n_cells == 2

    def test_zero_survivors_error(self):
        m = _matrix([[100, 0], [1, 0]], gene_ids=["MT-1", "g1"])
        with pytest.raises(DataError, match="no cell passes"):
            filter_cells(m, simple_metadata(m), QcConfig())

    def test_idempotent_with_frozen_thresholds(self, rng):
        m = random_matrix(rng, n_cells=300, n_genes=30, density=0.3)
        meta = simple_metadata(m)
        cfg = QcConfig()
        mito_max, lo, hi = cell_filter_thresholds(m, cfg)
        m1, meta1 = apply_cell_filters(m, meta, mito_max, lo, hi)
        m2, meta2 = apply_cell_filters(m1, meta1, mito_max, lo, hi)
        assert m2 == m1
        assert meta2 == meta1


class TestProperties:
    def test_determinism(self, rng):
        m = random_matrix(rng, n_cells=120, n_genes=25, density=0.3)
        meta = simple_metadata(m)
        a = run_qc(m, meta, QcConfig())
        b = run_qc(m, meta, QcConfig())
        assert a[0] == b[0]
        assert a[1] == b[1]

    def test_commutes_with_permutation(self, rng):
        m = random_matrix(rng, n_cells=80, n_genes=20, density=0.3)
        meta = simple_metadata(m)
        cfg = QcConfig()
        out, _, _ = run_qc(m, meta, cfg)

        perm = rng.permutation(m.n_cells)
        mp = m.subset_cells(perm)
        metap = meta.subset(perm)
        outp, _, _ = run_qc(mp, metap, cfg)
        assert sorted(outp.cell_ids) == sorted(out.cell_ids)
        assert outp.gene_ids == out.gene_ids

        gperm = rng.permutation(m.n_genes)
        mg = m.subset_genes(gperm)
        outg, _, _ = run_qc(mg, meta, cfg)
        assert sorted(outg.gene_ids) == sorted(out.gene_ids)

    def test_gene_filter_runs_before_cell_filter(self):
        # the rare gene disappears first, which changes cell totals and
        # therefore the percentile window
        m = _matrix([[1, 100], [1, 100], [0, 100], [0, 1000]])
        cfg = QcConfig(min_cells_per_gene=3, count_percentile_low=0,
                       count_percentile_high=75)
        out, _, report = run_qc(m, simple_metadata(m), cfg)
        assert report.genes_removed == 1
        assert out.gene_ids == ["g1"]
        # totals after gene removal: 100,100,100,1000 -> P75 = 100
        assert out.cell_ids == ["c0", "c1", "c2"]


def test_nearest_rank_matches_oracle(rng):
    for trial in range(50):
        n = int(rng.integers(1, 40))
        vals = rng.random(n) * 100
        pct = float(rng.random() * 100)
        s = np.sort(vals)
        assert nearest_rank_percentile(s, pct) == nearest_rank_oracle(vals, pct)
