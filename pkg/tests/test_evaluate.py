import numpy as np
import pytest

from conftest import random_matrix, simple_metadata
from dogma.errors import DataError
from dogma.evaluate import (
    Assignment,
    Partition,
    SplitPlan,
    ami,
    ari,
    cluster,
    cross_view_alignment,
    knn_baseline_graph,
    label_propagation_classify,
    make_split,
    pearson,
    propagate_labels,
)
from dogma.features import FeatureConfig, FeatureMatrix, ViewTag, log_normalize
from dogma.ingest.types import CellMetadata, ExpressionMatrix, Split
from dogma.topology import CellGraph, Provenance
from oracles import ami_mpmath, ari_pair_counting, pearson_loop


def _graph(n, edges) -> CellGraph:
    g = CellGraph([f"c{i}" for i in range(n)])
    g.add_edges(edges, Provenance.ALIGN)
    return g


def _meta_types(types, split=None):
    n = len(types)
    return CellMetadata(
        cell_ids=[f"c{i}" for i in range(n)],
        species=["sp"] * n,
        cell_type=list(types),
        domain=["d0"] * n,
        split=split or [Split.REFERENCE] * n,
    )


class TestMakeSplit:
    def test_supervised_ratios_100_cells(self):
        meta = _meta_types(["CT:A"] * 100)
        plan = make_split(meta, "supervised", seed=0)
        counts = plan.counts()
        assert counts == {"Test": 30, "Train": 50, "Val": 20}

    def test_zero_shot_five_types(self):
        types = [f"CT:{i}" for i in range(5) for _ in range(10)]
        meta = _meta_types(types)
        plan = make_split(meta, "zero_shot", seed=1)
        assert len(plan.seen_types) == 3
        assert len(plan.unseen_types) == 2

    def test_same_seed_identical(self):
        types = [f"CT:{i % 4}" for i in range(80)]
        meta = _meta_types(types)
        a = make_split(meta, "supervised", seed=5)
        b = make_split(meta, "supervised", seed=5)
        assert a.assignment == b.assignment
        c = make_split(meta, "supervised", seed=6)
        assert a.assignment != c.assignment

    def test_tiny_type_goes_to_train(self):
        types = ["CT:A"] * 20 + ["CT:B"] * 2
        meta = _meta_types(types)
        plan = make_split(meta, "supervised", seed=0)
        b_cells = [f"c{i}" for i in range(20, 22)]
        assert all(plan.assignment[c] is Assignment.TRAIN for c in b_cells)

    def test_stratified_per_type(self):
        types = ["CT:A"] * 40 + ["CT:B"] * 20
        meta = _meta_types(types)
        plan = make_split(meta, "supervised", seed=3)
        a_train = sum(1 for i in range(40)
                      if plan.assignment[f"c{i}"] is Assignment.TRAIN)
        b_train = sum(1 for i in range(40, 60)
                      if plan.assignment[f"c{i}"] is Assignment.TRAIN)
        assert a_train == 20 and b_train == 10

    def test_query_cells_not_in_plan(self):
        meta = _meta_types(["CT:A"] * 10,
                           split=[Split.REFERENCE] * 5 + [Split.QUERY] * 5)
        plan = make_split(meta, "supervised", seed=0)
        assert len(plan.assignment) == 5


class TestPropagate:
    def test_two_cliques_inherit_their_seed(self):
        edges = [(i, j) for i in range(4) for j in range(i + 1, 4)]
        edges += [(i, j) for i in range(4, 8) for j in range(i + 1, 8)]
        g = _graph(8, edges)
        labels = propagate_labels(g, {0: "A", 4: "B"})
        assert labels == ["A"] * 4 + ["B"] * 4

    def test_edgeless_graph_majority_fallback(self):
        g = _graph(5, [])
        labels = propagate_labels(g, {0: "B", 1: "A", 2: "B"})
        assert labels == ["B", "A", "B", "B", "B"]

    def test_path_hand_trace(self):
        # 10-node path, endpoints labeled: fronts advance one hop per sweep
        # and freeze at the midpoint tie (keep-current rule)
        g = _graph(10, [(i, i + 1) for i in range(9)])
        labels = propagate_labels(g, {0: "A", 9: "B"})
        assert labels == ["A"] * 5 + ["B"] * 5

    def test_clamping_invariant(self):
        g = _graph(6, [(i, j) for i in range(6) for j in range(i + 1, 6)])
        seeds = {i: ("A" if i % 2 == 0 else "B") for i in range(6)}
        labels = propagate_labels(g, seeds)
        assert labels == ["A", "B", "A", "B", "A", "B"]

    def test_no_seeds_error(self):
        with pytest.raises(DataError):
            propagate_labels(_graph(3, []), {})

    def test_classify_accuracy(self):
        edges = [(i, j) for i in range(4) for j in range(i + 1, 4)]
        edges += [(i, j) for i in range(4, 8) for j in range(i + 1, 8)]
        g = _graph(8, edges)
        meta = _meta_types(["CT:A"] * 4 + ["CT:B"] * 4)
        plan = SplitPlan("supervised",
                         {"c0": Assignment.TRAIN, "c4": Assignment.TRAIN,
                          "c1": Assignment.TEST, "c5": Assignment.TEST},
                         (0.5, 0.2, 0.3), 0)
        _, acc = label_propagation_classify(g, meta, plan)
        assert acc == 1.0


class TestCluster:
    def test_two_cliques(self):
        edges = [(i, j) for i in range(5) for j in range(i + 1, 5)]
        edges += [(i, j) for i in range(5, 10) for j in range(i + 1, 10)]
        part = cluster(_graph(10, edges), seed=0)
        assert part.n_clusters() == 2
        assert len(set(part.labels[:5])) == 1
        assert len(set(part.labels[5:])) == 1

    def test_complete_graph_one_community(self):
        edges = [(i, j) for i in range(8) for j in range(i + 1, 8)]
        part = cluster(_graph(8, edges), seed=0)
        assert part.n_clusters() == 1

    def test_edgeless_all_singletons(self):
        part = cluster(_graph(6, []), seed=0)
        assert part.n_clusters() == 6

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(0)
        edges = {(int(a), int(b)) for a, b in
                 rng.integers(0, 30, size=(120, 2)) if a != b}
        edges = {(min(e), max(e)) for e in edges}
        g = _graph(30, sorted(edges))
        p1 = cluster(g, seed=4)
        p2 = cluster(g, seed=4)
        assert np.array_equal(p1.labels, p2.labels)

    def test_planted_partition_recovered(self):
        aris = []
        for seed in range(10):
            rng = np.random.default_rng(900 + seed)
            blocks = 4
            size = 50
            n = blocks * size
            edges = []
            for i in range(n):
                for j in range(i + 1, n):
                    same = i // size == j // size
                    p = 0.3 if same else 0.01
                    if rng.random() < p:
                        edges.append((i, j))
            part = cluster(_graph(n, edges), seed=seed)
            truth = Partition(np.repeat(np.arange(blocks), size))
            aris.append(ari(part, truth))
        assert float(np.mean(aris)) >= 0.9


class TestAriAmi:
    def test_identical_partitions_exactly_one(self):
        p = Partition(np.array([0, 0, 1, 1, 2]))
        assert ari(p, p) == 1.0
        assert ami(p, p) == 1.0

    def test_all_in_one_vs_singletons_zero(self):
        a = Partition(np.zeros(6, dtype=int))
        b = Partition(np.arange(6))
        assert ari(a, b) == 0.0
        assert ami(a, b) == 0.0

    def test_four_item_hand_case(self):
        a = Partition(np.array([0, 0, 1, 1]))
        b = Partition(np.array([0, 1, 0, 1]))
        assert ari(a, b) == pytest.approx(ari_pair_counting(a.labels, b.labels),
                                          abs=1e-15)
        # hand count: no pair agrees in both -> ARI below 0
        assert ari(a, b) == pytest.approx(-0.5)

    def test_oracle_agreement_50_random_partitions(self):
        rng = np.random.default_rng(77)
        for _ in range(50):
            n = int(rng.integers(3, 40))
            a = Partition(rng.integers(0, int(rng.integers(1, 6)), size=n))
            b = Partition(rng.integers(0, int(rng.integers(1, 6)), size=n))
            assert ari(a, b) == pytest.approx(ari_pair_counting(a.labels, b.labels),
                                              abs=1e-12)
            assert ami(a, b) == pytest.approx(ami_mpmath(a.labels, b.labels),
                                              abs=1e-12)

    def test_sklearn_cross_check(self):
        from sklearn.metrics import adjusted_mutual_info_score, adjusted_rand_score
        rng = np.random.default_rng(5)
        for _ in range(10):
            n = int(rng.integers(5, 60))
            a = rng.integers(0, 4, size=n)
            b = rng.integers(0, 3, size=n)
            assert ari(Partition(a), Partition(b)) == pytest.approx(
                adjusted_rand_score(a, b), abs=1e-10)
            assert ami(Partition(a), Partition(b)) == pytest.approx(
                adjusted_mutual_info_score(a, b, average_method="max"), abs=1e-10)

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(8)
        a = rng.integers(0, 4, size=30)
        b = rng.integers(0, 3, size=30)
        perm = {0: 7, 1: 3, 2: 9, 3: 11}
        a2 = np.array([perm[x] for x in a])
        assert ari(Partition(a), Partition(b)) == ari(Partition(a2), Partition(b))
        assert ami(Partition(a), Partition(b)) == ami(Partition(a2), Partition(b))

    def test_single_cluster_vs_single_cluster(self):
        a = Partition(np.zeros(5, dtype=int))
        assert ami(a, a) == 1.0
        assert ari(a, a) == 1.0

    def test_independent_partitions_ami_near_zero(self):
        vals = []
        for seed in range(20):
            rng = np.random.default_rng(1500 + seed)
            a = Partition(rng.integers(0, 8, size=1000))
            b = Partition(rng.integers(0, 8, size=1000))
            vals.append(ami(a, b))
        assert abs(float(np.mean(vals))) <= 0.02
        assert max(abs(v) for v in vals) <= 0.05

    def test_mismatched_sizes_error(self):
        with pytest.raises(DataError):
            ari(Partition(np.zeros(3, dtype=int)), Partition(np.zeros(4, dtype=int)))


class TestPearson:
    def test_matches_textbook_loop(self, rng):
        for _ in range(20):
            x = rng.normal(size=30)
            y = rng.normal(size=30)
            assert pearson(x, y) == pytest.approx(
                pearson_loop(x.tolist(), y.tolist()), abs=1e-12)

    def test_perfect_correlation(self):
        x = np.arange(10.0)
        assert pearson(x, 2 * x + 3) == pytest.approx(1.0)
        assert pearson(x, -x) == pytest.approx(-1.0)

    def test_constant_vector_error(self):
        with pytest.raises(DataError):
            pearson(np.ones(5), np.arange(5.0))


class TestKnnBaseline:
    def test_symmetric_no_self_loops(self, rng):
        X = rng.normal(size=(30, 5))
        g = knn_baseline_graph(X, 4)
        for (u, v) in g.edge_pairs():
            assert u < v
        deg = g.degrees()
        assert deg.max() <= 30


class TestCrossView:
    def test_identical_centroids_r_one(self):
        rng = np.random.default_rng(3)
        base = np.abs(rng.normal(size=(1, 8))) + 0.5
        dense = np.vstack([base, base, base, base])     # 2 species x 2 cells
        import scipy.sparse as sp
        m = ExpressionMatrix([f"c{i}" for i in range(4)],
                             [f"g{j}" for j in range(8)],
                             sp.csr_matrix(dense))
        m = log_normalize(m, FeatureConfig())
        meta = CellMetadata([f"c{i}" for i in range(4)],
                            ["sp1", "sp1", "sp2", "sp2"],
                            ["CT:A"] * 4, ["d0"] * 4, [Split.REFERENCE] * 4)
        go = FeatureMatrix(np.tile(rng.normal(size=(1, 3)), (4, 1)),
                           ViewTag.KNOWLEDGE)
        report = cross_view_alignment(m, go, meta)
        assert report.per_type[0]["raw_r"] == pytest.approx(1.0)
        assert report.per_type[0]["go_r"] == pytest.approx(1.0)

    def test_type_in_one_species_skipped(self, rng):
        m = random_matrix(rng, 6, 10)
        m = log_normalize(m, FeatureConfig())
        meta = CellMetadata(list(m.cell_ids), ["sp1"] * 3 + ["sp2"] * 3,
                            ["CT:A"] * 3 + ["CT:B"] * 3,
                            ["d0"] * 6, [Split.REFERENCE] * 6)
        go = FeatureMatrix(rng.normal(size=(6, 3)), ViewTag.KNOWLEDGE)
        report = cross_view_alignment(m, go, meta)
        assert "CT:A" in report.skipped_types
        assert "CT:B" in report.skipped_types

    def test_single_species_error(self, rng):
        m = log_normalize(random_matrix(rng, 4, 6), FeatureConfig())
        meta = simple_metadata(m)
        go = FeatureMatrix(rng.normal(size=(4, 2)), ViewTag.KNOWLEDGE)
        with pytest.raises(DataError):
            cross_view_alignment(m, go, meta)
