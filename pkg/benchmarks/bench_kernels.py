"""Benchmark the compiled selection kernel against the numpy fallback.

Measures the per-row top-k selection in isolation (identical similarity
blocks fed to both backends) and a full synthetic graph build per backend.
Both must produce identical results; this script asserts it.

Usage: python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import time

import numpy as np

from dogma import kernels
from dogma.features import FeatureConfig, log_normalize
from dogma.pipeline import assemble_graph
from dogma.synth import SynthConfig, generate
from dogma.topology import TopologyConfig


def bench_selection(n_queries, n_cands, k, repeats=3):
    rng = np.random.default_rng(0)
    sims = rng.normal(size=(n_queries, n_cands))
    q_ids = np.arange(n_queries, dtype=np.int64)
    c_ids = np.arange(n_cands, dtype=np.int64)
    rows = {}
    results = {}
    for name, backend in kernels.available_backends():
        best = float("inf")
        for _ in range(repeats):
            t0 = time.perf_counter()
            out = kernels.topk_ids(sims, q_ids, c_ids, k, select=backend)
            best = min(best, time.perf_counter() - t0)
        rows[name] = best
        results[name] = out
    names = list(results)
    for other in names[1:]:
        assert np.array_equal(results[names[0]], results[other]), \
            "backends disagree"
    return rows


def bench_build(n_per_group, backend_name):
    # backend choice is import-time; swap the module-level backend so the
    # whole pipeline runs through the requested one
    module = dict(kernels.available_backends())[backend_name]
    old = kernels._BACKEND
    kernels._BACKEND = module
    try:
        cfg = SynthConfig(n_species=3, n_types=5, n_domains_per_species=2,
                          cells_per_type_per_domain=n_per_group, n_genes=600,
                          n_go_programs=8, program_size=20,
                          program_effect=2.0, batch_effect_scale=1.0,
                          species_noise_scale=0.5, dropout_rate=0.3, seed=0,
                          query_fraction=0.1)
        corpus = generate(cfg)
        fcfg = FeatureConfig(pca_dim=50, go_dim=8)
        tcfg = TopologyConfig(delta=3.0)
        lognorm = log_normalize(corpus.matrix, fcfg)
        t0 = time.perf_counter()
        graph, _, _ = assemble_graph(lognorm, corpus.meta,
                                     corpus.cell_ontology, corpus.gene_ontology,
                                     corpus.tree, corpus.annotations,
                                     fcfg, tcfg)
        return time.perf_counter() - t0, graph
    finally:
        kernels._BACKEND = old


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true",
                        help="smaller problem sizes")
    args = parser.parse_args()

    print(f"active backend at import: {kernels.backend_name()}")
    print(f"available backends: {[n for n, _ in kernels.available_backends()]}")
    print()

    shapes = [(512, 2000, 10), (512, 10000, 10), (2048, 10000, 15)]
    if args.quick:
        shapes = [(256, 2000, 10)]
    print("selection kernel (identical inputs, best of 3):")
    print(f"{'queries':>8} {'cands':>7} {'k':>3}  " +
          "  ".join(f"{n:>10}" for n, _ in kernels.available_backends()))
    for nq, nc, k in shapes:
        rows = bench_selection(nq, nc, k)
        cells = "  ".join(f"{rows[n] * 1e3:8.1f}ms" for n, _ in
                          kernels.available_backends())
        print(f"{nq:>8} {nc:>7} {k:>3}  {cells}")

    print()
    n_per = 60 if args.quick else 200
    print(f"full graph build ({n_per * 30} cells):")
    graphs = {}
    for name, _ in kernels.available_backends():
        dt, graph = bench_build(n_per, name)
        graphs[name] = graph
        print(f"  {name:>8}: {dt:6.2f}s  ({graph.n_edges} edges)")
    names = list(graphs)
    for other in names[1:]:
        assert graphs[names[0]] == graphs[other], "backends built different graphs"
    print("\nbackends produce identical graphs: OK")


if __name__ == "__main__":
    main()
