"""End-to-end orchestration: synth, build (ingest -> qc -> downsample ->
features -> topology -> export) and eval, plus graph-directory IO.

Everything under `<output_dir>/graph/` is deterministic for a fixed
config+seed; wall-clock timings and peak memory go to `<output_dir>/perf.json`,
which is the one non-deterministic artifact.
"""

from __future__ import annotations

import logging
import resource
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .config import PipelineConfig, config_hash, config_to_dict
from .downsample import stratified_downsample
from .errors import ConfigError, DataError, DogmaError
from .evaluate import (
    Assignment,
    Partition,
    REPORT_SCHEMA,
    SUBSTITUTION_NOTICES,
    ami,
    ari,
    cluster,
    cross_view_alignment,
    label_propagation_classify,
    make_split,
)
from .features import (
    FeatureMatrix,
    ViewTag,
    log_normalize,
    read_feature_binary,
    write_feature_binary,
    write_feature_tsv,
)
from .ingest import (
    parse_annotations,
    parse_matrix_market,
    parse_metadata,
    parse_obo,
    read_newick,
)
from .ingest.types import CellMetadata, Split
from .qc import run_qc
from .synth import generate, write_corpus
from .topology import CellGraph, Provenance, attach_query, build_graph
from .util import sha256_file, write_json

logger = logging.getLogger(__name__)

GRAPH_DIR_NAME = "graph"
MANIFEST_NAME = "manifest.json"


class StageTimer:
    """Collects (stage, seconds) pairs and names the failing stage in the
    re-raised error, preserving its category (config vs data vs internal)."""

    def __init__(self):
        self.timings = []

    class _Ctx:
        def __init__(self, outer, name):
            self.outer, self.name = outer, name

        def __enter__(self):
            self.t0 = time.perf_counter()
            logger.info("stage %s started", self.name)
            return self

        def __exit__(self, exc_type, exc, tb):
            dt = time.perf_counter() - self.t0
            self.outer.timings.append({"stage": self.name, "seconds": dt})
            if exc is None:
                logger.info("stage %s finished in %.2fs", self.name, dt)
                return
            if isinstance(exc, ConfigError):
                raise ConfigError(f"stage '{self.name}' failed: {exc}") from exc
            if isinstance(exc, DataError):
                raise DataError(f"stage '{self.name}' failed: {exc}") from exc
            if isinstance(exc, Exception):
                raise DogmaError(
                    f"stage '{self.name}' failed with an internal error: {exc}"
                ) from exc

    def stage(self, name):
        return StageTimer._Ctx(self, name)


def peak_rss_bytes() -> int:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


@dataclass
class BuildResult:
    graph: CellGraph
    meta: CellMetadata            # node-ordered (reference first, then query)
    models: object
    out_dir: Path
    manifest: dict
    timings: list = field(default_factory=list)


def run_synth(cfg: PipelineConfig) -> dict:
    cfg.require("synth")
    corpus = generate(cfg.synth)
    paths = write_corpus(corpus, cfg.output_dir)
    logger.info("synthetic corpus with %d cells x %d genes written to %s",
                corpus.matrix.n_cells, corpus.matrix.n_genes, cfg.output_dir)
    return {k: str(v) for k, v in paths.items()}


def _load_inputs(cfg: PipelineConfig):
    matrix = parse_matrix_market(cfg.inputs.matrix)
    meta = parse_metadata(cfg.inputs.metadata)
    cell_dag = parse_obo(cfg.inputs.cell_ontology)
    go_dag = parse_obo(cfg.inputs.gene_ontology)
    tree = read_newick(cfg.inputs.phylogeny)
    ann = parse_annotations(cfg.inputs.annotations, go_dag)
    meta.validate_against(matrix)
    meta.validate_species(tree)
    return matrix, meta, cell_dag, go_dag, tree, ann


def _prepare(cfg: PipelineConfig, timer: StageTimer):
    """ingest -> qc -> downsample -> log-normalize; returns processed data."""
    with timer.stage("ingest"):
        matrix, meta, cell_dag, go_dag, tree, ann = _load_inputs(cfg)
    qc_report = None
    with timer.stage("qc"):
        if cfg.qc is not None:
            matrix, meta, qc_report = run_qc(matrix, meta, cfg.qc)
    kept_ids = None
    with timer.stage("downsample"):
        if cfg.downsample is not None:
            matrix, meta, kept_ids = stratified_downsample(matrix, meta,
                                                           cfg.downsample)
    with timer.stage("normalize"):
        lognorm = log_normalize(matrix, cfg.features)
    return lognorm, meta, cell_dag, go_dag, tree, ann, qc_report, kept_ids


def assemble_graph(lognorm, meta, cell_dag, go_dag, tree, ann, fcfg, tcfg):
    """Base graph over Reference cells plus inductive Query attachment.

    Returns (graph, models, node_meta) where node order is reference cells
    (input order) followed by query cells (input order). In the no-priors
    ablation (align, onto and phy all disabled) the graph stays fully
    edgeless: query cells are placed as nodes but not attached."""
    base, models = build_graph(lognorm, meta, cell_dag, tree, ann, fcfg, tcfg,
                               go_dag=go_dag)
    ref_idx = np.flatnonzero(meta.reference_mask())
    query_idx = np.flatnonzero(~meta.reference_mask())
    node_meta = meta.subset(np.concatenate([ref_idx, query_idx]))
    if query_idx.size == 0:
        return base, models, node_meta
    meta_query = meta.subset(query_idx)
    X_query = models.project(lognorm.subset_cells(query_idx))
    if not (tcfg.enable_align or tcfg.enable_onto or tcfg.enable_phy):
        merged = FeatureMatrix(
            np.vstack([base.node_features.values, X_query.values]),
            base.node_features.view_tag, base.node_features.column_labels)
        graph = CellGraph(list(base.cell_ids) + list(meta_query.cell_ids),
                          node_features=merged)
        return graph, models, node_meta
    graph = attach_query(base, meta.subset(ref_idx), X_query, meta_query,
                         models.topo_cfg, models.compat)
    return graph, models, node_meta


def run_build(cfg: PipelineConfig) -> BuildResult:
    cfg.require("inputs", "qc", "features", "topology")
    cfg.inputs.validate_exist()     # config-time check, before any stage
    timer = StageTimer()
    out_dir = Path(cfg.output_dir)
    staging = out_dir.parent / (out_dir.name + ".partial")
    if staging.exists():
        shutil.rmtree(staging)
    try:
        lognorm, meta, cell_dag, go_dag, tree, ann, qc_report, kept_ids = \
            _prepare(cfg, timer)
        with timer.stage("topology"):
            graph, models, node_meta = assemble_graph(
                lognorm, meta, cell_dag, go_dag, tree, ann,
                cfg.features, cfg.topology)
        with timer.stage("export"):
            staging.mkdir(parents=True)
            if qc_report is not None:
                write_json(staging / "qc_report.json", qc_report.to_dict())
            if kept_ids is not None:
                (staging / "kept_cells.txt").write_text(
                    "".join(f"{c}\n" for c in kept_ids), encoding="utf-8")
            manifest = write_graph_dir(graph, node_meta, models, cfg,
                                       staging / GRAPH_DIR_NAME)
        perf = {
            "stages": timer.timings,
            "total_seconds": sum(t["seconds"] for t in timer.timings),
            "peak_rss_bytes": peak_rss_bytes(),
            "kernel_backend": kernels.backend_name(),
        }
        write_json(staging / "perf.json", perf)
        if out_dir.exists():
            shutil.rmtree(out_dir)
        staging.rename(out_dir)
    except Exception:
        if staging.exists():
            shutil.rmtree(staging)   # no partial outputs
        raise
    return BuildResult(graph=graph, meta=node_meta, models=models,
                       out_dir=out_dir, manifest=manifest,
                       timings=timer.timings)


def write_graph_dir(graph: CellGraph, node_meta: CellMetadata, models,
                    cfg: PipelineConfig, gdir: Path) -> dict:
    """Graph artifacts plus a manifest with content hashes. Deterministic:
    no timestamps, no timings."""
    gdir = Path(gdir)
    gdir.mkdir(parents=True, exist_ok=True)

    # nodes.tsv: cell_type written only for Reference rows so that held-out
    # labels can never leak into the artifact
    with open(gdir / "nodes.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("cell_id\tspecies\tdomain\tsplit\tcell_type\n")
        for i in range(node_meta.n_cells):
            ct = node_meta.cell_type[i] if node_meta.split[i] is Split.REFERENCE else None
            fh.write("\t".join((node_meta.cell_ids[i], node_meta.species[i],
                                node_meta.domain[i], node_meta.split[i].value,
                                ct or "")) + "\n")

    tag_cols = [p.value for p in Provenance]
    with open(gdir / "edges.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("u_id\tv_id\t" + "\t".join(tag_cols) + "\n")
        for u, v, tags in graph.edge_items():
            flags = "\t".join("1" if Provenance(c) in tags else "0"
                              for c in tag_cols)
            fh.write(f"{graph.cell_ids[u]}\t{graph.cell_ids[v]}\t{flags}\n")

    H = graph.node_features
    write_feature_tsv(H, graph.cell_ids, gdir / "node_features.tsv")
    write_feature_binary(H, gdir / "node_features.bin")
    models.compat.to_tsv(gdir / "compatibility.tsv")

    counts = graph.counts_by_provenance()
    pca_dim = models.pca.components.shape[0]
    manifest = {
        "schema_version": 1,
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "counts": {
            "n_cells": graph.n_cells,
            "n_reference": int(node_meta.reference_mask().sum()),
            "n_query": int((~node_meta.reference_mask()).sum()),
            "edges_total": graph.n_edges,
            "edges_by_provenance": counts,
            "peak_edge_count": graph.n_edges,
        },
        "features": {
            "dim": H.dim,
            "pca_dim": pca_dim,
            "go_dim_effective": H.dim - pca_dim,
            "similarity_space": models.similarity_space,
        },
        "delta": models.compat.radius,
        "perf_file": "../perf.json",
        "files": {},
    }
    for p in sorted(gdir.iterdir()):
        if p.name == MANIFEST_NAME:
            continue
        manifest["files"][p.name] = {"sha256": sha256_file(p),
                                     "bytes": p.stat().st_size}
    write_json(gdir / MANIFEST_NAME, manifest)
    return manifest


def load_graph_dir(gdir):
    """Read back (graph, node_meta, manifest); features come from the
    binary dump."""
    import json
    gdir = Path(gdir)
    mpath = gdir / MANIFEST_NAME
    if not mpath.exists():
        raise DataError(f"graph manifest not found: {mpath}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))

    ids, species, domain, split, cell_type = [], [], [], [], []
    lines = (gdir / "nodes.tsv").read_text(encoding="utf-8").splitlines()
    for line in lines[1:]:
        f = line.split("\t")
        ids.append(f[0])
        species.append(f[1])
        domain.append(f[2])
        split.append(Split(f[3]))
        cell_type.append(f[4] or None)
    node_meta = CellMetadata(ids, species, cell_type, domain, split)

    index = {c: i for i, c in enumerate(ids)}
    H = read_feature_binary(gdir / "node_features.bin")
    graph = CellGraph(ids, node_features=H)
    elines = (gdir / "edges.tsv").read_text(encoding="utf-8").splitlines()
    tag_cols = elines[0].split("\t")[2:]
    for line in elines[1:]:
        f = line.split("\t")
        u, v = index[f[0]], index[f[1]]
        for col, flag in zip(tag_cols, f[2:]):
            if flag == "1":
                graph.add_edges([(u, v)], Provenance(col))
    return graph, node_meta, manifest


def _labels_from_inputs(cfg: PipelineConfig, node_meta: CellMetadata) -> list:
    """Ground-truth types for scoring: query labels may live only in the
    input metadata file, never in the graph artifacts."""
    full = parse_metadata(cfg.inputs.metadata)
    by_id = {c: full.cell_type[i] for i, c in enumerate(full.cell_ids)}
    return [by_id.get(c) for c in node_meta.cell_ids]


def run_eval(cfg: PipelineConfig) -> dict:
    cfg.require("inputs", "qc", "features", "topology", "eval")
    gdir = cfg.eval.graph_dir or (Path(cfg.output_dir) / GRAPH_DIR_NAME)
    graph, node_meta, manifest = load_graph_dir(gdir)
    seed = cfg.eval.seed
    truth = _labels_from_inputs(cfg, node_meta)
    scoring_meta = CellMetadata(list(node_meta.cell_ids), list(node_meta.species),
                                list(truth), list(node_meta.domain),
                                list(node_meta.split))

    tasks = {}
    if "supervised" in cfg.eval.tasks:
        split = make_split(scoring_meta, "supervised", seed)
        _, acc = label_propagation_classify(graph, scoring_meta, split)
        tasks["supervised"] = {"accuracy": acc, "split_counts": split.counts()}

    if "clustering" in cfg.eval.tasks:
        part = cluster(graph, seed=seed)
        labeled = [i for i, t in enumerate(truth) if t is not None]
        truth_part = Partition.from_labels([truth[i] for i in labeled])
        sub = part.subset(labeled)
        tasks["clustering"] = {
            "ari": ari(sub, truth_part),
            "ami": ami(sub, truth_part),
            "n_clusters": part.n_clusters(),
        }

    needs_rebuild = "zero_shot" in cfg.eval.tasks
    needs_views = "cross_view" in cfg.eval.tasks
    if needs_rebuild or needs_views:
        timer = StageTimer()
        lognorm, meta, cell_dag, go_dag, tree, ann, _, _ = _prepare(cfg, timer)
        index_in_meta = {c: i for i, c in enumerate(meta.cell_ids)}
        missing = [c for c in node_meta.cell_ids if c not in index_in_meta]
        if missing:
            raise DataError(
                f"graph node(s) {missing[:3]} not reproducible from the "
                "configured inputs; config/graph mismatch")
        order = [index_in_meta[c] for c in node_meta.cell_ids]
        lognorm_nodes = lognorm.subset_cells(order)
        meta_nodes = meta.subset(order)

    if needs_views:
        if manifest["features"]["go_dim_effective"] <= 0:
            raise DataError("cross_view task needs the GO view "
                            "(topology.enable_go was off)")
        pca_dim = manifest["features"]["pca_dim"]
        go_view = FeatureMatrix(graph.node_features.values[:, pca_dim:],
                                ViewTag.KNOWLEDGE)
        cv = cross_view_alignment(lognorm_nodes, go_view, scoring_meta)
        tasks["cross_view"] = cv.to_dict()
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        cv.to_tsv(out / "cross_view.tsv")

    if needs_rebuild:
        zsplit = make_split(scoring_meta, "zero_shot", seed)
        seen = set(zsplit.seen_types)
        new_split = [Split.REFERENCE if (meta_nodes.split[i] is Split.REFERENCE
                                         and truth[i] in seen) else Split.QUERY
                     for i in range(meta_nodes.n_cells)]
        meta2 = CellMetadata(list(meta_nodes.cell_ids), list(meta_nodes.species),
                             list(meta_nodes.cell_type), list(meta_nodes.domain),
                             new_split)
        zgraph, _, zmeta = assemble_graph(lognorm_nodes, meta2, cell_dag,
                                          go_dag, tree, ann, cfg.features,
                                          cfg.topology)
        zpart = cluster(zgraph, seed=seed)
        ztruth = {c: t for c, t in zip(node_meta.cell_ids, truth)}
        unseen_idx = [i for i, c in enumerate(zmeta.cell_ids)
                      if ztruth.get(c) in set(zsplit.unseen_types)]
        if unseen_idx:
            truth_part = Partition.from_labels(
                [ztruth[zmeta.cell_ids[i]] for i in unseen_idx])
            sub = zpart.subset(unseen_idx)
            tasks["zero_shot"] = {
                "ari_unseen": ari(sub, truth_part),
                "ami_unseen": ami(sub, truth_part),
                "seen_types": list(zsplit.seen_types),
                "unseen_types": list(zsplit.unseen_types),
                "n_unseen_cells": len(unseen_idx),
            }
        else:
            tasks["zero_shot"] = {"ari_unseen": float("nan"),
                                  "ami_unseen": float("nan"),
                                  "seen_types": list(zsplit.seen_types),
                                  "unseen_types": list(zsplit.unseen_types),
                                  "n_unseen_cells": 0}

    report = {
        "tasks": tasks,
        "seeds": {"eval": seed, "global": cfg.seed},
        "config_hash": config_hash(cfg),
        "substitutions": list(SUBSTITUTION_NOTICES),
    }
    _validate_report(report)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "eval_report.json", report)
    return report


def _validate_report(report: dict) -> None:
    try:
        import jsonschema
    except ImportError:
        return
    jsonschema.validate(report, REPORT_SCHEMA)
