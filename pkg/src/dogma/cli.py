"""Command-line entry point: synth / build / eval / inspect.

Exit codes: 0 success, 2 config error, 3 data error, 4 internal error.
DOGMA_LOG sets the log level (debug/info/warning/error); --threads caps
BLAS worker threads and must act before numpy loads, which is why the
heavy imports live inside the command functions.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

logger = logging.getLogger("dogma")


def _setup_logging():
    level_name = os.environ.get("DOGMA_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _cap_threads(n: int | None):
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ[var] = str(n)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dogma",
        description="Deterministic knowledge-guided cell graph construction")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--out", default=None, help="override output_dir")
        p.add_argument("--seed", type=int, default=None,
                       help="override the global seed and all stage seeds")
        p.add_argument("--threads", type=int, default=None,
                       help="cap BLAS/OpenMP worker threads")

    add_common(sub.add_parser("synth", help="generate a synthetic corpus"))
    add_common(sub.add_parser("build", help="run the full graph-construction "
                                            "pipeline"))
    add_common(sub.add_parser("eval", help="run evaluation tasks on a built "
                                           "graph"))
    insp = sub.add_parser("inspect", help="summarize a graph directory")
    insp.add_argument("graph_dir", help="directory containing manifest.json")
    return parser


def _load(args):
    from .config import load_config
    return load_config(args.config, seed_override=args.seed,
                       out_override=args.out)


def cmd_synth(args) -> int:
    from .pipeline import run_synth
    paths = run_synth(_load(args))
    for name, p in sorted(paths.items()):
        print(f"{name}\t{p}")
    return EXIT_OK


def cmd_build(args) -> int:
    from .pipeline import run_build
    result = run_build(_load(args))
    counts = result.manifest["counts"]
    print(f"graph written to {result.out_dir}")
    print(f"cells: {counts['n_cells']} (reference {counts['n_reference']}, "
          f"query {counts['n_query']})")
    print(f"edges: {counts['edges_total']}")
    for tag, c in sorted(counts["edges_by_provenance"].items()):
        print(f"  {tag}: {c}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .pipeline import run_eval
    cfg = _load(args)
    report = run_eval(cfg)
    print(f"eval report written to {cfg.output_dir}/eval_report.json")
    for task, payload in sorted(report["tasks"].items()):
        print(f"{task}: {payload}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    import numpy as np

    from .pipeline import load_graph_dir
    graph, node_meta, manifest = load_graph_dir(args.graph_dir)
    counts = graph.counts_by_provenance()
    m_counts = manifest["counts"]
    print(f"nodes: {graph.n_cells} (reference "
          f"{int(node_meta.reference_mask().sum())}, "
          f"query {int((~node_meta.reference_mask()).sum())})")
    print(f"edges: {graph.n_edges}")
    for tag in sorted(counts):
        print(f"  {tag}: {counts[tag]}")
    deg = graph.degrees()
    hist = np.bincount(deg) if deg.size else np.array([], dtype=np.int64)
    print("degree histogram (degree count):")
    for d, c in enumerate(hist):
        if c:
            print(f"  {d} {c}")
    print(f"config hash: {manifest['config_hash']}")
    mismatches = []
    if m_counts["edges_total"] != graph.n_edges:
        mismatches.append("edges_total")
    for tag, c in counts.items():
        if m_counts["edges_by_provenance"].get(tag, 0) != c:
            mismatches.append(f"provenance {tag}")
    if m_counts["n_cells"] != graph.n_cells:
        mismatches.append("n_cells")
    if mismatches:
        from .errors import DataError
        raise DataError("manifest disagrees with graph files: "
                        + ", ".join(mismatches))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None) is not None:
        _cap_threads(args.threads)
    _setup_logging()

    from .errors import ConfigError, DataError, DogmaError
    handlers = {"synth": cmd_synth, "build": cmd_build,
                "eval": cmd_eval, "inspect": cmd_inspect}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DogmaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # anything unanticipated
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
