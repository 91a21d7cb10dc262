"""Matrix Market coordinate reader/writer with id sidecar files.

Layout: `<dir>/<name>.mtx` plus `<dir>/cell_ids.txt` and
`<dir>/gene_ids.txt`, one id per line in matrix order. Happy-path parsing
goes through the pandas C tokenizer; any anomaly falls back to a
line-by-line scan that reports the exact offending line.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pandas as pd

from ..errors import ParseError
from .types import ExpressionMatrix, NormalizationState

CELL_IDS_NAME = "cell_ids.txt"
GENE_IDS_NAME = "gene_ids.txt"

_HEADER_PREFIX = "%%MatrixMarket"


def _read_id_file(path: Path) -> list:
    if not path.exists():
        raise ParseError(path, None, "sidecar id file is missing")
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(path, None, f"not valid UTF-8: {exc}") from None
    ids = text.splitlines()
    for i, x in enumerate(ids, start=1):
        if not x.strip():
            raise ParseError(path, i, "empty id line")
    return [x.strip() for x in ids]


def _write_id_file(path: Path, ids) -> None:
    path.write_text("".join(f"{x}\n" for x in ids), encoding="utf-8")


def parse_matrix_market(path) -> ExpressionMatrix:
    """Parse `<path>` (.mtx) and its sidecar id files into a Raw matrix.

    The body streams straight into the pandas C tokenizer; header and
    comment lines are consumed first so no full-file copy is held."""
    path = Path(path)
    if not path.exists():
        raise ParseError(path, None, "file does not exist")
    try:
        with open(path, encoding="utf-8", newline=None) as fh:
            header = fh.readline()
            if not header:
                raise ParseError(path, 1, "empty file")
            parts = header.strip().split()
            if (len(parts) != 5 or parts[0] != _HEADER_PREFIX
                    or parts[1] != "matrix" or parts[2] != "coordinate"
                    or parts[3] not in ("real", "integer") or parts[4] != "general"):
                raise ParseError(path, 1,
                                 "header must be '%%MatrixMarket matrix "
                                 "coordinate real|integer general'")

            # % comments precede the size line; a '%normalization:' comment
            # marks matrices written after log-normalization
            ln = 1
            state = NormalizationState.RAW
            while True:
                line = fh.readline()
                if not line:
                    raise ParseError(path, ln, "missing size line")
                ln += 1
                stripped = line.strip()
                if stripped.startswith("%"):
                    comment = stripped.lstrip("%").strip()
                    if comment.startswith("normalization:"):
                        value = comment.split(":", 1)[1].strip()
                        try:
                            state = NormalizationState(value)
                        except ValueError:
                            raise ParseError(
                                path, ln,
                                f"unknown normalization state {value!r}") from None
                    continue
                break
            size_fields = stripped.split()
            if len(size_fields) != 3:
                raise ParseError(path, ln,
                                 "size line must be 'n_cells n_genes nnz'")
            try:
                n_cells, n_genes, nnz = (int(x) for x in size_fields)
            except ValueError:
                raise ParseError(path, ln,
                                 "size line fields must be integers") from None
            if n_cells < 0 or n_genes < 0 or nnz < 0:
                raise ParseError(path, ln,
                                 "size line fields must be non-negative")

            body_first_line = ln + 1
            rows, cols, vals = _parse_body(path, fh, body_first_line)
    except UnicodeDecodeError as exc:
        raise ParseError(path, None, f"not valid UTF-8: {exc}") from None

    if rows.size != nnz:
        raise ParseError(path, None,
                         f"header declares {nnz} entries but body has {rows.size}")

    _validate_entries(path, body_first_line, rows, cols, vals,
                      n_cells, n_genes)

    cell_ids = _read_id_file(path.parent / CELL_IDS_NAME)
    gene_ids = _read_id_file(path.parent / GENE_IDS_NAME)
    if len(cell_ids) != n_cells:
        raise ParseError(path.parent / CELL_IDS_NAME, None,
                         f"{len(cell_ids)} ids but matrix declares {n_cells} cells")
    if len(gene_ids) != n_genes:
        raise ParseError(path.parent / GENE_IDS_NAME, None,
                         f"{len(gene_ids)} ids but matrix declares {n_genes} genes")

    return ExpressionMatrix.from_triplets(
        cell_ids, gene_ids, rows - 1, cols - 1, vals,
        normalization_state=state)


def _parse_body(path, fh, first_line: int):
    """Fast tokenizer on the open handle; a precise line-by-line slow path
    re-reads the file on any anomaly."""
    try:
        frame = pd.read_csv(fh, sep=r"\s+", header=None,
                            names=("row", "col", "val"), dtype=np.float64,
                            engine="c", float_precision="round_trip")
    except pd.errors.EmptyDataError:
        empty = np.array([], dtype=np.int64)
        return empty, empty.copy(), np.array([], dtype=np.float64)
    except UnicodeDecodeError:
        raise
    except Exception:
        return _parse_body_slow(path, first_line)
    if frame.isna().any().any():
        return _parse_body_slow(path, first_line)
    raw_rows = frame["row"].to_numpy()
    raw_cols = frame["col"].to_numpy()
    vals = frame["val"].to_numpy()
    if (raw_rows != np.floor(raw_rows)).any() or (raw_cols != np.floor(raw_cols)).any():
        return _parse_body_slow(path, first_line)
    return raw_rows.astype(np.int64), raw_cols.astype(np.int64), vals


def _body_lines(path, first_line: int):
    """(lineno, stripped) for every body line, re-read from disk."""
    with open(path, encoding="utf-8", newline=None) as fh:
        for lineno, line in enumerate(fh, start=1):
            if lineno >= first_line:
                yield lineno, line.strip()


def _parse_body_slow(path, first_line: int):
    rows, cols, vals = [], [], []
    for lineno, stripped in _body_lines(path, first_line):
        if not stripped:
            continue
        fields = stripped.split()
        if len(fields) != 3:
            raise ParseError(path, lineno,
                             f"expected 'row col value', got {len(fields)} fields")
        try:
            r, c = int(fields[0]), int(fields[1])
        except ValueError:
            raise ParseError(path, lineno,
                             f"indices must be integers, got {fields[0]!r} "
                             f"{fields[1]!r}") from None
        try:
            v = float(fields[2])
        except ValueError:
            raise ParseError(path, lineno,
                             f"value is not a number: {fields[2]!r}") from None
        if math.isnan(v) or math.isinf(v):
            raise ParseError(path, lineno, f"value is not finite: {fields[2]!r}")
        rows.append(r)
        cols.append(c)
        vals.append(v)
    return (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
            np.array(vals, dtype=np.float64))


def _locate_entry(path, first_line: int, position: int) -> int:
    """1-based file line of the position-th non-blank body entry."""
    count = -1
    for lineno, stripped in _body_lines(path, first_line):
        if stripped:
            count += 1
            if count == position:
                return lineno
    return first_line


def _validate_entries(path, first_line, rows, cols, vals, n_cells, n_genes):
    if rows.size == 0:
        return
    checks = (
        (rows < 1, "cell index below 1"),
        (rows > n_cells, f"cell index above declared bound {n_cells}"),
        (cols < 1, "gene index below 1"),
        (cols > n_genes, f"gene index above declared bound {n_genes}"),
        (~np.isfinite(vals), "value is not finite"),
        (vals < 0, "negative value"),
    )
    for bad, msg in checks:
        if bad.any():
            pos = int(np.flatnonzero(bad)[0])
            raise ParseError(path, _locate_entry(path, first_line, pos), msg)
    lin = (rows - 1) * np.int64(n_genes) + (cols - 1)
    order = np.argsort(lin, kind="stable")
    dup = np.flatnonzero(np.diff(lin[order]) == 0)
    if dup.size:
        pos = int(max(order[dup[0]], order[dup[0] + 1]))
        raise ParseError(path, _locate_entry(path, first_line, pos),
                         "duplicate coordinate")


def write_matrix_market(matrix: ExpressionMatrix, path) -> None:
    """Write `<path>` plus the two sidecar id files next to it. Values are
    formatted with %.17g so parse(write(M)) is bit-exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows, cols, vals = matrix.triplets()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        if matrix.normalization_state is not NormalizationState.RAW:
            fh.write(f"%normalization: {matrix.normalization_state.value}\n")
        fh.write(f"{matrix.n_cells} {matrix.n_genes} {matrix.nnz}\n")
        if len(vals):
            frame = pd.DataFrame({"r": rows + 1, "c": cols + 1, "v": vals})
            frame.to_csv(fh, sep=" ", header=False, index=False,
                         float_format="%.17g", lineterminator="\n")
    _write_id_file(path.parent / CELL_IDS_NAME, matrix.cell_ids)
    _write_id_file(path.parent / GENE_IDS_NAME, matrix.gene_ids)
