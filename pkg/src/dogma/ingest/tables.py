"""Tab-separated tables: gene->GO annotations and per-cell metadata."""

from __future__ import annotations

from pathlib import Path

from ..errors import ParseError, ValidationError
from .types import CellMetadata, GeneAnnotationMap, OntologyDag, Split

METADATA_HEADER = ("cell_id", "species", "cell_type", "domain", "split")


def _read_lines(path: Path) -> list:
    if not path.exists():
        raise ParseError(path, None, "file does not exist")
    try:
        return path.read_text(encoding="utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise ParseError(path, None, f"not valid UTF-8: {exc}") from None


def parse_annotations(path, go: OntologyDag) -> GeneAnnotationMap:
    """Lines of 'gene_id<TAB>go_term_id'; blank lines skipped; every term
    must exist in the loaded GO ontology."""
    path = Path(path)
    mapping = {}
    for lineno, raw in enumerate(_read_lines(path), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) == 1:            # tolerate space-separated pairs
            fields = line.split()
        if len(fields) != 2:
            raise ParseError(path, lineno,
                             f"expected 'gene_id<TAB>go_term_id', got {raw!r}")
        gene, term = fields[0].strip(), fields[1].strip()
        if not gene or not term:
            raise ParseError(path, lineno, "empty gene or term id")
        if term not in go:
            raise ParseError(path, lineno,
                             f"GO term {term!r} not present in the ontology")
        mapping.setdefault(gene, set()).add(term)
    return GeneAnnotationMap(mapping)


def write_annotations(ann: GeneAnnotationMap, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for gene in sorted(ann.terms_by_gene):
        for term in sorted(ann.terms_by_gene[gene]):
            rows.append(f"{gene}\t{term}\n")
    path.write_text("".join(rows), encoding="utf-8")


def parse_metadata(path) -> CellMetadata:
    """Fixed-header TSV; empty cell_type means unlabeled."""
    path = Path(path)
    lines = _read_lines(path)
    if not lines:
        raise ParseError(path, 1, "empty metadata file")
    header = tuple(h.strip() for h in lines[0].split("\t"))
    if header != METADATA_HEADER:
        expected = "\t".join(METADATA_HEADER)
        raise ParseError(path, 1, f"header must be {expected!r}")
    cell_ids, species, cell_type, domain, split = [], [], [], [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        fields = raw.rstrip("\r\n").split("\t")
        if len(fields) != 5:
            raise ParseError(path, lineno,
                             f"expected 5 tab-separated fields, got {len(fields)}")
        cid, sp, ct, dom, spl = (f.strip() for f in fields)
        if not cid:
            raise ParseError(path, lineno, "empty cell_id")
        try:
            spl_val = Split(spl)
        except ValueError:
            raise ParseError(path, lineno,
                             f"split must be Reference or Query, got {spl!r}") from None
        cell_ids.append(cid)
        species.append(sp)
        cell_type.append(ct or None)
        domain.append(dom)
        split.append(spl_val)
    try:
        return CellMetadata(cell_ids, species, cell_type, domain, split)
    except ValidationError as exc:
        raise ParseError(path, None, str(exc)) from None


def write_metadata(meta: CellMetadata, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = ["\t".join(METADATA_HEADER) + "\n"]
    for i in range(meta.n_cells):
        rows.append("\t".join((
            meta.cell_ids[i], meta.species[i], meta.cell_type[i] or "",
            meta.domain[i], meta.split[i].value)) + "\n")
    path.write_text("".join(rows), encoding="utf-8")
