"""Parsers/writers for all external file formats and the domain objects
they produce."""

from .matrix_market import parse_matrix_market, write_matrix_market
from .newick import parse_newick, read_newick, to_newick, write_newick
from .obo import parse_obo, write_obo
from .tables import parse_annotations, parse_metadata, write_annotations, write_metadata
from .types import (
    CellMetadata,
    ExpressionMatrix,
    GeneAnnotationMap,
    NormalizationState,
    OntologyDag,
    PhyloNode,
    PhyloTree,
    Split,
)

__all__ = [
    "CellMetadata",
    "ExpressionMatrix",
    "GeneAnnotationMap",
    "NormalizationState",
    "OntologyDag",
    "PhyloNode",
    "PhyloTree",
    "Split",
    "parse_annotations",
    "parse_matrix_market",
    "parse_metadata",
    "parse_newick",
    "parse_obo",
    "read_newick",
    "to_newick",
    "write_annotations",
    "write_matrix_market",
    "write_metadata",
    "write_newick",
    "write_obo",
]
