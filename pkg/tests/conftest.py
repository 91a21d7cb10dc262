import sys
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

sys.path.insert(0, str(Path(__file__).parent))   # for `oracles`

from dogma.ingest.types import (
    CellMetadata,
    ExpressionMatrix,
    NormalizationState,
    Split,
)


def random_matrix(rng, n_cells=30, n_genes=12, density=0.3,
                  max_count=50) -> ExpressionMatrix:
    mask = rng.random((n_cells, n_genes)) < density
    counts = rng.integers(1, max_count, size=(n_cells, n_genes)) * mask
    X = sp.csr_matrix(counts.astype(np.float64))
    cells = [f"c{i:04d}" for i in range(n_cells)]
    genes = [f"g{j:04d}" for j in range(n_genes)]
    return ExpressionMatrix(cells, genes, X, NormalizationState.RAW)


def simple_metadata(matrix, species=None, cell_type=None, domain=None,
                    split=None) -> CellMetadata:
    n = matrix.n_cells
    return CellMetadata(
        cell_ids=list(matrix.cell_ids),
        species=list(species) if species is not None else ["sp00"] * n,
        cell_type=list(cell_type) if cell_type is not None else ["CT:T00"] * n,
        domain=list(domain) if domain is not None else ["d0"] * n,
        split=list(split) if split is not None else [Split.REFERENCE] * n,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
