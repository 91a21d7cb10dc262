"""Node and edge features: the observation view (log-normalize + PCA), the
knowledge view (GO enrichment z-scores), and their fusion.

Both view models are fit on Reference cells only and frozen, so Query
cells are projected with Reference statistics and never influence them.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError, ValidationError
from .ingest.types import (
    ExpressionMatrix,
    GeneAnnotationMap,
    NormalizationState,
    OntologyDag,
)

logger = logging.getLogger(__name__)

DENSE_PCA_MAX_GENES = 2000


class ViewTag(str, Enum):
    OBSERVATION = "Observation"
    KNOWLEDGE = "Knowledge"
    FUSED = "Fused"


@dataclass
class FeatureConfig:
    pca_dim: int = 50
    go_dim: int = 200
    normalize_target_sum: float = 1e4
    pca_seed: int = 0
    propagate_go_annotations: bool = False

    def __post_init__(self):
        if self.pca_dim < 1:
            raise ConfigError("pca_dim must be >= 1")
        if self.go_dim < 1:
            raise ConfigError("go_dim must be >= 1")
        if self.normalize_target_sum <= 0:
            raise ConfigError("normalize_target_sum must be positive")


@dataclass
class FeatureMatrix:
    values: np.ndarray
    view_tag: ViewTag
    column_labels: list | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError("feature matrix must be 2-D")
        if not np.isfinite(self.values).all():
            raise ValidationError("feature matrix contains NaN or Inf")
        if self.column_labels is not None and len(self.column_labels) != self.dim:
            raise ValidationError("column_labels length does not match dim")

    @property
    def n_cells(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def log_normalize(matrix: ExpressionMatrix, cfg: FeatureConfig) -> ExpressionMatrix:
    """Scale each cell to normalize_target_sum total, then ln(1+x).
    Zeros stay zero; all-zero cells are left untouched with a warning."""
    if matrix.normalization_state is not NormalizationState.RAW:
        raise DataError("log_normalize requires a Raw matrix")
    totals = matrix.cell_totals()
    zero_cells = int((totals == 0).sum())
    if zero_cells:
        logger.warning("%d all-zero cell(s) left unnormalized", zero_cells)
    scale = np.where(totals > 0, cfg.normalize_target_sum / np.where(totals > 0, totals, 1.0), 0.0)
    X = matrix.X.tocsr(copy=True)
    row_scale = np.repeat(scale, np.diff(X.indptr))
    X.data = np.log1p(X.data * row_scale)
    return ExpressionMatrix(matrix.cell_ids, matrix.gene_ids, X,
                            NormalizationState.LOG_NORMALIZED, validate=False)


def _fix_signs(components: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude loading of each component positive
    (first occurrence wins on magnitude ties)."""
    out = components.copy()
    for r in range(out.shape[0]):
        j = int(np.argmax(np.abs(out[r])))
        if out[r, j] < 0:
            out[r] = -out[r]
    return out


@dataclass
class PcaModel:
    """Frozen PCA fit: mean vector and orthonormal components, ordered by
    non-increasing explained variance."""

    mean: np.ndarray                 # (n_genes,)
    components: np.ndarray           # (pca_dim, n_genes); zero rows = padding
    explained_variance: np.ndarray   # (pca_dim,)
    seed: int
    n_padded: int = 0
    method: str = "dense"

    def transform(self, matrix: ExpressionMatrix) -> FeatureMatrix:
        if matrix.normalization_state is not NormalizationState.LOG_NORMALIZED:
            raise DataError("PCA projection requires a LogNormalized matrix")
        if matrix.n_genes != self.mean.shape[0]:
            raise DataError("matrix gene count does not match the PCA fit")
        proj = matrix.X @ self.components.T - self.mean @ self.components.T
        labels = [f"PC{i + 1}" for i in range(self.components.shape[0])]
        return FeatureMatrix(np.asarray(proj), ViewTag.OBSERVATION, labels)


def _centered_gram(X: sp.csr_matrix, mean: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    G = (X.T @ X).toarray()
    return (G - n * np.outer(mean, mean)) / max(n - 1, 1)


def _dense_pca(X: sp.csr_matrix, mean: np.ndarray, k: int):
    C = _centered_gram(X, mean)
    evals, evecs = np.linalg.eigh(C)
    order = np.argsort(-evals, kind="stable")
    evals = evals[order]
    evecs = evecs[:, order]
    return evals[:k], evecs[:, :k].T


def _randomized_pca(X: sp.csr_matrix, mean: np.ndarray, k: int, seed: int,
                    n_oversample: int = 10, n_iter: int = 7):
    """Range-finder SVD of the implicitly centered matrix."""
    n, g = X.shape
    rng = np.random.default_rng(seed)
    p = min(g, k + n_oversample)
    omega = rng.standard_normal((g, p))

    def apply(W):          # (X - 1 m^T) @ W
        return X @ W - np.outer(np.ones(n), mean @ W)

    def apply_t(U):        # (X - 1 m^T)^T @ U
        return X.T @ U - np.outer(mean, U.sum(axis=0))

    Y = apply(omega)
    Q, _ = np.linalg.qr(Y)
    for _ in range(n_iter):
        Z, _ = np.linalg.qr(apply_t(Q))
        Q, _ = np.linalg.qr(apply(Z))
    B = apply_t(Q).T                     # (p, g)
    _, s, Vt = np.linalg.svd(B, full_matrices=False)
    evals = (s ** 2) / max(n - 1, 1)
    return evals[:k], Vt[:k]


def fit_pca(matrix: ExpressionMatrix, cfg: FeatureConfig) -> PcaModel:
    """Fit on the given (Reference) matrix. Exact dense eigendecomposition
    up to DENSE_PCA_MAX_GENES genes, seeded randomized projection above."""
    if matrix.normalization_state is not NormalizationState.LOG_NORMALIZED:
        raise DataError("PCA requires a LogNormalized matrix")
    n, g = matrix.n_cells, matrix.n_genes
    if cfg.pca_dim > min(n, g):
        raise ConfigError(
            f"pca_dim {cfg.pca_dim} exceeds min(n_cells, n_genes) = {min(n, g)}")
    k = cfg.pca_dim
    X = matrix.X
    mean = np.asarray(X.mean(axis=0)).ravel()
    if g <= DENSE_PCA_MAX_GENES:
        evals, comps = _dense_pca(X, mean, k)
        method = "dense"
    else:
        evals, comps = _randomized_pca(X, mean, k, cfg.pca_seed)
        method = "randomized"

    # zero-pad directions beyond the numerical rank of the centered data
    max_rank = min(max(n - 1, 0), g)
    tol = max(evals[0], 0.0) * 1e-10 if evals.size else 0.0
    keep = np.flatnonzero(evals > tol)
    rank = min(int(keep.size), max_rank)
    n_padded = k - rank
    if n_padded > 0:
        logger.warning("pca_dim %d exceeds data rank %d; padding %d "
                       "component(s) with zeros", k, rank, n_padded)
        evals = evals.copy()
        comps = comps.copy()
        evals[rank:] = 0.0
        comps[rank:, :] = 0.0

    comps = _fix_signs(comps)
    return PcaModel(mean=mean, components=np.ascontiguousarray(comps),
                    explained_variance=np.maximum(evals, 0.0),
                    seed=cfg.pca_seed, n_padded=n_padded, method=method)


def pca(matrix: ExpressionMatrix, cfg: FeatureConfig):
    """Fit + project in one step; returns (FeatureMatrix, PcaModel)."""
    model = fit_pca(matrix, cfg)
    return model.transform(matrix), model


def _ancestor_closure(dag: OntologyDag, terms) -> set:
    out = set()
    stack = list(terms)
    while stack:
        t = stack.pop()
        if t in out:
            continue
        out.add(t)
        stack.extend(dag.parents.get(t, ()))
    return out


@dataclass
class GoModel:
    """Frozen knowledge-view fit: selected terms, their member gene
    columns, and Reference z-score statistics."""

    gene_ids: list
    term_ids: list
    members: list                    # per term: np.ndarray of gene indices
    mu: np.ndarray                   # per-term Reference mean of raw scores
    sigma: np.ndarray                # per-term Reference sd (0 => zero column)
    variances: np.ndarray = field(repr=False, default=None)

    def raw_scores(self, matrix: ExpressionMatrix) -> np.ndarray:
        """Mean log-normalized expression over each term's member genes."""
        if matrix.gene_ids != self.gene_ids:
            raise DataError("matrix gene set does not match the GO fit")
        n_terms = len(self.term_ids)
        indicator = sp.lil_matrix((matrix.n_genes, n_terms), dtype=np.float64)
        for t, idx in enumerate(self.members):
            indicator[idx, t] = 1.0 / idx.size
        scores = matrix.X @ indicator.tocsr()
        return np.asarray(scores.todense()) if sp.issparse(scores) else np.asarray(scores)

    def transform(self, matrix: ExpressionMatrix) -> FeatureMatrix:
        if matrix.normalization_state is not NormalizationState.LOG_NORMALIZED:
            raise DataError("GO enrichment requires a LogNormalized matrix")
        raw = self.raw_scores(matrix)
        safe = np.where(self.sigma > 0, self.sigma, 1.0)
        z = (raw - self.mu) / safe
        z[:, self.sigma == 0] = 0.0
        return FeatureMatrix(z, ViewTag.KNOWLEDGE, list(self.term_ids))


def fit_go(matrix: ExpressionMatrix, ann: GeneAnnotationMap, go: OntologyDag,
           cfg: FeatureConfig) -> GoModel:
    """Rank terms by cross-cell variance of the raw score on the given
    (Reference) matrix, keep the top go_dim, freeze z statistics."""
    if matrix.normalization_state is not NormalizationState.LOG_NORMALIZED:
        raise DataError("GO enrichment requires a LogNormalized matrix")
    if len(ann) == 0:
        raise DataError("gene annotation map is empty")

    gene_index = {g: i for i, g in enumerate(matrix.gene_ids)}
    members_by_term = {}
    for gene, terms in ann.terms_by_gene.items():
        gi = gene_index.get(gene)
        if gi is None:
            continue
        if cfg.propagate_go_annotations:
            terms = _ancestor_closure(go, terms)
        for t in terms:
            members_by_term.setdefault(t, []).append(gi)

    term_ids = sorted(members_by_term)   # terms with >= 1 annotated gene present
    if not term_ids:
        raise DataError("no GO term has an annotated gene present in the matrix")
    members = [np.array(sorted(members_by_term[t]), dtype=np.int64)
               for t in term_ids]

    probe = GoModel(gene_ids=list(matrix.gene_ids), term_ids=term_ids,
                    members=members, mu=np.zeros(len(term_ids)),
                    sigma=np.ones(len(term_ids)))
    raw = probe.raw_scores(matrix)
    var = raw.var(axis=0)                # population variance, ranking metric

    if len(term_ids) < cfg.go_dim:
        logger.warning("only %d eligible GO terms (< go_dim %d); keeping all",
                       len(term_ids), cfg.go_dim)
        chosen = list(range(len(term_ids)))
    else:
        order = sorted(range(len(term_ids)), key=lambda i: (-var[i], term_ids[i]))
        chosen = sorted(order[:cfg.go_dim], key=lambda i: term_ids[i])

    sel_terms = [term_ids[i] for i in chosen]
    sel_members = [members[i] for i in chosen]
    sel_raw = raw[:, chosen]
    mu = sel_raw.mean(axis=0)
    sigma = sel_raw.std(axis=0)
    return GoModel(gene_ids=list(matrix.gene_ids), term_ids=sel_terms,
                   members=sel_members, mu=mu, sigma=sigma,
                   variances=var[chosen])


def go_enrichment(matrix: ExpressionMatrix, ann: GeneAnnotationMap,
                  go: OntologyDag, cfg: FeatureConfig):
    """Fit + transform on the same matrix; returns (FeatureMatrix, GoModel)."""
    model = fit_go(matrix, ann, go, cfg)
    return model.transform(matrix), model


def fuse(obs: FeatureMatrix, know: FeatureMatrix | None) -> FeatureMatrix:
    """Concatenate observation and knowledge views; a missing knowledge
    view (GO prior disabled) fuses to the observation view alone."""
    if know is None or know.dim == 0:
        return FeatureMatrix(obs.values.copy(), ViewTag.FUSED,
                             list(obs.column_labels or []) or None)
    if obs.n_cells != know.n_cells:
        raise DataError("view row counts differ; cannot fuse")
    values = np.hstack([obs.values, know.values])
    labels = None
    if obs.column_labels is not None and know.column_labels is not None:
        labels = list(obs.column_labels) + list(know.column_labels)
    return FeatureMatrix(values, ViewTag.FUSED, labels)


def edge_features(H: FeatureMatrix, edges) -> np.ndarray:
    """Per-edge vector [H_u || H_v] in the stored endpoint order."""
    edges = list(edges)
    out = np.empty((len(edges), 2 * H.dim), dtype=np.float64)
    for r, (u, v) in enumerate(edges):
        if not (0 <= u < H.n_cells and 0 <= v < H.n_cells):
            raise DataError(f"edge ({u}, {v}) endpoint out of range")
        out[r, :H.dim] = H.values[u]
        out[r, H.dim:] = H.values[v]
    return out


def write_feature_tsv(fm: FeatureMatrix, cell_ids, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    labels = fm.column_labels or [f"f{i}" for i in range(fm.dim)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(["cell_id"] + list(labels)) + "\n")
        for i, cid in enumerate(cell_ids):
            row = "\t".join("%.10g" % v for v in fm.values[i])
            fh.write(f"{cid}\t{row}\n")


def write_feature_binary(fm: FeatureMatrix, path) -> None:
    """Raw little-endian float64 row-major dump plus a JSON shape sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(fm.values, dtype="<f8")
    path.write_bytes(data.tobytes())
    sidecar = {
        "rows": fm.n_cells,
        "cols": fm.dim,
        "dtype": "float64",
        "byte_order": "little",
        "order": "row-major",
        "view": fm.view_tag.value,
        "column_labels": fm.column_labels,
    }
    Path(str(path) + ".json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def read_feature_binary(path) -> FeatureMatrix:
    path = Path(path)
    sidecar = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    data = np.frombuffer(path.read_bytes(), dtype="<f8").astype(np.float64)
    values = data.reshape(sidecar["rows"], sidecar["cols"])
    return FeatureMatrix(values, ViewTag(sidecar["view"]),
                         sidecar.get("column_labels"))
