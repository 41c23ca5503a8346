from __future__ import annotations

import numpy as np

from ..errors import ArgumentError, StateError
from .dataset import NORMALIZED, RAW, ExpressionMatrix


def rowwise_minmax(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    lo = values.min(axis=1, keepdims=True)
    span = values.max(axis=1, keepdims=True) - lo
    out = np.zeros_like(values)
    ok = span[:, 0] > 0
    out[ok] = (values[ok] - lo[ok]) / span[ok]
    return out


def normalize(raw: ExpressionMatrix) -> ExpressionMatrix:
    """log1p, then per-spot min-max over genes; constant rows become zeros."""
    if raw.state != RAW:
        raise StateError(f"normalize expects raw expression, got state {raw.state!r}")
    if raw.values.shape[1] == 0:
        return ExpressionMatrix(raw.values.copy(), NORMALIZED)
    return ExpressionMatrix(rowwise_minmax(np.log1p(raw.values)), NORMALIZED)


def _top_k(scores: np.ndarray, k: int) -> np.ndarray:
    # stable sort on the negated score keeps lower indices first among ties
    return np.argsort(-scores, kind="stable")[:k]


def select_hvg(raw_per_wsi, k: int) -> list[int]:
    """Union over WSIs of each WSI's k genes with the highest log1p variance."""
    mats = [m.values if isinstance(m, ExpressionMatrix) else np.asarray(m, dtype=np.float64) for m in raw_per_wsi]
    if not mats:
        raise ArgumentError("select_hvg needs at least one matrix")
    n_genes = mats[0].shape[1]
    if any(m.shape[1] != n_genes for m in mats):
        raise ArgumentError("per-WSI matrices must share the gene library")
    if k < 0 or k > n_genes:
        raise ArgumentError(f"k={k} outside [0, {n_genes}]")
    chosen: set[int] = set()
    for m in mats:
        var = np.log1p(m).var(axis=0) if m.shape[0] else np.zeros(n_genes)
        chosen.update(int(j) for j in _top_k(var, k))
    return sorted(chosen)


def filter_min_spots(raw: ExpressionMatrix, threshold: int) -> list[int]:
    """Genes expressed (> 0) in at least ``threshold`` spots."""
    if isinstance(raw, ExpressionMatrix):
        if raw.state != RAW:
            raise StateError("filter_min_spots expects raw expression")
        values = raw.values
    else:
        values = np.asarray(raw)
    counts = (values > 0).sum(axis=0)
    return [int(j) for j in np.flatnonzero(counts >= threshold)]
