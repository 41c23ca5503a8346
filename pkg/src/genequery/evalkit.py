"""Per-gene PCC metrics, HEG/HVG/ALL panels, fold aggregation, transfer and latent export."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError
from .model import predict_matrix, spot_latents
from .numcore.prng import SplitMix
from .stdata.binfmt import write_matrix
from .stdata.dataset import Dataset

PANELS = ("HEG", "HVG", "ALL")
SCOPES = ("all", "seen", "unseen")
PANEL_SIZE = 50
UNDEFINED = float("nan")


def pearson(pred, truth) -> float:
    """Sample PCC; NaN when either side has zero variance."""
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ArgumentError(f"pearson needs equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ArgumentError("pearson needs at least 2 samples")
    # exact constancy test; the float mean of a constant vector need not equal its entries
    if np.all(x == x[0]) or np.all(y == y[0]):
        return UNDEFINED
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        return UNDEFINED
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def gene_pccs(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    return np.array([pearson(pred[:, j], truth[:, j]) for j in range(truth.shape[1])])


@dataclass
class GenePanels:
    heg: list[int]
    hvg: list[int]
    all: list[int]

    def get(self, panel: str) -> list[int]:
        return {"HEG": self.heg, "HVG": self.hvg, "ALL": self.all}[panel]


def build_panels(truth, size: int = PANEL_SIZE) -> GenePanels:
    """Top genes by mean and by variance of ground truth; ties go to the lower index."""
    truth = np.asarray(truth, dtype=np.float64)
    means = truth.mean(axis=0)
    var = truth.var(axis=0)
    heg = [int(j) for j in np.argsort(-means, kind="stable")[:size]]
    hvg = [int(j) for j in np.argsort(-var, kind="stable")[:size]]
    return GenePanels(heg, hvg, list(range(truth.shape[1])))


@dataclass
class EvalEntry:
    fold: str
    scope: str
    values: dict[str, float]
    n_genes: dict[str, int]
    n_excluded: dict[str, int]
    all_excluded: dict[str, bool]
    gene_pcc: np.ndarray = field(repr=False, default=None)


def score_panels(pred, truth, panels: GenePanels, scope=None, fold="0", scope_name="all") -> EvalEntry:
    """Average per-gene PCC over each panel restricted to ``scope`` (column indices)."""
    pcc = gene_pccs(np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64))
    allowed = set(range(pcc.size)) if scope is None else {int(j) for j in scope}
    values, n_genes, n_excl, flags = {}, {}, {}, {}
    for panel in PANELS:
        members = [j for j in panels.get(panel) if j in allowed]
        defined = [pcc[j] for j in members if not math.isnan(pcc[j])]
        n_excl[panel] = len(members) - len(defined)
        n_genes[panel] = len(defined)
        flags[panel] = not defined
        values[panel] = float(np.mean(defined)) if defined else 0.0
    return EvalEntry(str(fold), scope_name, values, n_genes, n_excl, flags, pcc)


def _scope_indices(scope: str, m: int, seen=None, unseen=None):
    if scope == "all":
        return None
    if scope == "seen":
        if seen is None:
            raise ArgumentError("seen scope needs a gene split")
        return seen
    if scope == "unseen":
        if unseen is None:
            raise ArgumentError("unseen scope needs a gene split")
        return unseen
    raise ArgumentError(f"scope must be one of {SCOPES}, got {scope!r}")


def evaluate(model, featurizers, dataset: Dataset, test_wsis, scope: str = "all", seen=None, unseen=None,
             fold="0", genes=None) -> EvalEntry:
    """Per-gene PCC over test spots pooled across ``test_wsis``, averaged per panel."""
    rows = dataset.rows_for(test_wsis)
    if len(rows) < 2:
        raise ArgumentError("evaluation needs at least 2 test spots")
    gene_idx = np.arange(dataset.m) if genes is None else np.asarray(genes, dtype=np.int64)
    spots = [dataset.spots[i] for i in rows]
    records = [dataset.genes[j] for j in gene_idx]
    pred = predict_matrix(model, featurizers, spots, records)
    truth = dataset.expression.take(rows=rows, cols=gene_idx)
    panels = build_panels(truth)
    local_scope = _scope_indices(scope, len(gene_idx), seen, unseen)
    if local_scope is not None and genes is not None:
        pos = {int(g): i for i, g in enumerate(gene_idx)}
        local_scope = [pos[j] for j in local_scope if j in pos]
    return score_panels(pred, truth, panels, local_scope, fold, scope)


@dataclass
class EvalReport:
    entries: list[EvalEntry]
    mean: dict[str, float]
    var: dict[str, float]
    sd: dict[str, float]

    @property
    def scope(self) -> str:
        return self.entries[0].scope

    def to_tsv(self) -> str:
        lines = ["panel\tscope\tfold\tvalue\tvar\tsd\tn_genes\tn_excluded"]
        for panel in PANELS:
            for e in self.entries:
                lines.append(
                    f"{panel}\t{e.scope}\t{e.fold}\t{e.values[panel]!r}\tNA\tNA\t{e.n_genes[panel]}\t{e.n_excluded[panel]}"
                )
            n = sum(e.n_genes[panel] for e in self.entries)
            x = sum(e.n_excluded[panel] for e in self.entries)
            lines.append(
                f"{panel}\t{self.scope}\tall\t{self.mean[panel]!r}\t{self.var[panel]!r}\t{self.sd[panel]!r}\t{n}\t{x}"
            )
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = [f"scope: {self.scope}   folds: {len(self.entries)}"]
        for panel in PANELS:
            lines.append(f"  {panel:<4} PCC mean {self.mean[panel]:.4f}  var {self.var[panel]:.6f}  sd {self.sd[panel]:.4f}")
            for e in self.entries:
                note = "  (all genes excluded)" if e.all_excluded[panel] else ""
                lines.append(
                    f"      fold {e.fold}: {e.values[panel]:.4f}  genes {e.n_genes[panel]}  "
                    f"excluded {e.n_excluded[panel]}{note}"
                )
        return "\n".join(lines) + "\n"


def aggregate_folds(entries) -> EvalReport:
    """Cross-fold arithmetic mean and population variance per panel."""
    entries = list(entries)
    if not entries:
        raise ArgumentError("aggregate_folds needs at least one entry")
    mean, var, sd = {}, {}, {}
    for panel in PANELS:
        vals = np.array([e.values[panel] for e in entries], dtype=np.float64)
        mean[panel] = float(vals.mean())
        var[panel] = float(((vals - vals.mean()) ** 2).mean()) if len(vals) > 1 else 0.0
        sd[panel] = math.sqrt(var[panel])
    return EvalReport(entries, mean, var, sd)


def write_report(report: EvalReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.tsv").write_text(report.to_tsv(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")


def transfer_eval(model, featurizers, trained_genes, dataset_b: Dataset, fold="transfer") -> EvalReport:
    """Evaluate on every spot of ``dataset_b``, restricted to genes named in both datasets.

    Queries are featurized from dataset B's own gene metadata.
    """
    trained = set(trained_genes)
    shared = [j for j, g in enumerate(dataset_b.genes) if g.name in trained]
    if not shared:
        raise ArgumentError("no gene names shared between the training and transfer datasets")
    entry = evaluate(model, featurizers, dataset_b, dataset_b.wsi_ids, fold=fold, genes=shared)
    return aggregate_folds([entry])


# -- latents -------------------------------------------------------------------------


def kmeans(vectors, k: int, seed: int, max_iter: int = 100) -> np.ndarray:
    """Lloyd iterations from k-means++ seeding drawn from the splitmix stream."""
    x = np.asarray(vectors, dtype=np.float64)
    n = x.shape[0]
    if k < 1 or k > n:
        raise ArgumentError(f"k={k} must lie in [1, {n}]")
    rng = SplitMix(seed, "kmeans")
    centers = [x[int(rng.uniform(1)[0] * n)]]
    for _ in range(1, k):
        d2 = np.min(((x[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        if total == 0:
            pick = len(centers)
        else:
            cdf = np.cumsum(d2) / total
            pick = int(np.searchsorted(cdf, rng.uniform(1)[0], side="right"))
            pick = min(pick, n - 1)
        centers.append(x[pick])
    centers = np.array(centers)
    labels = np.full(n, -1)
    for _ in range(max_iter):
        dist = ((x[:, None, :] - centers[None]) ** 2).sum(-1)
        new = np.argmin(dist, axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = x[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return labels.astype(np.int64)


def latent_export(model, featurizers, dataset: Dataset, wsi_ids=None, genes=None) -> tuple[list, np.ndarray]:
    wsi_ids = dataset.wsi_ids if wsi_ids is None else list(wsi_ids)
    rows = dataset.rows_for(wsi_ids)
    spots = [dataset.spots[i] for i in rows]
    records = dataset.genes.records if genes is None else list(genes)
    return spots, spot_latents(model, featurizers, spots, records)


def write_latents(spots, latents: np.ndarray, labels: np.ndarray, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(out / "latents.f32", latents)
    body = "".join(f"{s.spot_id}\t{int(lab)}\n" for s, lab in zip(spots, labels))
    (out / "labels.tsv").write_text(body, encoding="utf-8")
