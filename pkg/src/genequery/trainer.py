"""MSE training loop and model (de)serialization."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint
from .config import RunConfig, dict_to_config
from .errors import ArgumentError, NumericError, StateError
from .featurize import Featurizers, GeneFeaturizer, ImageFeaturizer
from .model import GENE_AWARE, GeneQueryModel
from .numcore.optim import AdamState, adam_step
from .numcore.params import ParamStore
from .numcore.prng import SplitMix
from .numcore.tensor import Tensor, mul, no_grad, square, sub, tsum
from .stdata.dataset import NORMALIZED, Dataset
from .stdata.splits import Fold, GeneSplit

log = logging.getLogger(__name__)


def mse_loss(pred, truth, mask=None) -> Tensor:
    """Mean squared error over the valid cells of ``mask``."""
    pred = pred if isinstance(pred, Tensor) else Tensor(np.asarray(pred, dtype=np.float64))
    truth = np.asarray(truth, dtype=pred.dtype)
    if pred.shape != truth.shape:
        raise ArgumentError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if mask is None:
        count = truth.size
        if count == 0:
            raise ArgumentError("no valid cells for the loss")
        return mul(tsum(square(sub(pred, truth))), 1.0 / count)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), truth.shape)
    count = int(mask.sum())
    if count == 0:
        raise ArgumentError("no valid cells for the loss")
    diff = mul(sub(pred, truth), mask.astype(pred.dtype))
    return mul(tsum(square(diff)), 1.0 / count)


@dataclass
class EpochLog:
    epoch: int
    train_mse: float
    eval_mse: float


@dataclass
class TrainResult:
    model: GeneQueryModel
    featurizers: Featurizers
    checkpoint: Checkpoint
    loss_log: list[EpochLog] = field(default_factory=list)

    def loss_log_text(self) -> str:
        lines = ["epoch\ttrain_mse\teval_mse"]
        lines += [f"{e.epoch}\t{e.train_mse!r}\t{e.eval_mse!r}" for e in self.loss_log]
        return "\n".join(lines) + "\n"


def _payload_dim(dataset: Dataset):
    m = dataset.manifest
    return m.feature_dim if m.payload_kind == "feature" else (m.patch_h, m.patch_w)


def build_model(config: RunConfig, dataset: Dataset) -> tuple[GeneQueryModel, Featurizers]:
    gene = GeneFeaturizer(config.gene_spec())
    img = ImageFeaturizer(config.img_spec(dataset.payload_kind), dataset.payload_kind, _payload_dim(dataset))
    model = GeneQueryModel(config.model_config(img.dim, gene.dim))
    return model, Featurizers(gene, img)


def all_params(model: GeneQueryModel, featurizers: Featurizers) -> ParamStore:
    store = ParamStore()
    store.update(model.params)
    store.update(featurizers.params())
    return store


def _split_eval(rows: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    n_eval = int(math.floor(fraction * len(rows)))
    if n_eval == 0:
        return rows, rows[:0]
    if n_eval >= len(rows):
        n_eval = len(rows) - 1
    perm = SplitMix(seed, "eval_holdout").permutation(len(rows))
    held = np.zeros(len(rows), dtype=bool)
    held[perm[:n_eval]] = True
    return rows[~held], rows[held]


class _Encoder:
    """Per-batch features; frozen encoders are evaluated once up front."""

    def __init__(self, featurizers: Featurizers, spots, genes):
        self.f = featurizers
        self.spots = spots
        self.genes = genes
        self.img_cache = None if featurizers.img.params else featurizers.img.encode(spots).data
        self.gene_cache = None if featurizers.gene.params else featurizers.gene.encode(genes).data

    def img(self, idx) -> Tensor:
        if self.img_cache is not None:
            return Tensor(self.img_cache[idx])
        return self.f.img.encode([self.spots[i] for i in idx])

    def gene(self, idx) -> Tensor:
        if self.gene_cache is not None:
            return Tensor(self.gene_cache[idx])
        return self.f.gene.encode([self.genes[i] for i in idx])


def train(dataset: Dataset, fold: Fold | None, config: RunConfig, gene_split: GeneSplit | None = None,
          progress=None) -> TrainResult:
    """Fit a fresh model on the fold's training WSIs (all WSIs when ``fold`` is None)."""
    if dataset.expression.state != NORMALIZED:
        raise StateError("train expects normalized expression")
    tc = config.train_config()
    train_wsis = list(fold.train) if fold is not None else dataset.wsi_ids
    unknown = set(train_wsis) - set(dataset.wsi_ids)
    if unknown:
        raise ArgumentError(f"unknown WSIs in fold: {sorted(unknown)}")
    gene_idx = np.array(gene_split.seen if gene_split is not None else range(dataset.m), dtype=np.int64)

    model, featurizers = build_model(config, dataset)
    params = all_params(model, featurizers)
    state = AdamState(lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2, eps=tc.adam_eps)

    rows = dataset.rows_for(train_wsis)
    if len(rows) == 0:
        raise ArgumentError("fold has no training spots")
    spots = [dataset.spots[i] for i in rows]
    genes = [dataset.genes[j] for j in gene_idx]
    # the only read of expression values; restricted to training rows and seen genes
    targets = dataset.expression.take(rows=rows, cols=gene_idx).astype(model.dtype)
    local = np.arange(len(rows))
    train_local, eval_local = _split_eval(local, tc.eval_fraction, tc.seed)
    enc = _Encoder(featurizers, spots, genes)

    if model.config.mode == GENE_AWARE:
        steps = _gene_aware_schedule
    else:
        steps = _spot_aware_schedule

    logs: list[EpochLog] = []
    for epoch in range(1, tc.epochs + 1):
        total, cells = 0.0, 0
        for b, (spot_idx, gene_sel, loss_mask) in enumerate(steps(tc, epoch, train_local, spots, len(genes))):
            params.zero_grad()
            pred = _forward(model, enc, spots, spot_idx, gene_sel)
            truth = targets[np.ix_(spot_idx, gene_sel)]
            if model.config.mode != GENE_AWARE:
                truth = truth.T
            loss = mse_loss(pred, truth, loss_mask)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            loss.backward()
            adam_step(params, state)
            n = int(loss_mask.sum()) if loss_mask is not None else truth.size
            total += value * n
            cells += n
        eval_mse = _eval_loss(model, enc, spots, targets, eval_local, train_local)
        entry = EpochLog(epoch, total / cells, eval_mse)
        logs.append(entry)
        log.debug("epoch %d train %.6f eval %.6f", epoch, entry.train_mse, entry.eval_mse)
        if progress is not None:
            progress(entry)

    meta = {
        "payload_kind": dataset.payload_kind,
        "payload_dim": ",".join(str(v) for v in np.atleast_1d(_payload_dim(dataset))),
        "train_wsis": ",".join(train_wsis),
        "test_wsis": ",".join(fold.test) if fold is not None else "",
        "gene_names": ",".join(g.name for g in genes),
    }
    if gene_split is not None:
        meta["gene_ratio"] = repr(gene_split.ratio)
    ckpt = Checkpoint(config.as_dict(), params.state_dict(), final_epoch=tc.epochs, seed=tc.seed, meta=meta)
    return TrainResult(model, featurizers, ckpt, logs)


def _batches(order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield order[start:start + size]


def _gene_aware_schedule(tc, epoch, train_local, spots, k):
    """Batches of spots, each spot paired with the full gene sequence."""
    perm = SplitMix(tc.seed, "shuffle", epoch).permutation(len(train_local))
    all_genes = np.arange(k)
    for batch in _batches(train_local[perm], tc.batch_size):
        yield batch, all_genes, None


def _spot_aware_schedule(tc, epoch, train_local, spots, k):
    """Batches of gene queries against one WSI's spot sequence, WSIs taken in turn."""
    by_wsi: dict[str, list[int]] = {}
    for i, s in enumerate(spots):
        by_wsi.setdefault(s.wsi_id, []).append(i)
    is_train = np.zeros(len(spots), dtype=bool)
    is_train[train_local] = True
    perm = SplitMix(tc.seed, "shuffle", epoch).permutation(k)
    for gene_batch in _batches(perm, tc.batch_size):
        for wsi, members in by_wsi.items():
            seq = np.array(members, dtype=np.int64)
            mask = is_train[seq]
            if not mask.any():
                continue
            yield seq, gene_batch, np.broadcast_to(mask, (len(gene_batch), len(seq)))


def _forward(model: GeneQueryModel, enc: _Encoder, spots, spot_idx, gene_sel) -> Tensor:
    h_img, h_gene = model.project(enc.img(spot_idx), enc.gene(gene_sel))
    if model.config.mode == GENE_AWARE:
        return model.forward_gene_aware(h_img, h_gene)
    coords = np.array([[spots[i].x, spots[i].y] for i in spot_idx]) if model.config.coord_embed else None
    return model.forward_spot_aware(h_img, h_gene, coords=coords)


def _eval_loss(model, enc, spots, targets, eval_local, train_local) -> float:
    if len(eval_local) == 0:
        return float("nan")
    k = targets.shape[1]
    with no_grad():
        if model.config.mode == GENE_AWARE:
            pred = _forward(model, enc, spots, eval_local, np.arange(k)).data
            truth = targets[eval_local]
            return float(np.mean((pred - truth) ** 2))
        total, cells = 0.0, 0
        is_eval = np.zeros(len(spots), dtype=bool)
        is_eval[eval_local] = True
        by_wsi: dict[str, list[int]] = {}
        for i, s in enumerate(spots):
            by_wsi.setdefault(s.wsi_id, []).append(i)
        for members in by_wsi.values():
            seq = np.array(members)
            if not is_eval[seq].any():
                continue
            pred = _forward(model, enc, spots, seq, np.arange(k)).data.T
            diff = (pred - targets[seq])[is_eval[seq]]
            total += float((diff**2).sum())
            cells += diff.size
        return total / cells


# -- restore -------------------------------------------------------------------


def restore(ckpt: Checkpoint) -> tuple[GeneQueryModel, Featurizers, RunConfig]:
    """Rebuild model and featurizers from a checkpoint, bit-exact."""
    config = dict_to_config(ckpt.config)
    payload_kind = ckpt.meta.get("payload_kind", "feature")
    dims = [int(v) for v in ckpt.meta.get("payload_dim", "0").split(",")]
    payload_dim = dims[0] if payload_kind == "feature" else tuple(dims)
    gene = GeneFeaturizer(config.gene_spec())
    img = ImageFeaturizer(config.img_spec(payload_kind), payload_kind, payload_dim)
    model = GeneQueryModel(config.model_config(img.dim, gene.dim))
    featurizers = Featurizers(gene, img)
    all_params(model, featurizers).load_state_dict(ckpt.params)
    return model, featurizers, config
