"""The GeneQuery network.

Spot and gene features are projected to a shared width, fused by
addition, passed through L pre-norm transformer blocks and read out by a
per-position affine regressor. Gene-aware mode runs one sequence of genes
per spot; spot-aware mode runs one sequence of spots per queried gene.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .numcore.nn import LN_EPS, init_block, transformer_block
from .numcore.params import ParamStore, init_weight
from .numcore.tensor import Tensor, add, as_tensor, concat, linear, no_grad, reshape, take_last, take_rows, transpose

GENE_AWARE = "gene_aware"
SPOT_AWARE = "spot_aware"
MODES = (GENE_AWARE, SPOT_AWARE)
DEFAULT_MAX_LEN = {GENE_AWARE: 3467, SPOT_AWARE: 2400}


@dataclass
class ModelConfig:
    mode: str = GENE_AWARE
    d_fuse: int = 256
    layers: int = 2
    heads: int = 8
    max_len: int | None = None
    img_in_dim: int = 30
    gene_in_dim: int = 64
    seed: int = 0
    coord_embed: bool = False
    coord_max: int = 256

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.max_len is None:
            self.max_len = DEFAULT_MAX_LEN[self.mode]
        if self.d_fuse < 1 or self.heads < 1 or self.d_fuse % self.heads:
            raise ConfigError(f"d_fuse={self.d_fuse} must be divisible by heads={self.heads}")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")
        if self.layers < 0:
            raise ConfigError("layers must be >= 0")
        if self.img_in_dim < 1 or self.gene_in_dim < 1:
            raise ConfigError("input dims must be >= 1")
        if self.coord_embed and self.mode != SPOT_AWARE:
            raise ConfigError("coordinate embedding is only defined for spot_aware mode")


def init_params(config: ModelConfig, dtype=np.float32) -> dict[str, np.ndarray]:
    d, seed = config.d_fuse, config.seed
    values = {
        "img_proj.w": init_weight(seed, "img_proj.w", (config.img_in_dim, d), dtype),
        "img_proj.b": np.zeros(d, dtype=dtype),
        "gene_proj.w": init_weight(seed, "gene_proj.w", (config.gene_in_dim, d), dtype),
        "gene_proj.b": np.zeros(d, dtype=dtype),
        "reg.w": init_weight(seed, "reg.w", (d, 1), dtype),
        "reg.b": np.zeros(1, dtype=dtype),
    }
    for layer in range(config.layers):
        values.update(init_block(seed, f"block{layer}.", d, dtype))
    if config.coord_embed:
        for axis in ("x", "y"):
            values[f"coord.{axis}"] = init_weight(seed, f"coord.{axis}", (config.coord_max, d), dtype)
    return values


class GeneQueryModel:
    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.params = ParamStore({k: Tensor(v) for k, v in init_params(config, dtype).items()})

    @property
    def dtype(self):
        return self.params["reg.w"].dtype

    def astype(self, dtype) -> "GeneQueryModel":
        self.params.astype(dtype)
        return self

    def _cast(self, x) -> Tensor:
        t = as_tensor(x)
        if t.dtype != self.dtype and t._backward is None and not t.requires_grad:
            t = Tensor(t.data.astype(self.dtype))
        return t

    # -- stages ------------------------------------------------------------------

    def project(self, e_img, e_gene):
        e_img, e_gene = self._cast(e_img), self._cast(e_gene)
        if e_img.shape[-1] != self.config.img_in_dim:
            raise ShapeError(f"image features have dim {e_img.shape[-1]}, expected {self.config.img_in_dim}")
        if e_gene.shape[-1] != self.config.gene_in_dim:
            raise ShapeError(f"gene features have dim {e_gene.shape[-1]}, expected {self.config.gene_in_dim}")
        p = self.params
        return (
            linear(e_img, p["img_proj.w"], p["img_proj.b"]) if e_img.ndim > 1 else _linear_vec(e_img, p, "img_proj"),
            linear(e_gene, p["gene_proj.w"], p["gene_proj.b"]) if e_gene.ndim > 1 else _linear_vec(e_gene, p, "gene_proj"),
        )

    def coord_embedding(self, coords) -> Tensor:
        coords = np.clip(np.asarray(coords, dtype=np.int64), 0, self.config.coord_max - 1)
        p = self.params
        return add(take_rows(p["coord.x"], coords[:, 0]), take_rows(p["coord.y"], coords[:, 1]))

    def _encode_chunk(self, joint: Tensor, mask: np.ndarray) -> Tensor:
        h = joint
        for layer in range(self.config.layers):
            h = transformer_block(h, mask, self.params.subset(f"block{layer}."), self.config.heads, LN_EPS)
        return h

    def encode(self, joint: Tensor, mask=None) -> Tensor:
        """Transformer stack over (B, S, d); sequences longer than max_len run as independent chunks."""
        b, s, _ = joint.shape
        mask = np.ones((b, s), dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(b, s)
        if self.config.layers == 0:
            return joint
        size = self.config.max_len
        if s <= size:
            return self._encode_chunk(joint, mask)
        pieces = []
        for start in range(0, s, size):
            idx = np.arange(start, min(start + size, s))
            pieces.append(self._encode_chunk(_slice_seq(joint, idx), mask[:, idx]))
        return concat(pieces, axis=1)

    def regress(self, h: Tensor) -> Tensor:
        out = linear(h, self.params["reg.w"], self.params["reg.b"])
        return reshape(out, out.shape[:-1])

    def _run(self, joint: Tensor, mask) -> Tensor:
        return self.regress(self.encode(joint, mask))

    # -- modes ---------------------------------------------------------------------

    def gene_aware_joint(self, h_img: Tensor, h_gene_seq: Tensor) -> Tensor:
        d = self.config.d_fuse
        b = h_img.shape[0]
        return add(reshape(h_img, (b, 1, d)), reshape(h_gene_seq, (1,) + h_gene_seq.shape))

    def spot_aware_joint(self, h_img_seq: Tensor, h_gene: Tensor) -> Tensor:
        d = self.config.d_fuse
        g = h_gene.shape[0]
        return add(reshape(h_gene, (g, 1, d)), reshape(h_img_seq, (1,) + h_img_seq.shape))

    def forward_gene_aware(self, h_img, h_gene_seq, mask=None) -> Tensor:
        """Predictions for every gene of the sequence, given one spot (or a batch of spots).

        ``h_img`` is (d,) or (B, d), ``h_gene_seq`` is (k, d). For a single spot the
        result keeps only unmasked positions; for a batch it is (B, k).
        """
        h_img, h_gene_seq = self._cast(h_img), self._cast(h_gene_seq)
        single = h_img.ndim == 1
        if single:
            h_img = reshape(h_img, (1, h_img.shape[0]))
        self._check_seq(h_gene_seq)
        k = h_gene_seq.shape[0]
        mask = np.ones(k, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        joint = self.gene_aware_joint(h_img, h_gene_seq)
        out = self._run(joint, np.broadcast_to(mask, (h_img.shape[0], k)))
        if single:
            return take_last(reshape(out, (k,)), np.flatnonzero(mask))
        return out

    def forward_spot_aware(self, h_img_seq, h_gene, mask=None, coords=None) -> Tensor:
        """Predictions for every spot of the sequence, given one gene query (or a batch).

        ``h_img_seq`` is (n, d), ``h_gene`` is (d,) or (G, d).
        """
        h_img_seq, h_gene = self._cast(h_img_seq), self._cast(h_gene)
        single = h_gene.ndim == 1
        if single:
            h_gene = reshape(h_gene, (1, h_gene.shape[0]))
        self._check_seq(h_img_seq)
        n = h_img_seq.shape[0]
        if self.config.coord_embed:
            if coords is None:
                raise ShapeError("coordinate embedding enabled but no coordinates given")
            h_img_seq = add(h_img_seq, self.coord_embedding(coords))
        mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        joint = self.spot_aware_joint(h_img_seq, h_gene)
        out = self._run(joint, np.broadcast_to(mask, (h_gene.shape[0], n)))
        if single:
            return take_last(reshape(out, (n,)), np.flatnonzero(mask))
        return out

    def _check_seq(self, seq: Tensor) -> None:
        if seq.ndim != 2 or seq.shape[1] != self.config.d_fuse:
            raise ShapeError(f"sequence must be (len, {self.config.d_fuse}), got {seq.shape}")


def _linear_vec(x: Tensor, params: ParamStore, prefix: str) -> Tensor:
    out = linear(reshape(x, (1, x.shape[0])), params[f"{prefix}.w"], params[f"{prefix}.b"])
    return reshape(out, (out.shape[1],))


def _slice_seq(joint: Tensor, idx: np.ndarray) -> Tensor:
    """joint[:, idx, :] as a differentiable op."""
    b, s, d = joint.shape
    moved = reshape(transpose(joint, (0, 2, 1)), (b * d, s))
    picked = take_last(moved, idx)
    return transpose(reshape(picked, (b, d, len(idx))), (0, 2, 1))


# -- inference helpers ---------------------------------------------------------------


def _group_by_wsi(spots) -> list[tuple[str, np.ndarray]]:
    order: dict[str, list[int]] = {}
    for i, s in enumerate(spots):
        order.setdefault(s.wsi_id, []).append(i)
    return [(w, np.array(rows, dtype=np.int64)) for w, rows in order.items()]


def _coords(spots) -> np.ndarray:
    return np.array([[s.x, s.y] for s in spots], dtype=np.int64)


def predict_matrix(model: GeneQueryModel, featurizers, spots, genes, batch: int = 128) -> np.ndarray:
    """spots x genes predictions; spot-aware sequences are formed per WSI."""
    spots, genes = list(spots), list(genes)
    out = np.zeros((len(spots), len(genes)), dtype=model.dtype)
    if not spots or not genes:
        return out
    with no_grad():
        h_img, h_gene = model.project(featurizers.img.encode(spots), featurizers.gene.encode(genes))
        if model.config.mode == GENE_AWARE:
            for start in range(0, len(spots), batch):
                rows = np.arange(start, min(start + batch, len(spots)))
                out[rows] = model.forward_gene_aware(Tensor(h_img.data[rows]), h_gene).data
        else:
            for _, rows in _group_by_wsi(spots):
                seq = Tensor(h_img.data[rows])
                coords = _coords([spots[i] for i in rows])
                for start in range(0, len(genes), batch):
                    cols = np.arange(start, min(start + batch, len(genes)))
                    pred = model.forward_spot_aware(seq, Tensor(h_gene.data[cols]), coords=coords).data
                    out[np.ix_(rows, cols)] = pred.T
    return out


def spot_latents(model: GeneQueryModel, featurizers, spots, genes, batch: int = 128) -> np.ndarray:
    """Final-layer representation per spot.

    Gene-aware: mean over the gene positions of that spot's sequence.
    Spot-aware: mean over gene queries of the output at the spot's position.
    """
    spots, genes = list(spots), list(genes)
    d = model.config.d_fuse
    out = np.zeros((len(spots), d), dtype=np.float64)
    with no_grad():
        h_img, h_gene = model.project(featurizers.img.encode(spots), featurizers.gene.encode(genes))
        if model.config.mode == GENE_AWARE:
            for start in range(0, len(spots), batch):
                rows = np.arange(start, min(start + batch, len(spots)))
                joint = model.gene_aware_joint(Tensor(h_img.data[rows]), h_gene)
                out[rows] = model.encode(joint).data.mean(axis=1)
        else:
            for _, rows in _group_by_wsi(spots):
                seq = Tensor(h_img.data[rows])
                if model.config.coord_embed:
                    seq = add(seq, model.coord_embedding(_coords([spots[i] for i in rows])))
                acc = np.zeros((len(rows), d))
                for start in range(0, len(genes), batch):
                    cols = np.arange(start, min(start + batch, len(genes)))
                    joint = model.spot_aware_joint(seq, Tensor(h_gene.data[cols]))
                    acc += model.encode(joint).data.sum(axis=0)
                out[rows] = acc / len(genes)
    return out
