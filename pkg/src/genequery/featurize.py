"""Gene-text and spot-image encoders.

Stand-ins for pretrained encoders at desk scale: a hashed bag-of-tokens
text encoder, patch colour statistics, a two-layer strided conv, and
ingestion of externally computed embeddings.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ConfigError, DimensionMismatchError, MissingFileError, UnknownGeneError, UnknownIdError
from .numcore.params import ParamStore
from .numcore.prng import SplitMix, fnv1a64
from .numcore.tensor import Tensor, as_tensor, im2col, linear, matmul, relu, take_rows, tmean
from .stdata.binfmt import read_matrix
from .stdata.dataset import GeneRecord, SpotRecord

GENE_KINDS = ("hashed_text", "precomputed")
IMAGE_KINDS = ("passthrough", "patch_stats", "tiny_conv", "precomputed")
DEFAULT_BUCKETS = 8192
DEFAULT_EMBED_DIM = 64
PATCH_STATS_DIM = 30
HIST_BINS = 8
CONV_CHANNELS = 8

_SPLIT = re.compile(r"[^0-9a-z]+")


@dataclass(frozen=True)
class FeaturizerSpec:
    kind: str
    output_dim: int | None = None
    buckets: int = DEFAULT_BUCKETS
    trainable: bool = False
    seed: int = 0
    source: str | None = None
    text: str = "description"

    def __post_init__(self):
        if self.kind not in GENE_KINDS + IMAGE_KINDS:
            raise ConfigError(f"unknown featurizer kind {self.kind!r}")
        if self.output_dim is not None and self.output_dim < 1:
            raise ConfigError("output_dim must be >= 1")
        if self.kind == "precomputed" and not self.source:
            raise ConfigError("precomputed featurizer needs a source file")
        if self.buckets < 1:
            raise ConfigError("buckets must be >= 1")
        if self.text not in ("description", "name"):
            raise ConfigError("text must be 'description' or 'name'")


def tokenize(text: str) -> list[str]:
    return [t for t in _SPLIT.split(text.lower()) if t]


def token_bucket(token: str, buckets: int) -> int:
    return fnv1a64(token.encode("utf-8")) % buckets


def gene_tokens(record: GeneRecord, text: str = "description") -> list[str]:
    tokens = tokenize(record.description) if text == "description" else []
    return tokens or tokenize(record.name)


# -- precomputed tables ----------------------------------------------------------


class PrecomputedTable:
    def __init__(self, ids, matrix: np.ndarray, source="<memory>"):
        ids = list(ids)
        if len(ids) != matrix.shape[0]:
            raise DimensionMismatchError(f"{source}: {len(ids)} ids but {matrix.shape[0]} rows")
        self.ids = ids
        self.matrix = matrix
        self.index = {k: i for i, k in enumerate(ids)}
        if len(self.index) != len(ids):
            raise DimensionMismatchError(f"{source}: duplicate ids")

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def lookup(self, key: str) -> np.ndarray:
        i = self.index.get(key)
        if i is None:
            raise UnknownIdError(f"unknown id {key!r}")
        return self.matrix[i]


def load_precomputed(path) -> PrecomputedTable:
    """Read a GQEX matrix plus the ``ids.tsv`` next to it (one id per line)."""
    path = Path(path)
    ids_path = path.parent / "ids.tsv"
    if not ids_path.is_file():
        raise MissingFileError(f"missing file: {ids_path}")
    matrix = read_matrix(path)
    ids = [line.split("\t")[0] for line in ids_path.read_text(encoding="utf-8").split("\n") if line]
    return PrecomputedTable(ids, matrix, source=str(path))


# -- gene encoder ------------------------------------------------------------------


class GeneFeaturizer:
    def __init__(self, spec: FeaturizerSpec, table: PrecomputedTable | None = None):
        if spec.kind not in GENE_KINDS:
            raise ConfigError(f"{spec.kind!r} is not a gene featurizer")
        self.spec = spec
        self.params = ParamStore()
        if spec.kind == "hashed_text":
            dim = spec.output_dim or DEFAULT_EMBED_DIM
            self.spec = replace(spec, output_dim=dim)
            values = SplitMix(spec.seed, "gene_table").normal((spec.buckets, dim)).astype(np.float32)
            self.table = Tensor(values, requires_grad=spec.trainable)
            if spec.trainable:
                self.params["table"] = self.table
        else:
            self.precomputed = table if table is not None else load_precomputed(spec.source)
            self.spec = replace(spec, output_dim=self.precomputed.dim)

    @property
    def dim(self) -> int:
        return self.spec.output_dim

    def buckets_for(self, record: GeneRecord) -> list[int]:
        return [token_bucket(t, self.spec.buckets) for t in gene_tokens(record, self.spec.text)]

    def vector(self, record: GeneRecord) -> np.ndarray:
        if self.spec.kind == "precomputed":
            try:
                return self.precomputed.lookup(record.name).astype(np.float32)
            except UnknownIdError:
                raise UnknownGeneError(f"gene {record.name!r} has no precomputed embedding") from None
        idx = self.buckets_for(record)
        if not idx:
            return np.zeros(self.dim, dtype=self.table.dtype)
        return self.table.data[idx].mean(axis=0)

    def encode(self, records) -> Tensor:
        """(k, dim) query features; differentiable w.r.t. the table when trainable."""
        records = list(records)
        if self.spec.kind == "precomputed" or not self.spec.trainable:
            return Tensor(np.stack([self.vector(r) for r in records]) if records else np.zeros((0, self.dim)))
        flat, weights_rows = [], []
        for r in records:
            idx = self.buckets_for(r)
            weights_rows.append((len(flat), len(idx)))
            flat.extend(idx)
        avg = np.zeros((len(records), max(len(flat), 1)), dtype=self.table.dtype)
        for i, (start, count) in enumerate(weights_rows):
            if count:
                avg[i, start:start + count] = 1.0 / count
        if not flat:
            return Tensor(np.zeros((len(records), self.dim), dtype=self.table.dtype))
        return matmul(Tensor(avg), take_rows(self.table, np.array(flat)))


def featurize_gene(record: GeneRecord, featurizer: GeneFeaturizer) -> np.ndarray:
    return featurizer.vector(record)


# -- image encoder -----------------------------------------------------------------


def patch_stats(patch: np.ndarray) -> np.ndarray:
    """Per channel: 8-bin intensity histogram (sums to 1), mean, std; intensities scaled to [0, 1]."""
    patch = np.asarray(patch)
    if patch.ndim != 3 or patch.shape[2] != 3:
        raise DimensionMismatchError(f"patch must be HxWx3, got {patch.shape}")
    out = []
    for c in range(3):
        chan = patch[:, :, c].reshape(-1).astype(np.int64)
        hist = np.bincount(chan * HIST_BINS // 256, minlength=HIST_BINS).astype(np.float64)
        hist /= hist.sum()
        scaled = chan / 255.0
        out.extend(hist)
        out.extend([scaled.mean(), scaled.std()])
    return np.array(out, dtype=np.float64)


class ImageFeaturizer:
    def __init__(self, spec: FeaturizerSpec, payload_kind: str, payload_dim: int | tuple,
                 table: PrecomputedTable | None = None):
        if spec.kind not in IMAGE_KINDS:
            raise ConfigError(f"{spec.kind!r} is not an image featurizer")
        patch_kinds = ("patch_stats", "tiny_conv")
        if payload_kind == "patch" and spec.kind == "passthrough":
            raise ConfigError("patch payloads need patch_stats, tiny_conv or precomputed")
        if payload_kind == "feature" and spec.kind in patch_kinds:
            raise ConfigError(f"{spec.kind} needs patch payloads")
        self.payload_kind = payload_kind
        self.payload_dim = payload_dim
        self.params = ParamStore()
        if spec.kind == "passthrough":
            spec = replace(spec, output_dim=int(payload_dim))
        elif spec.kind == "patch_stats":
            spec = replace(spec, output_dim=PATCH_STATS_DIM)
        elif spec.kind == "tiny_conv":
            if min(payload_dim) < 7:
                raise ConfigError(f"tiny_conv needs patches of at least 7x7, got {payload_dim}")
            spec = replace(spec, output_dim=spec.output_dim or 32)
            self._init_conv(spec)
        else:
            self.precomputed = table if table is not None else load_precomputed(spec.source)
            spec = replace(spec, output_dim=self.precomputed.dim)
        self.spec = spec

    def _init_conv(self, spec: FeaturizerSpec) -> None:
        c1, out = CONV_CHANNELS, spec.output_dim
        shapes = {"conv1.w": (27, c1), "conv2.w": (9 * c1, out)}
        self.conv = {}
        for name, shape in shapes.items():
            std = np.sqrt(2.0 / shape[0])
            self.conv[name] = Tensor(SplitMix(spec.seed, "tiny_conv", name).normal(shape, std=std).astype(np.float32))
        self.conv["conv1.b"] = Tensor(np.zeros(c1, dtype=np.float32))
        self.conv["conv2.b"] = Tensor(np.zeros(out, dtype=np.float32))
        if spec.trainable:
            for name, t in self.conv.items():
                self.params[name] = t

    @property
    def dim(self) -> int:
        return self.spec.output_dim

    def _check(self, spot: SpotRecord) -> None:
        p = spot.payload
        if self.payload_kind == "feature":
            if p.ndim != 1 or p.shape[0] != int(self.payload_dim):
                raise DimensionMismatchError(f"spot {spot.spot_id}: feature length {p.shape}, expected {self.payload_dim}")
        elif self.spec.kind != "precomputed":
            if p.ndim != 3 or tuple(p.shape[:2]) != tuple(self.payload_dim) or p.shape[2] != 3:
                raise DimensionMismatchError(
                    f"spot {spot.spot_id}: patch shape {p.shape}, expected {tuple(self.payload_dim) + (3,)}"
                )

    def conv_forward(self, patches: np.ndarray) -> Tensor:
        x = Tensor(np.asarray(patches, dtype=np.float32) / np.float32(255.0))
        for layer in ("conv1", "conv2"):
            cols = im2col(x, 3, 2)
            x = relu(linear(cols, self.conv[f"{layer}.w"], self.conv[f"{layer}.b"]))
        return tmean(x, axis=(1, 2))

    def encode(self, spots) -> Tensor:
        spots = list(spots)
        for s in spots:
            self._check(s)
        kind = self.spec.kind
        if kind == "tiny_conv":
            return self.conv_forward(np.stack([s.payload for s in spots]))
        if kind == "passthrough":
            return Tensor(np.stack([s.payload for s in spots]).astype(np.float32))
        if kind == "patch_stats":
            return Tensor(np.stack([patch_stats(s.payload) for s in spots]).astype(np.float32))
        return Tensor(np.stack([self.precomputed.lookup(s.spot_id) for s in spots]).astype(np.float32))

    def vector(self, spot: SpotRecord) -> np.ndarray:
        return self.encode([spot]).data[0]


def featurize_patch(spot: SpotRecord, featurizer: ImageFeaturizer) -> np.ndarray:
    return featurizer.vector(spot)


@dataclass
class Featurizers:
    gene: GeneFeaturizer
    img: ImageFeaturizer

    def params(self) -> ParamStore:
        store = ParamStore()
        store.update(self.gene.params, "feat.gene.")
        store.update(self.img.params, "feat.img.")
        return store

    @property
    def trainable(self) -> bool:
        return len(self.gene.params) + len(self.img.params) > 0


def build_featurizers(gene_spec: FeaturizerSpec, img_spec: FeaturizerSpec, dataset) -> Featurizers:
    m = dataset.manifest
    payload_dim = m.feature_dim if m.payload_kind == "feature" else (m.patch_h, m.patch_w)
    return Featurizers(GeneFeaturizer(gene_spec), ImageFeaturizer(img_spec, m.payload_kind, payload_dim))


def default_image_kind(payload_kind: str) -> str:
    if payload_kind not in ("feature", "patch"):
        raise ArgumentError(f"unknown payload kind {payload_kind!r}")
    return "passthrough" if payload_kind == "feature" else "patch_stats"
