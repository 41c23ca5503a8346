"""In-memory dataset model and the on-disk directory layout.

Layout::

    manifest.txt            key=value lines
    genes.tsv               name<TAB>description
    <wsi>/spots.tsv         spot_id<TAB>x<TAB>y
    <wsi>/expression.f32    GQEX matrix, spots x genes
    <wsi>/features.f32      GQEX matrix (payload_kind=feature)
    <wsi>/patches.u8        GQPX block  (payload_kind=patch)
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import (
    ArgumentError,
    DataError,
    DimensionMismatchError,
    DuplicateGeneError,
    FormatError,
    MissingFileError,
    NegativeCountError,
    StateError,
)
from .binfmt import read_matrix, read_patches, write_matrix, write_patches

RAW = "raw"
NORMALIZED = "normalized"
PAYLOAD_KINDS = ("patch", "feature")


@dataclass(frozen=True)
class GeneRecord:
    name: str
    description: str = ""

    def __post_init__(self):
        if not self.name or any(c in self.name for c in "\t\n\r"):
            raise DataError(f"invalid gene name {self.name!r}")
        if any(c in self.description for c in "\t\n\r"):
            raise DataError(f"gene {self.name}: description contains tab or newline")


class GeneLibrary:
    def __init__(self, records):
        self.records: list[GeneRecord] = list(records)
        self.index: dict[str, int] = {}
        for i, rec in enumerate(self.records):
            if rec.name in self.index:
                raise DuplicateGeneError(f"duplicate gene name {rec.name!r}")
            self.index[rec.name] = i

    @property
    def m(self) -> int:
        return len(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i) -> GeneRecord:
        return self.records[i]

    def __iter__(self):
        return iter(self.records)

    def __eq__(self, other):
        return isinstance(other, GeneLibrary) and self.records == other.records

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.records]

    def lookup(self, name: str) -> GeneRecord | None:
        i = self.index.get(name)
        return None if i is None else self.records[i]

    def subset(self, indices) -> "GeneLibrary":
        return GeneLibrary([self.records[i] for i in indices])


@dataclass
class SpotRecord:
    spot_id: str
    wsi_id: str
    x: int
    y: int
    payload: np.ndarray = field(repr=False)

    def __eq__(self, other):
        return (
            isinstance(other, SpotRecord)
            and (self.spot_id, self.wsi_id, self.x, self.y) == (other.spot_id, other.wsi_id, other.x, other.y)
            and self.payload.dtype == other.payload.dtype
            and np.array_equal(self.payload, other.payload)
        )


class ExpressionMatrix:
    """spots x genes values plus a raw/normalized state flag.

    Consumers read through ``take`` so access can be audited.
    """

    def __init__(self, values, state: str = RAW):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionMismatchError(f"expression must be 2-D, got shape {values.shape}")
        if state not in (RAW, NORMALIZED):
            raise StateError(f"unknown expression state {state!r}")
        if not np.all(np.isfinite(values)):
            raise DataError("expression contains non-finite values")
        if state == RAW and values.size and values.min() < 0:
            r, c = np.argwhere(values < 0)[0]
            raise NegativeCountError(f"negative raw count {values[r, c]} at row {r}, column {c}")
        if state == NORMALIZED and values.size and (values.min() < 0 or values.max() > 1):
            raise StateError("normalized expression must lie in [0, 1]")
        self.values = values
        self.state = state

    @property
    def shape(self):
        return self.values.shape

    def take(self, rows=None, cols=None) -> np.ndarray:
        v = self.values
        if rows is not None:
            v = v[np.asarray(rows, dtype=np.int64)]
        if cols is not None:
            v = v[:, np.asarray(cols, dtype=np.int64)]
        return v

    def __eq__(self, other):
        return (
            isinstance(other, ExpressionMatrix)
            and self.state == other.state
            and np.array_equal(self.values, other.values)
        )


@dataclass
class Manifest:
    payload_kind: str
    wsi_ids: list[str]
    n_genes: int
    patch_h: int = 0
    patch_w: int = 0
    feature_dim: int = 0
    expression_state: str = RAW

    KEYS = ("payload_kind", "patch_h", "patch_w", "feature_dim", "n_genes", "wsi_ids", "expression_state")

    def to_text(self) -> str:
        lines = [
            f"payload_kind={self.payload_kind}",
            f"patch_h={self.patch_h}",
            f"patch_w={self.patch_w}",
            f"feature_dim={self.feature_dim}",
            f"n_genes={self.n_genes}",
            f"wsi_ids={','.join(self.wsi_ids)}",
        ]
        if self.expression_state != RAW:
            lines.append(f"expression_state={self.expression_state}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str, source="manifest") -> "Manifest":
        kv = {}
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{source}:{n}: expected key=value")
            key, value = line.split("=", 1)
            key = key.strip()
            if key not in cls.KEYS:
                raise FormatError(f"{source}:{n}: unknown key {key!r}")
            kv[key] = value.strip()
        for key in ("payload_kind", "n_genes", "wsi_ids"):
            if key not in kv:
                raise FormatError(f"{source}: missing key {key!r}")
        kind = kv["payload_kind"]
        if kind not in PAYLOAD_KINDS:
            raise FormatError(f"{source}: payload_kind must be one of {PAYLOAD_KINDS}, got {kind!r}")
        try:
            ints = {k: int(kv.get(k, 0)) for k in ("patch_h", "patch_w", "feature_dim", "n_genes")}
        except ValueError as exc:
            raise FormatError(f"{source}: {exc}") from None
        wsi_ids = [w for w in kv["wsi_ids"].split(",") if w]
        if not wsi_ids:
            raise FormatError(f"{source}: wsi_ids is empty")
        if len(set(wsi_ids)) != len(wsi_ids):
            raise FormatError(f"{source}: duplicate wsi ids")
        return cls(kind, wsi_ids, expression_state=kv.get("expression_state", RAW), **ints)


@dataclass
class Dataset:
    genes: GeneLibrary
    spots: list[SpotRecord]
    expression: ExpressionMatrix
    manifest: Manifest

    def __iter__(self):
        return iter((self.genes, self.spots, self.expression))

    @property
    def n(self) -> int:
        return len(self.spots)

    @property
    def m(self) -> int:
        return self.genes.m

    @property
    def wsi_ids(self) -> list[str]:
        return list(self.manifest.wsi_ids)

    @property
    def payload_kind(self) -> str:
        return self.manifest.payload_kind

    def wsi_rows(self, wsi_id: str) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.spots) if s.wsi_id == wsi_id], dtype=np.int64)

    def rows_for(self, wsi_ids) -> np.ndarray:
        wanted = set(wsi_ids)
        return np.array([i for i, s in enumerate(self.spots) if s.wsi_id in wanted], dtype=np.int64)

    def with_expression(self, expression: ExpressionMatrix) -> "Dataset":
        if expression.shape != (self.n, self.m):
            raise DimensionMismatchError(f"expression {expression.shape} vs dataset {(self.n, self.m)}")
        manifest = replace(self.manifest, expression_state=expression.state)
        return Dataset(self.genes, self.spots, expression, manifest)

    def subset_genes(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        genes = self.genes.subset(indices)
        expr = ExpressionMatrix(self.expression.take(cols=indices), self.expression.state)
        manifest = replace(self.manifest, n_genes=len(indices))
        return Dataset(genes, self.spots, expr, manifest)

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and self.manifest == other.manifest
            and self.genes == other.genes
            and self.spots == other.spots
            and self.expression == other.expression
        )


# -- reading -------------------------------------------------------------------


def _read_text(path: Path) -> str:
    if not path.is_file():
        raise MissingFileError(f"missing file: {path}")
    return path.read_text(encoding="utf-8")


def _parse_genes(text: str, path) -> GeneLibrary:
    records, seen = [], set()
    for n, line in enumerate(text.split("\n"), 1):
        if not line:
            continue
        name, _, desc = line.partition("\t")
        if name in seen:
            raise DuplicateGeneError(f"{path}:{n}: duplicate gene name {name!r}")
        seen.add(name)
        records.append(GeneRecord(name, desc))
    return GeneLibrary(records)


def _parse_spots(text: str, wsi_id: str, path) -> list[tuple[str, int, int]]:
    rows = []
    for n, line in enumerate(text.split("\n"), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{n}: expected spot_id, x, y")
        try:
            rows.append((parts[0], int(parts[1]), int(parts[2])))
        except ValueError:
            raise FormatError(f"{path}:{n}: non-integer coordinates") from None
    return rows


def load_dataset(manifest_path) -> Dataset:
    """Load a dataset directory (or the path of its manifest.txt)."""
    path = Path(manifest_path)
    root = path if path.is_dir() else path.parent
    manifest_file = root / "manifest.txt"
    manifest = Manifest.parse(_read_text(manifest_file), str(manifest_file))
    genes = _parse_genes(_read_text(root / "genes.tsv"), root / "genes.tsv")
    if genes.m != manifest.n_genes:
        raise DimensionMismatchError(f"genes.tsv has {genes.m} genes, manifest n_genes={manifest.n_genes}")

    spots: list[SpotRecord] = []
    blocks = []
    for wsi in manifest.wsi_ids:
        wdir = root / wsi
        coords = _parse_spots(_read_text(wdir / "spots.tsv"), wsi, wdir / "spots.tsv")
        expr = read_matrix(wdir / "expression.f32")
        if expr.shape[0] != len(coords):
            raise DimensionMismatchError(
                f"{wsi}: expression has {expr.shape[0]} rows but spots.tsv has {len(coords)} spots"
            )
        if expr.shape[1] != genes.m:
            raise DimensionMismatchError(f"{wsi}: expression has {expr.shape[1]} columns but {genes.m} genes")
        if manifest.payload_kind == "feature":
            payload = read_matrix(wdir / "features.f32")
            if payload.shape != (len(coords), manifest.feature_dim):
                raise DimensionMismatchError(
                    f"{wsi}: features shape {payload.shape}, expected ({len(coords)}, {manifest.feature_dim})"
                )
        else:
            payload = read_patches(wdir / "patches.u8")
            want = (len(coords), manifest.patch_h, manifest.patch_w, 3)
            if payload.shape != want:
                raise DimensionMismatchError(f"{wsi}: patches shape {payload.shape}, expected {want}")
        for (sid, x, y), p in zip(coords, payload):
            spots.append(SpotRecord(sid, wsi, x, y, p))
        blocks.append(expr)

    values = np.concatenate(blocks, axis=0) if blocks else np.zeros((0, genes.m))
    expression = ExpressionMatrix(values, manifest.expression_state)
    return Dataset(genes, spots, expression, manifest)


def save_dataset(dataset: Dataset, out_dir) -> Path:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    m = dataset.manifest
    if dataset.expression.shape != (dataset.n, dataset.m):
        raise DimensionMismatchError("expression shape does not match spots x genes")
    (root / "manifest.txt").write_text(
        replace(m, n_genes=dataset.m, expression_state=dataset.expression.state).to_text(), encoding="utf-8"
    )
    (root / "genes.tsv").write_text(
        "".join(f"{g.name}\t{g.description}\n" for g in dataset.genes), encoding="utf-8"
    )
    for wsi in m.wsi_ids:
        rows = dataset.wsi_rows(wsi)
        wdir = root / wsi
        wdir.mkdir(exist_ok=True)
        spots = [dataset.spots[i] for i in rows]
        (wdir / "spots.tsv").write_text("".join(f"{s.spot_id}\t{s.x}\t{s.y}\n" for s in spots), encoding="utf-8")
        write_matrix(wdir / "expression.f32", dataset.expression.take(rows=rows))
        if m.payload_kind == "feature":
            payload = np.stack([s.payload for s in spots]) if spots else np.zeros((0, m.feature_dim))
            write_matrix(wdir / "features.f32", payload)
        else:
            payload = np.stack([s.payload for s in spots]) if spots else np.zeros((0, m.patch_h, m.patch_w, 3))
            write_patches(wdir / "patches.u8", payload)
    return root


def stack_payloads(spots) -> np.ndarray:
    if not spots:
        raise ArgumentError("no spots given")
    return np.stack([s.payload for s in spots])
