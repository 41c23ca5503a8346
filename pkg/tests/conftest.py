import numpy as np
import pytest

from genequery.config import RunConfig
from genequery.stdata import (
    Dataset,
    ExpressionMatrix,
    GeneLibrary,
    GeneRecord,
    Manifest,
    SpotRecord,
    normalize,
    save_dataset,
    synth_dataset,
)


def tiny_config(**kw) -> RunConfig:
    base = dict(d_fuse=8, heads=2, layers=2, epochs=2, batch_size=10, lr=1e-2, gene_dim=8, gene_buckets=64)
    base.update(kw)
    return RunConfig(**base)


def normalized(ds: Dataset) -> Dataset:
    return ds.with_expression(normalize(ds.expression))


@pytest.fixture
def small_synth():
    return synth_dataset(n_wsis=2, spots_per_wsi=12, m_genes=6, feature_dim=5, noise_sd=1.0, seed=3)


@pytest.fixture
def small_ds(small_synth):
    return normalized(small_synth.dataset)


def make_fixture_dataset(payload="feature") -> Dataset:
    """2 WSIs, 4 spots, 3 genes."""
    genes = GeneLibrary([GeneRecord("ACTB", "actin beta"), GeneRecord("DDT", ""), GeneRecord("GAPDH", "glycolysis enzyme")])
    rng = np.random.default_rng(0)
    spots = []
    for k, (wsi, sid) in enumerate([("A", "a1"), ("A", "a2"), ("B", "b1"), ("B", "b2")]):
        if payload == "feature":
            p = rng.normal(size=4).astype(np.float32)
        else:
            p = rng.integers(0, 256, size=(6, 6, 3), dtype=np.uint8)
        spots.append(SpotRecord(sid, wsi, k, 2 * k, p))
    values = np.array([[0, 3, 7], [1, 1, 1], [5, 0, 2], [9, 4, 0]], dtype=np.float64)
    manifest = Manifest(payload, ["A", "B"], 3, feature_dim=4 if payload == "feature" else 0,
                        patch_h=6 if payload == "patch" else 0, patch_w=6 if payload == "patch" else 0)
    return Dataset(genes, spots, ExpressionMatrix(values), manifest)


@pytest.fixture
def fixture_dir(tmp_path):
    save_dataset(make_fixture_dataset(), tmp_path / "ds")
    return tmp_path / "ds"


@pytest.fixture
def patch_dir(tmp_path):
    save_dataset(make_fixture_dataset("patch"), tmp_path / "pds")
    return tmp_path / "pds"
