import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from genequery.errors import (
    ArgumentError,
    DimensionMismatchError,
    DuplicateGeneError,
    MissingFileError,
    NegativeCountError,
    StateError,
)
from genequery.stdata import (
    NORMALIZED,
    ExpressionMatrix,
    filter_min_spots,
    load_dataset,
    make_gene_split,
    make_wsi_folds,
    normalize,
    oracle_fit_pcc,
    save_dataset,
    select_hvg,
    synth_dataset,
    synth_generate,
)
from genequery.stdata.binfmt import read_matrix, write_matrix
from genequery.stdata.preprocess import rowwise_minmax
from genequery.stdata.synth import SynthWorld, plant_expression

from conftest import make_fixture_dataset

counts = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)), elements=st.integers(0, 500).map(float))


# -- load / save ---------------------------------------------------------------------


def test_load_fixture(fixture_dir):
    ds = load_dataset(fixture_dir / "manifest.txt")
    assert ds.n == 4 and ds.m == 3
    assert ds.wsi_ids == ["A", "B"]
    assert [s.spot_id for s in ds.spots] == ["a1", "a2", "b1", "b2"]
    genes, spots, expr = ds
    assert genes.names == ["ACTB", "DDT", "GAPDH"]


@pytest.mark.parametrize("payload", ["feature", "patch"])
def test_round_trip(tmp_path, payload):
    ds = make_fixture_dataset(payload)
    save_dataset(ds, tmp_path / "a")
    loaded = load_dataset(tmp_path / "a")
    assert loaded == ds
    save_dataset(loaded, tmp_path / "b")
    assert load_dataset(tmp_path / "b") == loaded
    for name in ("manifest.txt", "genes.tsv", "A/expression.f32"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_row_count_mismatch_names_both_counts(fixture_dir):
    (fixture_dir / "A" / "spots.tsv").write_text("a1\t0\t0\n")
    with pytest.raises(DimensionMismatchError, match=r"2 rows.*1 spots"):
        load_dataset(fixture_dir)


def test_duplicate_gene_name(fixture_dir):
    (fixture_dir / "genes.tsv").write_text("ACTB\tx\nACTB\ty\nGAPDH\t\n")
    with pytest.raises(DuplicateGeneError, match="ACTB"):
        load_dataset(fixture_dir)


def test_negative_raw_count(fixture_dir):
    write_matrix(fixture_dir / "B" / "expression.f32", np.array([[1, -2, 0], [0, 0, 0]], dtype=np.float32))
    with pytest.raises(NegativeCountError):
        load_dataset(fixture_dir)


def test_missing_file(fixture_dir):
    (fixture_dir / "B" / "features.f32").unlink()
    with pytest.raises(MissingFileError):
        load_dataset(fixture_dir)


def test_expression_header_layout(fixture_dir):
    raw = (fixture_dir / "A" / "expression.f32").read_bytes()
    assert raw[:4] == b"GQEX"
    assert struct.unpack("<3I", raw[4:16]) == (1, 2, 3)
    assert np.array_equal(read_matrix(fixture_dir / "A" / "expression.f32"), [[0, 3, 7], [1, 1, 1]])


def test_patch_header_layout(patch_dir):
    raw = (patch_dir / "A" / "patches.u8").read_bytes()
    assert raw[:4] == b"GQPX"
    assert struct.unpack("<5I", raw[4:24]) == (1, 2, 6, 6, 3)


# -- normalize ------------------------------------------------------------------------


def test_normalize_hand_case():
    raw = ExpressionMatrix([[0.0, math.e - 1, math.e**2 - 1]])
    out = normalize(raw)
    assert out.state == NORMALIZED
    assert np.max(np.abs(out.values - [0, 0.5, 1])) <= 1e-12


@pytest.mark.parametrize("row", [[4.0, 4.0, 4.0], [0.0, 0.0, 0.0]])
def test_normalize_degenerate_rows(row):
    assert np.array_equal(normalize(ExpressionMatrix([row])).values, [[0, 0, 0]])


def test_normalize_rejects_normalized():
    with pytest.raises(StateError):
        normalize(normalize(ExpressionMatrix([[1.0, 2.0]])))


@given(counts)
def test_normalize_properties(v):
    out = normalize(ExpressionMatrix(v)).values
    assert np.all((out >= 0) & (out <= 1))
    for raw_row, row in zip(v, out):
        order = np.argsort(raw_row, kind="stable")
        assert np.all(np.diff(row[order]) >= 0)
        if np.ptp(raw_row) == 0:
            assert np.all(row == 0)
    assert np.max(np.abs(rowwise_minmax(out) - out)) <= 1e-12


# -- gene selection ----------------------------------------------------------------------


def test_hvg_union_across_wsis():
    a = np.array([[0, 0, 0], [0, 0, 50], [0, 0, 0.0]])
    b = np.array([[90, 1, 1], [0, 1, 1], [40, 1, 1.0]])
    assert select_hvg([a, b], 1) == [0, 2]


def test_hvg_ties_go_to_lower_index():
    assert select_hvg([np.ones((4, 5))], 2) == [0, 1]


def test_hvg_planted_variances():
    base = np.array([[-1.0], [1.0]])
    logv = 2.0 + base * np.sqrt([0.1, 0.9, 0.5])  # log1p values with variances 0.1, 0.9, 0.5
    raw = np.expm1(logv)
    var = np.log1p(raw).var(axis=0)
    assert var == pytest.approx([0.1, 0.9, 0.5])
    assert select_hvg([raw], 2) == [1, 2]


def test_hvg_k_too_large():
    with pytest.raises(ArgumentError):
        select_hvg([np.ones((2, 3))], 4)


def test_filter_min_spots():
    expressed = np.zeros((1200, 3))
    expressed[:999, 0] = 1
    expressed[:1000, 1] = 2
    expressed[:, 2] = 5
    raw = ExpressionMatrix(expressed)
    assert filter_min_spots(raw, 0) == [0, 1, 2]
    assert filter_min_spots(raw, 1000) == [1, 2]


# -- splits ---------------------------------------------------------------------------------


def test_four_wsis_four_folds_leave_one_out():
    folds = make_wsi_folds(["w0", "w1", "w2", "w3"], 4, seed=0)
    assert len(folds) == 4
    assert sorted(f.test[0] for f in folds) == ["w0", "w1", "w2", "w3"]
    for f in folds:
        assert len(f.test) == 1
        assert set(f.train) | set(f.test) == {"w0", "w1", "w2", "w3"}
        assert not set(f.train) & set(f.test)


def test_ten_wsis_five_folds():
    ids = [f"w{i}" for i in range(10)]
    folds = make_wsi_folds(ids, 5, seed=3)
    assert [len(f.test) for f in folds] == [2] * 5
    assert sorted(w for f in folds for w in f.test) == sorted(ids)
    assert make_wsi_folds(ids, 5, seed=3) == folds


@pytest.mark.parametrize("n", [1, 0, 5])
def test_bad_fold_counts(n):
    with pytest.raises(ArgumentError):
        make_wsi_folds(["a", "b", "c", "d"], n, 0)


def test_gene_split_counts():
    s = make_gene_split(10, 0.2, seed=1)
    assert (len(s.seen), len(s.unseen)) == (2, 8)
    assert len(make_gene_split(785, 0.6, seed=1).seen) == 471
    assert make_gene_split(10, 0.2, seed=1) == s
    assert make_gene_split(10, 0.5, seed=1).seen != make_gene_split(10, 0.5, seed=2).seen


@pytest.mark.parametrize("m,ratio", [(10, 0.0), (10, 1.0), (10, 0.01), (3, 0.9)])
def test_gene_split_degenerate(m, ratio):
    with pytest.raises(ArgumentError):
        make_gene_split(m, ratio, 0)


@given(st.integers(2, 200), st.floats(0.05, 0.95), st.integers(0, 2**32))
def test_gene_split_disjoint_exhaustive(m, ratio, seed):
    n_seen = math.floor(ratio * m + 0.5)
    if n_seen in (0, m):
        return
    s = make_gene_split(m, ratio, seed)
    assert not set(s.seen) & set(s.unseen)
    assert sorted(s.seen + s.unseen) == list(range(m))


# -- synthetic generator -----------------------------------------------------------------------


def test_identical_descriptions_give_identical_columns():
    world = SynthWorld(5)
    desc = world.gene_description(3)
    u = np.stack([world.gene_latent(desc), world.gene_latent(world.gene_description(4)), world.gene_latent(desc)])
    v = np.random.default_rng(0).normal(size=(30, world.latent_dim))
    y = plant_expression(u, v, np.zeros((30, 3)))
    assert np.array_equal(y[:, 0], y[:, 2])
    assert not np.array_equal(y[:, 0], y[:, 1])


def test_synth_files_bitwise_deterministic(tmp_path):
    synth_generate(tmp_path / "a", 2, 10, 5, 6, 1.0, seed=4)
    synth_generate(tmp_path / "b", 2, 10, 5, 6, 1.0, seed=4)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    assert load_dataset(tmp_path / "a").n == 20


def test_synth_oracle_regression():
    result = synth_dataset(2, 200, 60, 16, noise_sd=1.0, seed=0)
    assert oracle_fit_pcc(result) > 0.95


def test_synth_shared_world_shares_gene_definitions():
    a = synth_dataset(1, 5, 10, 6, seed=1, world_seed=9).dataset
    b = synth_dataset(1, 5, 10, 6, seed=2, world_seed=9, gene_offset=5).dataset
    shared = set(a.genes.names) & set(b.genes.names)
    assert len(shared) == 5
    for name in shared:
        assert a.genes.lookup(name) == b.genes.lookup(name)


def test_synth_rejects_zero_counts():
    with pytest.raises(ArgumentError):
        synth_dataset(2, 0, 5, 4)
