import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from genequery.errors import ConfigError, DimensionMismatchError, UnknownGeneError, UnknownIdError
from genequery.featurize import (
    FeaturizerSpec,
    GeneFeaturizer,
    ImageFeaturizer,
    PrecomputedTable,
    featurize_gene,
    featurize_patch,
    load_precomputed,
    patch_stats,
    token_bucket,
    tokenize,
)
from genequery.numcore.prng import fnv1a64
from genequery.stdata import GeneRecord, SpotRecord
from genequery.stdata.binfmt import write_matrix

from conftest import make_fixture_dataset


def hashed(**kw):
    return GeneFeaturizer(FeaturizerSpec("hashed_text", output_dim=16, buckets=128, **kw))


def fnv_reference(data: bytes) -> int:
    h = 14695981039346656037
    for byte in data:
        h = ((h ^ byte) * 1099511628211) % 2**64
    return h


# -- hashing ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "text,expected",
    [(b"", 0xCBF29CE484222325), (b"a", 0xAF63DC4C8601EC8C), (b"foobar", 0x85944171F73967E8)],
)
def test_fnv1a_published_vectors(text, expected):
    assert fnv1a64(text) == expected


@given(st.binary(max_size=40))
def test_fnv1a_matches_reference_loop(data):
    assert fnv1a64(data) == fnv_reference(data)


def test_tokenize_lowercases_and_splits():
    assert tokenize("Actin, beta-2 (ACTB)") == ["actin", "beta", "2", "actb"]
    assert tokenize("  --  ") == []


# -- gene featurizer -----------------------------------------------------------------


def test_identical_records_identical_vectors():
    f = hashed()
    a = featurize_gene(GeneRecord("X1", "kinase domain protein"), f)
    b = featurize_gene(GeneRecord("X1", "kinase domain protein"), f)
    assert a.tobytes() == b.tobytes()


def test_empty_description_falls_back_to_name():
    f = hashed()
    assert np.array_equal(featurize_gene(GeneRecord("DDT", ""), f), featurize_gene(GeneRecord("other", "ddt"), f))


def test_single_token_is_table_row():
    f = hashed()
    row = fnv_reference(b"kinase") % 128
    assert token_bucket("kinase", 128) == row
    assert np.array_equal(featurize_gene(GeneRecord("G", "Kinase"), f), f.table.data[row])


def test_multi_token_is_mean_of_rows():
    f = hashed()
    rows = [fnv_reference(t) % 128 for t in (b"zinc", b"finger", b"zinc")]
    expected = f.table.data[rows].mean(axis=0)
    assert np.allclose(featurize_gene(GeneRecord("G", "zinc finger zinc"), f), expected, atol=1e-7)


def test_name_text_mode_ignores_description():
    f = hashed(text="name")
    assert np.array_equal(featurize_gene(GeneRecord("TP53", "tumor protein"), f), featurize_gene(GeneRecord("TP53", ""), f))


def test_table_is_seeded():
    a, b = hashed(seed=1), hashed(seed=1)
    assert a.table.data.tobytes() == b.table.data.tobytes()
    assert a.table.data.tobytes() != hashed(seed=2).table.data.tobytes()


def test_encode_matches_vector_and_is_differentiable_when_trainable():
    f = hashed(trainable=True)
    recs = [GeneRecord("A", "alpha beta"), GeneRecord("B", "gamma")]
    out = f.encode(recs)
    assert np.allclose(out.data, np.stack([f.vector(r) for r in recs]), atol=1e-7)
    out.sum().backward()
    assert np.count_nonzero(np.abs(f.table.grad).sum(axis=1)) == 3
    assert list(f.params) == ["table"]
    assert not list(hashed().params)


def test_precomputed_gene_miss(tmp_path):
    table = PrecomputedTable(["ACTB"], np.ones((1, 3), dtype=np.float32))
    f = GeneFeaturizer(FeaturizerSpec("precomputed", source="x"), table)
    assert np.array_equal(f.vector(GeneRecord("ACTB", "")), [1, 1, 1])
    with pytest.raises(UnknownGeneError):
        f.vector(GeneRecord("NOPE", ""))


# -- precomputed tables -----------------------------------------------------------------


def _table_files(tmp_path, n_ids, n_rows):
    write_matrix(tmp_path / "emb.f32", np.arange(n_rows * 2, dtype=np.float32).reshape(n_rows, 2))
    (tmp_path / "ids.tsv").write_text("".join(f"id{i}\n" for i in range(n_ids)))
    return tmp_path / "emb.f32"


def test_load_precomputed(tmp_path):
    table = load_precomputed(_table_files(tmp_path, 3, 3))
    assert len(table) == 3 and table.dim == 2
    assert np.array_equal(table.lookup("id1"), [2, 3])


def test_load_precomputed_row_mismatch(tmp_path):
    with pytest.raises(DimensionMismatchError):
        load_precomputed(_table_files(tmp_path, 3, 2))


def test_precomputed_unknown_id(tmp_path):
    table = load_precomputed(_table_files(tmp_path, 3, 3))
    with pytest.raises(UnknownIdError):
        table.lookup("id9")


def test_spec_validation():
    with pytest.raises(ConfigError):
        FeaturizerSpec("precomputed")
    with pytest.raises(ConfigError):
        FeaturizerSpec("hashed_text", output_dim=0)
    with pytest.raises(ConfigError):
        FeaturizerSpec("word2vec")


# -- image featurizers ----------------------------------------------------------------------


def test_black_patch_stats():
    out = patch_stats(np.zeros((6, 6, 3), dtype=np.uint8))
    assert out.shape == (30,)
    for c in range(3):
        seg = out[c * 10:(c + 1) * 10]
        assert np.array_equal(seg[:8], [1, 0, 0, 0, 0, 0, 0, 0])
        assert seg[8] == 0 and seg[9] == 0


@given(st.integers(0, 2**32 - 1))
def test_patch_stats_histograms_sum_to_one(seed):
    patch = np.random.default_rng(seed).integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    out = patch_stats(patch)
    for c in range(3):
        assert abs(out[c * 10:c * 10 + 8].sum() - 1) <= 1e-9
        chan = patch[:, :, c] / 255.0
        assert out[c * 10 + 8] == pytest.approx(chan.mean(), abs=1e-12)
        assert out[c * 10 + 9] == pytest.approx(chan.std(), abs=1e-12)


def test_white_patch_lands_in_last_bin():
    out = patch_stats(np.full((2, 2, 3), 255, dtype=np.uint8))
    assert out[7] == 1 and out[8] == 1 and out[9] == 0


def test_feature_passthrough():
    ds = make_fixture_dataset("feature")
    f = ImageFeaturizer(FeaturizerSpec("passthrough"), "feature", 4)
    for s in ds.spots:
        assert np.array_equal(featurize_patch(s, f), s.payload)


def test_feature_length_mismatch():
    f = ImageFeaturizer(FeaturizerSpec("passthrough"), "feature", 5)
    with pytest.raises(DimensionMismatchError):
        f.vector(SpotRecord("s", "w", 0, 0, np.zeros(4, dtype=np.float32)))


def test_patch_shape_mismatch():
    f = ImageFeaturizer(FeaturizerSpec("patch_stats"), "patch", (8, 8))
    with pytest.raises(DimensionMismatchError):
        f.vector(SpotRecord("s", "w", 0, 0, np.zeros((6, 6, 3), dtype=np.uint8)))


def test_payload_kind_must_match():
    with pytest.raises(ConfigError):
        ImageFeaturizer(FeaturizerSpec("patch_stats"), "feature", 4)
    with pytest.raises(ConfigError):
        ImageFeaturizer(FeaturizerSpec("passthrough"), "patch", (6, 6))


def test_tiny_conv_deterministic():
    rng = np.random.default_rng(1)
    spots = [SpotRecord(f"s{i}", "w", i, 0, rng.integers(0, 256, (16, 12, 3), dtype=np.uint8)) for i in range(4)]
    spec = FeaturizerSpec("tiny_conv", output_dim=12, seed=5)
    a = ImageFeaturizer(spec, "patch", (16, 12)).encode(spots).data
    b = ImageFeaturizer(spec, "patch", (16, 12)).encode(spots).data
    assert a.shape == (4, 12)
    assert np.all(np.isfinite(a))
    assert a.tobytes() == b.tobytes()


def test_tiny_conv_trainable_params():
    f = ImageFeaturizer(FeaturizerSpec("tiny_conv", output_dim=4, trainable=True), "patch", (8, 8))
    assert sorted(f.params) == ["conv1.b", "conv1.w", "conv2.b", "conv2.w"]
    assert not list(ImageFeaturizer(FeaturizerSpec("tiny_conv", output_dim=4), "patch", (8, 8)).params)
    with pytest.raises(ConfigError):
        ImageFeaturizer(FeaturizerSpec("tiny_conv"), "patch", (6, 6))
