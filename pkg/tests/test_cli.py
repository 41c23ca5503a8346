import math

import numpy as np
import pytest

from genequery.cli import main
from genequery.stdata import load_dataset
from genequery.stdata.binfmt import read_matrix, write_matrix

TINY = "d_fuse=8\nheads=2\nepochs=2\nbatch_size=10\nlr=0.01\ngene_dim=8\ngene_buckets=64\n"


@pytest.fixture
def data4(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--out", str(out), "--n-wsis", "4", "--spots-per-wsi", "6", "--n-genes", "6",
                 "--feature-dim", "5", "--seed", "2"]) == 0
    return out


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(TINY)
    return path


def read_tsv(path):
    return [line.split("\t") for line in path.read_text().splitlines()]


def tree_bytes(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# -- synth ------------------------------------------------------------------------------


def test_synth_defaults_loadable(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "d"), "--spots-per-wsi", "20"]) == 0
    ds = load_dataset(tmp_path / "d")
    assert ds.n == 40 and ds.m == 60


def test_synth_repeatable(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--out", str(tmp_path / name), "--spots-per-wsi", "10", "--seed", "9"]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_synth_invalid_spots(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "d"), "--spots-per-wsi", "0"]) == 1
    assert "spots" in capsys.readouterr().err


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--data"])
    assert exc.value.code == 1


# -- train ------------------------------------------------------------------------------


@pytest.mark.parametrize("mode", ["gene_aware", "spot_aware"])
def test_train_writes_checkpoint(tmp_path, data4, cfg, mode):
    out = tmp_path / "run"
    assert main(["train", "--data", str(data4), "--out", str(out), "--config", str(cfg), "--mode", mode]) == 0
    assert (out / "checkpoint.gqck").read_bytes()[:4] == b"GQCK"
    log = read_tsv(out / "loss_log.tsv")
    assert log[0] == ["epoch", "train_mse", "eval_mse"] and len(log) == 3
    assert f"mode={mode}" in (out / "config.txt").read_text()


def test_train_is_reproducible(tmp_path, data4, cfg):
    for name in ("a", "b"):
        assert main(["train", "--data", str(data4), "--out", str(tmp_path / name), "--config", str(cfg)]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_train_nan_exit_code(tmp_path, data4, cfg, capsys):
    feats = read_matrix(data4 / "wsi0" / "features.f32")
    feats[0, 0] = np.nan
    write_matrix(data4 / "wsi0" / "features.f32", feats)
    assert main(["train", "--data", str(data4), "--out", str(tmp_path / "r"), "--config", str(cfg)]) == 3
    assert "epoch 1" in capsys.readouterr().err


def test_train_missing_data_exit_code(tmp_path, cfg):
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "r"), "--config", str(cfg)]) == 2


def test_unknown_config_key(tmp_path, data4):
    bad = tmp_path / "bad.cfg"
    bad.write_text("epochz=3\n")
    assert main(["train", "--data", str(data4), "--out", str(tmp_path / "r"), "--config", str(bad)]) == 1


# -- eval ------------------------------------------------------------------------------


def test_eval_leave_one_wsi_out(tmp_path, data4, cfg):
    out = tmp_path / "cv"
    assert main(["eval", "--data", str(data4), "--out", str(out), "--config", str(cfg), "--folds", "4"]) == 0
    rows = read_tsv(out / "report.tsv")
    all_rows = [r for r in rows[1:] if r[0] == "ALL"]
    assert [r[2] for r in all_rows] == ["0", "1", "2", "3", "all"]
    for i in range(4):
        assert (out / f"fold{i}" / "checkpoint.gqck").is_file()
    assert (out / "report.txt").is_file() and (out / "config.txt").is_file()


def test_eval_reports_identical_across_runs(tmp_path, data4, cfg):
    for name in ("a", "b"):
        assert main(["eval", "--data", str(data4), "--out", str(tmp_path / name), "--config", str(cfg),
                     "--folds", "2"]) == 0
    assert (tmp_path / "a" / "report.tsv").read_bytes() == (tmp_path / "b" / "report.tsv").read_bytes()


def test_eval_threads_match_serial(tmp_path, data4, cfg, monkeypatch):
    assert main(["eval", "--data", str(data4), "--out", str(tmp_path / "a"), "--config", str(cfg), "--folds", "2"]) == 0
    monkeypatch.setenv("GENEQUERY_THREADS", "2")
    assert main(["eval", "--data", str(data4), "--out", str(tmp_path / "b"), "--config", str(cfg), "--folds", "2"]) == 0
    assert (tmp_path / "a" / "report.tsv").read_bytes() == (tmp_path / "b" / "report.tsv").read_bytes()


def test_eval_unseen_scope(tmp_path, data4, cfg):
    out = tmp_path / "u"
    assert main(["eval", "--data", str(data4), "--out", str(out), "--config", str(cfg), "--folds", "2",
                 "--gene-ratio", "0.5", "--scope", "unseen"]) == 0
    rows = read_tsv(out / "report.tsv")
    assert {r[1] for r in rows[1:]} == {"unseen"}
    for r in rows[1:]:
        if r[2] != "all":
            assert int(r[6]) + int(r[7]) == 3


def test_eval_scope_without_ratio(tmp_path, data4, cfg):
    assert main(["eval", "--data", str(data4), "--out", str(tmp_path / "u"), "--config", str(cfg),
                 "--scope", "seen"]) == 1


def test_eval_checkpoint(tmp_path, data4, cfg):
    run = tmp_path / "run"
    assert main(["train", "--data", str(data4), "--out", str(run), "--config", str(cfg), "--folds", "2",
                 "--gene-ratio", "0.5"]) == 0
    out = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(run / "checkpoint.gqck"), "--data", str(data4), "--out", str(out),
                 "--scope", "unseen"]) == 0
    rows = read_tsv(out / "report.tsv")
    assert rows[1][1] == "unseen"


def test_eval_transfer(tmp_path, cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    common = ["--n-wsis", "2", "--spots-per-wsi", "8", "--n-genes", "6", "--feature-dim", "5", "--world-seed", "4"]
    assert main(["synth", "--out", str(a), "--seed", "1", *common]) == 0
    assert main(["synth", "--out", str(b), "--seed", "2", "--gene-offset", "3", *common]) == 0
    out = tmp_path / "t"
    assert main(["eval", "--data", str(a), "--transfer", str(b), "--out", str(out), "--config", str(cfg)]) == 0
    rows = read_tsv(out / "report.tsv")
    agg = [r for r in rows[1:] if r[0] == "ALL" and r[2] == "all"][0]
    assert int(agg[6]) + int(agg[7]) == 3
    assert math.isfinite(float(agg[3]))


def test_eval_transfer_disjoint(tmp_path, cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    common = ["--n-wsis", "2", "--spots-per-wsi", "8", "--n-genes", "4", "--feature-dim", "5", "--world-seed", "4"]
    assert main(["synth", "--out", str(a), *common]) == 0
    assert main(["synth", "--out", str(b), "--gene-offset", "10", *common]) == 0
    assert main(["eval", "--data", str(a), "--transfer", str(b), "--out", str(tmp_path / "t"), "--config", str(cfg)]) == 1


# -- predict ------------------------------------------------------------------------------


@pytest.fixture
def five_spot(tmp_path):
    out = tmp_path / "five"
    assert main(["synth", "--out", str(out), "--n-wsis", "1", "--spots-per-wsi", "5", "--n-genes", "4",
                 "--feature-dim", "5"]) == 0
    return out


@pytest.fixture
def checkpoint(tmp_path, five_spot, cfg):
    run = tmp_path / "run"
    assert main(["train", "--data", str(five_spot), "--out", str(run), "--config", str(cfg)]) == 0
    return run / "checkpoint.gqck"


def test_predict_rows(tmp_path, five_spot, checkpoint):
    out = tmp_path / "p"
    assert main(["predict", "--checkpoint", str(checkpoint), "--data", str(five_spot), "--genes", "G00001",
                 "--out", str(out)]) == 0
    rows = read_tsv(out / "predictions.tsv")
    assert rows[0] == ["spot_id", "x", "y", "gene", "value"]
    assert len(rows) == 6
    assert {r[3] for r in rows[1:]} == {"G00001"}


def test_predict_unseen_gene(tmp_path, five_spot, checkpoint):
    out = tmp_path / "p"
    assert main(["predict", "--checkpoint", str(checkpoint), "--data", str(five_spot), "--genes", "BRANDNEW",
                 "--out", str(out)]) == 0
    rows = read_tsv(out / "predictions.tsv")[1:]
    assert len(rows) == 5 and all(math.isfinite(float(r[4])) for r in rows)


def test_predict_unknown_precomputed_gene(tmp_path, five_spot):
    emb = tmp_path / "emb"
    emb.mkdir()
    names = load_dataset(five_spot).genes.names
    write_matrix(emb / "genes.f32", np.ones((len(names), 3), dtype=np.float32))
    (emb / "ids.tsv").write_text("".join(n + "\n" for n in names))
    cfg = tmp_path / "pre.cfg"
    cfg.write_text(TINY + f"gene_featurizer=precomputed\ngene_source={emb / 'genes.f32'}\n")
    run = tmp_path / "run"
    assert main(["train", "--data", str(five_spot), "--out", str(run), "--config", str(cfg)]) == 0
    args = ["predict", "--checkpoint", str(run / "checkpoint.gqck"), "--data", str(five_spot), "--out", str(tmp_path / "p")]
    assert main(args + ["--genes", names[0]]) == 0
    assert main(args + ["--genes", "NOT_IN_TABLE"]) == 2


# -- export-latent ---------------------------------------------------------------------------


def test_export_latent(tmp_path, five_spot, checkpoint):
    base = ["export-latent", "--checkpoint", str(checkpoint), "--data", str(five_spot)]
    assert main(base + ["--k", "1", "--out", str(tmp_path / "l1")]) == 0
    labels = read_tsv(tmp_path / "l1" / "labels.tsv")
    assert len(labels) == 5 and {r[1] for r in labels} == {"0"}
    assert read_matrix(tmp_path / "l1" / "latents.f32").shape == (5, 8)
    for name in ("a", "b"):
        assert main(base + ["--k", "2", "--seed", "3", "--out", str(tmp_path / name)]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    assert main(base + ["--k", "6", "--out", str(tmp_path / "big")]) == 1
