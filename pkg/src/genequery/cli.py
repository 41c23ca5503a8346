"""Command-line entry point.

Exit codes: 0 success, 1 usage or argument error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .errors import ArgumentError, DataError, GeneQueryError
from .evalkit import SCOPES, aggregate_folds, evaluate, kmeans, latent_export, transfer_eval, write_latents, write_report
from .model import MODES, predict_matrix
from .stdata import (
    RAW,
    Dataset,
    GeneRecord,
    filter_min_spots,
    load_dataset,
    make_gene_split,
    make_wsi_folds,
    normalize,
    select_hvg,
    synth_generate,
)
from .trainer import restore, train

log = logging.getLogger("genequery")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="genequery", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic dataset with planted signal")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-wsis", type=int, default=2)
    p.add_argument("--spots-per-wsi", type=int, default=200)
    p.add_argument("--n-genes", type=int, default=60)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--world-seed", type=int, default=None)
    p.add_argument("--gene-offset", type=int, default=0)

    def common(p, checkpoint=False):
        p.add_argument("--data", required=not checkpoint, default=None)
        p.add_argument("--out", required=True)
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", choices=MODES)

    p = sub.add_parser("train", help="train one model and write its checkpoint")
    common(p)
    p.add_argument("--folds", type=int, help="build this many WSI folds and train on one of them")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--gene-ratio", type=float)

    p = sub.add_parser("eval", help="cross-validate, evaluate a checkpoint, or run a transfer evaluation")
    common(p, checkpoint=True)
    p.add_argument("--checkpoint")
    p.add_argument("--folds", type=int)
    p.add_argument("--gene-ratio", type=float)
    p.add_argument("--scope", choices=SCOPES, default="all")
    p.add_argument("--transfer", metavar="DATA_DIR")

    p = sub.add_parser("predict", help="per-spot predictions for chosen genes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--genes", required=True, help="comma-separated gene names")
    p.add_argument("--out", required=True)

    p = sub.add_parser("export-latent", help="per-spot latent vectors plus k-means labels")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    return parser


# -- helpers ----------------------------------------------------------------------------


def resolve_config(args) -> RunConfig:
    config = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    return config.with_overrides(seed=getattr(args, "seed", None), mode=getattr(args, "mode", None))


def prepare(dataset: Dataset, config: RunConfig) -> Dataset:
    """Optional gene filtering, then log1p + per-spot min-max normalization."""
    if dataset.expression.state == RAW:
        keep = np.arange(dataset.m)
        if config.min_spots:
            keep = np.array(filter_min_spots(dataset.expression, config.min_spots), dtype=np.int64)
        if config.hvg_k:
            sub = dataset.subset_genes(keep)
            per_wsi = [sub.expression.take(rows=sub.wsi_rows(w)) for w in sub.wsi_ids]
            keep = keep[select_hvg(per_wsi, min(config.hvg_k, sub.m))]
        if len(keep) != dataset.m:
            dataset = dataset.subset_genes(keep)
        dataset = dataset.with_expression(normalize(dataset.expression))
    return dataset


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("GENEQUERY_THREADS", "1")))
    except ValueError:
        raise ArgumentError("GENEQUERY_THREADS must be an integer") from None


def _write_train_outputs(result, out: Path) -> None:
    save_checkpoint(result.checkpoint, out / "checkpoint.gqck")
    (out / "loss_log.tsv").write_text(result.loss_log_text(), encoding="utf-8")


# -- commands ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    synth_generate(args.out, args.n_wsis, args.spots_per_wsi, args.n_genes, args.feature_dim, args.noise_sd,
                   args.seed, args.world_seed, args.gene_offset)
    print(f"wrote dataset to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = resolve_config(args)
    dataset = prepare(load_dataset(args.data), config)
    fold = None
    if args.folds is not None:
        folds = make_wsi_folds(dataset.wsi_ids, args.folds, config.seed)
        if not 0 <= args.fold < len(folds):
            raise ArgumentError(f"--fold must lie in [0, {len(folds)})")
        fold = folds[args.fold]
    split = make_gene_split(dataset.m, args.gene_ratio, config.seed) if args.gene_ratio is not None else None
    out = _out_dir(args.out)
    (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
    result = train(dataset, fold, config, split)
    _write_train_outputs(result, out)
    last = result.loss_log[-1]
    print(f"trained {last.epoch} epochs, final train MSE {last.train_mse:.6f}; checkpoint in {out}")
    return 0


def _run_fold(i, fold, dataset, config, split, scope, out: Path):
    result = train(dataset, fold, config, split)
    fold_dir = _out_dir(out / f"fold{i}")
    _write_train_outputs(result, fold_dir)
    seen = split.seen if split else None
    unseen = split.unseen if split else None
    return evaluate(result.model, result.featurizers, dataset, fold.test, scope, seen, unseen, fold=str(i))


def cmd_eval(args) -> int:
    out = _out_dir(args.out)
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        model, featurizers, config = restore(ckpt)
        if args.folds is not None:
            raise ArgumentError("--folds trains fresh models; do not combine it with --checkpoint")
        (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
        trained_genes = [g for g in ckpt.meta.get("gene_names", "").split(",") if g]
        if args.transfer:
            target = prepare(load_dataset(args.transfer), config)
            report = transfer_eval(model, featurizers, trained_genes, target)
        else:
            if not args.data:
                raise ArgumentError("--data is required unless --transfer is given")
            dataset = prepare(load_dataset(args.data), config)
            test = [w for w in ckpt.meta.get("test_wsis", "").split(",") if w] or dataset.wsi_ids
            seen = [j for j, g in enumerate(dataset.genes) if g.name in set(trained_genes)]
            unseen = [j for j in range(dataset.m) if j not in set(seen)]
            entry = evaluate(model, featurizers, dataset, test, args.scope, seen, unseen, fold="0")
            report = aggregate_folds([entry])
        write_report(report, out)
        print(report.to_text(), end="")
        return 0

    if not args.data:
        raise ArgumentError("--data is required")
    config = resolve_config(args)
    (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
    dataset = prepare(load_dataset(args.data), config)
    split = make_gene_split(dataset.m, args.gene_ratio, config.seed) if args.gene_ratio is not None else None
    if args.scope != "all" and split is None:
        raise ArgumentError(f"--scope {args.scope} needs --gene-ratio")

    if args.transfer:
        if args.folds is not None:
            raise ArgumentError("--transfer trains on every WSI of --data; do not combine it with --folds")
        result = train(dataset, None, config, split)
        _write_train_outputs(result, out)
        target = prepare(load_dataset(args.transfer), config)
        trained = [dataset.genes[j].name for j in (split.seen if split else range(dataset.m))]
        report = transfer_eval(result.model, result.featurizers, trained, target)
    else:
        n_folds = args.folds if args.folds is not None else len(dataset.wsi_ids)
        folds = make_wsi_folds(dataset.wsi_ids, n_folds, config.seed)
        jobs = [(i, f, dataset, config, split, args.scope, out) for i, f in enumerate(folds)]
        threads = min(_threads(), len(jobs))
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                entries = list(pool.map(lambda job: _run_fold(*job), jobs))
        else:
            entries = [_run_fold(*job) for job in jobs]
        report = aggregate_folds(entries)
    write_report(report, out)
    print(report.to_text(), end="")
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model, featurizers, config = restore(ckpt)
    dataset = load_dataset(args.data)
    names = [g.strip() for g in args.genes.split(",") if g.strip()]
    if not names:
        raise ArgumentError("--genes is empty")
    records = [dataset.genes.lookup(n) or GeneRecord(n, "") for n in names]
    pred = predict_matrix(model, featurizers, dataset.spots, records)
    if not np.all(np.isfinite(pred)):
        raise DataError("predictions contain non-finite values")
    out = _out_dir(args.out)
    lines = ["spot_id\tx\ty\tgene\tvalue"]
    for i, s in enumerate(dataset.spots):
        for j, name in enumerate(names):
            lines.append(f"{s.spot_id}\t{s.x}\t{s.y}\t{name}\t{float(pred[i, j])!r}")
    (out / "predictions.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines) - 1} predictions to {out / 'predictions.tsv'}")
    return 0


def cmd_export_latent(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model, featurizers, config = restore(ckpt)
    dataset = load_dataset(args.data)
    if args.k < 1 or args.k > dataset.n:
        raise ArgumentError(f"--k must lie in [1, {dataset.n}]")
    spots, latents = latent_export(model, featurizers, dataset)
    labels = kmeans(latents, args.k, args.seed)
    write_latents(spots, latents, labels, args.out)
    print(f"wrote {len(spots)} latents and labels to {args.out}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "export-latent": cmd_export_latent,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except GeneQueryError as exc:
        print(f"genequery {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"genequery {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
