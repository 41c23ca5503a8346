"""Leave-one-WSI-out cross-validation on a synthetic set, both modes.

    python3 scripts/run_cv.py --n-wsis 4 --epochs 50 --out runs/cv
"""

import argparse
import time
from pathlib import Path

from genequery.config import RunConfig
from genequery.evalkit import aggregate_folds, evaluate, write_report
from genequery.stdata import make_wsi_folds, normalize, synth_dataset
from genequery.trainer import train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-wsis", type=int, default=4)
    ap.add_argument("--spots", type=int, default=150)
    ap.add_argument("--genes", type=int, default=60)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--modes", default="gene_aware,spot_aware")
    ap.add_argument("--out", default="runs/cv")
    args = ap.parse_args()

    raw = synth_dataset(args.n_wsis, args.spots, args.genes, 16, 1.0, seed=args.seed).dataset
    ds = raw.with_expression(normalize(raw.expression))
    folds = make_wsi_folds(ds.wsi_ids, args.n_wsis, args.seed)
    for mode in args.modes.split(","):
        config = RunConfig(mode=mode, d_fuse=32, heads=4, epochs=args.epochs, seed=args.seed)
        entries = []
        start = time.perf_counter()
        for i, fold in enumerate(folds):
            result = train(ds, fold, config)
            entries.append(evaluate(result.model, result.featurizers, ds, fold.test, fold=str(i)))
        report = aggregate_folds(entries)
        write_report(report, Path(args.out) / mode)
        print(f"== {mode} ({time.perf_counter() - start:.0f}s)")
        print(report.to_text(), end="")


if __name__ == "__main__":
    main()
