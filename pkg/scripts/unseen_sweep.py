"""Unseen-gene PCC as a function of the fraction of genes seen in training.

    python3 scripts/unseen_sweep.py --ratios 0.2,0.4,0.6,0.8
"""

import argparse

from genequery.config import RunConfig
from genequery.evalkit import evaluate
from genequery.stdata import make_gene_split, make_wsi_folds, normalize, synth_dataset
from genequery.trainer import train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ratios", default="0.2,0.4,0.6")
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--split-seed", type=int, default=11)
    ap.add_argument("--mode", default="gene_aware")
    args = ap.parse_args()

    raw = synth_dataset(2, 200, 60, 16, 1.0, seed=args.seed).dataset
    ds = raw.with_expression(normalize(raw.expression))
    fold = make_wsi_folds(ds.wsi_ids, 2, 0)[0]
    config = RunConfig(mode=args.mode, d_fuse=32, heads=4, epochs=args.epochs)
    print("ratio\tseen\tunseen\tseen_pcc\tunseen_pcc")
    for ratio in (float(r) for r in args.ratios.split(",")):
        split = make_gene_split(ds.m, ratio, args.split_seed)
        result = train(ds, fold, config, split)
        scores = {
            scope: evaluate(result.model, result.featurizers, ds, fold.test, scope, split.seen, split.unseen).values["ALL"]
            for scope in ("seen", "unseen")
        }
        print(f"{ratio}\t{len(split.seen)}\t{len(split.unseen)}\t{scores['seen']:.4f}\t{scores['unseen']:.4f}")


if __name__ == "__main__":
    main()
