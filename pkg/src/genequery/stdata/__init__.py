"""Dataset model, on-disk format, preprocessing, splits and synthetic data."""

from .dataset import (
    NORMALIZED,
    RAW,
    Dataset,
    ExpressionMatrix,
    GeneLibrary,
    GeneRecord,
    Manifest,
    SpotRecord,
    load_dataset,
    save_dataset,
)
from .preprocess import filter_min_spots, normalize, select_hvg
from .splits import Fold, GeneSplit, SplitPlan, make_gene_split, make_wsi_folds
from .synth import SynthResult, oracle_fit_pcc, synth_dataset, synth_generate

__all__ = [
    "NORMALIZED",
    "RAW",
    "Dataset",
    "ExpressionMatrix",
    "Fold",
    "GeneLibrary",
    "GeneRecord",
    "GeneSplit",
    "Manifest",
    "SplitPlan",
    "SpotRecord",
    "SynthResult",
    "filter_min_spots",
    "load_dataset",
    "make_gene_split",
    "make_wsi_folds",
    "normalize",
    "oracle_fit_pcc",
    "save_dataset",
    "select_hvg",
    "synth_dataset",
    "synth_generate",
]
