from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError
from ..numcore.prng import SplitMix


@dataclass(frozen=True)
class Fold:
    train: tuple[str, ...]
    test: tuple[str, ...]


@dataclass(frozen=True)
class GeneSplit:
    seen: tuple[int, ...]
    unseen: tuple[int, ...]
    ratio: float


@dataclass
class SplitPlan:
    folds: list[Fold] = field(default_factory=list)
    genes: GeneSplit | None = None
    seed: int = 0


def make_wsi_folds(wsi_ids, n_folds: int, seed: int) -> list[Fold]:
    """Seeded shuffle, then contiguous partition into ``n_folds`` test groups."""
    wsi_ids = list(wsi_ids)
    if n_folds < 2:
        raise ArgumentError(f"n_folds must be >= 2, got {n_folds}")
    if n_folds > len(wsi_ids):
        raise ArgumentError(f"n_folds={n_folds} exceeds the {len(wsi_ids)} available WSIs")
    order = [wsi_ids[i] for i in SplitMix(seed, "wsi_folds").permutation(len(wsi_ids))]
    folds = []
    for group in np.array_split(np.arange(len(order)), n_folds):
        test = tuple(order[i] for i in group)
        train = tuple(w for w in wsi_ids if w not in test)
        folds.append(Fold(train=train, test=test))
    return folds


def seen_count(m: int, ratio: float) -> int:
    return int(math.floor(ratio * m + 0.5))


def make_gene_split(m: int, ratio: float, seed: int) -> GeneSplit:
    if not 0 < ratio < 1:
        raise ArgumentError(f"ratio must lie in (0, 1), got {ratio}")
    n_seen = seen_count(m, ratio)
    if n_seen == 0 or n_seen == m:
        raise ArgumentError(f"ratio {ratio} of {m} genes leaves an empty seen or unseen set")
    perm = SplitMix(seed, "gene_split").permutation(m)
    seen = tuple(sorted(int(i) for i in perm[:n_seen]))
    unseen = tuple(sorted(int(i) for i in perm[n_seen:]))
    return GeneSplit(seen, unseen, ratio)
