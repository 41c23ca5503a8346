"""Synthetic spatial datasets with a planted image x gene-text signal.

A "world" fixes a vocabulary: a pool of signal words, each carrying a
latent vector, and a pool of distractor words. Gene ``i`` of a world gets
4 signal words and 4 distractors as its description; its latent ``u`` is
the scaled sum of its signal-word vectors, so genes that share words share
signal. Each spot draws a latent ``v`` that is stored in the first feature
dimensions, followed by distractor dimensions. Raw counts are
``round(50 * sigmoid(z) + noise)`` clamped at 0, with
``z = scale * u.v / sqrt(latent_dim)``.

Two datasets built with the same ``world_seed`` share vocabulary and gene
definitions; ``gene_offset`` shifts which global genes a dataset holds.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ArgumentError
from ..numcore.prng import SplitMix
from .dataset import RAW, Dataset, ExpressionMatrix, GeneLibrary, GeneRecord, Manifest, SpotRecord, save_dataset

N_SIGNAL_WORDS = 16
N_DISTRACTOR_WORDS = 256
SIGNAL_PER_GENE = 4
DISTRACTOR_PER_GENE = 4
MAX_LATENT = 4
Z_SCALE = 1.5
AMPLITUDE = 50.0


def _words(rng: SplitMix, n: int, length: int = 7) -> list[str]:
    letters = np.array(list(string.ascii_lowercase))
    codes = rng.integers(0, 26, (n, length))
    return ["".join(letters[row]) for row in codes]


class SynthWorld:
    def __init__(self, world_seed: int, latent_dim: int = MAX_LATENT):
        self.seed = world_seed
        self.latent_dim = latent_dim
        words = _words(SplitMix(world_seed, "vocab"), N_SIGNAL_WORDS + N_DISTRACTOR_WORDS)
        self.signal_words = words[:N_SIGNAL_WORDS]
        self.distractor_words = words[N_SIGNAL_WORDS:]
        self.word_vectors = {
            w: SplitMix(world_seed, "word_vec", w).normal(MAX_LATENT)[:latent_dim] for w in self.signal_words
        }

    def gene_name(self, index: int) -> str:
        return f"G{index:05d}"

    def gene_description(self, index: int) -> str:
        rng = SplitMix(self.seed, "gene", index)
        sig = [self.signal_words[i] for i in rng.permutation(N_SIGNAL_WORDS)[:SIGNAL_PER_GENE]]
        dis = [self.distractor_words[i] for i in rng.permutation(N_DISTRACTOR_WORDS)[:DISTRACTOR_PER_GENE]]
        tokens = sig + dis
        return " ".join(tokens[i] for i in rng.permutation(len(tokens)))

    def gene_latent(self, description: str) -> np.ndarray:
        """Signal carried by a description: sum of its signal-word vectors / 2."""
        u = np.zeros(self.latent_dim)
        for tok in description.split():
            vec = self.word_vectors.get(tok)
            if vec is not None:
                u = u + vec
        return u / math.sqrt(SIGNAL_PER_GENE)


def plant_expression(u: np.ndarray, v: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Raw counts for gene latents ``u`` (m x r) and spot latents ``v`` (n x r)."""
    r = u.shape[1]
    z = Z_SCALE * (v @ u.T) / math.sqrt(max(r, 1))
    y = np.round(AMPLITUDE / (1.0 + np.exp(-z)) + noise)
    return np.maximum(y, 0.0)


@dataclass
class SynthResult:
    dataset: Dataset
    gene_latents: np.ndarray
    spot_latents: np.ndarray
    world: SynthWorld

    def signal(self) -> np.ndarray:
        r = self.gene_latents.shape[1]
        return Z_SCALE * (self.spot_latents @ self.gene_latents.T) / math.sqrt(max(r, 1))


def synth_dataset(
    n_wsis: int = 2,
    spots_per_wsi: int = 200,
    m_genes: int = 60,
    feature_dim: int = 16,
    noise_sd: float = 1.0,
    seed: int = 0,
    world_seed: int | None = None,
    gene_offset: int = 0,
) -> SynthResult:
    for name, value in (("n_wsis", n_wsis), ("spots_per_wsi", spots_per_wsi), ("m_genes", m_genes),
                        ("feature_dim", feature_dim)):
        if value < 1:
            raise ArgumentError(f"{name} must be >= 1, got {value}")
    if noise_sd < 0:
        raise ArgumentError("noise_sd must be >= 0")
    world = SynthWorld(seed if world_seed is None else world_seed, min(MAX_LATENT, feature_dim))
    r = world.latent_dim
    genes = GeneLibrary(
        GeneRecord(world.gene_name(gene_offset + j), world.gene_description(gene_offset + j)) for j in range(m_genes)
    )
    u = np.stack([world.gene_latent(g.description) for g in genes])

    side = math.ceil(math.sqrt(spots_per_wsi))
    wsi_ids = [f"wsi{w}" for w in range(n_wsis)]
    spots, v_all, blocks = [], [], []
    for wsi in wsi_ids:
        v = SplitMix(seed, "spot_latent", wsi).normal((spots_per_wsi, r))
        extra = SplitMix(seed, "spot_distractor", wsi).normal((spots_per_wsi, feature_dim - r))
        feats = np.concatenate([v, extra], axis=1).astype(np.float32)
        noise = noise_sd * SplitMix(seed, "noise", wsi).normal((spots_per_wsi, m_genes))
        blocks.append(plant_expression(u, v, noise))
        v_all.append(v)
        for j in range(spots_per_wsi):
            spots.append(SpotRecord(f"{wsi}_s{j:04d}", wsi, j % side, j // side, feats[j]))

    manifest = Manifest("feature", wsi_ids, m_genes, feature_dim=feature_dim)
    expression = ExpressionMatrix(np.concatenate(blocks, axis=0), RAW)
    return SynthResult(Dataset(genes, spots, expression, manifest), u, np.concatenate(v_all), world)


def synth_generate(out_dir, n_wsis=2, spots_per_wsi=200, m_genes=60, feature_dim=16, noise_sd=1.0, seed=0,
                   world_seed=None, gene_offset=0) -> Dataset:
    result = synth_dataset(n_wsis, spots_per_wsi, m_genes, feature_dim, noise_sd, seed, world_seed, gene_offset)
    save_dataset(result.dataset, Path(out_dir))
    return result.dataset


def oracle_fit_pcc(result: SynthResult) -> float:
    """PCC of a least-squares line y ~ a + b*z fitted over every (spot, gene) cell."""
    z = result.signal().reshape(-1)
    y = result.dataset.expression.values.reshape(-1)
    design = np.stack([np.ones_like(z), z], axis=1)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    fitted = design @ coef
    return float(np.corrcoef(fitted, y)[0, 1])
