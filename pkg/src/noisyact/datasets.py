"""Synthetic datasets and the bundled 8x8 digit images.

Every generator is a pure function of its arguments: the same seed gives
byte-identical arrays. The digit set ships with the package as a
compressed CSV (see scripts/make_digits_bundle.py for provenance), so no
downloads happen at run time.
"""

from __future__ import annotations

import gzip
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .rng import RngStream

# 2-D mixture constants, chosen so the Bayes-optimal classifier of the
# three components exceeds 95% accuracy (the closest pair of means sits
# 3 standard deviations of the widest component apart).
MIXTURE_MEANS = ((0.0, 0.0), (3.0, 3.0), (-3.0, 3.0))
MIXTURE_STDS = (0.5, 1.0, 1.5)

DIGITS_RESOURCE = "digits.csv.gz"


@dataclass(frozen=True)
class SyntheticDataset:
    """Inputs plus integer targets, tagged with their generation seed."""

    kind: str
    inputs: np.ndarray
    targets: np.ndarray
    seed: int

    def __len__(self) -> int:
        return len(self.targets)


def gen_gaussian_mixture(seed: int, n_per_class: int = 100, dimension: int = 2) -> SyntheticDataset:
    """Three isotropic Gaussian blobs; the label is the generating component.

    Means/stds are the documented module constants; for dimension != 2
    the means are zero-padded or truncated. Samples are shuffled so any
    prefix is class-balanced in expectation.
    """
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be at least 1, got {n_per_class}")
    if dimension < 1:
        raise ValueError(f"dimension must be at least 1, got {dimension}")
    rng = RngStream(seed)
    blocks = []
    for mean, std in zip(MIXTURE_MEANS, MIXTURE_STDS):
        center = np.zeros(dimension)
        take = min(dimension, len(mean))
        center[:take] = mean[:take]
        blocks.append(center + std * rng.standard_normal((n_per_class, dimension)))
    inputs = np.concatenate(blocks, axis=0)
    targets = np.repeat(np.arange(3), n_per_class)
    order = rng.permutation(3 * n_per_class)
    return SyntheticDataset("gaussian-mixture", inputs[order], targets[order], seed)


def distinct_counts(tokens: np.ndarray) -> np.ndarray:
    """Number of distinct values per row of an integer [n, length] array."""
    return np.count_nonzero(np.diff(np.sort(tokens, axis=1), axis=1), axis=1) + 1


def gen_unique_count(seed: int, n: int, length: int = 10, n_values: int = 6) -> SyntheticDataset:
    """Sequences of iid uniform integers in [0, n_values); the target is
    the number of distinct values in the sequence (between 1 and
    min(length, n_values))."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if length < 1:
        raise ValueError(f"length must be at least 1, got {length}")
    if n_values < 1:
        raise ValueError(f"n_values must be at least 1, got {n_values}")
    rng = RngStream(seed)
    tokens = rng.integers(0, n_values, (n, length))
    return SyntheticDataset("unique-count", tokens, distinct_counts(tokens), seed)


def load_digits_dataset() -> SyntheticDataset:
    """The bundled 8x8 grayscale digit set (10 classes, ~1800 samples).

    Pixel values are scaled from their native 0..16 range to [0, 1].
    """
    path = resources.files("noisyact.data").joinpath(DIGITS_RESOURCE)
    with path.open("rb") as raw, gzip.open(raw, "rt") as fh:
        table = np.loadtxt(fh, delimiter=",", dtype=np.float64)
    inputs = table[:, :-1] / 16.0
    targets = table[:, -1].astype(np.int64)
    return SyntheticDataset("digits", inputs, targets, seed=0)


def split_train_eval(
    dataset: SyntheticDataset, eval_fraction: float, seed: int
) -> tuple[SyntheticDataset, SyntheticDataset]:
    """Deterministic shuffled split; eval gets round(n * eval_fraction)."""
    if not 0.0 < eval_fraction < 1.0:
        raise ValueError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    n = len(dataset)
    n_eval = int(round(n * eval_fraction))
    if n_eval < 1 or n_eval >= n:
        raise ValueError(f"eval_fraction {eval_fraction} leaves an empty split for n={n}")
    order = RngStream(seed).permutation(n)
    eval_idx, train_idx = order[:n_eval], order[n_eval:]
    return (
        SyntheticDataset(dataset.kind, dataset.inputs[train_idx], dataset.targets[train_idx], dataset.seed),
        SyntheticDataset(dataset.kind, dataset.inputs[eval_idx], dataset.targets[eval_idx], dataset.seed),
    )
