"""Dataset preparation: normalization, split, client partitioning, synthesis.

The ordering mirrors the pipeline being reproduced: normalize on the
full table first, then shuffle and split (a documented information-leak
caveat accepted for fidelity), then carve per-client subsets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fl import Dataset
from .selection_math import round_half_up

# Calibrated once so a probe-trained MLP separates the synthetic classes
# well enough for the acceptance experiments; do not retune per test.
SYNTH_NOISE_SIGMA = 0.08


class DataError(ValueError):
    """Invalid table or infeasible partition specification."""


@dataclass(frozen=True)
class PartitionSpec:
    """Fat/thin client partition of a training set."""

    n_clients: int
    fat_fraction: float = 0.20
    fat_share: float = 0.10
    thin_share: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n_clients < 1:
            raise DataError("n_clients must be positive")
        if not 0.0 < self.fat_fraction < 1.0:
            raise DataError("fat_fraction must be in (0, 1)")
        for name in ("fat_share", "thin_share"):
            share = getattr(self, name)
            if not 0.0 < share < 1.0:
                raise DataError(f"{name} must be in (0, 1)")


def minmax_normalize(table: np.ndarray) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """Map each column to [0, 1]; constant columns go to 0.0.

    Returns the normalized matrix and the per-column (min, max) scaler.
    """
    table = np.asarray(table, dtype=np.float64)
    if table.size == 0:
        raise DataError("cannot normalize an empty table")
    if not np.all(np.isfinite(table)):
        raise DataError("table contains non-finite values")
    mins = table.min(axis=0)
    maxs = table.max(axis=0)
    span = maxs - mins
    safe_span = np.where(span > 0.0, span, 1.0)
    normalized = (table - mins) / safe_span
    normalized[:, span == 0.0] = 0.0
    return normalized, (mins, maxs)


def apply_scaler(
    table: np.ndarray, scaler: tuple[np.ndarray, np.ndarray]
) -> np.ndarray:
    mins, maxs = scaler
    span = maxs - mins
    safe_span = np.where(span > 0.0, span, 1.0)
    out = (np.asarray(table, dtype=np.float64) - mins) / safe_span
    out[:, span == 0.0] = 0.0
    return out


def shuffle_split(data: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic permutation then split; test gets round(fraction * n) rows."""
    if not 0.0 < test_fraction < 1.0:
        raise DataError("test_fraction must be in (0, 1)")
    n = len(data)
    if n == 0:
        raise DataError("cannot split an empty dataset")
    order = np.random.default_rng(seed).permutation(n)
    n_test = round_half_up(test_fraction * n)
    test_rows = order[:n_test]
    train_rows = order[n_test:]
    return data.subset(train_rows), data.subset(test_rows)


def partition_clients(
    train: Dataset, spec: PartitionSpec
) -> tuple[list[Dataset], list[bool]]:
    """Carve per-client subsets of the training set.

    The first round(fat_fraction * n_clients) clients are fat with
    round(fat_share * |train|) rows each, the rest thin; each client's
    rows are drawn independently (overlap across clients is permitted,
    which is the only reading under which 20 clients can each hold 10%).
    Client order is then shuffled so arrival order is independent of
    fatness.  Returns (datasets, fat flags), aligned.
    """
    n_train = len(train)
    n_fat = round_half_up(spec.fat_fraction * spec.n_clients)
    fat_size = round_half_up(spec.fat_share * n_train)
    thin_size = round_half_up(spec.thin_share * n_train)
    if fat_size < 1 or thin_size < 1:
        raise DataError(
            f"train set of {n_train} rows yields empty clients "
            f"(fat={fat_size}, thin={thin_size})"
        )
    rng = np.random.default_rng(spec.seed)
    clients = []
    tags = []
    for i in range(spec.n_clients):
        fat = i < n_fat
        size = fat_size if fat else thin_size
        rows = rng.choice(n_train, size=size, replace=False)
        clients.append(train.subset(rows))
        tags.append(fat)
    order = rng.permutation(spec.n_clients)
    return [clients[i] for i in order], [tags[i] for i in order]


def synth_dataset(
    n_samples: int,
    n_features: int,
    n_classes: int,
    seed: int,
    noise_sigma: float = SYNTH_NOISE_SIGMA,
) -> Dataset:
    """Gaussian class-cluster generator, the desk-scale trace substitute.

    One random centroid per class in the unit cube; samples are centroid
    plus clipped Gaussian noise.  Class counts are balanced within 1.
    """
    if n_classes < 2:
        raise DataError("need at least 2 classes")
    if n_samples < 1 or n_features < 1:
        raise DataError("n_samples and n_features must be positive")
    rng = np.random.default_rng(seed)
    centroids = rng.random((n_classes, n_features))
    base, extra = divmod(n_samples, n_classes)
    counts = [base + (1 if c < extra else 0) for c in range(n_classes)]
    labels = np.repeat(np.arange(n_classes), counts)
    features = centroids[labels] + rng.normal(0.0, noise_sigma, (n_samples, n_features))
    np.clip(features, 0.0, 1.0, out=features)
    order = rng.permutation(n_samples)
    return Dataset(features[order], labels[order])
