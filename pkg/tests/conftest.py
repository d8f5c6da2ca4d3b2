"""Shared fixtures: the hand-worked candidate stream and small datasets."""
from __future__ import annotations

import numpy as np
import pytest

from fedsel import BudgetSpec, Candidate
from fedsel.fl import Dataset

# Probe accuracies of the ten-client walkthrough stream: with N=10, R=2,
# alpha*-index 2, the threshold rule rejects 1-2 (threshold settles at
# 0.62), rejects 3-5 and 7, and accepts exactly 6 (0.85) and 8 (0.92).
# Positions 9 and 10 are skipped unprobed; their values are arbitrary.
WALKTHROUGH_ACCURACIES = (0.30, 0.62, 0.23, 0.41, 0.56, 0.85, 0.2, 0.92, 0.5, 0.6)

# Same stream but position 2 probes at 0.93: nothing beats the threshold,
# so the tail (positions 9 and 10) is force-accepted.
WORST_CASE_ACCURACIES = (0.30, 0.93, 0.23, 0.41, 0.56, 0.85, 0.2, 0.92, 0.5, 0.6)


def make_stream(accuracies) -> list[Candidate]:
    return [
        Candidate(arrival_index=i, client_id=f"C{i}", probe_accuracy=a)
        for i, a in enumerate(accuracies, start=1)
    ]


@pytest.fixture
def walkthrough_spec() -> BudgetSpec:
    # r_max=2 > 10/10, so the small-window sanity bound must be waived
    # for this hand-sized instance.
    return BudgetSpec.create(10, 2, 1, 2, enforce_small_window=False)


@pytest.fixture
def walkthrough_stream() -> list[Candidate]:
    return make_stream(WALKTHROUGH_ACCURACIES)


@pytest.fixture
def worst_case_stream() -> list[Candidate]:
    return make_stream(WORST_CASE_ACCURACIES)


def tiny_dataset(n_samples: int, n_features: int, n_classes: int, seed: int) -> Dataset:
    """Small random dataset for shape/determinism tests (not separable)."""
    rng = np.random.default_rng(seed)
    return Dataset(
        rng.random((n_samples, n_features)),
        rng.integers(0, n_classes, size=n_samples),
    )
