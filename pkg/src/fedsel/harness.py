"""End-to-end experiment driver.

One experiment: prepare a client population, fix a shared model init,
stream the clients in a random arrival order, let each policy make its
irrevocable selections (probing lazily), then train the global model on
each selected set and record the three comparison metrics.  All three
policies see the identical arrival order, probe results, and init, so
differences reflect selection logic only.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np
import pandas as pd

from .data import PartitionSpec, partition_clients, shuffle_split, synth_dataset
from .fl import (
    Dataset,
    MlpSpec,
    ModelParams,
    TrainingPlan,
    evaluate,
    federated_train,
    init_model,
    probe_client,
)
from .policies import (
    Candidate,
    SelectionState,
    Verdict,
    offline_best_select,
    random_observe,
    secretary_needs_probe,
    secretary_observe,
)
from .selection_math import BudgetSpec

ALL_POLICIES = ("secretary", "random", "best")

RESULT_COLUMNS = [
    "n",
    "r",
    "r2",
    "alpha_index",
    "policy",
    "seed",
    "final_acc",
    "mean_sel_probe_acc",
    "fat_frac",
    "probe_count",
]


class HarnessError(RuntimeError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int = 5000
    n_features: int = 10
    n_classes: int = 28


@dataclass(frozen=True)
class ExperimentConfig:
    n_candidates: int
    budget: int
    r_max: int
    r_min: int = 1
    plan: TrainingPlan = TrainingPlan()
    data: SyntheticSpec = SyntheticSpec()
    policies: tuple[str, ...] = ALL_POLICIES
    cycle_count: int = 1
    test_fraction: float = 0.2
    partition: PartitionSpec | None = None  # n_clients/seed filled per run
    enforce_small_window: bool = True

    def budget_spec(self) -> BudgetSpec:
        return BudgetSpec.create(
            self.n_candidates,
            self.budget,
            self.r_min,
            self.r_max,
            enforce_small_window=self.enforce_small_window,
        )


@dataclass
class RunResult:
    n_candidates: int
    budget: int
    r_max: int
    alpha_index: int
    policy: str
    seed: int
    final_test_accuracy: float
    mean_selected_probe_accuracy: float
    fat_fraction_selected: float
    probe_count: int
    parity_probe_count: int
    accuracy_history: list[float] = field(default_factory=list)
    selected_client_ids: list[int] = field(default_factory=list)

    def csv_row(self) -> list:
        return [
            self.n_candidates,
            self.budget,
            self.r_max,
            self.alpha_index,
            self.policy,
            self.seed,
            self.final_test_accuracy,
            self.mean_selected_probe_accuracy,
            self.fat_fraction_selected,
            self.probe_count,
        ]


def _sub_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


class _ProbeCache:
    """Lazy per-arrival-position probes, shared between policies."""

    def __init__(self, probe_fn: Callable[[int], float]):
        self._probe_fn = probe_fn
        self._values: dict[int, float] = {}

    def get(self, position: int) -> float:
        if position not in self._values:
            self._values[position] = self._probe_fn(position)
        return self._values[position]


def _select_secretary(spec, cache, order):
    state = SelectionState(spec=spec)
    probes = 0
    selected_positions = []
    for position in range(1, spec.n_candidates + 1):
        needs_probe = secretary_needs_probe(state, position)
        accuracy = cache.get(position) if needs_probe else 0.0
        probes += int(needs_probe)
        decision = secretary_observe(
            state, Candidate(position, int(order[position - 1]), accuracy)
        )
        if decision.verdict in (Verdict.ACCEPT, Verdict.ACCEPT_FORCED):
            selected_positions.append(position)
    # Forced acceptances were never probed; charge metric-parity probes.
    parity = sum(
        1 for c in state.selected if c.arrival_index not in cache._values
    )
    return selected_positions, probes, parity


def _select_random(spec, cache, order, seed):
    state = SelectionState(spec=spec, rng=np.random.default_rng(seed))
    selected_positions = []
    for position in range(1, spec.n_candidates + 1):
        decision = random_observe(
            state, Candidate(position, int(order[position - 1]), 0.0)
        )
        if decision.verdict in (Verdict.ACCEPT, Verdict.ACCEPT_FORCED):
            selected_positions.append(position)
    # Decisions need no probes; the selected set is probed for metrics only.
    return selected_positions, 0, len(selected_positions)


def _select_best(spec, cache, order):
    candidates = [
        Candidate(position, int(order[position - 1]), cache.get(position))
        for position in range(1, spec.n_candidates + 1)
    ]
    chosen = offline_best_select(candidates, spec.budget)
    return [c.arrival_index for c in chosen], spec.n_candidates, 0


def run_experiment(
    config: ExperimentConfig,
    seed: int,
    probe_override: Sequence[float] | None = None,
) -> list[RunResult]:
    """Run all configured policies for one seed; one RunResult per policy.

    ``probe_override`` injects probe accuracies by arrival position
    (walkthrough fixtures); real probing is skipped when it is given.
    """
    spec = config.budget_spec()
    n = config.n_candidates
    model_spec = MlpSpec(
        input_dim=config.data.n_features,
        hidden_dims=(25, 25),
        output_dim=config.data.n_classes,
    )
    shared_init = init_model(model_spec, _sub_seed(seed, 1))
    plan = config.plan

    globals_by_policy: dict[str, ModelParams] = {
        p: shared_init for p in config.policies
    }
    histories: dict[str, list[float]] = {p: [] for p in config.policies}
    probe_totals = {p: 0 for p in config.policies}
    parity_totals = {p: 0 for p in config.policies}
    last_metrics: dict[str, tuple] = {}

    for cycle in range(config.cycle_count):
        base = synth_dataset(
            config.data.n_samples,
            config.data.n_features,
            config.data.n_classes,
            _sub_seed(seed, 2, cycle),
        )
        train, test = shuffle_split(base, config.test_fraction, _sub_seed(seed, 3, cycle))
        part = config.partition or PartitionSpec(n_clients=n)
        part = PartitionSpec(
            n_clients=n,
            fat_fraction=part.fat_fraction,
            fat_share=part.fat_share,
            thin_share=part.thin_share,
            seed=_sub_seed(seed, 4, cycle),
        )
        clients, fat_tags = partition_clients(train, part)
        order = np.random.default_rng(_sub_seed(seed, 5, cycle)).permutation(n)

        # After the first cycle the per-policy globals diverge, so each
        # policy probes from its own model and caches separately.
        caches: dict[str, _ProbeCache] = {}

        def make_cache(init_params: ModelParams) -> _ProbeCache:
            def probe_fn(position: int) -> float:
                if probe_override is not None:
                    return float(probe_override[position - 1])
                client_idx = int(order[position - 1])
                return probe_client(
                    init_params,
                    clients[client_idx],
                    test,
                    plan,
                    _sub_seed(seed, 6, cycle, client_idx),
                )

            return _ProbeCache(probe_fn)

        shared_cache = make_cache(shared_init) if cycle == 0 else None

        for policy in config.policies:
            init_params = globals_by_policy[policy]
            if cycle == 0:
                cache = shared_cache
            else:
                cache = caches.setdefault(policy, make_cache(init_params))
            if policy == "secretary":
                positions, probes, parity = _select_secretary(spec, cache, order)
            elif policy == "random":
                positions, probes, parity = _select_random(
                    spec, cache, order, _sub_seed(seed, 7, cycle)
                )
            elif policy == "best":
                positions, probes, parity = _select_best(spec, cache, order)
            else:
                raise HarnessError(f"unknown policy {policy!r}")

            probe_totals[policy] += probes
            parity_totals[policy] += parity
            probe_accs = [cache.get(p) for p in positions]
            client_ids = sorted(int(order[p - 1]) for p in positions)
            selected_data = [clients[i] for i in client_ids]
            fat_selected = sum(fat_tags[i] for i in client_ids)

            final_params, history = federated_train(
                init_params,
                selected_data,
                test,
                plan,
                _sub_seed(seed, 8, cycle),
            )
            globals_by_policy[policy] = final_params
            histories[policy].extend(history)
            final_acc = history[-1] if history else evaluate(init_params, test)
            last_metrics[policy] = (
                final_acc,
                float(np.mean(probe_accs)),
                fat_selected / spec.budget,
                client_ids,
            )

    results = []
    for policy in config.policies:
        final_acc, mean_probe, fat_frac, client_ids = last_metrics[policy]
        results.append(
            RunResult(
                n_candidates=n,
                budget=config.budget,
                r_max=config.r_max,
                alpha_index=spec.alpha_star_index,
                policy=policy,
                seed=seed,
                final_test_accuracy=final_acc,
                mean_selected_probe_accuracy=mean_probe,
                fat_fraction_selected=fat_frac,
                probe_count=probe_totals[policy],
                parity_probe_count=parity_totals[policy],
                accuracy_history=histories[policy],
                selected_client_ids=client_ids,
            )
        )
    return results


def sweep(
    ns: Sequence[int],
    rs: Sequence[int],
    r2s: Sequence[int],
    seeds: Sequence[int],
    plan: TrainingPlan = TrainingPlan(),
    data: SyntheticSpec = SyntheticSpec(),
    policies: tuple[str, ...] = ALL_POLICIES,
) -> list[RunResult]:
    """Cross product of grid x seeds, one RunResult per policy each."""
    if not (ns and rs and r2s and seeds):
        raise HarnessError("sweep grid and seed list must be nonempty")
    results = []
    for n, r, r2, seed in itertools.product(ns, rs, r2s, seeds):
        config = ExperimentConfig(
            n_candidates=n, budget=r, r_max=r2, plan=plan, data=data, policies=policies
        )
        results.extend(run_experiment(config, seed))
    return results


def write_results_csv(results: Sequence[RunResult], handle: TextIO) -> None:
    writer = csv.writer(handle, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for result in results:
        writer.writerow(result.csv_row())


def results_frame(results: Sequence[RunResult]) -> pd.DataFrame:
    return pd.DataFrame([r.csv_row() for r in results], columns=RESULT_COLUMNS)


def summarize(results: pd.DataFrame) -> pd.DataFrame:
    """Mean and sample std of each metric per (n, r, r2, policy) cell."""
    required = {"n", "r", "r2", "policy", "final_acc", "mean_sel_probe_acc", "fat_frac"}
    missing = required - set(results.columns)
    if missing:
        raise HarnessError(f"results CSV missing columns: {sorted(missing)}")
    metrics = ["final_acc", "mean_sel_probe_acc", "fat_frac"]
    grouped = results.groupby(["n", "r", "r2", "policy"], as_index=False).agg(
        **{
            f"{m}_{stat}": (m, stat)
            for m in metrics
            for stat in ("mean", "std")
        },
        runs=("seed", "count"),
    )
    return grouped.fillna({f"{m}_std": 0.0 for m in metrics}).sort_values(
        ["n", "r", "r2", "policy"], ignore_index=True
    )
