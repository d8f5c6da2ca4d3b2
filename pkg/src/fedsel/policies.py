"""Online accept/reject policies over a stream of probed candidates.

Three policies share one irrevocable-decision protocol:

* ``secretary``: observe-and-reject the first alpha* candidates, then
  accept anything strictly better than the best observed accuracy,
  force-accepting at the tail when remaining arrivals equal remaining
  budget slots.
* ``random``: sequential sampling that selects exactly R of N with every
  R-subset equiprobable; no probing informs its decisions.
* ``best``: the offline reference that sorts all probed candidates and
  takes the top R.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .selection_math import BudgetSpec, ProbabilityEstimate


class PolicyError(RuntimeError):
    """Sequencing or sizing violation while running a policy."""


class Verdict(str, enum.Enum):
    REJECT = "reject"
    ACCEPT = "accept"
    ACCEPT_FORCED = "accept_forced"
    SKIP_UNPROBED = "skip_unprobed"


@dataclass(frozen=True)
class Candidate:
    """One arriving client with its probed test accuracy."""

    arrival_index: int
    client_id: object
    probe_accuracy: float

    def __post_init__(self):
        if self.arrival_index < 1:
            raise PolicyError(f"arrival_index must be >= 1, got {self.arrival_index}")
        if not 0.0 <= self.probe_accuracy <= 1.0:
            raise PolicyError(f"probe_accuracy {self.probe_accuracy} outside [0, 1]")


@dataclass(frozen=True)
class Decision:
    verdict: Verdict
    reason: str


@dataclass
class SelectionState:
    """Mutable state of one policy run; single-owner, never shared."""

    spec: BudgetSpec
    best_observed_accuracy: float = 0.0
    best_observed_index: int = 0
    selected: list[Candidate] = field(default_factory=list)
    n_selected: int = 0
    n_observed: int = 0
    forced_acceptances: int = 0
    rng: np.random.Generator | None = None

    def _check_arrival(self, candidate: Candidate) -> None:
        if candidate.arrival_index != self.n_observed + 1:
            raise PolicyError(
                f"out-of-order arrival: expected index {self.n_observed + 1}, "
                f"got {candidate.arrival_index}"
            )
        if self.n_observed >= self.spec.n_candidates:
            raise PolicyError("stream already exhausted")


def _accept(state: SelectionState, candidate: Candidate, forced: bool) -> None:
    state.selected.append(candidate)
    state.n_selected += 1
    if forced:
        state.forced_acceptances += 1


def forced_acceptance_due(state: SelectionState, arrival_index: int) -> bool:
    """True when the remaining arrivals (including this one) must all be taken."""
    remaining = state.spec.n_candidates - arrival_index + 1
    return remaining <= state.spec.budget - state.n_selected


def secretary_needs_probe(state: SelectionState, arrival_index: int) -> bool:
    """Whether the threshold rule tests this arrival before deciding.

    Budget-full skips and forced acceptances decide without probing.
    """
    if state.n_selected >= state.spec.budget:
        return False
    if arrival_index > state.spec.alpha_star_index and forced_acceptance_due(
        state, arrival_index
    ):
        return False
    return True


def secretary_observe(state: SelectionState, candidate: Candidate) -> Decision:
    """Apply the threshold rule to one arrival, mutating ``state``."""
    state._check_arrival(candidate)
    state.n_observed += 1
    spec = state.spec

    if candidate.arrival_index <= spec.alpha_star_index:
        if candidate.probe_accuracy > state.best_observed_accuracy:
            state.best_observed_accuracy = candidate.probe_accuracy
            state.best_observed_index = candidate.arrival_index
        return Decision(Verdict.REJECT, "observation_phase")

    if state.n_selected >= spec.budget:
        return Decision(Verdict.SKIP_UNPROBED, "budget_full")

    if forced_acceptance_due(state, candidate.arrival_index):
        _accept(state, candidate, forced=True)
        return Decision(Verdict.ACCEPT_FORCED, "tail_must_fill")

    if candidate.probe_accuracy > state.best_observed_accuracy:
        _accept(state, candidate, forced=False)
        return Decision(Verdict.ACCEPT, "above_threshold")
    return Decision(Verdict.REJECT, "below_threshold")


def random_observe(state: SelectionState, candidate: Candidate) -> Decision:
    """Sequential sampling: accept with prob (R - selected)/(remaining).

    Guarantees exactly R selections with every R-subset equiprobable.
    """
    state._check_arrival(candidate)
    if state.rng is None:
        raise PolicyError("random policy requires a seeded rng on the state")
    state.n_observed += 1
    spec = state.spec
    if state.n_selected >= spec.budget:
        return Decision(Verdict.SKIP_UNPROBED, "budget_full")
    remaining = spec.n_candidates - candidate.arrival_index + 1
    p = (spec.budget - state.n_selected) / remaining
    if state.rng.random() < p:
        forced = p >= 1.0
        _accept(state, candidate, forced=forced)
        verdict = Verdict.ACCEPT_FORCED if forced else Verdict.ACCEPT
        return Decision(verdict, "random_draw")
    return Decision(Verdict.REJECT, "random_draw")


def offline_best_select(candidates: list[Candidate], budget: int) -> list[Candidate]:
    """Top-``budget`` candidates by probe accuracy, ties to earlier arrivals."""
    if len(candidates) < budget:
        raise PolicyError(
            f"need at least {budget} candidates, got {len(candidates)}"
        )
    ranked = sorted(candidates, key=lambda c: (-c.probe_accuracy, c.arrival_index))
    return ranked[:budget]


@dataclass(frozen=True)
class AuditEntry:
    arrival_index: int
    client_id: object
    verdict: Verdict
    reason: str


@dataclass(frozen=True)
class StreamAudit:
    policy: str
    decisions: list[AuditEntry]
    selected: list[Candidate]
    forced_acceptances: int

    @property
    def selected_ids(self) -> list[object]:
        return [c.client_id for c in self.selected]


def run_stream(
    policy: str, spec: BudgetSpec, stream: list[Candidate], seed: int = 0
) -> StreamAudit:
    """Drive one policy over a full candidate stream, returning the audit."""
    if len(stream) != spec.n_candidates:
        raise PolicyError(
            f"stream length {len(stream)} != n_candidates {spec.n_candidates}"
        )
    if policy == "best":
        selected = offline_best_select(stream, spec.budget)
        chosen = {c.arrival_index for c in selected}
        decisions = [
            AuditEntry(
                c.arrival_index,
                c.client_id,
                Verdict.ACCEPT if c.arrival_index in chosen else Verdict.REJECT,
                "offline_rank",
            )
            for c in stream
        ]
        return StreamAudit("best", decisions, list(selected), 0)

    state = SelectionState(spec=spec)
    if policy == "secretary":
        observe = secretary_observe
    elif policy == "random":
        observe = random_observe
        state.rng = np.random.default_rng(seed)
    else:
        raise PolicyError(f"unknown policy {policy!r}")

    decisions = []
    for candidate in stream:
        decision = observe(state, candidate)
        decisions.append(
            AuditEntry(
                candidate.arrival_index,
                candidate.client_id,
                decision.verdict,
                decision.reason,
            )
        )
    return StreamAudit(policy, decisions, list(state.selected), state.forced_acceptances)


def monte_carlo_top_r_probability(
    n: int,
    budget: int,
    alpha_index: int,
    trials: int,
    seed: int,
    chunk: int = 4000,
    success_event: str = "record_chain",
) -> ProbabilityEstimate:
    """Monte Carlo success probability of the stopping rule over random
    arrival orders.

    Scores are i.i.d. uniform(0,1) (distinct with probability 1), so this
    is a pure rank experiment.  Two success events are supported:

    * ``record_chain`` (default): acceptances use a threshold that
      updates to each accepted score, so the selected candidates form a
      chain of successive records above the observation-phase best;
      success means the budget fills and the chain ends at the global
      best (the last acceptance is the globally best candidate).  This
      is the event the closed-form selection probability describes, and
      the two agree closely.  The degenerate ``budget == n`` case takes
      the whole pool and always succeeds.
    * ``top_r_set``: the deployed rule's fixed threshold (best of the
      observation phase, never updated); success means the selected set
      equals the set of the ``budget`` globally best candidates.  This
      operational success probability is markedly lower than the closed
      form for budgets above 1.

    Both variants force-accept at the tail when remaining arrivals equal
    remaining slots.  The per-position rule loop is vectorized across
    trials.
    """
    if trials < 10_000:
        raise PolicyError(f"trials must be >= 10^4, got {trials}")
    if not 1 <= budget <= n:
        raise PolicyError(f"budget {budget} outside [1, {n}]")
    if success_event not in ("record_chain", "top_r_set"):
        raise PolicyError(f"unknown success_event {success_event!r}")
    alpha = max(0, min(alpha_index, n - budget))

    rng = np.random.default_rng(seed)
    successes = 0
    done = 0
    while done < trials:
        c = min(chunk, trials - done)
        scores = rng.random((c, n))
        # Threshold value of the budget-th largest score per trial.
        kth = np.partition(scores, n - budget, axis=1)[:, n - budget]
        is_top = scores >= kth[:, None]
        is_best = scores == scores.max(axis=1, keepdims=True)
        a_b = scores[:, :alpha].max(axis=1) if alpha > 0 else np.zeros(c)
        threshold = a_b.copy()
        n_sel = np.zeros(c, dtype=np.int64)
        sel_top = np.zeros(c, dtype=np.int64)
        sel_other = np.zeros(c, dtype=np.int64)
        last_is_best = np.zeros(c, dtype=bool)
        for j in range(alpha, n):
            active = n_sel < budget
            remaining = n - j  # arrivals left including this one
            forced = active & (remaining <= budget - n_sel)
            accept = forced | (active & (scores[:, j] > threshold))
            n_sel += accept
            sel_top += accept & is_top[:, j]
            sel_other += accept & ~is_top[:, j]
            last_is_best = np.where(accept, is_best[:, j], last_is_best)
            if success_event == "record_chain":
                threshold = np.where(
                    accept, np.maximum(threshold, scores[:, j]), threshold
                )
        if budget == n:
            success = n_sel == budget
        elif success_event == "record_chain":
            success = (n_sel == budget) & last_is_best
        else:
            success = (sel_top == budget) & (sel_other == 0)
        successes += int(np.sum(success))
        done += c

    p = successes / trials
    std_err = math.sqrt(p * (1.0 - p) / trials)
    return ProbabilityEstimate(value=p, std_error=std_err, trials=trials)
