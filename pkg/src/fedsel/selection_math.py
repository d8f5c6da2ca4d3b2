"""Closed-form stopping-threshold math for budgeted online selection.

The core quantity is the probability of catching the R best candidates
(for r1 <= R <= r2) when the first ``alpha`` of N randomly ordered
candidates are observed and rejected, and the best accuracy seen among
them is then used as an acceptance threshold.  All logarithms are
natural: the approximation of the rank sums comes from integrals of
dt/t, so base-e is forced even where sources casually write "log".
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Factorial arguments are tiny in practice (r1, r2 <= 5 in every sweep);
# the cap keeps the exact integer ratios honest.
MAX_FACTORIAL_ARG = 20

# Caps for the exact nested rank sum, which is exponential in depth
# without memoization and still quadratic per level with it.  Chosen so
# the oracle stays sub-second.
K_SUM_EXACT_MAX_R = 6
K_SUM_EXACT_MAX_N = 200


class SelectionMathError(ValueError):
    """Domain or limit violation in a selection-math computation."""


def _check_r_window(r1: int, r2: int) -> None:
    if r1 < 1:
        raise SelectionMathError(f"r1 must be >= 1, got {r1}")
    if r2 < r1:
        raise SelectionMathError(f"r2 must be >= r1, got r1={r1}, r2={r2}")
    if r2 > MAX_FACTORIAL_ARG:
        raise SelectionMathError(
            f"r2={r2} exceeds the exact-factorial cap {MAX_FACTORIAL_ARG}"
        )


def factorial_ratio(r1: int, r2: int) -> int:
    """Exact integer r2! / (r1-1)!."""
    _check_r_window(r1, r2)
    return math.factorial(r2) // math.factorial(r1 - 1)


def alpha_star(n: int, r1: int, r2: int, *, paper_table_variant: bool = False) -> float:
    """Optimal number of observe-and-reject candidates out of ``n``.

    The closed form is n * exp(-(r2!/(r1-1)!)^(1/(r2-r1+1))).  With
    ``paper_table_variant`` the exponent divides by (r2-r1+1) instead of
    taking the root; that variant is not the maximizer of the selection
    probability but reproduces a published table of values, so it is
    kept available for regression against that table.
    """
    if n < 1:
        raise SelectionMathError(f"n must be >= 1, got {n}")
    _check_r_window(r1, r2)
    ratio = factorial_ratio(r1, r2)
    window = r2 - r1 + 1
    if paper_table_variant:
        exponent = ratio / window
    else:
        exponent = ratio ** (1.0 / window)
    return n * math.exp(-exponent)


@dataclass(frozen=True)
class ProbabilityEstimate:
    """A probability with its sampling error; closed forms carry zero error."""

    value: float
    std_error: float = 0.0
    trials: int = 0

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise SelectionMathError(f"probability {self.value} outside [0, 1]")
        if self.std_error < 0.0:
            raise SelectionMathError("std_error must be nonnegative")
        if self.trials == 0 and self.std_error != 0.0:
            raise SelectionMathError("a closed form (trials=0) carries zero std_error")


def selection_probability(n: int, alpha: float, r1: int, r2: int) -> ProbabilityEstimate:
    """Probability of selecting the R best candidates, summed over r1 <= R <= r2.

    Closed-form approximation (alpha/n) * sum_R (ln(n/alpha))^R / R!.
    """
    _check_r_window(r1, r2)
    if not 0.0 < alpha < n:
        raise SelectionMathError(f"alpha={alpha} outside (0, {n})")
    log_ratio = math.log(n / alpha)
    total = sum(log_ratio**big_r / math.factorial(big_r) for big_r in range(r1, r2 + 1))
    return ProbabilityEstimate(value=(alpha / n) * total)


def selection_probability_derivative(n: int, alpha: float, r1: int, r2: int) -> float:
    """d/dx of the selection probability at x = alpha/n.

    The sum over R telescopes to (-ln x)^r2 / r2! - (-ln x)^(r1-1) / (r1-1)!,
    which is zero exactly at the closed-form optimum.
    """
    _check_r_window(r1, r2)
    if not 0.0 < alpha < n:
        raise SelectionMathError(f"alpha={alpha} outside (0, {n})")
    neg_log_x = math.log(n / alpha)
    return neg_log_x**r2 / math.factorial(r2) - neg_log_x ** (r1 - 1) / math.factorial(
        r1 - 1
    )


def k_sum_exact(big_r: int, alpha: int, n: int) -> float:
    """Exact nested rank sum approximated by ``k_sum_approx``.

    Evaluates sum_{i_R=alpha+1}^{N-R+1} 1/(i_R-1) * sum_{i_{R-1}=i_R+1}^{N-R+2}
    ... sum_{i_1=i_2+1}^{N} 1/(i_1-1) by recursion memoized on
    (depth, start index).  Small-instance oracle only; see the caps.
    """
    if big_r < 1:
        raise SelectionMathError(f"big_r must be >= 1, got {big_r}")
    if alpha < 1:
        raise SelectionMathError(f"alpha must be >= 1, got {alpha}")
    if alpha + big_r > n:
        raise SelectionMathError(f"need alpha + big_r <= n, got {alpha}+{big_r} > {n}")
    if big_r > K_SUM_EXACT_MAX_R or n > K_SUM_EXACT_MAX_N:
        raise SelectionMathError(
            f"exact evaluation capped at R <= {K_SUM_EXACT_MAX_R}, "
            f"n <= {K_SUM_EXACT_MAX_N}; got R={big_r}, n={n}"
        )

    memo: dict[tuple[int, int], float] = {}

    def rec(depth: int, start: int) -> float:
        # Depth d sums its index from `start` to n - d + 1.
        if depth == 0:
            return 1.0
        key = (depth, start)
        if key in memo:
            return memo[key]
        total = 0.0
        for i in range(start, n - depth + 2):
            total += rec(depth - 1, i + 1) / (i - 1)
        memo[key] = total
        return total

    return rec(big_r, alpha + 1)


def k_sum_approx(big_r: int, alpha: float, n: int) -> float:
    """Closed-form approximation (ln(n/alpha))^R / R! of the nested rank sum."""
    if big_r < 1:
        raise SelectionMathError(f"big_r must be >= 1, got {big_r}")
    if not 0.0 < alpha < n:
        raise SelectionMathError(f"alpha={alpha} outside (0, {n})")
    return math.log(n / alpha) ** big_r / math.factorial(big_r)


def alpha_star_numeric(n: int, r1: int, r2: int, grid: int = 100_000) -> float:
    """Independent numeric maximizer of ``selection_probability`` over alpha.

    Dense grid scan over x = alpha/n in (0, 1) followed by one local
    refinement pass, accurate to well within n/grid absolute.
    """
    _check_r_window(r1, r2)
    if grid < 1000:
        raise SelectionMathError(f"grid must be >= 1000, got {grid}")

    def objective(xs: np.ndarray) -> np.ndarray:
        neg_log = -np.log(xs)
        total = np.zeros_like(xs)
        for big_r in range(r1, r2 + 1):
            total += neg_log**big_r / math.factorial(big_r)
        return xs * total

    xs = np.arange(1, grid) / grid
    best = int(np.argmax(objective(xs)))
    lo = max(xs[best] - 2.0 / grid, 1e-12)
    hi = min(xs[best] + 2.0 / grid, 1.0 - 1e-12)
    fine = np.linspace(lo, hi, 4001)
    x_star = float(fine[int(np.argmax(objective(fine)))])
    return n * x_star


def worst_case_ratio(n: int, budget: int, alpha: float) -> float:
    """Worst-case per-candidate selection probability budget / (n - alpha).

    This is the competitive ratio of the threshold rule when the best
    candidate lands in the observation phase and every later acceptance
    is effectively random.
    """
    if not 0.0 < alpha < n:
        raise SelectionMathError(f"alpha={alpha} outside (0, {n})")
    if budget < 1:
        raise SelectionMathError(f"budget must be >= 1, got {budget}")
    if budget > n - alpha:
        raise SelectionMathError(
            f"budget {budget} exceeds post-observation pool {n} - {alpha}"
        )
    return budget / (n - alpha)


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


@dataclass(frozen=True)
class BudgetSpec:
    """One selection problem instance: pool size, budget, and threshold index.

    ``alpha_star_index`` is the rounded observation length, clamped to
    [1, n_candidates - budget] so the acceptance phase always has room
    to fill the budget.
    """

    n_candidates: int
    budget: int
    r_min: int
    r_max: int
    alpha_star_real: float
    alpha_star_index: int

    def __post_init__(self):
        if self.n_candidates < 1:
            raise SelectionMathError("n_candidates must be positive")
        if not 1 <= self.budget <= self.n_candidates:
            raise SelectionMathError(
                f"budget {self.budget} outside [1, {self.n_candidates}]"
            )
        _check_r_window(self.r_min, self.r_max)
        if self.alpha_star_real < 0:
            raise SelectionMathError("alpha_star_real must be nonnegative")

    @classmethod
    def create(
        cls,
        n_candidates: int,
        budget: int,
        r_min: int,
        r_max: int,
        *,
        enforce_small_window: bool = True,
        paper_table_variant: bool = False,
    ) -> "BudgetSpec":
        """Build a spec, deriving the threshold index from the closed form.

        ``enforce_small_window`` applies the r_max <= n/10 sanity bound the
        analysis assumes; disable it only for hand-sized walkthrough
        instances (e.g. N=10) where the bound is vacuous.
        """
        if enforce_small_window and r_max > n_candidates / 10:
            raise SelectionMathError(
                f"r_max={r_max} violates r_max <= n/10 for n={n_candidates}"
            )
        real = alpha_star(
            n_candidates, r_min, r_max, paper_table_variant=paper_table_variant
        )
        hi = n_candidates - budget
        lo = min(1, hi)
        index = max(lo, min(round_half_up(real), hi))
        return cls(
            n_candidates=n_candidates,
            budget=budget,
            r_min=r_min,
            r_max=r_max,
            alpha_star_real=real,
            alpha_star_index=index,
        )
