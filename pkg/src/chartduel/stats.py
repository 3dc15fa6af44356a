"""Exact fair-coin tail tests, contest aggregation, and subgroup accuracy.

The null model is that every guess is a fair coin flip, so a contest with
``n`` total guesses and ``g`` correct ones has p-value
``Pr[X >= g] = sum_{i=g..n} C(n,i) / 2^n``.  Contest sizes are at most a few
thousand trials, so the tail is computed exactly with arbitrary-precision
integers instead of a normal approximation; only the final division is
rounded to float.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PROFESSION_FINANCE = "finance"
PROFESSION_OTHER = "other"
PROFESSION_UNDECLARED = "undeclared"
PROFESSIONS = (PROFESSION_FINANCE, PROFESSION_OTHER, PROFESSION_UNDECLARED)

#: subjects answering a smaller fraction of their assigned trials are
#: excluded from aggregates (with a logged notice, never silently)
DEFAULT_MIN_RESPONSE_RATE = 0.5


class StatsError(ValueError):
    """Invalid aggregation input (bad counts, empty record list)."""


@dataclass(frozen=True)
class SubjectRecord:
    """One subject's tally within a contest, timeouts already folded in as incorrect."""

    subject_id: str
    correct: int
    answered: int
    assigned: int
    profession: str = PROFESSION_UNDECLARED

    def __post_init__(self):
        if not (0 <= self.correct <= self.answered <= self.assigned):
            raise StatsError(
                f"subject {self.subject_id}: need 0 <= correct <= answered <= assigned, "
                f"got {self.correct}/{self.answered}/{self.assigned}"
            )
        if self.profession not in PROFESSIONS:
            raise StatsError(f"unknown profession tag {self.profession!r}")

    @property
    def response_rate(self) -> float:
        return self.answered / self.assigned


@dataclass(frozen=True)
class ContestResult:
    """Aggregate over one contest: counts, per-subject histogram, exact p-value."""

    subjects: int
    charts_per_subject: int
    correct_guesses: int
    trials: int
    histogram: dict[int, int]
    p_value: float
    excluded_subjects: tuple[str, ...] = ()

    def __post_init__(self):
        if self.trials != self.subjects * self.charts_per_subject:
            raise StatsError("trials must equal subjects * charts_per_subject")
        if not (0 <= self.correct_guesses <= self.trials):
            raise StatsError("correct_guesses out of range")
        if sum(self.histogram.values()) != self.subjects:
            raise StatsError("histogram mass must total the subject count")
        if sum(k * v for k, v in self.histogram.items()) != self.correct_guesses:
            raise StatsError("histogram must sum to the total correct guesses")

    def to_dict(self) -> dict:
        return {
            "subjects": self.subjects,
            "charts_per_subject": self.charts_per_subject,
            "correct_guesses": self.correct_guesses,
            "trials": self.trials,
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
            "p_value": self.p_value,
            "excluded_subjects": list(self.excluded_subjects),
        }


def _tail_numerator(n: int, g: int) -> int:
    # sum_{i=g..n} C(n,i) by upward multiplicative recurrence from C(n,g);
    # exact integer arithmetic throughout
    c = 1
    for i in range(1, g + 1):
        c = c * (n - g + i) // i
    total = 0
    for i in range(g, n + 1):
        total += c
        c = c * (n - i) // (i + 1)
    return total


def binomial_tail_fraction(n: int, g: int) -> Fraction:
    """Exact Pr[X >= g] for X ~ Binomial(n, 1/2), as a rational number."""
    if n < 1:
        raise StatsError(f"n must be >= 1, got {n}")
    if not 0 <= g <= n:
        raise StatsError(f"g must be in 0..{n}, got {g}")
    return Fraction(_tail_numerator(n, g), 1 << n)


def binomial_tail(n: int, g: int) -> float:
    """Exact fair-coin upper tail Pr[X >= g], correctly rounded to float.

    Strictly decreasing in g for fixed n (in exact arithmetic; adjacent float
    values can collide once the tail falls below float resolution).
    """
    if n < 1:
        raise StatsError(f"n must be >= 1, got {n}")
    if not 0 <= g <= n:
        raise StatsError(f"g must be in 0..{n}, got {g}")
    # int/int true division of big integers is correctly rounded in CPython
    return _tail_numerator(n, g) / (1 << n)


def fair_coin_tail_table(n: int) -> np.ndarray:
    """All upper tails Pr[X >= g] for g = 0..n, one exact cumulative pass."""
    if n < 1:
        raise StatsError(f"n must be >= 1, got {n}")
    c = 1  # walks C(n, g) upward from g = 0
    numerators = [0] * (n + 2)
    for g in range(n + 1):
        numerators[g] = c
        c = c * (n - g) // (g + 1)
    # suffix-sum so numerators[g] = sum_{i=g..n} C(n,i)
    for g in range(n - 1, -1, -1):
        numerators[g] += numerators[g + 1]
    den = 1 << n
    return np.array([numerators[g] / den for g in range(n + 1)])


def summarize_contest(
    records: Sequence[SubjectRecord],
    charts_per_subject: int,
    *,
    min_response_rate: float = DEFAULT_MIN_RESPONSE_RATE,
) -> ContestResult:
    """Aggregate subject records into a ContestResult with its exact p-value.

    Subjects answering fewer than ``min_response_rate`` of their assigned
    trials are excluded; exclusions are logged and reported on the result.
    """
    if not records:
        raise StatsError("cannot summarize an empty record list")
    for r in records:
        if r.assigned != charts_per_subject:
            raise StatsError(
                f"subject {r.subject_id} has assigned={r.assigned}, "
                f"expected {charts_per_subject}"
            )
    excluded = tuple(
        r.subject_id for r in records if r.response_rate < min_response_rate
    )
    for sid in excluded:
        logger.warning(
            "excluding subject %s: response rate below %.0f%%", sid, 100 * min_response_rate
        )
    included = [r for r in records if r.subject_id not in set(excluded)]
    if not included:
        raise StatsError("all subjects fell below the response-rate threshold")
    s = len(included)
    g = sum(r.correct for r in included)
    n = s * charts_per_subject
    histogram = dict(Counter(r.correct for r in included))
    return ContestResult(
        subjects=s,
        charts_per_subject=charts_per_subject,
        correct_guesses=g,
        trials=n,
        histogram=histogram,
        p_value=binomial_tail(n, g),
        excluded_subjects=excluded,
    )


def subgroup_accuracy(
    records: Iterable[SubjectRecord],
) -> tuple[float | None, float | None]:
    """Percent correct for (finance, other) subjects; undeclared counts as other.

    A group with zero assigned trials gets None (undefined), never 0.0.
    """
    correct = {PROFESSION_FINANCE: 0, PROFESSION_OTHER: 0}
    assigned = {PROFESSION_FINANCE: 0, PROFESSION_OTHER: 0}
    for r in records:
        group = PROFESSION_FINANCE if r.profession == PROFESSION_FINANCE else PROFESSION_OTHER
        correct[group] += r.correct
        assigned[group] += r.assigned

    def pct(group: str) -> float | None:
        if assigned[group] == 0:
            return None
        return 100.0 * correct[group] / assigned[group]

    return pct(PROFESSION_FINANCE), pct(PROFESSION_OTHER)


def null_pvalue_ks_distance(p_values: Sequence[float], n: int) -> float:
    """KS-style distance between observed p-values and the exact discrete null.

    Under the fair-coin null the p-value of a contest with ``n`` guesses is
    supported on {Pr[X >= g] : g = 0..n} and Pr[P <= Pr[X >= g]] equals
    Pr[X >= g] itself, so the exact null CDF evaluated at each support point
    is the support point.  Returns sup over support of |F_emp - F_null|.
    """
    obs = np.sort(np.asarray(p_values, dtype=float))
    support = fair_coin_tail_table(n)  # descending in g; values in (0, 1]
    emp = np.searchsorted(obs, support, side="right") / len(obs)
    return float(np.max(np.abs(emp - support)))
