"""Bulk simulation studies: null calibration and feedback-learning demos.

These drive bot policies against the engine directly, handing each policy
exactly the information a protocol client would reconstruct from its tick
stream (the two revealed return sequences, then the correct/incorrect
outcome).  Skipping the message layer keeps hundreds of thousands of trials
tractable; the protocol path itself is exercised by the integration suite
where bots play through the real server.

Every run is a pure function of its seed: policies, contest randomness, and
synthetic data all derive from it deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .bots import CoinPolicy, GuessPolicy, LearningPolicy, make_policy
from .engine import ContestConfig, Engine, Session
from .series import ReturnSequence, sample_permutation, build_surrogate
from .stats import ContestResult
from .store import EventLog


class SimClock:
    """Deterministic session clock: advances a fixed step per resolved trial."""

    def __init__(self, start: float = 1_000_000.0, step: float = 1.0):
        self.now = start
        self.step = step

    def __call__(self) -> float:
        return self.now

    def advance(self) -> None:
        self.now += self.step


def make_random_walk_returns(
    n: int, seed: int, *, sigma: float = 1.0, base_price: float = 100.0
) -> ReturnSequence:
    """IID Gaussian returns: an exchangeable series with no temporal structure."""
    rng = np.random.Generator(np.random.Philox(seed))
    return ReturnSequence(rng.normal(0.0, sigma, size=n), base_price=base_price)


def make_ar1_returns(
    n: int,
    phi: float,
    seed: int,
    *,
    sigma: float = 1.0,
    base_price: float = 100.0,
    burn_in: int = 50,
) -> ReturnSequence:
    """AR(1) returns r_t = phi * r_{t-1} + eps_t, eps ~ N(0, sigma^2).

    The lag-1 autocorrelation of the series is ``phi``; permuting destroys
    it, which is exactly the structure a learning bot can exploit.
    """
    if not -1 < phi < 1:
        raise ValueError(f"phi must lie in (-1, 1), got {phi}")
    rng = np.random.Generator(np.random.Philox(seed))
    eps = rng.normal(0.0, sigma, size=n + burn_in)
    series = lfilter([1.0], [1.0, -phi], eps)[burn_in:]
    return ReturnSequence(series, base_price=base_price)


def play_engine_session(
    engine: Engine,
    session: Session,
    policy: GuessPolicy,
    *,
    use_feedback: bool = True,
    clock: SimClock | None = None,
) -> list[str]:
    """Play every trial of one session; returns the outcome list."""
    outcomes = []
    for trial in session.trials:
        engine.begin_trial(session)
        choice = policy.guess(np.diff(trial.top_prices), np.diff(trial.bottom_prices))
        outcome = engine.submit_guess(session, trial.trial_id, choice)
        if use_feedback:
            policy.update(outcome)
        outcomes.append(outcome)
        if clock is not None:
            clock.advance()
    return outcomes


@dataclass
class StudyResult:
    """Per-trial outcomes of one simulated contest (rows are sessions)."""

    outcomes: np.ndarray  # bool, shape (sessions, charts_per_subject)
    contest_result: ContestResult | None = None

    @property
    def accuracy(self) -> float:
        return float(self.outcomes.mean())

    def accuracy_after(self, warmup: int) -> float:
        return float(self.outcomes[:, warmup:].mean())

    def per_session_accuracy_after(self, warmup: int) -> np.ndarray:
        return self.outcomes[:, warmup:].mean(axis=1)


def run_bot_contest(
    config: ContestConfig,
    dataset: ReturnSequence,
    *,
    subjects: int,
    bot: str = "coin",
    feature: str = "acf1",
    seed: int = 0,
    use_feedback: bool = True,
    event_log: EventLog | None = None,
) -> StudyResult:
    """Run one full contest with one bot per subject and aggregate it."""
    clock = SimClock()
    engine = Engine(clock=clock, event_log=event_log)
    engine.create_contest(config, dataset)
    policy_seeds = np.random.SeedSequence(seed).generate_state(subjects, np.uint64)
    rows = []
    for i in range(subjects):
        policy = make_policy(bot, int(policy_seeds[i]), feature)
        session = engine.start_session(config.contest_id, f"bot-{i:04d}")
        outcomes = play_engine_session(
            engine, session, policy, use_feedback=use_feedback, clock=clock
        )
        rows.append([o == "correct" for o in outcomes])
    return StudyResult(
        outcomes=np.array(rows, dtype=bool),
        contest_result=engine.contest_result(config.contest_id),
    )


def run_null_calibration(
    *,
    contests: int = 1000,
    subjects: int = 26,
    charts_per_subject: int = 35,
    points_per_chart: int = 20,
    seed: int = 0,
) -> np.ndarray:
    """P-values from fair-coin bots playing many simulated contests.

    Each contest gets fresh data, fresh contest randomness, and fresh coin
    bots.  Under the null these p-values must follow the exact discrete
    fair-coin distribution (checked with `stats.null_pvalue_ks_distance`).
    """
    root = np.random.SeedSequence(seed)
    contest_seeds = root.generate_state(3 * contests, np.uint64)
    p_values = np.empty(contests)
    n_returns = charts_per_subject * points_per_chart
    for k in range(contests):
        dataset = make_random_walk_returns(n_returns, int(contest_seeds[3 * k]))
        config = ContestConfig(
            contest_id=f"null-{k:04d}",
            dataset_codename=f"null-{k:04d}",
            mode="daily",
            points_per_chart=points_per_chart,
            points_per_screen=points_per_chart,
            charts_per_subject=charts_per_subject,
            seed=int(contest_seeds[3 * k + 1]),
        )
        study = run_bot_contest(
            config,
            dataset,
            subjects=subjects,
            bot="coin",
            seed=int(contest_seeds[3 * k + 2]),
        )
        p_values[k] = study.contest_result.p_value
    return p_values


def run_learning_study(
    *,
    sessions: int = 200,
    charts_per_subject: int = 35,
    points_per_chart: int = 60,
    phi: float = 0.5,
    feature: str = "acf1",
    use_feedback: bool = True,
    seed: int = 0,
    sigma: float = 1.0,
) -> StudyResult:
    """Learning bots vs. real-with-structure charts, disjoint data per session.

    Tick-mode segmentation gives every session statistically independent
    AR(1) data, so per-session accuracies are independent draws.
    """
    n_returns = sessions * charts_per_subject * points_per_chart
    root = np.random.SeedSequence(seed)
    data_seed, contest_seed, bot_seed = (int(s) for s in root.generate_state(3, np.uint64))
    dataset = make_ar1_returns(n_returns, phi, data_seed, sigma=sigma)
    config = ContestConfig(
        contest_id="learning-study",
        dataset_codename="learning-study",
        mode="tick",
        points_per_chart=points_per_chart,
        points_per_screen=points_per_chart,
        charts_per_subject=charts_per_subject,
        seed=contest_seed,
    )
    return run_bot_contest(
        config,
        dataset,
        subjects=sessions,
        bot="learning",
        feature=feature,
        seed=bot_seed,
        use_feedback=use_feedback,
    )


def run_control_pair_study(
    *,
    sessions: int = 200,
    charts_per_subject: int = 35,
    points_per_chart: int = 60,
    phi: float = 0.5,
    feature: str = "acf1",
    seed: int = 0,
    sigma: float = 1.0,
) -> StudyResult:
    """Permuted-vs-permuted control: both charts are surrogates of the same data.

    Permutation destroys the learnable temporal signal, so any sound policy
    must fall to chance here no matter how much feedback it gets.  The
    "real" label is assigned to one surrogate arbitrarily and feedback flows
    normally, isolating chart content as the only difference from the
    learning study.
    """
    root = np.random.SeedSequence(seed)
    data_seed, flow_seed, bot_seed = (int(s) for s in root.generate_state(3, np.uint64))
    n_returns = sessions * charts_per_subject * points_per_chart
    dataset = make_ar1_returns(n_returns, phi, data_seed, sigma=sigma)
    flow_rng = np.random.Generator(np.random.Philox(flow_seed))
    policy_seeds = np.random.SeedSequence(bot_seed).generate_state(sessions, np.uint64)
    rows = np.empty((sessions, charts_per_subject), dtype=bool)
    cursor = 0
    for s in range(sessions):
        policy = make_policy("learning", int(policy_seeds[s]), feature)
        for t in range(charts_per_subject):
            segment = ReturnSequence(
                dataset.returns[cursor : cursor + points_per_chart], base_price=100.0
            )
            cursor += points_per_chart
            first = build_surrogate(
                segment, sample_permutation(points_per_chart, int(flow_rng.integers(2**63)))
            )
            second = build_surrogate(
                segment, sample_permutation(points_per_chart, int(flow_rng.integers(2**63)))
            )
            labelled_real_on_top = bool(flow_rng.integers(0, 2))
            top, bottom = (first, second) if labelled_real_on_top else (second, first)
            choice = policy.guess(np.diff(top.prices), np.diff(bottom.prices))
            real_slot = "top" if labelled_real_on_top else "bottom"
            outcome = "correct" if choice == real_slot else "incorrect"
            policy.update(outcome)
            rows[s, t] = outcome == "correct"
    return StudyResult(outcomes=rows)
