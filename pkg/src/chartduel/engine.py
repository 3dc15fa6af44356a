"""Contest and session state machine.

A contest binds one blinded dataset to presentation parameters.  Each session
walks an ordered plan of trials; every trial pairs a real segment with a
surrogate built from a fresh uniform permutation, placed top or bottom by a
fresh coin flip.  Guesses resolve immediately with feedback; a missing guess
resolves as incorrect when the deadline passes.  Resolved trials are
immutable: no replays, no second guesses.

Concurrency: sessions are owned by a single driver each (one server task or
one simulation loop).  Cross-session state — the tick-mode segment pool, the
subject roster, and the leaderboard — is touched only under the engine lock.
"""

from __future__ import annotations

import enum
import itertools
import logging
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .series import (
    CapacityError,
    PricePath,
    ReturnSequence,
    SurrogatePath,
    build_surrogate,
    rotate_returns,
    sample_permutation,
    segment_circular,
    segment_disjoint,
)
from .stats import (
    DEFAULT_MIN_RESPONSE_RATE,
    PROFESSION_UNDECLARED,
    ContestResult,
    SubjectRecord,
    summarize_contest,
)
from .store import (
    CHOICE_BOTTOM,
    CHOICE_TIMEOUT,
    CHOICE_TOP,
    OUTCOME_CORRECT,
    OUTCOME_INCORRECT,
    EventLog,
    GuessEvent,
)

logger = logging.getLogger(__name__)

MODE_TICK = "tick"
MODE_DAILY = "daily"

PLACEMENT_REAL_TOP = "real-on-top"
PLACEMENT_REAL_BOTTOM = "real-on-bottom"

#: extra seconds past the chart's natural end before a trial times out
DEADLINE_GRACE = 10.0


class EngineError(Exception):
    """Base class for contest/session state violations."""


class ContestFullError(EngineError):
    """Tick-mode segment pool exhausted; no fresh disjoint data for new subjects."""


class DuplicateSessionError(EngineError):
    """The subject already has a scored session in this contest."""


class TrialStateError(EngineError):
    """Guess or expiry rejected: unknown, out-of-order, or already resolved trial."""


class DegenerateDataError(EngineError):
    """All-zero return segments would make real and surrogate identical."""


class TrialState(enum.Enum):
    PENDING = "pending"
    STREAMING = "streaming"
    AWAITING_GUESS = "awaiting-guess"
    RESOLVED_CORRECT = "resolved-correct"
    RESOLVED_INCORRECT = "resolved-incorrect"
    RESOLVED_TIMEOUT = "resolved-timeout"


RESOLVED_STATES = frozenset(
    {TrialState.RESOLVED_CORRECT, TrialState.RESOLVED_INCORRECT, TrialState.RESOLVED_TIMEOUT}
)
GUESSABLE_STATES = frozenset({TrialState.STREAMING, TrialState.AWAITING_GUESS})


@dataclass
class ContestConfig:
    contest_id: str
    dataset_codename: str
    mode: str
    points_per_chart: int
    points_per_screen: int
    charts_per_subject: int = 35
    tick_interval: float = 1.0
    guess_deadline: float | None = None
    start_time: float | None = None
    end_time: float | None = None
    prize_note: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (MODE_TICK, MODE_DAILY):
            raise EngineError(f"unknown mode {self.mode!r}")
        if self.points_per_chart < 1 or self.charts_per_subject < 1:
            raise EngineError("points_per_chart and charts_per_subject must be >= 1")
        if self.points_per_screen < 1 or self.points_per_screen > self.points_per_chart:
            raise EngineError("need 1 <= points_per_screen <= points_per_chart")
        if self.tick_interval <= 0:
            raise EngineError("tick_interval must be positive")
        if self.guess_deadline is not None and self.guess_deadline <= 0:
            raise EngineError("guess_deadline must be positive")

    @property
    def effective_deadline(self) -> float:
        """Seconds a subject has to answer, measured from trial start."""
        if self.guess_deadline is not None:
            return self.guess_deadline
        return self.points_per_chart * self.tick_interval + DEADLINE_GRACE

    def public_view(self) -> dict:
        return {
            "contest_id": self.contest_id,
            "codename": self.dataset_codename,
            "mode": self.mode,
            "points_per_chart": self.points_per_chart,
            "points_per_screen": self.points_per_screen,
            "charts_per_subject": self.charts_per_subject,
            "tick_interval": self.tick_interval,
            "guess_deadline": self.effective_deadline,
            "prize_note": self.prize_note,
        }


@dataclass
class TrialPair:
    """One real chart and one surrogate chart with hidden placement."""

    trial_id: str
    index: int
    real: PricePath
    surrogate: SurrogatePath
    placement: str
    state: TrialState = TrialState.PENDING
    deadline: float | None = None

    @property
    def real_slot(self) -> str:
        return CHOICE_TOP if self.placement == PLACEMENT_REAL_TOP else CHOICE_BOTTOM

    @property
    def top_prices(self) -> np.ndarray:
        return self.real.prices if self.placement == PLACEMENT_REAL_TOP else self.surrogate.prices

    @property
    def bottom_prices(self) -> np.ndarray:
        return self.surrogate.prices if self.placement == PLACEMENT_REAL_TOP else self.real.prices

    @property
    def resolved(self) -> bool:
        return self.state in RESOLVED_STATES


@dataclass
class Session:
    session_id: str
    subject_id: str
    contest_id: str
    practice: bool
    trials: list[TrialPair]
    profession: str = PROFESSION_UNDECLARED
    cursor: int = 0
    score: int = 0
    answered: int = 0
    opened_at: float = 0.0
    completed_at: float | None = None
    open_seq: int = 0
    rotation_offset: int | None = None
    last_event_ms: int = field(default=-1, repr=False)

    @property
    def completed(self) -> bool:
        return self.cursor >= len(self.trials)

    @property
    def current_trial(self) -> TrialPair | None:
        return None if self.completed else self.trials[self.cursor]


class Contest:
    """Handle for one registered contest; owned and mutated by the engine."""

    def __init__(
        self,
        config: ContestConfig,
        dataset: ReturnSequence,
        practice_dataset: ReturnSequence | None,
    ):
        self.config = config
        self.dataset = dataset
        self.practice_dataset = practice_dataset
        self.sessions: dict[str, Session] = {}
        self.subjects_played: set[str] = set()
        self.seed_seq = np.random.SeedSequence(config.seed)
        self.used_permutation_seeds: set[int] = set()
        self.plan_pool: list[list[ReturnSequence]] = []
        self.pool_cursor = 0
        self._session_counter = itertools.count()

    @property
    def pool_remaining(self) -> int:
        return len(self.plan_pool) - self.pool_cursor

    def next_session_number(self) -> int:
        return next(self._session_counter)


class Engine:
    """Registers contests and arbitrates all session state transitions."""

    def __init__(self, *, clock=time.time, event_log: EventLog | None = None):
        self._clock = clock
        self._event_log = event_log
        self._contests: dict[str, Contest] = {}
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self._open_counter = itertools.count()

    @property
    def clock(self):
        return self._clock

    # -- contest registration ------------------------------------------------

    def create_contest(
        self,
        config: ContestConfig,
        dataset: ReturnSequence,
        practice_dataset: ReturnSequence | None = None,
    ) -> Contest:
        if config.contest_id in self._contests:
            raise EngineError(f"contest {config.contest_id!r} already exists")
        if np.all(dataset.returns == 0):
            raise DegenerateDataError(
                "dataset returns are all zero; real and surrogate charts would coincide"
            )
        c, ppc = config.charts_per_subject, config.points_per_chart
        contest = Contest(config, dataset, practice_dataset)
        if config.mode == MODE_TICK:
            capacity = len(dataset) // (c * ppc)
            if capacity < 1:
                raise CapacityError(
                    f"tick mode needs {c * ppc} returns per subject, have {len(dataset)}: "
                    "insufficient data for even one subject",
                    max_feasible=0,
                )
            segments = segment_disjoint(dataset, capacity * c, ppc)
            for i in range(capacity):
                plan = segments[i * c : (i + 1) * c]
                if any(np.all(seg.returns == 0) for seg in plan):
                    logger.warning(
                        "contest %s: dropping subject plan %d (all-zero segment)",
                        config.contest_id,
                        i,
                    )
                    continue
                contest.plan_pool.append(plan)
            if not contest.plan_pool:
                raise DegenerateDataError(
                    "every candidate subject plan contains an all-zero segment"
                )
        else:
            if len(dataset) < ppc:
                raise CapacityError(
                    f"daily mode needs at least {ppc} returns, have {len(dataset)}",
                    max_feasible=0,
                )
        with self._lock:
            self._contests[config.contest_id] = contest
        return contest

    def get_contest(self, contest_id: str) -> Contest:
        try:
            return self._contests[contest_id]
        except KeyError:
            raise EngineError(f"unknown contest {contest_id!r}") from None

    def contests(self) -> list[Contest]:
        return list(self._contests.values())

    # -- session lifecycle ---------------------------------------------------

    def start_session(
        self,
        contest_id: str,
        subject_id: str,
        *,
        practice: bool = False,
        profession: str = PROFESSION_UNDECLARED,
    ) -> Session:
        contest = self.get_contest(contest_id)
        config = contest.config
        now = self._clock()
        if config.start_time is not None and now < config.start_time:
            raise EngineError(f"contest {contest_id!r} has not opened yet")
        if config.end_time is not None and now > config.end_time:
            raise EngineError(f"contest {contest_id!r} has closed")

        with self._lock:
            if not practice and subject_id in contest.subjects_played:
                raise DuplicateSessionError(
                    f"subject {subject_id!r} already has a scored session in {contest_id!r}"
                )
            if not practice and config.mode == MODE_TICK:
                if contest.pool_remaining < 1:
                    raise ContestFullError(
                        f"contest {contest_id!r} is full: segment pool exhausted"
                    )
                plan_segments = contest.plan_pool[contest.pool_cursor]
                contest.pool_cursor += 1
            else:
                plan_segments = None
            seed_child = contest.seed_seq.spawn(1)[0]
            session_number = contest.next_session_number()
            if not practice:
                contest.subjects_played.add(subject_id)

        rng = np.random.Generator(np.random.Philox(seed_child))
        rotation_offset = None
        if plan_segments is None:
            source = contest.practice_dataset if practice else contest.dataset
            if practice and source is None:
                raise EngineError(f"contest {contest_id!r} has no practice data")
            if practice and len(source) < config.points_per_chart:
                raise EngineError(
                    f"practice slice too short: {len(source)} returns for "
                    f"{config.points_per_chart}-point charts"
                )
            rotation_offset = int(rng.integers(0, len(source)))
            rotated = rotate_returns(source, rotation_offset)
            plan_segments = [
                segment_circular(rotated, i * config.points_per_chart, config.points_per_chart)
                for i in range(config.charts_per_subject)
            ]

        tag = "p" if practice else "s"
        session_id = f"{contest_id}-{tag}{session_number:04d}"
        trials = []
        for i, seg in enumerate(plan_segments):
            if np.all(seg.returns == 0):
                raise DegenerateDataError(
                    f"segment for trial {i} of {session_id} is all zeros; trial undecidable"
                )
            perm = self._fresh_permutation(contest, rng, len(seg))
            trials.append(
                TrialPair(
                    trial_id=f"{session_id}-t{i:02d}",
                    index=i,
                    real=seg.cumulate(),
                    surrogate=build_surrogate(seg, perm, source_id=config.dataset_codename),
                    placement=PLACEMENT_REAL_TOP if rng.integers(0, 2) else PLACEMENT_REAL_BOTTOM,
                )
            )
        session = Session(
            session_id=session_id,
            subject_id=subject_id,
            contest_id=contest_id,
            practice=practice,
            trials=trials,
            profession=profession,
            opened_at=now,
            open_seq=next(self._open_counter),
            rotation_offset=rotation_offset,
        )
        with self._lock:
            contest.sessions[session_id] = session
            self._sessions[session_id] = session
        return session

    def _fresh_permutation(self, contest: Contest, rng: np.random.Generator, length: int):
        # contest-wide uniqueness of permutation seeds; collisions are
        # astronomically rare but the invariant is cheap to enforce
        with self._lock:
            while True:
                seed = int(rng.integers(0, 2**63))
                if seed not in contest.used_permutation_seeds:
                    contest.used_permutation_seeds.add(seed)
                    break
        return sample_permutation(length, seed)

    def get_session(self, session_id: str) -> Session:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise EngineError(f"unknown session {session_id!r}") from None

    # -- trial lifecycle -----------------------------------------------------

    def begin_trial(self, session: Session) -> TrialPair:
        """Move the session's current trial into the streaming state."""
        trial = session.current_trial
        if trial is None:
            raise TrialStateError(f"session {session.session_id} is complete")
        if trial.state is not TrialState.PENDING:
            raise TrialStateError(f"trial {trial.trial_id} already started")
        trial.state = TrialState.STREAMING
        contest = self.get_contest(session.contest_id)
        trial.deadline = self._clock() + contest.config.effective_deadline
        return trial

    def finish_streaming(self, session: Session, trial_id: str) -> None:
        """Mark the tick stream as fully delivered; the trial now only awaits a guess."""
        trial = self._active_trial(session, trial_id)
        if trial.state is not TrialState.STREAMING:
            raise TrialStateError(f"trial {trial_id} is not streaming")
        trial.state = TrialState.AWAITING_GUESS

    def _active_trial(self, session: Session, trial_id: str) -> TrialPair:
        by_id = {t.trial_id: t for t in session.trials}
        if trial_id not in by_id:
            raise TrialStateError(f"unknown trial {trial_id!r}")
        trial = by_id[trial_id]
        current = session.current_trial
        if current is None or current.trial_id != trial_id:
            if trial.resolved:
                raise TrialStateError(f"trial {trial_id} is already resolved")
            raise TrialStateError(f"trial {trial_id} is not the session's current trial")
        return trial

    def submit_guess(self, session: Session, trial_id: str, choice: str) -> str:
        """Resolve the current trial against the hidden placement; returns the outcome.

        Rejection (unknown, out-of-order, resolved, or expired trial) leaves
        all state untouched, so a second submission cannot double-count.
        """
        if choice not in (CHOICE_TOP, CHOICE_BOTTOM):
            raise TrialStateError(f"choice must be top or bottom, got {choice!r}")
        with self._lock:
            trial = self._active_trial(session, trial_id)
            if trial.state not in GUESSABLE_STATES:
                raise TrialStateError(f"trial {trial_id} is not accepting guesses")
            if trial.deadline is not None and self._clock() > trial.deadline:
                raise TrialStateError(f"trial {trial_id} deadline has passed")
            correct = choice == trial.real_slot
            trial.state = TrialState.RESOLVED_CORRECT if correct else TrialState.RESOLVED_INCORRECT
            session.answered += 1
            if correct:
                session.score += 1
            self._advance(session)
            outcome = OUTCOME_CORRECT if correct else OUTCOME_INCORRECT
            self._emit(session, trial, choice, outcome)
        return outcome

    def expire_trial(self, session: Session, trial_id: str) -> None:
        """Resolve a trial whose deadline has passed as incorrect-by-timeout."""
        with self._lock:
            trial = self._active_trial(session, trial_id)
            if trial.state not in GUESSABLE_STATES:
                raise TrialStateError(f"trial {trial_id} is not awaiting a guess")
            if trial.deadline is None or self._clock() < trial.deadline:
                raise TrialStateError(f"trial {trial_id} deadline has not been reached")
            trial.state = TrialState.RESOLVED_TIMEOUT
            self._advance(session)
            self._emit(session, trial, CHOICE_TIMEOUT, OUTCOME_INCORRECT)

    def forfeit_session(self, session: Session) -> None:
        """Resolve every unresolved trial as a timeout (disconnect rule)."""
        with self._lock:
            while not session.completed:
                trial = session.trials[session.cursor]
                trial.state = TrialState.RESOLVED_TIMEOUT
                self._advance(session)
                self._emit(session, trial, CHOICE_TIMEOUT, OUTCOME_INCORRECT)

    def _advance(self, session: Session) -> None:
        session.cursor += 1
        if session.completed and session.completed_at is None:
            session.completed_at = self._clock()

    def _emit(self, session: Session, trial: TrialPair, choice: str, outcome: str) -> None:
        if session.practice or self._event_log is None:
            return
        ts = max(int(self._clock() * 1000), session.last_event_ms + 1)
        session.last_event_ms = ts
        self._event_log.append(
            GuessEvent(
                timestamp=ts,
                contest_id=session.contest_id,
                session_id=session.session_id,
                subject_id=session.subject_id,
                trial_id=trial.trial_id,
                choice=choice,
                outcome=outcome,
                placement=trial.placement,
            )
        )

    # -- aggregation ---------------------------------------------------------

    def _completed_scored(self, contest_id: str) -> list[Session]:
        contest = self.get_contest(contest_id)
        return [
            s for s in contest.sessions.values() if not s.practice and s.completed
        ]

    def leaderboard(self, contest_id: str) -> list[tuple[str, int]]:
        """Completed scored sessions ranked by score, earlier completion breaking ties."""
        done = self._completed_scored(contest_id)
        done.sort(key=lambda s: (-s.score, s.completed_at, s.open_seq))
        return [(s.subject_id, s.score) for s in done]

    def subject_records(self, contest_id: str) -> list[SubjectRecord]:
        contest = self.get_contest(contest_id)
        c = contest.config.charts_per_subject
        return [
            SubjectRecord(
                subject_id=s.subject_id,
                correct=s.score,
                answered=s.answered,
                assigned=c,
                profession=s.profession,
            )
            for s in sorted(self._completed_scored(contest_id), key=lambda s: s.open_seq)
        ]

    def contest_result(
        self,
        contest_id: str,
        *,
        min_response_rate: float = DEFAULT_MIN_RESPONSE_RATE,
    ) -> ContestResult:
        contest = self.get_contest(contest_id)
        return summarize_contest(
            self.subject_records(contest_id),
            contest.config.charts_per_subject,
            min_response_rate=min_response_rate,
        )
