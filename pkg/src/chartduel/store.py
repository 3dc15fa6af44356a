"""Dataset ingestion, codename registry, and the append-only guess-event log.

Datasets are exposed to subjects only under animal codenames; the private
source description never enters any client-visible payload.  The JSONL event
log is the single source of truth for results: replaying it from an empty
state must reproduce every live contest aggregate field for field.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator

from .series import PricePath, ReturnSequence, compute_returns
from .stats import (
    DEFAULT_MIN_RESPONSE_RATE,
    ContestResult,
    StatsError,
    SubjectRecord,
    summarize_contest,
)

FREQ_TICK = "tick"
FREQ_DAILY = "daily"

#: fraction of each dataset's returns reserved (from the end) for practice play
PRACTICE_FRACTION = 0.10

CHOICE_TOP = "top"
CHOICE_BOTTOM = "bottom"
CHOICE_TIMEOUT = "timeout"
OUTCOME_CORRECT = "correct"
OUTCOME_INCORRECT = "incorrect"

# key order is part of the log format; writers must not reorder it
_EVENT_FIELDS = (
    "timestamp",
    "contest_id",
    "session_id",
    "subject_id",
    "trial_id",
    "choice",
    "outcome",
    "placement",
)


class IngestError(ValueError):
    """Unusable input file: bad header, bad row, or unordered timestamps."""


class RegistryError(ValueError):
    """Codename collisions or lookups of unknown datasets."""


class EventLogError(ValueError):
    """Corrupt or inconsistent event log content."""


def _parse_time(raw: str, frequency: str):
    if frequency == FREQ_DAILY:
        return date.fromisoformat(raw)
    # tick files carry either epoch milliseconds or an ISO-8601 timestamp
    try:
        return int(raw)
    except ValueError:
        return datetime.fromisoformat(raw)


def load_prices(path: str | Path, frequency: str) -> PricePath:
    """Parse a ``date,price`` (daily) or ``timestamp,price`` (tick) CSV.

    Rows must be in strictly ascending time order; non-finite or
    non-positive prices and duplicate timestamps are rejected with the
    offending line number.
    """
    if frequency not in (FREQ_TICK, FREQ_DAILY):
        raise IngestError(f"unknown frequency {frequency!r}")
    expected_header = ["date", "price"] if frequency == FREQ_DAILY else ["timestamp", "price"]
    path = Path(path)
    prices: list[float] = []
    prev_time = None
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        if [h.strip().lower() for h in header] != expected_header:
            raise IngestError(
                f"{path}: line 1: expected header {','.join(expected_header)!r}, "
                f"got {','.join(header)!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise IngestError(f"{path}: line {lineno}: expected 2 columns, got {len(row)}")
            try:
                stamp = _parse_time(row[0].strip(), frequency)
            except ValueError:
                raise IngestError(
                    f"{path}: line {lineno}: unparseable {expected_header[0]} {row[0]!r}"
                ) from None
            try:
                price = float(row[1])
            except ValueError:
                raise IngestError(f"{path}: line {lineno}: unparseable price {row[1]!r}") from None
            if not math.isfinite(price) or price <= 0:
                raise IngestError(
                    f"{path}: line {lineno}: price must be finite and positive, got {row[1]!r}"
                )
            if prev_time is not None:
                if stamp == prev_time:
                    raise IngestError(f"{path}: line {lineno}: duplicate timestamp {row[0]!r}")
                if stamp < prev_time:
                    raise IngestError(
                        f"{path}: line {lineno}: timestamps must ascend, {row[0]!r} "
                        "is earlier than the previous row"
                    )
            prev_time = stamp
            prices.append(price)
    if len(prices) < 2:
        raise IngestError(f"{path}: fewer than 2 valid rows")
    return PricePath(prices, origin_index=0)


@dataclass(frozen=True)
class DatasetRecord:
    """A registered dataset: public codename, private source, carved practice slice."""

    codename: str
    source_description: str
    frequency: str
    prices: PricePath
    practice_slice: tuple[int, int]  # return-index range [start, stop)

    def __post_init__(self):
        if self.frequency not in (FREQ_TICK, FREQ_DAILY):
            raise RegistryError(f"unknown frequency {self.frequency!r}")
        if self.codename.strip().lower() == self.source_description.strip().lower():
            raise RegistryError("codename must not equal the source description")

    @property
    def scoring_returns(self) -> ReturnSequence:
        full = compute_returns(self.prices)
        stop = self.practice_slice[0]
        return ReturnSequence(full.returns[:stop], base_price=full.base_price, origin=0)

    @property
    def practice_returns(self) -> ReturnSequence | None:
        full = compute_returns(self.prices)
        start, stop = self.practice_slice
        if stop - start < 1:
            return None
        prefix = float(self.prices.prices[start])
        return ReturnSequence(full.returns[start:stop], base_price=prefix, origin=start)

    def public_view(self) -> dict:
        return {
            "codename": self.codename,
            "frequency": self.frequency,
            "returns": len(self.prices) - 1,
        }


def practice_split(n_returns: int, fraction: float = PRACTICE_FRACTION) -> tuple[int, int]:
    """Return-index range reserved for practice: the final ``fraction`` of returns."""
    start = n_returns - int(n_returns * fraction)
    return (start, n_returns)


class DatasetRegistry:
    """Codename-keyed dataset store; public listings omit the source description."""

    def __init__(self):
        self._records: dict[str, DatasetRecord] = {}

    def register(
        self,
        codename: str,
        source_description: str,
        frequency: str,
        prices: PricePath,
        practice_fraction: float = PRACTICE_FRACTION,
    ) -> DatasetRecord:
        key = codename.strip().lower()
        if key in self._records:
            raise RegistryError(f"codename {codename!r} already registered")
        record = DatasetRecord(
            codename=codename,
            source_description=source_description,
            frequency=frequency,
            prices=prices,
            practice_slice=practice_split(len(prices) - 1, practice_fraction),
        )
        self._records[key] = record
        return record

    def get(self, codename: str) -> DatasetRecord:
        try:
            return self._records[codename.strip().lower()]
        except KeyError:
            raise RegistryError(f"unknown codename {codename!r}") from None

    def list_public(self) -> list[dict]:
        return [r.public_view() for r in self._records.values()]

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, codename: str) -> bool:
        return codename.strip().lower() in self._records


@dataclass(frozen=True)
class GuessEvent:
    """Immutable record of one resolved trial (guess or timeout)."""

    timestamp: int  # UTC milliseconds since epoch
    contest_id: str
    session_id: str
    subject_id: str
    trial_id: str
    choice: str  # top | bottom | timeout
    outcome: str  # correct | incorrect
    placement: str  # audit only; never transmitted to clients

    def __post_init__(self):
        if self.choice not in (CHOICE_TOP, CHOICE_BOTTOM, CHOICE_TIMEOUT):
            raise EventLogError(f"bad choice {self.choice!r}")
        if self.outcome not in (OUTCOME_CORRECT, OUTCOME_INCORRECT):
            raise EventLogError(f"bad outcome {self.outcome!r}")
        if self.choice == CHOICE_TIMEOUT and self.outcome != OUTCOME_INCORRECT:
            raise EventLogError("a timeout always records as incorrect")

    def to_json_line(self) -> str:
        return json.dumps(
            {name: getattr(self, name) for name in _EVENT_FIELDS},
            separators=(",", ":"),
        )

    @classmethod
    def from_json_line(cls, line: str) -> GuessEvent:
        obj = json.loads(line)
        missing = [name for name in _EVENT_FIELDS if name not in obj]
        if missing:
            raise EventLogError(f"event missing fields {missing}")
        extra = [k for k in obj if k not in _EVENT_FIELDS]
        if extra:
            raise EventLogError(f"event has unknown fields {extra}")
        return cls(**obj)


class EventLog:
    """Append-only JSONL log of guess events.

    Single writer; each append is one whole line so concurrent readers see a
    prefix-consistent log.  A crash can leave at most one unterminated line,
    which readers skip (lenient) or report (strict).
    """

    def __init__(self, path: str | Path, *, fsync: bool = True):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fsync = fsync
        self._fh = None

    def append(self, event: GuessEvent) -> int:
        """Append one event; returns the byte offset where its line starts."""
        if self._fh is None:
            self._fh = self.path.open("a", encoding="utf-8")
        offset = self._fh.tell()
        self._fh.write(event.to_json_line() + "\n")
        self._fh.flush()
        if self._fsync:
            os.fsync(self._fh.fileno())
        return offset

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> EventLog:
        return self

    def __exit__(self, *exc):
        self.close()


def read_event_log(path: str | Path, *, strict: bool = False) -> list[GuessEvent]:
    """Read all events from a JSONL log.

    A trailing line without a newline terminator (torn write) is skipped in
    lenient mode and rejected in strict mode.  Any other malformed line is
    always an error, reported with its line number.
    """
    raw = Path(path).read_text(encoding="utf-8")
    events: list[GuessEvent] = []
    if not raw:
        return events
    complete = raw.endswith("\n")
    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for lineno, line in enumerate(lines, start=1):
        torn_tail = lineno == len(lines) and not complete
        try:
            events.append(GuessEvent.from_json_line(line))
        except (json.JSONDecodeError, EventLogError, TypeError) as exc:
            if torn_tail and not strict:
                break  # partial final line from an interrupted append
            if torn_tail:
                raise EventLogError(f"{path}: line {lineno}: truncated final line") from None
            raise EventLogError(f"{path}: line {lineno}: {exc}") from None
    return events


def replay_subject_records(
    events: Iterable[GuessEvent],
    charts_per_subject: int | None = None,
) -> dict[str, tuple[int, list[SubjectRecord]]]:
    """Fold an event stream back into per-contest subject records.

    Returns ``{contest_id: (charts_per_subject, records)}`` over completed
    sessions only.  When ``charts_per_subject`` is not given it is inferred
    per contest as the maximum per-session event count (every completed
    session has exactly that many resolution events).
    """
    per_session: dict[tuple[str, str], list[GuessEvent]] = {}
    for ev in events:
        per_session.setdefault((ev.contest_id, ev.session_id), []).append(ev)

    contests: dict[str, list[tuple[str, list[GuessEvent]]]] = {}
    for (contest_id, session_id), evs in per_session.items():
        seen_trials = {e.trial_id for e in evs}
        if len(seen_trials) != len(evs):
            raise EventLogError(
                f"session {session_id}: duplicate resolution events for one trial"
            )
        stamps = [e.timestamp for e in evs]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise EventLogError(f"session {session_id}: timestamps not strictly increasing")
        contests.setdefault(contest_id, []).append((session_id, evs))

    out: dict[str, tuple[int, list[SubjectRecord]]] = {}
    for contest_id, sessions in contests.items():
        c = charts_per_subject or max(len(evs) for _, evs in sessions)
        records = []
        for session_id, evs in sorted(sessions):
            if len(evs) != c:
                continue  # session still in progress at snapshot time
            records.append(
                SubjectRecord(
                    subject_id=evs[0].subject_id,
                    correct=sum(e.outcome == OUTCOME_CORRECT for e in evs),
                    answered=sum(e.choice != CHOICE_TIMEOUT for e in evs),
                    assigned=c,
                )
            )
        out[contest_id] = (c, records)
    return out


def replay_contest_results(
    events: Iterable[GuessEvent],
    charts_per_subject: int | None = None,
    *,
    min_response_rate: float = DEFAULT_MIN_RESPONSE_RATE,
) -> dict[str, ContestResult]:
    """Recompute every contest's aggregate from the event log alone."""
    replayed = replay_subject_records(events, charts_per_subject)
    results: dict[str, ContestResult] = {}
    for contest_id, (c, records) in replayed.items():
        if not records:
            continue
        results[contest_id] = summarize_contest(
            records, c, min_response_rate=min_response_rate
        )
    return results
