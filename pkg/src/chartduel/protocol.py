"""Wire protocol: JSON message frames, schema validation, transcript checking.

One persistent bidirectional channel carries a session.  Every frame is a
JSON object ``{"kind": ..., "seq": ..., "payload": {...}}``; each side
numbers its own frames with a strictly increasing ``seq``.  No message sent
before feedback carries the hidden placement or any truth label — the schema
simply has no field for them, and the validator treats such keys anywhere in
a payload as leaks.

The happy-path session shape is::

    client: hello
    server: contest_list
    client: session_open (contest_id, subject_id, practice)
    server: session_open (session_id, trial_count, geometry)
    per trial:
        server: trial_start
        server: tick (top, i), tick (bottom, i)   for i = 1..points_per_chart,
                stopping early if a guess arrives
        client: guess (any time after trial_start)
        server: feedback (outcome; timed_out when the deadline passed)
        server: trial_end
    server: session_end

``validate_transcript`` replays a recorded session against this state
machine.  Server ``error`` frames are treated as annotations: they are
schema- and sequence-checked but do not advance the state machine.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

CLIENT = "client"
SERVER = "server"

KIND_HELLO = "hello"
KIND_CONTEST_LIST = "contest_list"
KIND_SESSION_OPEN = "session_open"
KIND_TRIAL_START = "trial_start"
KIND_TICK = "tick"
KIND_GUESS = "guess"
KIND_FEEDBACK = "feedback"
KIND_TRIAL_END = "trial_end"
KIND_SESSION_END = "session_end"
KIND_ERROR = "error"

SLOT_TOP = "top"
SLOT_BOTTOM = "bottom"

#: payload keys that would reveal the hidden truth if they ever went on the wire
FORBIDDEN_KEYS = frozenset(
    {"placement", "truth", "real_slot", "is_real", "real", "answer", "source_description"}
)


class ProtocolError(ValueError):
    """Unparseable or structurally invalid frame."""


def _spec(type_: str, *, required: bool = True, enum: tuple | None = None) -> dict:
    out: dict[str, Any] = {"type": type_, "required": required}
    if enum is not None:
        out["enum"] = list(enum)
    return out


# (kind, direction) -> payload field specs.  This mapping is the single
# source of truth; docs/protocol_schema.json is exported from it.
MESSAGE_SCHEMAS: dict[tuple[str, str], dict[str, dict]] = {
    (KIND_HELLO, CLIENT): {
        "client": _spec("str"),
        "version": _spec("str", required=False),
    },
    (KIND_CONTEST_LIST, SERVER): {
        "contests": _spec("list"),
    },
    (KIND_SESSION_OPEN, CLIENT): {
        "contest_id": _spec("str"),
        "subject_id": _spec("str"),
        "practice": _spec("bool", required=False),
        "profession": _spec(
            "str", required=False, enum=("finance", "other", "undeclared")
        ),
    },
    (KIND_SESSION_OPEN, SERVER): {
        "session_id": _spec("str"),
        "contest_id": _spec("str"),
        "trial_count": _spec("int"),
        "practice": _spec("bool"),
        "points_per_chart": _spec("int"),
        "points_per_screen": _spec("int"),
        "tick_interval": _spec("number"),
        "guess_deadline": _spec("number"),
    },
    (KIND_TRIAL_START, SERVER): {
        "trial_id": _spec("str"),
        "index": _spec("int"),
        "total": _spec("int"),
        "points_per_chart": _spec("int"),
        "points_per_screen": _spec("int"),
        "tick_interval": _spec("number"),
        "deadline_seconds": _spec("number"),
        "base_price": _spec("number"),
    },
    (KIND_TICK, SERVER): {
        "trial_id": _spec("str"),
        "slot": _spec("str", enum=(SLOT_TOP, SLOT_BOTTOM)),
        "point_index": _spec("int"),
        "price": _spec("number"),
    },
    (KIND_GUESS, CLIENT): {
        "trial_id": _spec("str"),
        "choice": _spec("str", enum=(SLOT_TOP, SLOT_BOTTOM)),
    },
    (KIND_FEEDBACK, SERVER): {
        "trial_id": _spec("str"),
        "outcome": _spec("str", enum=("correct", "incorrect")),
        "timed_out": _spec("bool"),
        "score": _spec("int", required=False),
    },
    (KIND_TRIAL_END, SERVER): {
        "trial_id": _spec("str"),
    },
    (KIND_SESSION_END, SERVER): {
        "session_id": _spec("str"),
        "score": _spec("int"),
        "total": _spec("int"),
        "leaderboard": _spec("list", required=False),
    },
    (KIND_ERROR, SERVER): {
        "code": _spec("str"),
        "message": _spec("str", required=False),
        "fatal": _spec("bool"),
    },
}

KINDS = frozenset(kind for kind, _ in MESSAGE_SCHEMAS)


def schema_as_dict() -> dict:
    """Machine-readable protocol schema (exported to docs/protocol_schema.json)."""
    messages = []
    for (kind, direction), fields in sorted(MESSAGE_SCHEMAS.items()):
        messages.append({"kind": kind, "direction": direction, "payload": fields})
    return {
        "frame": {
            "kind": _spec("str"),
            "seq": _spec("int"),
            "payload": _spec("dict"),
        },
        "forbidden_payload_keys": sorted(FORBIDDEN_KEYS),
        "messages": messages,
    }


@dataclass(frozen=True)
class ProtocolMessage:
    kind: str
    seq: int
    payload: dict

    def to_wire(self) -> str:
        return json.dumps(
            {"kind": self.kind, "seq": self.seq, "payload": self.payload},
            separators=(",", ":"),
        )

    @classmethod
    def from_wire(cls, text: str) -> ProtocolMessage:
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"frame is not valid JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise ProtocolError("frame must be a JSON object")
        kind = obj.get("kind")
        seq = obj.get("seq")
        payload = obj.get("payload", {})
        if not isinstance(kind, str) or not isinstance(seq, int) or isinstance(seq, bool):
            raise ProtocolError("frame needs string 'kind' and integer 'seq'")
        if not isinstance(payload, dict):
            raise ProtocolError("frame 'payload' must be an object")
        if set(obj) - {"kind", "seq", "payload"}:
            raise ProtocolError(f"frame has unknown top-level keys {sorted(set(obj) - {'kind', 'seq', 'payload'})}")
        return cls(kind=kind, seq=seq, payload=payload)


@dataclass(frozen=True)
class TranscriptEntry:
    """One recorded frame with its sender, as written to a transcript log."""

    sender: str
    message: ProtocolMessage
    session: str | None = None

    def to_json_line(self) -> str:
        obj = {
            "session": self.session,
            "sender": self.sender,
            "kind": self.message.kind,
            "seq": self.message.seq,
            "payload": self.message.payload,
        }
        return json.dumps(obj, separators=(",", ":"))

    @classmethod
    def from_json_line(cls, line: str) -> TranscriptEntry:
        obj = json.loads(line)
        return cls(
            sender=obj["sender"],
            message=ProtocolMessage(kind=obj["kind"], seq=obj["seq"], payload=obj["payload"]),
            session=obj.get("session"),
        )


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str
    index: int  # position in the transcript, -1 for transcript-level problems

    def __str__(self) -> str:
        return f"[{self.index}] {self.code}: {self.detail}"


_TYPE_CHECKS = {
    "str": lambda v: isinstance(v, str),
    "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "bool": lambda v: isinstance(v, bool),
    "list": lambda v: isinstance(v, list),
    "dict": lambda v: isinstance(v, dict),
}


def _leaked_keys(payload: Any) -> list[str]:
    leaks = []
    if isinstance(payload, dict):
        for key, value in payload.items():
            if isinstance(key, str) and key.lower() in FORBIDDEN_KEYS:
                leaks.append(key)
            leaks.extend(_leaked_keys(value))
    elif isinstance(payload, list):
        for item in payload:
            leaks.extend(_leaked_keys(item))
    return leaks


def validate_message(
    message: ProtocolMessage, direction: str, *, index: int = -1
) -> list[Violation]:
    """Schema-check one frame: kind, direction, field presence, types, leaks."""
    violations: list[Violation] = []
    if message.kind not in KINDS:
        violations.append(Violation("unknown_kind", f"kind {message.kind!r}", index))
        for key in _leaked_keys(message.payload):
            violations.append(Violation("leak_field", f"forbidden key {key!r}", index))
        return violations
    schema = MESSAGE_SCHEMAS.get((message.kind, direction))
    if schema is None:
        violations.append(
            Violation(
                "schema_direction",
                f"{message.kind} is not a valid {direction} message",
                index,
            )
        )
        schema = {}
    for key in _leaked_keys(message.payload):
        violations.append(Violation("leak_field", f"forbidden key {key!r}", index))
    for name, spec in schema.items():
        if name not in message.payload:
            if spec["required"]:
                violations.append(
                    Violation("schema_field", f"{message.kind}: missing {name!r}", index)
                )
            continue
        value = message.payload[name]
        if not _TYPE_CHECKS[spec["type"]](value):
            violations.append(
                Violation(
                    "schema_field",
                    f"{message.kind}: field {name!r} must be {spec['type']}",
                    index,
                )
            )
        elif "enum" in spec and value not in spec["enum"]:
            violations.append(
                Violation(
                    "schema_field",
                    f"{message.kind}: field {name!r} not in {spec['enum']}",
                    index,
                )
            )
    if schema:
        for name in message.payload:
            if name not in schema and name.lower() not in FORBIDDEN_KEYS:
                violations.append(
                    Violation("schema_field", f"{message.kind}: unknown field {name!r}", index)
                )
    return violations


class _TrialTracker:
    def __init__(self, trial_id: str, points_per_chart: int):
        self.trial_id = trial_id
        self.points_per_chart = points_per_chart
        self.next_index = 1
        self.expect_slot = SLOT_TOP
        self.guessed = False
        self.fed = False


def validate_transcript(entries: Sequence[TranscriptEntry]) -> list[Violation]:
    """Replay one session's frames against the protocol state machine.

    Returns all violations found (empty list means the transcript is legal).
    The check is structural: ordering, tick pairing, sequence monotonicity,
    schema conformance, and absence of truth-revealing fields.  Wall-clock
    pacing is not checked here.
    """
    violations: list[Violation] = []
    last_seq: dict[str, int] = {}
    phase = "start"
    trial: _TrialTracker | None = None
    trials_completed = 0
    trial_count: int | None = None

    def flag(code: str, detail: str, index: int):
        violations.append(Violation(code, detail, index))

    for i, entry in enumerate(entries):
        msg = entry.message
        violations.extend(validate_message(msg, entry.sender, index=i))
        if msg.kind not in KINDS:
            continue
        prev = last_seq.get(entry.sender)
        if prev is not None and msg.seq <= prev:
            flag("seq_order", f"{entry.sender} seq {msg.seq} after {prev}", i)
        last_seq[entry.sender] = msg.seq

        if msg.kind == KIND_ERROR:
            continue  # annotation; does not advance the state machine

        if phase == "done":
            flag("trailing_messages", f"{msg.kind} after session_end", i)
            continue

        if phase == "start":
            if msg.kind == KIND_HELLO and entry.sender == CLIENT:
                phase = "greeted"
            else:
                flag("state", f"expected hello, got {msg.kind}", i)
            continue
        if phase == "greeted":
            if msg.kind == KIND_CONTEST_LIST and entry.sender == SERVER:
                phase = "listed"
            else:
                flag("state", f"expected contest_list, got {msg.kind}", i)
            continue
        if phase == "listed":
            if msg.kind == KIND_SESSION_OPEN and entry.sender == CLIENT:
                phase = "requested"
            else:
                flag("state", f"expected session_open request, got {msg.kind}", i)
            continue
        if phase == "requested":
            if msg.kind == KIND_SESSION_OPEN and entry.sender == SERVER:
                phase = "idle"
                tc = msg.payload.get("trial_count")
                trial_count = tc if isinstance(tc, int) else None
            else:
                flag("state", f"expected session_open ack, got {msg.kind}", i)
            continue

        if phase == "idle":
            if msg.kind == KIND_TRIAL_START:
                ppc = msg.payload.get("points_per_chart")
                trial = _TrialTracker(
                    str(msg.payload.get("trial_id")),
                    ppc if isinstance(ppc, int) else 0,
                )
                phase = "in_trial"
            elif msg.kind == KIND_SESSION_END:
                if trial_count is not None and trials_completed != trial_count:
                    flag(
                        "trial_count_mismatch",
                        f"session_end after {trials_completed} trials, expected {trial_count}",
                        i,
                    )
                phase = "done"
            else:
                flag("state", f"expected trial_start or session_end, got {msg.kind}", i)
            continue

        # phase == "in_trial"
        assert trial is not None
        if msg.kind == KIND_TICK:
            if msg.payload.get("trial_id") != trial.trial_id:
                flag("wrong_trial", f"tick for {msg.payload.get('trial_id')!r}", i)
                continue
            if trial.fed:
                flag("tick_after_feedback", f"tick at index {msg.payload.get('point_index')}", i)
                continue
            slot = msg.payload.get("slot")
            point = msg.payload.get("point_index")
            if trial.next_index > trial.points_per_chart:
                flag("tick_overrun", f"point_index {point} beyond chart length", i)
                continue
            if slot != trial.expect_slot or point != trial.next_index:
                flag(
                    "tick_pairing",
                    f"expected {trial.expect_slot}/{trial.next_index}, got {slot}/{point}",
                    i,
                )
                # resync on the observed index (when plausible) so one fault
                # yields one violation instead of a cascade
                if isinstance(point, int) and 1 <= point <= trial.points_per_chart:
                    trial.next_index = point
                    trial.expect_slot = slot if slot in (SLOT_TOP, SLOT_BOTTOM) else SLOT_TOP
            if trial.expect_slot == SLOT_TOP:
                trial.expect_slot = SLOT_BOTTOM
            else:
                trial.expect_slot = SLOT_TOP
                trial.next_index += 1
        elif msg.kind == KIND_GUESS:
            if msg.payload.get("trial_id") != trial.trial_id:
                flag("wrong_trial", f"guess for {msg.payload.get('trial_id')!r}", i)
            elif trial.fed:
                flag("guess_after_feedback", trial.trial_id, i)
            elif trial.guessed:
                flag("duplicate_guess", trial.trial_id, i)
            else:
                trial.guessed = True
        elif msg.kind == KIND_FEEDBACK:
            if msg.payload.get("trial_id") != trial.trial_id:
                flag("wrong_trial", f"feedback for {msg.payload.get('trial_id')!r}", i)
                continue
            if trial.fed:
                flag("state", "second feedback for one trial", i)
                continue
            if not trial.guessed and msg.payload.get("timed_out") is not True:
                flag("feedback_without_guess", trial.trial_id, i)
            trial.fed = True
        elif msg.kind == KIND_TRIAL_END:
            if msg.payload.get("trial_id") != trial.trial_id:
                flag("wrong_trial", f"trial_end for {msg.payload.get('trial_id')!r}", i)
            if not trial.fed:
                flag("missing_feedback", trial.trial_id, i)
            trials_completed += 1
            trial = None
            phase = "idle"
        elif msg.kind == KIND_TRIAL_START:
            flag("missing_trial_end", f"new trial while {trial.trial_id} unresolved", i)
            ppc = msg.payload.get("points_per_chart")
            trial = _TrialTracker(
                str(msg.payload.get("trial_id")), ppc if isinstance(ppc, int) else 0
            )
        elif msg.kind == KIND_SESSION_END:
            flag("missing_trial_end", f"session_end while {trial.trial_id} unresolved", i)
            phase = "done"
        else:
            flag("state", f"unexpected {msg.kind} during a trial", i)

    if phase != "done":
        violations.append(Violation("truncated", f"transcript ends in phase {phase!r}", -1))
    return violations


def split_transcript_sessions(
    entries: Iterable[TranscriptEntry],
) -> dict[str, list[TranscriptEntry]]:
    """Demultiplex a recorded transcript log into per-session entry lists."""
    sessions: dict[str, list[TranscriptEntry]] = {}
    for entry in entries:
        sessions.setdefault(entry.session or "", []).append(entry)
    return sessions
