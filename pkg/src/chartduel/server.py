"""Session-oriented streaming server: paired chart ticks, guesses, feedback.

One asyncio task owns each connected session, so a slow client never delays
another session's ticks.  The engine boundary is plain method calls from
that task; all timing uses the engine clock, which must advance at the same
rate as the event loop's time (wall clock on a real loop, loop time on a
`VirtualTimeEventLoop`).

`VirtualTimeEventLoop` runs the whole protocol without real waits: whenever
every task is blocked on timers, the loop jumps its clock to the next timer.
Full sessions with one-second ticks then validate in milliseconds, with
deterministic inter-tick spacing.
"""

from __future__ import annotations

import asyncio
import json
import threading
from pathlib import Path

from .engine import Engine, EngineError, Session, TrialPair, TrialStateError
from .protocol import (
    CLIENT,
    KIND_CONTEST_LIST,
    KIND_ERROR,
    KIND_FEEDBACK,
    KIND_GUESS,
    KIND_HELLO,
    KIND_SESSION_END,
    KIND_SESSION_OPEN,
    KIND_TICK,
    KIND_TRIAL_END,
    KIND_TRIAL_START,
    SERVER,
    SLOT_BOTTOM,
    SLOT_TOP,
    ProtocolError,
    ProtocolMessage,
    TranscriptEntry,
    validate_message,
)
from .stats import PROFESSION_UNDECLARED, PROFESSIONS
from .transport import Connection, ConnectionClosed, serve_websockets

LEADERBOARD_LIMIT = 10


class VirtualTimeEventLoop(asyncio.SelectorEventLoop):
    """Event loop whose clock jumps to the next timer when all tasks sleep.

    Only for in-process transports: real sockets would be starved because
    virtual time outruns wall time.
    """

    def __init__(self):
        super().__init__()
        self._virtual_now = 0.0

    def time(self) -> float:
        return self._virtual_now

    def _run_once(self):
        if not self._ready and self._scheduled:
            next_when = self._scheduled[0]._when
            if next_when > self._virtual_now:
                self._virtual_now = next_when
        super()._run_once()


def run_virtual(coro):
    """Run a coroutine to completion on a fresh virtual-time loop."""
    loop = VirtualTimeEventLoop()
    try:
        return loop.run_until_complete(coro)
    finally:
        loop.close()


class _Inbox:
    """Reader-task fan-in: parsed frames, EOF, or a malformed-frame marker."""

    MSG, EOF, BAD = "msg", "eof", "bad"

    def __init__(self):
        self.queue: asyncio.Queue = asyncio.Queue()

    async def pump(self, conn: Connection):
        try:
            while True:
                text = await conn.recv()
                try:
                    message = ProtocolMessage.from_wire(text)
                except ProtocolError as exc:
                    await self.queue.put((self.BAD, str(exc)))
                    return
                await self.queue.put((self.MSG, message))
        except ConnectionClosed:
            await self.queue.put((self.EOF, None))


class _ClientGone(Exception):
    pass


class _Malformed(Exception):
    pass


class SessionChannel:
    """Server half of one connection: sequencing, transcripts, framed sends."""

    def __init__(self, conn: Connection, record: "ConnectionTranscript | None"):
        self.conn = conn
        self.record = record
        self.session_id: str | None = None
        self._out_seq = 0
        self._last_client_seq = 0
        self.inbox = _Inbox()
        self._pump_task: asyncio.Task | None = None

    def start(self):
        self._pump_task = asyncio.ensure_future(self.inbox.pump(self.conn))

    async def stop(self):
        if self._pump_task is not None:
            self._pump_task.cancel()
        await self.conn.close()

    def bind_session(self, session_id: str) -> None:
        self.session_id = session_id
        if self.record is not None:
            self.record.session_id = session_id

    async def send(self, kind: str, payload: dict) -> None:
        self._out_seq += 1
        message = ProtocolMessage(kind=kind, seq=self._out_seq, payload=payload)
        if self.record is not None:
            self.record.add(SERVER, message)
        await self.conn.send(message.to_wire())

    async def error(self, code: str, detail: str, *, fatal: bool) -> None:
        await self.send(KIND_ERROR, {"code": code, "message": detail, "fatal": fatal})

    async def next_message(self, timeout: float | None) -> ProtocolMessage | None:
        """Next well-formed client frame, or None when the timeout elapses."""
        while True:
            if timeout is None:
                tag, value = await self.inbox.queue.get()
            else:
                if timeout <= 0:
                    return None
                try:
                    tag, value = await asyncio.wait_for(self.inbox.queue.get(), timeout)
                except asyncio.TimeoutError:
                    return None
            if tag == _Inbox.EOF:
                raise _ClientGone()
            if tag == _Inbox.BAD:
                raise _Malformed(value)
            message = value
            problems = validate_message(message, CLIENT)
            if problems:
                raise _Malformed("; ".join(str(p) for p in problems))
            if message.seq <= self._last_client_seq:
                raise _Malformed(
                    f"client seq {message.seq} not greater than {self._last_client_seq}"
                )
            self._last_client_seq = message.seq
            if self.record is not None:
                self.record.add(CLIENT, message)
            return message


class ConnectionTranscript:
    """Frames of one connection; the session id is stamped retroactively."""

    def __init__(self):
        self.session_id: str | None = None
        self._frames: list[tuple[str, ProtocolMessage]] = []

    def add(self, sender: str, message: ProtocolMessage) -> None:
        self._frames.append((sender, message))

    def entries(self) -> list[TranscriptEntry]:
        return [
            TranscriptEntry(sender=sender, message=message, session=self.session_id)
            for sender, message in self._frames
        ]


class TranscriptRecorder:
    """Collects per-connection transcripts, optionally flushed to a JSONL file.

    Transcripts are written whole at connection close so concurrent sessions
    never interleave within the file; the durable record of results is the
    guess-event log, not this diagnostic trace.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.connections: list[ConnectionTranscript] = []
        self._lock = threading.Lock()

    def open_connection(self) -> ConnectionTranscript:
        record = ConnectionTranscript()
        with self._lock:
            self.connections.append(record)
        return record

    def flush(self, record: ConnectionTranscript) -> None:
        if self.path is None:
            return
        lines = [entry.to_json_line() for entry in record.entries()]
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                for line in lines:
                    fh.write(line + "\n")


class StreamServer:
    """Drives the wire protocol for any number of concurrent sessions."""

    def __init__(
        self,
        engine: Engine,
        *,
        recorder: TranscriptRecorder | None = None,
    ):
        self.engine = engine
        self.recorder = recorder

    # -- transport bindings ---------------------------------------------------

    async def serve(self, host: str, port: int, *, static_dir: str | Path | None = None):
        """Bind to a WebSocket port (plus optional static files); returns the server."""
        if not self.engine.contests():
            raise EngineError("refusing to serve an engine with no contests")
        return await serve_websockets(
            self.handle_connection, host, port, static_dir=static_dir
        )

    async def handle_connection(self, conn: Connection) -> None:
        """Run one connection from hello to session_end (or early failure)."""
        record = self.recorder.open_connection() if self.recorder is not None else None
        channel = SessionChannel(conn, record)
        channel.start()
        session: Session | None = None
        try:
            message = await channel.next_message(None)
            if message.kind != KIND_HELLO:
                await channel.error("expected_hello", f"got {message.kind}", fatal=True)
                return
            await channel.send(
                KIND_CONTEST_LIST,
                {"contests": [c.config.public_view() for c in self.engine.contests()]},
            )
            message = await channel.next_message(None)
            if message.kind != KIND_SESSION_OPEN:
                await channel.error(
                    "expected_session_open", f"got {message.kind}", fatal=True
                )
                return
            session = await self._open_session(channel, message)
            if session is None:
                return
            await self._run_session(channel, session)
        except _ClientGone:
            pass
        except _Malformed as exc:
            try:
                await channel.error("malformed", str(exc), fatal=True)
            except ConnectionClosed:
                pass
        except ConnectionClosed:
            pass
        finally:
            if session is not None and not session.completed:
                # disconnect forfeits the remaining trials as timeouts
                self.engine.forfeit_session(session)
            if self.recorder is not None and record is not None:
                self.recorder.flush(record)
            await channel.stop()

    # -- protocol flow ---------------------------------------------------------

    async def _open_session(self, channel, message) -> Session | None:
        payload = message.payload
        profession = payload.get("profession", PROFESSION_UNDECLARED)
        if profession not in PROFESSIONS:
            profession = PROFESSION_UNDECLARED
        try:
            session = self.engine.start_session(
                payload["contest_id"],
                payload["subject_id"],
                practice=bool(payload.get("practice", False)),
                profession=profession,
            )
        except EngineError as exc:
            await channel.error("session_rejected", str(exc), fatal=True)
            return None
        channel.bind_session(session.session_id)
        config = self.engine.get_contest(session.contest_id).config
        await channel.send(
            KIND_SESSION_OPEN,
            {
                "session_id": session.session_id,
                "contest_id": session.contest_id,
                "trial_count": len(session.trials),
                "practice": session.practice,
                "points_per_chart": config.points_per_chart,
                "points_per_screen": config.points_per_screen,
                "tick_interval": config.tick_interval,
                "guess_deadline": config.effective_deadline,
            },
        )
        return session

    async def _run_session(self, channel: SessionChannel, session: Session) -> None:
        config = self.engine.get_contest(session.contest_id).config
        clock = self.engine.clock
        for _ in range(len(session.trials)):
            trial = self.engine.begin_trial(session)
            await channel.send(
                KIND_TRIAL_START,
                {
                    "trial_id": trial.trial_id,
                    "index": trial.index,
                    "total": len(session.trials),
                    "points_per_chart": config.points_per_chart,
                    "points_per_screen": config.points_per_screen,
                    "tick_interval": config.tick_interval,
                    "deadline_seconds": config.effective_deadline,
                    "base_price": float(trial.real.prices[0]),
                },
            )
            started = clock()
            guess = None
            for point in range(1, config.points_per_chart + 1):
                target = started + point * config.tick_interval
                guess = await self._await_guess(channel, trial, until=target)
                if guess is not None:
                    break
                await channel.send(
                    KIND_TICK,
                    {
                        "trial_id": trial.trial_id,
                        "slot": SLOT_TOP,
                        "point_index": point,
                        "price": float(trial.top_prices[point]),
                    },
                )
                await channel.send(
                    KIND_TICK,
                    {
                        "trial_id": trial.trial_id,
                        "slot": SLOT_BOTTOM,
                        "point_index": point,
                        "price": float(trial.bottom_prices[point]),
                    },
                )
            if guess is None:
                self.engine.finish_streaming(session, trial.trial_id)
                guess = await self._await_guess(channel, trial, until=trial.deadline)
            if guess is not None:
                try:
                    outcome = self.engine.submit_guess(
                        session, trial.trial_id, guess.payload["choice"]
                    )
                    timed_out = False
                except TrialStateError:
                    # deadline raced the guess; resolve as a timeout
                    guess = None
            if guess is None:
                self.engine.expire_trial(session, trial.trial_id)
                outcome = "incorrect"
                timed_out = True
            await channel.send(
                KIND_FEEDBACK,
                {
                    "trial_id": trial.trial_id,
                    "outcome": outcome,
                    "timed_out": timed_out,
                    "score": session.score,
                },
            )
            await channel.send(KIND_TRIAL_END, {"trial_id": trial.trial_id})
        board = [
            {"subject_id": subject, "score": score}
            for subject, score in self.engine.leaderboard(session.contest_id)[
                :LEADERBOARD_LIMIT
            ]
        ]
        await channel.send(
            KIND_SESSION_END,
            {
                "session_id": session.session_id,
                "score": session.score,
                "total": len(session.trials),
                "leaderboard": board,
            },
        )

    async def _await_guess(
        self, channel: SessionChannel, trial: TrialPair, *, until: float | None
    ) -> ProtocolMessage | None:
        """Wait for a guess for ``trial`` until the engine clock reaches ``until``.

        Other well-formed frames get a non-fatal error reply and the wait
        continues; returns None when time runs out.
        """
        clock = self.engine.clock
        while True:
            timeout = None if until is None else until - clock()
            message = await channel.next_message(timeout)
            if message is None:
                return None
            if message.kind != KIND_GUESS:
                await channel.error(
                    "unexpected_message", f"expected guess, got {message.kind}", fatal=False
                )
                continue
            if message.payload["trial_id"] != trial.trial_id:
                await channel.error(
                    "wrong_trial",
                    f"guess for {message.payload['trial_id']!r}, current is {trial.trial_id!r}",
                    fatal=False,
                )
                continue
            return message


def transcript_log_lines(path: str | Path) -> list[TranscriptEntry]:
    """Load a transcript JSONL file written by `TranscriptRecorder`."""
    entries = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(TranscriptEntry.from_json_line(line))
    return entries


def run_server_forever(
    engine: Engine,
    host: str,
    port: int,
    *,
    static_dir: str | Path | None = None,
    recorder: TranscriptRecorder | None = None,
) -> None:
    """Blocking entry point used by the CLI serve command."""

    async def main():
        server = StreamServer(engine, recorder=recorder)
        ws_server = await server.serve(host, port, static_dir=static_dir)
        async with ws_server:
            await ws_server.serve_forever()

    asyncio.run(main())
