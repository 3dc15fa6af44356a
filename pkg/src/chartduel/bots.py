"""Algorithmic subjects: a fair-coin bot and feedback-learning discriminators.

The coin bot calibrates the null model (its guesses must be exactly
fair-coin flips).  The learning bot operationalizes feedback-driven play: it
scores both charts with a summary statistic, learns from feedback whether
the real chart tends to carry the higher or the lower value, and then picks
accordingly.  Which direction is "real" differs across datasets — real
charts can be the smoother or the spikier of the pair — so the orientation
itself must be learned, and a few trials of feedback suffice.

Bots speak the ordinary wire protocol through `play_protocol_session`; bulk
studies drive the same policies against the engine directly (see `sim`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .protocol import (
    KIND_ERROR,
    KIND_FEEDBACK,
    KIND_GUESS,
    KIND_HELLO,
    KIND_SESSION_END,
    KIND_SESSION_OPEN,
    KIND_TICK,
    KIND_TRIAL_END,
    KIND_TRIAL_START,
    SLOT_BOTTOM,
    SLOT_TOP,
    ProtocolError,
    ProtocolMessage,
)
from .transport import Connection, ConnectionClosed

#: statistics closer than this are treated as ties and resolved by coin flip
TIE_EPS = 1e-12

#: evidence tally needed before the orientation locks in (or flips)
ORIENTATION_THRESHOLD = 2

#: tally magnitude cap, so a long winning streak stays quick to unlearn
TALLY_CLAMP = 4


def lag1_autocorr(returns: np.ndarray) -> float:
    """Lag-1 autocorrelation of the revealed returns (trend persistence)."""
    x = np.asarray(returns, dtype=float)
    if len(x) < 3:
        return 0.0
    d = x - x.mean()
    denom = float(d @ d)
    if denom == 0.0:
        return 0.0
    return float(d[:-1] @ d[1:]) / denom


def abs_lag1_autocorr(returns: np.ndarray) -> float:
    """Lag-1 autocorrelation of absolute returns (volatility clustering)."""
    return lag1_autocorr(np.abs(np.asarray(returns, dtype=float)))


FEATURES: dict[str, Callable[[np.ndarray], float]] = {
    "acf1": lag1_autocorr,
    "abs_acf1": abs_lag1_autocorr,
}


class GuessPolicy(Protocol):
    name: str

    def guess(self, top_returns: np.ndarray, bottom_returns: np.ndarray) -> str: ...

    def update(self, outcome: str) -> None: ...


@dataclass
class CoinPolicy:
    """Uniform random choice from the bot's own seeded generator."""

    rng: np.random.Generator
    name: str = "coin"

    @classmethod
    def seeded(cls, seed: int) -> CoinPolicy:
        return cls(rng=np.random.Generator(np.random.Philox(seed)))

    def guess(self, top_returns, bottom_returns) -> str:
        return SLOT_TOP if self.rng.integers(0, 2) else SLOT_BOTTOM

    def update(self, outcome: str) -> None:
        pass  # feedback carries no information for a coin


@dataclass
class LearningPolicy:
    """Feature-comparison policy with a feedback-driven orientation.

    ``orientation`` is +1 when evidence says the real chart carries the
    higher statistic, -1 for lower, 0 while unknown.  Each feedback moves a
    signed evidence tally toward the direction consistent with the revealed
    truth; the orientation locks in (or flips) when the tally crosses the
    threshold, giving the few-trials learning dynamic with hysteresis.
    """

    feature: Callable[[np.ndarray], float]
    rng: np.random.Generator
    name: str = "learning"
    orientation: int = 0
    tally: int = 0
    _last: tuple[float, float, str] | None = field(default=None, repr=False)

    @classmethod
    def seeded(cls, seed: int, feature_name: str = "acf1") -> LearningPolicy:
        return cls(
            feature=FEATURES[feature_name],
            rng=np.random.Generator(np.random.Philox(seed)),
            name=f"learning:{feature_name}",
        )

    def guess(self, top_returns, bottom_returns) -> str:
        f_top = self.feature(top_returns)
        f_bottom = self.feature(bottom_returns)
        if self.orientation == 0 or abs(f_top - f_bottom) <= TIE_EPS:
            choice = SLOT_TOP if self.rng.integers(0, 2) else SLOT_BOTTOM
        elif self.orientation > 0:
            choice = SLOT_TOP if f_top > f_bottom else SLOT_BOTTOM
        else:
            choice = SLOT_TOP if f_top < f_bottom else SLOT_BOTTOM
        self._last = (f_top, f_bottom, choice)
        return choice

    def update(self, outcome: str) -> None:
        """Fold one trial's feedback into the orientation evidence."""
        if self._last is None:
            return
        f_top, f_bottom, choice = self._last
        self._last = None
        if outcome == "correct":
            real_slot = choice
        else:
            real_slot = SLOT_BOTTOM if choice == SLOT_TOP else SLOT_TOP
        f_real, f_fake = (
            (f_top, f_bottom) if real_slot == SLOT_TOP else (f_bottom, f_top)
        )
        if abs(f_real - f_fake) <= TIE_EPS:
            return  # tie carries no orientation evidence
        step = 1 if f_real > f_fake else -1
        self.tally = int(np.clip(self.tally + step, -TALLY_CLAMP, TALLY_CLAMP))
        if self.tally >= ORIENTATION_THRESHOLD:
            self.orientation = 1
        elif self.tally <= -ORIENTATION_THRESHOLD:
            self.orientation = -1


def make_policy(kind: str, seed: int, feature_name: str = "acf1") -> GuessPolicy:
    if kind == "coin":
        return CoinPolicy.seeded(seed)
    if kind == "learning":
        return LearningPolicy.seeded(seed, feature_name)
    raise ValueError(f"unknown bot kind {kind!r} (expected coin or learning)")


@dataclass
class SessionReport:
    """What a protocol-playing bot saw end to end."""

    session_id: str
    subject_id: str
    contest_id: str
    practice: bool
    outcomes: list[str]
    score: int
    total: int
    leaderboard: list[dict]


class BotProtocolError(RuntimeError):
    """The server broke the expected message flow."""


async def play_protocol_session(
    conn: Connection,
    *,
    contest_id: str,
    subject_id: str,
    policy: GuessPolicy,
    practice: bool = False,
    profession: str = "undeclared",
    use_feedback: bool = True,
    client_name: str = "chartduel-bot",
) -> SessionReport:
    """Play one full session over the wire protocol and return the report.

    The bot greets, opens a session, watches both tick streams, guesses when
    each chart completes (immediately, for policies that ignore the charts),
    and consumes feedback.  It never sees placement or truth fields — only
    the correct/incorrect outcome, like any human player.
    """
    seq = 0

    async def send(kind: str, payload: dict):
        nonlocal seq
        seq += 1
        await conn.send(ProtocolMessage(kind=kind, seq=seq, payload=payload).to_wire())

    async def recv() -> ProtocolMessage:
        try:
            message = ProtocolMessage.from_wire(await conn.recv())
        except (ConnectionClosed, ProtocolError) as exc:
            raise BotProtocolError(f"connection broke: {exc}") from None
        if message.kind == KIND_ERROR and message.payload.get("fatal"):
            raise BotProtocolError(f"fatal server error: {message.payload}")
        return message

    await send(KIND_HELLO, {"client": client_name, "version": "1"})
    listing = await recv()
    if listing.kind != "contest_list":
        raise BotProtocolError(f"expected contest_list, got {listing.kind}")
    await send(
        KIND_SESSION_OPEN,
        {
            "contest_id": contest_id,
            "subject_id": subject_id,
            "practice": practice,
            "profession": profession,
        },
    )
    opened = await recv()
    if opened.kind != KIND_SESSION_OPEN:
        raise BotProtocolError(f"expected session_open ack, got {opened.kind}")
    points_per_chart = opened.payload["points_per_chart"]

    outcomes: list[str] = []
    final: dict = {}
    charts: dict[str, list[float]] = {}
    base_price = 0.0
    trial_id = None
    eager = isinstance(policy, CoinPolicy)  # nothing to watch; guess right away

    while True:
        message = await recv()
        kind = message.kind
        if kind == KIND_TRIAL_START:
            trial_id = message.payload["trial_id"]
            base_price = message.payload["base_price"]
            charts = {SLOT_TOP: [base_price], SLOT_BOTTOM: [base_price]}
            if eager:
                choice = policy.guess(np.empty(0), np.empty(0))
                await send(KIND_GUESS, {"trial_id": trial_id, "choice": choice})
        elif kind == KIND_TICK:
            charts[message.payload["slot"]].append(message.payload["price"])
            done = all(
                len(prices) == points_per_chart + 1 for prices in charts.values()
            )
            if done and not eager:
                choice = policy.guess(
                    np.diff(charts[SLOT_TOP]), np.diff(charts[SLOT_BOTTOM])
                )
                await send(KIND_GUESS, {"trial_id": trial_id, "choice": choice})
        elif kind == KIND_FEEDBACK:
            outcomes.append(message.payload["outcome"])
            if use_feedback:
                policy.update(message.payload["outcome"])
        elif kind == KIND_TRIAL_END:
            trial_id = None
        elif kind == KIND_SESSION_END:
            final = message.payload
            break
        elif kind == KIND_ERROR:
            continue  # non-fatal; keep playing
        else:
            raise BotProtocolError(f"unexpected {kind} mid-session")

    return SessionReport(
        session_id=final.get("session_id", opened.payload["session_id"]),
        subject_id=subject_id,
        contest_id=contest_id,
        practice=practice,
        outcomes=outcomes,
        score=final.get("score", 0),
        total=final.get("total", len(outcomes)),
        leaderboard=final.get("leaderboard", []),
    )
