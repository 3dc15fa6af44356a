"""Price paths, permutation surrogates, and trial-segment windowing.

A surrogate chart is built by cumulating a uniform random permutation of the
source returns.  Returns are arithmetic price differences, NOT log returns:
the permuted series must re-cumulate to the exact final price, which only
holds for additive increments.  Permuting returns preserves their marginal
distribution (all moments) while destroying temporal structure, so real and
surrogate charts differ only in time-series patterns.

All values are float64 and immutable after construction.  Because a
permutation changes summation order, reconstructions are compared with
relative tolerance REL_TOL rather than bit equality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: relative tolerance for float comparisons affected by summation order
REL_TOL = 1e-9


class SeriesError(ValueError):
    """Invalid series input (lengths, non-finite values, bad permutation)."""


class CapacityError(SeriesError):
    """Not enough data to cut the requested number of segments."""

    def __init__(self, message: str, max_feasible: int):
        super().__init__(message)
        self.max_feasible = max_feasible


def _freeze(values, name: str, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    if arr.ndim != 1:
        raise SeriesError(f"{name} must be one-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PricePath:
    """Ordered price observations p_0..p_T for one instrument segment.

    ``origin_index`` is the offset of ``prices[0]`` in the source dataset,
    kept so disjointness of segments handed to different subjects is
    auditable after the fact.
    """

    prices: np.ndarray
    origin_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "prices", _freeze(self.prices, "prices"))
        if len(self.prices) < 2:
            raise SeriesError(
                f"a price path needs at least 2 observations, got {len(self.prices)}"
            )
        if not np.isfinite(self.prices).all():
            raise SeriesError("prices must be finite (no NaN/inf)")

    def __len__(self) -> int:
        return len(self.prices)

    @property
    def final_price(self) -> float:
        return float(self.prices[-1])


@dataclass(frozen=True)
class ReturnSequence:
    """Consecutive price differences r_t = p_t - p_{t-1} plus the base price.

    ``origin`` is the index of ``returns[0]`` in the source dataset's return
    indexing (return t sits between prices t and t+1).  For sequences
    produced by rotation it records the rotation offset instead; linear
    indexing into the source is not meaningful there.
    """

    returns: np.ndarray
    base_price: float
    origin: int = 0

    def __post_init__(self):
        object.__setattr__(self, "returns", _freeze(self.returns, "returns"))
        object.__setattr__(self, "base_price", float(self.base_price))
        if len(self.returns) < 1:
            raise SeriesError("a return sequence needs at least 1 return")
        if not np.isfinite(self.returns).all():
            raise SeriesError("returns must be finite (no NaN/inf)")

    def __len__(self) -> int:
        return len(self.returns)

    def cumulate(self) -> PricePath:
        """Rebuild the price path: p_t = base_price + sum of the first t returns."""
        prices = np.empty(len(self.returns) + 1)
        prices[0] = self.base_price
        np.cumsum(self.returns, out=prices[1:])
        prices[1:] += self.base_price
        return PricePath(prices, origin_index=self.origin)


@dataclass(frozen=True)
class Permutation:
    """A bijection on 0..T-1 stored as an index array, plus the seed that drew it."""

    mapping: np.ndarray
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "mapping", _freeze(self.mapping, "mapping", dtype=np.int64))
        n = len(self.mapping)
        if n < 1:
            raise SeriesError("empty permutation")
        if not np.array_equal(np.sort(self.mapping), np.arange(n)):
            raise SeriesError("mapping is not a bijection on 0..T-1")

    def __len__(self) -> int:
        return len(self.mapping)


@dataclass(frozen=True)
class SurrogatePath:
    """Price path cumulated from permuted returns; starts and ends with the source."""

    prices: np.ndarray
    permutation: Permutation
    source_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "prices", _freeze(self.prices, "prices"))

    def __len__(self) -> int:
        return len(self.prices)

    @property
    def final_price(self) -> float:
        return float(self.prices[-1])


@dataclass(frozen=True)
class ChartWindow:
    """Presentation geometry: returns revealed per trial vs. visible at once."""

    points_per_chart: int
    points_per_screen: int
    tick_interval: float = 1.0

    def __post_init__(self):
        if self.points_per_chart < 1 or self.points_per_screen < 1:
            raise SeriesError("points_per_chart and points_per_screen must be positive")
        if self.points_per_screen > self.points_per_chart:
            raise SeriesError(
                f"points_per_screen ({self.points_per_screen}) exceeds "
                f"points_per_chart ({self.points_per_chart})"
            )
        if self.tick_interval <= 0:
            raise SeriesError("tick_interval must be positive")


def compute_returns(path: PricePath) -> ReturnSequence:
    """Difference a price path into returns; base_price keeps p_0."""
    return ReturnSequence(
        returns=np.diff(path.prices),
        base_price=float(path.prices[0]),
        origin=path.origin_index,
    )


def sample_permutation(length: int, rng: int | np.random.Generator) -> Permutation:
    """Draw a uniform random permutation of 0..length-1.

    ``rng`` is either a 64-bit seed or a generator from which a fresh 64-bit
    seed is drawn; either way the recorded seed fully reproduces the mapping.
    The draw runs an unbiased Fisher-Yates shuffle over a counter-based
    (Philox) PRNG, so independently seeded draws never share state.
    """
    if length < 1:
        raise SeriesError(f"permutation length must be >= 1, got {length}")
    if isinstance(rng, np.random.Generator):
        seed = int(rng.integers(0, 2**63))
    elif isinstance(rng, (int, np.integer)):
        seed = int(rng)
    else:
        raise TypeError(f"rng must be an int seed or numpy Generator, got {type(rng)!r}")
    gen = np.random.Generator(np.random.Philox(seed))
    return Permutation(mapping=gen.permutation(length), seed=seed)


def build_surrogate(
    source: ReturnSequence, perm: Permutation, source_id: str = ""
) -> SurrogatePath:
    """Cumulate permuted returns into a surrogate price path.

    prices[t] = base_price + sum_{k<t} returns[perm[k]]; the start equals the
    source base price exactly and the end matches the source final price up
    to summation order.
    """
    if len(perm) != len(source):
        raise SeriesError(
            f"permutation length {len(perm)} != return sequence length {len(source)}"
        )
    prices = np.empty(len(source) + 1)
    prices[0] = source.base_price
    np.cumsum(source.returns[perm.mapping], out=prices[1:])
    prices[1:] += source.base_price
    return SurrogatePath(prices=prices, permutation=perm, source_id=source_id)


def segment_disjoint(
    source: ReturnSequence, count: int, points_per_chart: int
) -> list[ReturnSequence]:
    """Cut ``count`` consecutive non-overlapping segments of ``points_per_chart`` returns.

    Segments keep source order and carry the correct base price (the price at
    the segment start) and origin offset, so disjointness stays auditable.
    """
    if count < 1 or points_per_chart < 1:
        raise SeriesError("count and points_per_chart must be positive")
    needed = count * points_per_chart
    if len(source) < needed:
        feasible = len(source) // points_per_chart
        raise CapacityError(
            f"need {needed} returns for {count} segments of {points_per_chart}, "
            f"have {len(source)} (max feasible count: {feasible})",
            max_feasible=feasible,
        )
    # price level at each return index, for segment base prices
    prefix = np.empty(len(source) + 1)
    prefix[0] = source.base_price
    np.cumsum(source.returns, out=prefix[1:])
    prefix[1:] += source.base_price
    segments = []
    for i in range(count):
        lo = i * points_per_chart
        hi = lo + points_per_chart
        segments.append(
            ReturnSequence(
                returns=source.returns[lo:hi],
                base_price=float(prefix[lo]),
                origin=source.origin + lo,
            )
        )
    return segments


def segment_circular(source: ReturnSequence, start: int, length: int) -> ReturnSequence:
    """Take ``length`` consecutive returns starting at ``start``, wrapping modulo T.

    Used by shared-data (daily) trial plans where sessions walk a rotated
    copy of one sequence and may wrap past its end.  The base price is the
    source price level at the window start.
    """
    t = len(source)
    if length < 1 or length > t:
        raise SeriesError(f"window length must be in 1..{t}, got {length}")
    start = start % t
    idx = np.arange(start, start + length) % t
    prefix = np.concatenate(([0.0], np.cumsum(source.returns)))
    return ReturnSequence(
        returns=source.returns[idx],
        base_price=float(source.base_price + prefix[start]),
        origin=source.origin + start,
    )


def rotate_returns(source: ReturnSequence, offset: int) -> ReturnSequence:
    """Rotate the return sequence left by ``offset`` places.

    The multiset of returns (hence every moment) is unchanged; only the
    temporal alignment moves.  ``origin`` on the result records the offset.
    """
    t = len(source)
    offset = offset % t
    if offset == 0:
        rotated = source.returns
    else:
        rotated = np.concatenate((source.returns[offset:], source.returns[:offset]))
    return ReturnSequence(returns=rotated, base_price=source.base_price, origin=offset)


def random_shift(source: ReturnSequence, rng: int | np.random.Generator) -> ReturnSequence:
    """Rotate by an offset drawn uniformly from 0..T-1.

    Concurrent sessions on shared data get decorrelated starting points so
    two subjects cannot coordinate by playing the same charts side by side.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.Generator(np.random.Philox(int(rng)))
    offset = int(rng.integers(0, len(source)))
    return rotate_returns(source, offset)
