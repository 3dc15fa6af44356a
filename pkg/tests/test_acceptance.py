"""Acceptance suite: one test per release criterion, at stated tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS line per
criterion.  Expected values are pinned by independent oracles (stdlib-comb
summation for tails, direct multiset/moment computation for surrogates);
the production code never shares a code path with its oracle.
"""

import math
import time

import numpy as np
import pytest
import scipy.stats

from transcript_fuzz import generate_fuzz_case

from chartduel.engine import ContestConfig, Engine, PLACEMENT_REAL_TOP
from chartduel.protocol import FORBIDDEN_KEYS, MESSAGE_SCHEMAS, validate_transcript
from chartduel.series import (
    PricePath,
    build_surrogate,
    compute_returns,
    sample_permutation,
)
from chartduel.sim import (
    SimClock,
    make_random_walk_returns,
    run_control_pair_study,
    run_learning_study,
    run_null_calibration,
)
from chartduel.stats import (
    binomial_tail,
    fair_coin_tail_table,
    null_pvalue_ks_distance,
)
from chartduel.store import EventLog, read_event_log, replay_contest_results

# exact value pinned up front by the big-integer comb-summation oracle
PINNED_TAIL_910_506 = 0.00040222122325315226

# one-sample KS critical value at alpha = 0.001 for m = 1000 draws:
# sqrt(-ln(alpha/2) / (2 m))
KS_CRITICAL_1000 = 0.06164779987778186


def announce(name: str, detail: str):
    print(f"[ACCEPTANCE] {name}: PASS — {detail}")


def oracle_tail_numerator(n: int, g: int) -> int:
    return sum(math.comb(n, i) for i in range(g, n + 1))


class TestAcceptance:
    def test_headline_exact_tail_reproduction(self):
        """Exact fair-coin tail for n=910, g=506 rounds to the published 0.00040."""
        start = time.monotonic()
        p = binomial_tail(910, 506)
        elapsed = time.monotonic() - start
        oracle = oracle_tail_numerator(910, 506) / 2**910
        assert p == oracle, "production tail deviates from the brute-force oracle"
        assert p == PINNED_TAIL_910_506
        assert f"{p:.5f}" == "0.00040"
        assert f"{p:.2g}" == "0.0004"
        assert elapsed < 1.0, f"took {elapsed:.3f}s, budget 1s"
        announce(
            "headline exact tail (n=910, g=506)",
            f"p={p!r}, rounds to 0.00040, computed in {elapsed * 1000:.1f} ms",
        )

    def test_binomial_correctness_suite(self):
        """Complementarity, symmetry, monotonicity to 1e-12; exhaustive n<=200 plus random n<=2000."""
        start = time.monotonic()
        checked = 0
        for n in range(1, 201):
            # independent oracle: comb prefix/suffix sums in exact integers
            pmf_num = [math.comb(n, g) for g in range(n + 1)]
            suffix = list(pmf_num)
            for g in range(n - 1, -1, -1):
                suffix[g] += suffix[g + 1]
            prefix = list(pmf_num)
            for g in range(1, n + 1):
                prefix[g] += prefix[g - 1]
            den = 1 << n
            table = fair_coin_tail_table(n)
            for g in range(n + 1):
                upper = table[g]
                assert upper == suffix[g] / den  # exact agreement with oracle
                lower_below = prefix[g - 1] / den if g > 0 else 0.0
                assert abs(upper + lower_below - 1.0) <= 1e-12
                assert abs(upper - prefix[n - g] / den) <= 1e-12  # symmetry
                if g < n:
                    assert table[g + 1] <= upper + 1e-12
                    assert suffix[g + 1] < suffix[g]  # strict in exact arithmetic
                checked += 1
        rng = np.random.default_rng(2026)
        for _ in range(1000):
            n = int(rng.integers(1, 2001))
            g = int(rng.integers(0, n + 1))
            upper = binomial_tail(n, g)
            assert upper == oracle_tail_numerator(n, g) / (1 << n)
            lower_below = (
                sum(math.comb(n, i) for i in range(0, g)) / (1 << n) if g > 0 else 0.0
            )
            assert abs(upper + lower_below - 1.0) <= 1e-12
            sym = sum(math.comb(n, i) for i in range(0, n - g + 1)) / (1 << n)
            assert abs(upper - sym) <= 1e-12
            if g < n:
                assert binomial_tail(n, g + 1) <= upper + 1e-12
            checked += 1
        elapsed = time.monotonic() - start
        assert elapsed < 30.0, f"took {elapsed:.1f}s, budget 30s"
        announce(
            "binomial correctness suite",
            f"{checked} (n,g) pairs verified in {elapsed:.1f}s",
        )

    def test_surrogate_invariants(self):
        """1000 random (path, permutation) pairs: endpoints, multisets, four moments at 1e-9."""
        start = time.monotonic()
        rng = np.random.default_rng(515)

        def relclose(a, b, rel=1e-9, floor=1e-12):
            # relative tolerance with a tiny absolute floor for values that
            # are themselves numerically zero
            return abs(a - b) <= max(rel * max(abs(a), abs(b)), floor)

        for case in range(1000):
            t = int(rng.integers(8, 300))
            prices = 50.0 + np.cumsum(rng.normal(0, rng.uniform(0.1, 5.0), size=t + 1))
            path = PricePath(prices)
            source = compute_returns(path)
            perm = sample_permutation(t, int(rng.integers(2**63)))
            surrogate = build_surrogate(source, perm)
            # endpoint conservation
            assert surrogate.prices[0] == path.prices[0]
            assert relclose(surrogate.prices[-1], path.prices[-1])
            increments = np.diff(surrogate.prices)
            # return multiset equality, element-wise after sorting
            a, b = np.sort(increments), np.sort(source.returns)
            scale = np.abs(b).max()
            assert np.allclose(a, b, rtol=1e-9, atol=1e-12 * max(scale, 1.0))
            # first four moments
            for stat in (
                np.mean,
                lambda x: np.std(x, ddof=0),
                scipy.stats.skew,
                scipy.stats.kurtosis,
            ):
                assert relclose(stat(increments), stat(source.returns)), (
                    case,
                    stat,
                )
        elapsed = time.monotonic() - start
        assert elapsed < 10.0, f"took {elapsed:.1f}s, budget 10s"
        announce(
            "surrogate invariants",
            f"1000 path/permutation pairs verified in {elapsed:.1f}s",
        )

    def test_null_calibration(self):
        """Coin bots across 1000 contests produce p-values matching the exact discrete null."""
        start = time.monotonic()
        p_values = run_null_calibration(
            contests=1000, subjects=26, charts_per_subject=35, points_per_chart=20, seed=606
        )
        n = 26 * 35
        distance = null_pvalue_ks_distance(p_values, n)
        elapsed = time.monotonic() - start
        assert len(p_values) == 1000
        assert distance < KS_CRITICAL_1000, (
            f"KS distance {distance:.4f} exceeds the alpha=0.001 critical value"
        )
        assert elapsed < 120.0, f"took {elapsed:.1f}s, budget 120s"
        announce(
            "null calibration",
            f"1000 contests, KS distance {distance:.4f} < {KS_CRITICAL_1000:.4f} "
            f"({elapsed:.0f}s)",
        )

    def test_feedback_learning_demonstration(self):
        """Learning bot >70% after warm-up on AR(1) data; both controls at 50% +/- 2%."""
        start = time.monotonic()
        sessions, warmup = 200, 5
        learning = run_learning_study(
            sessions=sessions, charts_per_subject=35, points_per_chart=60, phi=0.5, seed=707
        )
        accuracy = learning.accuracy_after(warmup)
        assert accuracy > 0.70, f"post-warmup accuracy {accuracy:.3f} <= 0.70"

        control_pair = run_control_pair_study(
            sessions=sessions, charts_per_subject=35, points_per_chart=60, phi=0.5, seed=708
        )
        assert abs(control_pair.accuracy - 0.5) <= 0.02, (
            f"permuted-vs-permuted control at {control_pair.accuracy:.3f}"
        )

        no_feedback = run_learning_study(
            sessions=sessions,
            charts_per_subject=35,
            points_per_chart=60,
            phi=0.5,
            seed=709,
            use_feedback=False,
        )
        assert abs(no_feedback.accuracy - 0.5) <= 0.02, (
            f"withheld-feedback control at {no_feedback.accuracy:.3f}"
        )
        elapsed = time.monotonic() - start
        announce(
            "feedback-learning demonstration",
            f"post-warmup {accuracy:.3f} > 0.70; controls "
            f"{control_pair.accuracy:.3f} / {no_feedback.accuracy:.3f} within 0.50±0.02 "
            f"({elapsed:.0f}s)",
        )

    def test_protocol_and_log_integrity(self, tmp_path):
        """Fuzzed transcripts flag exactly the injected faults; replay equals live; schema leak audit."""
        start = time.monotonic()
        rng = np.random.Generator(np.random.Philox(808))
        for case in range(1000):
            entries, expected = generate_fuzz_case(rng)
            got = {v.code for v in validate_transcript(entries)}
            assert got == expected, f"fuzz case {case}: expected {expected}, got {got}"

        # replaying the event log reproduces the live aggregate field-for-field
        clock = SimClock()
        log = EventLog(tmp_path / "events.jsonl", fsync=False)
        engine = Engine(clock=clock, event_log=log)
        dataset = make_random_walk_returns(4000, seed=11)
        engine.create_contest(
            ContestConfig(
                contest_id="replaycheck",
                dataset_codename="stoat",
                mode="daily",
                points_per_chart=12,
                points_per_screen=6,
                charts_per_subject=9,
                seed=12,
            ),
            dataset,
        )
        rng2 = np.random.default_rng(13)
        for s in range(15):
            session = engine.start_session("replaycheck", f"subj-{s:02d}")
            for trial in session.trials:
                engine.begin_trial(session)
                if rng2.random() < 0.1:  # sprinkle timeouts through the log
                    clock.now = trial.deadline + 1.0
                    engine.expire_trial(session, trial.trial_id)
                else:
                    choice = "top" if rng2.random() < 0.5 else "bottom"
                    engine.submit_guess(session, trial.trial_id, choice)
                clock.advance()
        log.close()
        live = engine.contest_result("replaycheck")
        replayed = replay_contest_results(read_event_log(log.path))["replaycheck"]
        assert replayed == live, "replayed aggregate differs from the live one"

        # schema audit: no message kind, in either direction, carries
        # placement or truth fields
        for (kind, direction), fields in MESSAGE_SCHEMAS.items():
            for name in fields:
                assert name.lower() not in FORBIDDEN_KEYS, (kind, direction, name)
        elapsed = time.monotonic() - start
        assert elapsed < 60.0, f"took {elapsed:.1f}s, budget 60s"
        announce(
            "protocol/log integrity",
            f"1000 fuzz cases exact, replay == live, schema leak-free ({elapsed:.0f}s)",
        )

    def test_disjointness_and_placement_fairness(self):
        """100 tick-mode subjects share no return index; placement coin within 0.5 +/- 0.015."""
        start = time.monotonic()
        # 100 subjects x 35 charts x 80 points consumes exactly 280000 returns
        dataset = make_random_walk_returns(280_000, seed=909)
        engine = Engine(clock=SimClock())
        engine.create_contest(
            ContestConfig(
                contest_id="tickfair",
                dataset_codename="ibex",
                mode="tick",
                points_per_chart=80,
                points_per_screen=40,
                charts_per_subject=35,
                seed=910,
            ),
            dataset,
        )
        assert engine.get_contest("tickfair").pool_remaining == 100
        coverage: list[set[int]] = []
        tops = trials = 0
        perm_seeds = set()
        for s in range(100):
            session = engine.start_session("tickfair", f"subject-{s:03d}")
            covered = set()
            for trial in session.trials:
                origin = trial.real.origin_index
                covered.update(range(origin, origin + len(trial.real) - 1))
                tops += trial.placement == PLACEMENT_REAL_TOP
                trials += 1
                perm_seeds.add(trial.surrogate.permutation.seed)
            coverage.append(covered)
        union: set[int] = set()
        total = 0
        for covered in coverage:
            union |= covered
            total += len(covered)
        assert total == len(union) == 280_000, "subject plans overlap or leave gaps"
        assert len(perm_seeds) == trials, "permutation seeds were reused"

        # placement fairness needs >= 10000 trials; top up with cheap contests
        extra_engine = Engine(clock=SimClock())
        extra_engine.create_contest(
            ContestConfig(
                contest_id="fairness",
                dataset_codename="vole",
                mode="daily",
                points_per_chart=12,
                points_per_screen=6,
                charts_per_subject=35,
                seed=911,
            ),
            make_random_walk_returns(1000, seed=912),
        )
        for s in range(200):
            session = extra_engine.start_session("fairness", f"filler-{s:03d}")
            for trial in session.trials:
                tops += trial.placement == PLACEMENT_REAL_TOP
                trials += 1
        fraction = tops / trials
        assert trials >= 10_000
        assert 0.5 - 0.015 < fraction < 0.5 + 0.015, f"real-on-top fraction {fraction:.4f}"
        elapsed = time.monotonic() - start
        announce(
            "disjointness and placement fairness",
            f"100 disjoint subject plans; real-on-top {fraction:.4f} over {trials} trials "
            f"({elapsed:.0f}s)",
        )
