import json

import numpy as np
import pytest

from chartduel.store import (
    CHOICE_TIMEOUT,
    DatasetRegistry,
    EventLog,
    EventLogError,
    GuessEvent,
    IngestError,
    RegistryError,
    load_prices,
    practice_split,
    read_event_log,
    replay_contest_results,
    replay_subject_records,
)


def write_csv(path, header, rows):
    path.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")
    return path


class TestLoadPrices:
    def test_parses_daily_file(self, tmp_path):
        f = write_csv(
            tmp_path / "d.csv",
            "date,price",
            ["2020-01-02,100", "2020-01-03,101", "2020-01-06,99"],
        )
        path = load_prices(f, "daily")
        assert path.prices.tolist() == [100.0, 101.0, 99.0]

    def test_parses_tick_file_with_epoch_ms(self, tmp_path):
        f = write_csv(
            tmp_path / "t.csv",
            "timestamp,price",
            ["1700000000000,50.25", "1700000000100,50.30"],
        )
        path = load_prices(f, "tick")
        assert len(path) == 2

    def test_nan_row_names_the_line(self, tmp_path):
        f = write_csv(
            tmp_path / "d.csv",
            "date,price",
            ["2020-01-02,100", "2020-01-03,NaN", "2020-01-06,99"],
        )
        with pytest.raises(IngestError, match="line 3"):
            load_prices(f, "daily")

    def test_non_positive_price_rejected(self, tmp_path):
        f = write_csv(tmp_path / "d.csv", "date,price", ["2020-01-02,100", "2020-01-03,-4"])
        with pytest.raises(IngestError, match="line 3.*positive"):
            load_prices(f, "daily")

    def test_descending_dates_rejected(self, tmp_path):
        f = write_csv(tmp_path / "d.csv", "date,price", ["2020-01-03,100", "2020-01-02,99"])
        with pytest.raises(IngestError, match="ascend"):
            load_prices(f, "daily")

    def test_duplicate_timestamp_rejected(self, tmp_path):
        f = write_csv(tmp_path / "t.csv", "timestamp,price", ["5,1.0", "5,2.0"])
        with pytest.raises(IngestError, match="duplicate"):
            load_prices(f, "tick")

    def test_wrong_header_rejected(self, tmp_path):
        f = write_csv(tmp_path / "d.csv", "time,px", ["2020-01-02,100"])
        with pytest.raises(IngestError, match="header"):
            load_prices(f, "daily")

    def test_too_few_rows_rejected(self, tmp_path):
        f = write_csv(tmp_path / "d.csv", "date,price", ["2020-01-02,100"])
        with pytest.raises(IngestError, match="fewer than 2"):
            load_prices(f, "daily")

    def test_synthetic_daily_year(self, tmp_path):
        days = np.arange(np.datetime64("2021-01-01"), np.datetime64("2021-01-01") + 252)
        rows = [f"{d},{100 + i * 0.25}" for i, d in enumerate(days)]
        f = write_csv(tmp_path / "year.csv", "date,price", rows)
        path = load_prices(f, "daily")
        assert len(path) == 252
        assert len(path) - 1 == 251  # returns length


class TestRegistry:
    def make_prices(self, n=101):
        rng = np.random.default_rng(1)
        return load_prices_from_array(100 + np.cumsum(rng.normal(size=n)))

    def test_duplicate_codename_rejected(self):
        reg = DatasetRegistry()
        prices = self.make_prices()
        reg.register("Heron", "index futures sample", "daily", prices)
        with pytest.raises(RegistryError, match="already registered"):
            reg.register("heron", "another source", "daily", prices)

    def test_public_listing_hides_source(self):
        reg = DatasetRegistry()
        reg.register("Heron", "big exchange composite", "daily", self.make_prices())
        listing = reg.list_public()
        assert listing[0]["codename"] == "Heron"
        assert "big exchange composite" not in json.dumps(listing)

    def test_eight_registrations(self):
        reg = DatasetRegistry()
        names = ["otter", "heron", "badger", "ibex", "marten", "osprey", "stoat", "vole"]
        for name in names:
            reg.register(name, f"{name} source series", "daily", self.make_prices())
        assert len(reg) == 8

    def test_codename_must_differ_from_source(self):
        reg = DatasetRegistry()
        with pytest.raises(RegistryError, match="source description"):
            reg.register("otter", "otter", "daily", self.make_prices())

    def test_practice_slice_is_final_tenth(self):
        assert practice_split(100) == (90, 100)
        assert practice_split(95) == (86, 95)
        reg = DatasetRegistry()
        record = reg.register("otter", "sample data", "daily", self.make_prices(101))
        scoring = record.scoring_returns
        practice = record.practice_returns
        assert len(scoring) == 90
        assert len(practice) == 10
        # index-disjoint: practice starts where scoring stops
        assert practice.origin == 90

    def test_practice_base_price_continues_the_path(self):
        reg = DatasetRegistry()
        record = reg.register("otter", "sample data", "daily", self.make_prices(101))
        start = record.practice_slice[0]
        assert record.practice_returns.base_price == record.prices.prices[start]


def load_prices_from_array(values):
    from chartduel.series import PricePath

    return PricePath(values)


def make_event(i=0, **kw):
    defaults = dict(
        timestamp=1000 + i,
        contest_id="c1",
        session_id="c1-s0000",
        subject_id="alice",
        trial_id=f"c1-s0000-t{i:02d}",
        choice="top",
        outcome="correct",
        placement="real-on-top",
    )
    defaults.update(kw)
    return GuessEvent(**defaults)


class TestEventLog:
    def test_append_read_back_identical(self, tmp_path):
        log_path = tmp_path / "events.jsonl"
        ev = make_event()
        with EventLog(log_path) as log:
            offset = log.append(ev)
        assert offset == 0
        raw = log_path.read_text().splitlines()[0]
        assert raw == ev.to_json_line()
        assert read_event_log(log_path) == [ev]

    def test_offsets_advance(self, tmp_path):
        with EventLog(tmp_path / "e.jsonl", fsync=False) as log:
            o1 = log.append(make_event(0))
            o2 = log.append(make_event(1))
        assert o2 > o1

    def test_torn_final_line_invisible_to_readers(self, tmp_path):
        log_path = tmp_path / "e.jsonl"
        with EventLog(log_path, fsync=False) as log:
            log.append(make_event(0))
            log.append(make_event(1))
        # simulate a crash mid-append: partial line, no terminator
        with log_path.open("a", encoding="utf-8") as fh:
            fh.write('{"timestamp": 123, "contest')
        events = read_event_log(log_path)
        assert len(events) == 2

    def test_strict_mode_reports_torn_line(self, tmp_path):
        log_path = tmp_path / "e.jsonl"
        with EventLog(log_path, fsync=False) as log:
            log.append(make_event(0))
        with log_path.open("a", encoding="utf-8") as fh:
            fh.write('{"timestamp"')
        with pytest.raises(EventLogError, match="line 2"):
            read_event_log(log_path, strict=True)

    def test_mid_file_corruption_always_fails(self, tmp_path):
        log_path = tmp_path / "e.jsonl"
        log_path.write_text('not json\n' + make_event().to_json_line() + "\n")
        with pytest.raises(EventLogError, match="line 1"):
            read_event_log(log_path)

    def test_unknown_fields_rejected(self):
        line = make_event().to_json_line()
        obj = json.loads(line)
        obj["practice"] = True
        with pytest.raises(EventLogError, match="unknown fields"):
            GuessEvent.from_json_line(json.dumps(obj))

    def test_timeout_must_be_incorrect(self):
        with pytest.raises(EventLogError):
            make_event(choice=CHOICE_TIMEOUT, outcome="correct")


class TestReplay:
    def build_log(self):
        events = []
        # two subjects, three charts each
        specs = {
            "alice": ["correct", "correct", "incorrect"],
            "bob": ["incorrect", "correct", "timeout"],
        }
        t = 0
        for sid, (subject, outcomes) in enumerate(specs.items()):
            for i, out in enumerate(outcomes):
                t += 10
                events.append(
                    GuessEvent(
                        timestamp=t,
                        contest_id="c1",
                        session_id=f"c1-s{sid:04d}",
                        subject_id=subject,
                        trial_id=f"c1-s{sid:04d}-t{i:02d}",
                        choice="timeout" if out == "timeout" else "top",
                        outcome="incorrect" if out == "timeout" else out,
                        placement="real-on-top",
                    )
                )
        return events

    def test_replay_counts(self):
        replayed = replay_subject_records(self.build_log())
        c, records = replayed["c1"]
        assert c == 3
        by_subject = {r.subject_id: r for r in records}
        assert by_subject["alice"].correct == 2
        assert by_subject["alice"].answered == 3
        assert by_subject["bob"].correct == 1
        assert by_subject["bob"].answered == 2
        assert by_subject["bob"].assigned == 3

    def test_replay_results(self):
        results = replay_contest_results(self.build_log())
        res = results["c1"]
        assert res.subjects == 2
        assert res.trials == 6
        assert res.correct_guesses == 3

    def test_incomplete_sessions_skipped(self):
        events = self.build_log()[:-1]  # bob's last trial missing
        _, records = replay_subject_records(events, charts_per_subject=3)["c1"]
        assert [r.subject_id for r in records] == ["alice"]

    def test_duplicate_trial_resolution_rejected(self):
        events = self.build_log()
        events.append(events[-1])
        with pytest.raises(EventLogError, match="duplicate"):
            replay_subject_records(events)

    def test_non_increasing_timestamps_rejected(self):
        events = self.build_log()
        bad = GuessEvent(
            timestamp=events[-1].timestamp,  # not strictly increasing
            contest_id="c1",
            session_id=events[-1].session_id,
            subject_id="bob",
            trial_id="c1-s0001-t99",
            choice="top",
            outcome="correct",
            placement="real-on-top",
        )
        with pytest.raises(EventLogError, match="strictly increasing"):
            replay_subject_records(events + [bad])
