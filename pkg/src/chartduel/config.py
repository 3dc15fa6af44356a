"""Operator configuration: one INI file describing datasets and contests.

Example::

    [platform]
    seed = 12345
    data_dir = data
    event_log = runs/events.jsonl

    [contest.otter]
    csv = otter_tick.csv
    source = synthetic AR(1) tick series
    mode = tick
    points_per_chart = 80
    points_per_screen = 40
    charts_per_subject = 35
    tick_interval = 1.0

Seeds are always explicit: contests without their own ``seed`` get one
derived deterministically from the platform seed and the codename, so a
config file fully pins every random choice the platform makes.
"""

from __future__ import annotations

import configparser
import hashlib
import time
from dataclasses import dataclass
from pathlib import Path

from .engine import ContestConfig, Engine
from .store import DatasetRegistry, EventLog, load_prices


class ConfigError(ValueError):
    """Missing sections/keys or unparseable values in the config file."""


@dataclass(frozen=True)
class ContestSpec:
    codename: str
    csv: str
    source_description: str
    mode: str
    points_per_chart: int
    points_per_screen: int
    charts_per_subject: int = 35
    tick_interval: float = 1.0
    guess_deadline: float | None = None
    prize_note: str = ""
    seed: int | None = None


@dataclass(frozen=True)
class PlatformConfig:
    seed: int
    data_dir: Path
    event_log: Path | None
    transcript_log: Path | None
    contests: tuple[ContestSpec, ...]


def derive_seed(platform_seed: int, codename: str) -> int:
    digest = hashlib.sha256(f"{platform_seed}:{codename}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1  # keep it in int64 range


def load_config(path: str | Path) -> PlatformConfig:
    path = Path(path)
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise ConfigError(f"cannot read config file {path}")
    if "platform" not in parser:
        raise ConfigError("config needs a [platform] section")
    platform = parser["platform"]
    try:
        seed = platform.getint("seed", fallback=None)
    except ValueError:
        raise ConfigError("platform.seed must be an integer") from None
    if seed is None:
        raise ConfigError("platform.seed is required (no hidden randomness)")
    base = path.parent
    data_dir = base / platform.get("data_dir", ".")
    event_log = platform.get("event_log", fallback=None)
    transcript_log = platform.get("transcript_log", fallback=None)

    contests = []
    for section in parser.sections():
        if not section.startswith("contest."):
            continue
        codename = section.split(".", 1)[1]
        opts = parser[section]
        try:
            spec = ContestSpec(
                codename=codename,
                csv=opts["csv"],
                source_description=opts.get("source", ""),
                mode=opts["mode"],
                points_per_chart=opts.getint("points_per_chart"),
                points_per_screen=opts.getint("points_per_screen"),
                charts_per_subject=opts.getint("charts_per_subject", 35),
                tick_interval=opts.getfloat("tick_interval", 1.0),
                guess_deadline=opts.getfloat("guess_deadline", fallback=None),
                prize_note=opts.get("prize_note", ""),
                seed=opts.getint("seed", fallback=None),
            )
        except (KeyError, ValueError, configparser.Error) as exc:
            raise ConfigError(f"[{section}]: {exc}") from None
        contests.append(spec)
    if not contests:
        raise ConfigError("config defines no [contest.*] sections")
    return PlatformConfig(
        seed=seed,
        data_dir=data_dir,
        event_log=(base / event_log) if event_log else None,
        transcript_log=(base / transcript_log) if transcript_log else None,
        contests=tuple(contests),
    )


def build_registry(config: PlatformConfig) -> DatasetRegistry:
    """Ingest every configured CSV into a codename registry."""
    registry = DatasetRegistry()
    for spec in config.contests:
        prices = load_prices(config.data_dir / spec.csv, spec.mode)
        registry.register(spec.codename, spec.source_description, spec.mode, prices)
    return registry


def build_engine(
    config: PlatformConfig,
    *,
    clock=time.time,
    fsync: bool = True,
    tick_interval_override: float | None = None,
    seed_override: int | None = None,
) -> tuple[Engine, DatasetRegistry]:
    """Ingest datasets and register one contest per configured dataset."""
    registry = build_registry(config)
    platform_seed = config.seed if seed_override is None else seed_override
    event_log = EventLog(config.event_log, fsync=fsync) if config.event_log else None
    engine = Engine(clock=clock, event_log=event_log)
    for spec in config.contests:
        record = registry.get(spec.codename)
        contest_config = ContestConfig(
            contest_id=spec.codename,
            dataset_codename=spec.codename,
            mode=spec.mode,
            points_per_chart=spec.points_per_chart,
            points_per_screen=spec.points_per_screen,
            charts_per_subject=spec.charts_per_subject,
            tick_interval=(
                tick_interval_override
                if tick_interval_override is not None
                else spec.tick_interval
            ),
            guess_deadline=spec.guess_deadline,
            prize_note=spec.prize_note,
            seed=spec.seed if spec.seed is not None else derive_seed(platform_seed, spec.codename),
        )
        engine.create_contest(
            contest_config,
            record.scoring_returns,
            practice_dataset=record.practice_returns,
        )
    return engine, registry
