"""Operator command line: ingest, serve, simulate, report, validate-log.

Exit codes: 0 success, 1 validation failure, 2 usage error.  Failures also
emit one machine-readable JSON object on stderr.  Simulation reports are a
pure function of (arguments, seed): running the same command twice produces
byte-identical files, recorded alongside a run manifest with input digests.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, build_engine, build_registry, load_config
from .engine import EngineError
from .protocol import split_transcript_sessions, validate_transcript
from .series import SeriesError
from .server import TranscriptRecorder, run_server_forever, transcript_log_lines
from .stats import StatsError, null_pvalue_ks_distance
from .store import (
    EventLogError,
    IngestError,
    RegistryError,
    read_event_log,
    replay_contest_results,
)
from .sim import (
    run_control_pair_study,
    run_learning_study,
    run_null_calibration,
)

USAGE_ERROR = 2
VALIDATION_ERROR = 1

_KNOWN_ERRORS = (
    ConfigError,
    EngineError,
    EventLogError,
    IngestError,
    RegistryError,
    SeriesError,
    StatsError,
    FileNotFoundError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(json.dumps({"error": "usage", "detail": message}), file=sys.stderr)
        self.print_usage(sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _fail(code: str, detail: str) -> int:
    print(json.dumps({"error": code, "detail": detail}), file=sys.stderr)
    return VALIDATION_ERROR


@dataclass
class RunManifest:
    """Provenance of one CLI run: inputs digested, outputs listed, seed pinned."""

    command: str
    config_path: str | None
    seed: int | None
    input_digests: dict[str, str]
    output_paths: list[str]
    tool_version: str = __version__

    def to_json(self) -> str:
        return json.dumps(
            {
                "command": self.command,
                "config_path": self.config_path,
                "seed": self.seed,
                "input_digests": self.input_digests,
                "output_paths": self.output_paths,
                "tool_version": self.tool_version,
            },
            indent=2,
            sort_keys=True,
        )


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def build_parser() -> _Parser:
    parser = _Parser(prog="chartduel", description=__doc__)
    parser.add_argument("--version", action="version", version=f"chartduel {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="load and validate configured datasets")
    p_ingest.add_argument("--config", required=True)
    p_ingest.add_argument("--json", action="store_true", help="machine-readable output")

    p_serve = sub.add_parser("serve", help="run the streaming game server")
    p_serve.add_argument("--config", required=True)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8765)
    p_serve.add_argument("--static-dir", default=None, help="serve the web client from here")
    p_serve.add_argument("--data-dir", default=None, help="override the config data_dir")
    p_serve.add_argument("--log", default=None, help="override the event log path")
    p_serve.add_argument(
        "--tick-interval", type=float, default=None, help="override every contest's tick interval"
    )
    p_serve.add_argument(
        "--seed", type=int, default=None, help="override the platform seed (deterministic runs)"
    )
    p_serve.add_argument("--no-fsync", action="store_true", help="skip fsync per event")

    p_sim = sub.add_parser("simulate", help="run bot contests and report results")
    p_sim.add_argument("--bot", choices=["coin", "learning"], default="coin")
    p_sim.add_argument("--feature", choices=["acf1", "abs_acf1"], default="acf1")
    p_sim.add_argument(
        "--condition",
        choices=["normal", "control-pair", "no-feedback"],
        default="normal",
        help="learning-bot condition (ignored for coin bots)",
    )
    p_sim.add_argument("--contests", type=int, default=1, help="contests (coin bot only)")
    p_sim.add_argument("--sessions", type=int, default=26, help="subjects per contest")
    p_sim.add_argument("--charts", type=int, default=35)
    p_sim.add_argument("--points", type=int, default=20, help="points per chart")
    p_sim.add_argument("--phi", type=float, default=0.5, help="AR(1) coefficient (learning)")
    p_sim.add_argument("--seed", type=int, required=True)
    p_sim.add_argument("--out", default=None, help="write the JSON report here")
    p_sim.add_argument("--manifest", default=None, help="write the run manifest here")
    p_sim.add_argument("--json", action="store_true", help="print the JSON report to stdout")

    p_report = sub.add_parser("report", help="aggregate an event log into contest results")
    p_report.add_argument("--log", required=True)
    p_report.add_argument("--charts", type=int, default=None, help="charts per subject override")
    p_report.add_argument("--json", action="store_true")

    p_validate = sub.add_parser(
        "validate-log", help="replay an event log (and optionally transcripts) and check invariants"
    )
    p_validate.add_argument("--log", required=True)
    p_validate.add_argument("--transcript", default=None, help="protocol transcript JSONL")
    p_validate.add_argument("--charts", type=int, default=None)
    return parser


# -- subcommands ----------------------------------------------------------------


def cmd_ingest(args) -> int:
    config = load_config(args.config)
    registry = build_registry(config)
    rows = []
    for spec in config.contests:
        record = registry.get(spec.codename)
        csv_path = config.data_dir / spec.csv
        rows.append(
            {
                "codename": record.codename,
                "frequency": record.frequency,
                "prices": len(record.prices),
                "scoring_returns": len(record.scoring_returns),
                "practice_returns": (
                    len(record.practice_returns) if record.practice_returns else 0
                ),
                "sha256": _sha256(csv_path),
            }
        )
    if args.json:
        print(json.dumps({"datasets": rows}, indent=2, sort_keys=True))
    else:
        for row in rows:
            print(
                f"{row['codename']:<12} {row['frequency']:<6} prices={row['prices']:<8} "
                f"scoring={row['scoring_returns']:<8} practice={row['practice_returns']:<7} "
                f"sha256={row['sha256'][:12]}"
            )
        print(f"{len(rows)} dataset(s) ingested")
    return 0


def cmd_serve(args) -> int:
    config = load_config(args.config)
    if args.data_dir is not None:
        from dataclasses import replace

        config = replace(config, data_dir=Path(args.data_dir))
    if args.log is not None:
        from dataclasses import replace

        config = replace(config, event_log=Path(args.log))
    engine, _ = build_engine(
        config,
        clock=time.time,
        fsync=not args.no_fsync,
        tick_interval_override=args.tick_interval,
        seed_override=args.seed,
    )
    recorder = (
        TranscriptRecorder(config.transcript_log) if config.transcript_log else None
    )
    contests = ", ".join(c.config.contest_id for c in engine.contests())
    print(f"serving {contests} on ws://{args.host}:{args.port}/", flush=True)
    if args.static_dir:
        print(f"web client at http://{args.host}:{args.port}/", flush=True)
    run_server_forever(
        engine, args.host, args.port, static_dir=args.static_dir, recorder=recorder
    )
    return 0


def _simulate_coin(args) -> dict:
    p_values = run_null_calibration(
        contests=args.contests,
        subjects=args.sessions,
        charts_per_subject=args.charts,
        points_per_chart=args.points,
        seed=args.seed,
    )
    n = args.sessions * args.charts
    report = {
        "bot": "coin",
        "contests": args.contests,
        "subjects": args.sessions,
        "charts_per_subject": args.charts,
        "points_per_chart": args.points,
        "seed": args.seed,
        "p_values": [float(p) for p in p_values],
        "null_ks_distance": (
            float(null_pvalue_ks_distance(p_values, n)) if args.contests >= 10 else None
        ),
    }
    return report


def _simulate_learning(args) -> dict:
    kwargs = dict(
        sessions=args.sessions,
        charts_per_subject=args.charts,
        points_per_chart=args.points,
        phi=args.phi,
        feature=args.feature,
        seed=args.seed,
    )
    if args.condition == "control-pair":
        study = run_control_pair_study(**kwargs)
    else:
        study = run_learning_study(use_feedback=args.condition != "no-feedback", **kwargs)
    report = {
        "bot": "learning",
        "feature": args.feature,
        "condition": args.condition,
        "phi": args.phi,
        "sessions": args.sessions,
        "charts_per_subject": args.charts,
        "points_per_chart": args.points,
        "seed": args.seed,
        "accuracy": study.accuracy,
        "accuracy_after_warmup_5": study.accuracy_after(5),
        "contest": study.contest_result.to_dict() if study.contest_result else None,
    }
    return report


def cmd_simulate(args) -> int:
    report = _simulate_coin(args) if args.bot == "coin" else _simulate_learning(args)
    text = json.dumps(report, indent=2, sort_keys=True)
    outputs = []
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        outputs.append(args.out)
    if args.json or not args.out:
        print(text)
    else:
        if args.bot == "coin":
            pv = np.array(report["p_values"])
            print(
                f"coin bot: {args.contests} contest(s), median p={np.median(pv):.4f}, "
                f"ks={report['null_ks_distance']}"
            )
        else:
            print(
                f"learning bot [{args.condition}]: accuracy={report['accuracy']:.4f}, "
                f"post-warmup={report['accuracy_after_warmup_5']:.4f}"
            )
    if args.manifest:
        manifest = RunManifest(
            command="simulate",
            config_path=None,
            seed=args.seed,
            input_digests={},
            output_paths=outputs,
        )
        Path(args.manifest).write_text(manifest.to_json() + "\n", encoding="utf-8")
    return 0


def _format_result(contest_id: str, result) -> str:
    lines = [
        f"contest {contest_id}: s={result.subjects} c={result.charts_per_subject} "
        f"g={result.correct_guesses} n={result.trials} p-value={result.p_value:.5f}"
    ]
    if result.excluded_subjects:
        lines.append(f"  excluded (low response): {', '.join(result.excluded_subjects)}")
    histogram = " ".join(f"{k}:{v}" for k, v in sorted(result.histogram.items()))
    lines.append(f"  correct-count histogram: {histogram}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    events = read_event_log(args.log)
    if not events:
        return _fail("empty_log", f"no events in {args.log}")
    results = replay_contest_results(events, args.charts)
    if args.json:
        print(
            json.dumps(
                {cid: res.to_dict() for cid, res in sorted(results.items())},
                indent=2,
                sort_keys=True,
            )
        )
    else:
        for cid, res in sorted(results.items()):
            print(_format_result(cid, res))
    return 0


def cmd_validate_log(args) -> int:
    try:
        events = read_event_log(args.log, strict=True)
        results = replay_contest_results(events, args.charts)
    except EventLogError as exc:
        return _fail("event_log", str(exc))
    problems = []
    if args.transcript:
        entries = transcript_log_lines(args.transcript)
        for session_id, session_entries in sorted(split_transcript_sessions(entries).items()):
            if not session_id:
                continue  # pre-session traffic of rejected connections
            for violation in validate_transcript(session_entries):
                problems.append(f"{session_id}: {violation}")
    if problems:
        for line in problems:
            print(line)
        return _fail("transcript", f"{len(problems)} transcript violation(s)")
    print(f"{len(events)} events across {len(results)} contest(s): ok")
    for cid, res in sorted(results.items()):
        print(_format_result(cid, res))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "ingest": cmd_ingest,
        "serve": cmd_serve,
        "simulate": cmd_simulate,
        "report": cmd_report,
        "validate-log": cmd_validate_log,
    }
    try:
        return handlers[args.command](args)
    except _KNOWN_ERRORS as exc:
        return _fail(type(exc).__name__, str(exc))
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    raise SystemExit(main())
