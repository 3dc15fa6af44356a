#!/usr/bin/env python3
"""Generate synthetic demo datasets and a ready-to-serve config.

Creates data/ with one daily and one tick CSV plus demo.ini.  The synthetic
returns carry AR(1) structure so the real-vs-surrogate game is actually
winnable with feedback, like structured market data.
"""

import argparse
from pathlib import Path

import numpy as np

from chartduel.sim import make_ar1_returns


def write_daily_csv(path: Path, n: int, phi: float, seed: int, start_price: float = 100.0):
    returns = make_ar1_returns(n, phi, seed, sigma=0.6).returns
    prices = start_price + np.cumsum(np.concatenate(([0.0], returns)))
    prices = np.maximum(prices, 1.0)
    days = np.arange(np.datetime64("2018-01-01"), np.datetime64("2018-01-01") + len(prices))
    with path.open("w", encoding="utf-8") as fh:
        fh.write("date,price\n")
        for day, price in zip(days, prices):
            fh.write(f"{day},{price:.4f}\n")


def write_tick_csv(path: Path, n: int, phi: float, seed: int, start_price: float = 250.0):
    returns = make_ar1_returns(n, phi, seed, sigma=0.25).returns
    prices = start_price + np.cumsum(np.concatenate(([0.0], returns)))
    prices = np.maximum(prices, 1.0)
    t0 = 1_700_000_000_000
    with path.open("w", encoding="utf-8") as fh:
        fh.write("timestamp,price\n")
        for i, price in enumerate(prices):
            fh.write(f"{t0 + 250 * i},{price:.4f}\n")


CONFIG_TEMPLATE = """\
[platform]
seed = 20260810
data_dir = .
event_log = runs/events.jsonl
transcript_log = runs/transcripts.jsonl

[contest.heron]
csv = heron_daily.csv
source = synthetic AR(1) daily series, phi=0.35
mode = daily
points_per_chart = 80
points_per_screen = 40
charts_per_subject = 35
tick_interval = 1.0

[contest.otter]
csv = otter_tick.csv
source = synthetic AR(1) tick series, phi=0.5
mode = tick
points_per_chart = 60
points_per_screen = 30
charts_per_subject = 10
tick_interval = 0.5
"""


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data", help="output directory")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_daily_csv(out / "heron_daily.csv", 12_000, phi=0.35, seed=args.seed)
    # 20 tick subjects x 10 charts x 60 points, plus the 10% practice slice
    write_tick_csv(out / "otter_tick.csv", 14_000, phi=0.5, seed=args.seed + 1)
    (out / "demo.ini").write_text(CONFIG_TEMPLATE, encoding="utf-8")
    print(f"wrote {out}/heron_daily.csv, {out}/otter_tick.csv, {out}/demo.ini")


if __name__ == "__main__":
    main()
