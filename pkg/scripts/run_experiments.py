"""Run the desk-scale experiment sweeps in configs/experiments/.

    python3 scripts/run_experiments.py                  # every config
    python3 scripts/run_experiments.py remark1 sigma    # selected ones
    python3 scripts/run_experiments.py --threads 4 --out runs

Each config writes records.jsonl, timings.jsonl, summary.csv (and plots if
the config asks for them) under OUT/<name>/, then a short table is printed.
"""

import argparse
import sys
from pathlib import Path

from orbent.cli import read_records, run

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs" / "experiments"
SHOWN = ("pHat", "logProxy", "value", "chiU", "trend", "memberFraction", "agree", "disagree", "verdicts", "error")


def brief(result: dict) -> str:
    parts = []
    for key in SHOWN:
        if key in result:
            parts.append(f"{key}={result[key]}")
    est = result.get("estimate")
    if isinstance(est, dict):
        parts.append(f"pHat={est.get('pHat')} ci={[round(c, 3) for c in est.get('ci', [])]} logProxy={est.get('logProxy')}")
    return " ".join(parts)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", help="config stems; default is all")
    ap.add_argument("--out", type=Path, default=ROOT / "runs")
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()

    paths = sorted(CONFIGS.glob("*.json"))
    if args.names:
        paths = [p for p in paths if p.stem in args.names]
        missing = set(args.names) - {p.stem for p in paths}
        if missing:
            print(f"unknown config(s): {sorted(missing)}", file=sys.stderr)
            return 2
    for path in paths:
        out = args.out / path.stem
        status = run(path, out, seed=args.seed, threads=args.threads)
        if status:
            return status
        print(f"== {path.stem} -> {out}")
        for rec in read_records(out / "records.jsonl"):
            print(f"  {rec['cell']}  {brief(rec['result'])}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
