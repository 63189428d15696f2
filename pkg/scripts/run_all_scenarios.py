#!/usr/bin/env python3
"""Run every config under scenarios/ and print one line each; optional trace dump."""

import argparse
import sys
import time
from pathlib import Path

from caifsim.cli import run_scenario
from caifsim.config import load_config

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dir", default=str(ROOT / "scenarios"))
    ap.add_argument("--trace-dir", help="write one JSON-lines trace per scenario here")
    args = ap.parse_args()

    failed = 0
    for path in sorted(Path(args.dir).glob("*.toml")):
        cfg = load_config(path)
        t0 = time.perf_counter()
        res, report = run_scenario(cfg)
        dt = time.perf_counter() - t0
        status = "PASS" if report.ok else "FAIL"
        failed += not report.ok
        print(f"{status}  {cfg.name:<36} {report.event_count:>5} events  {dt:5.2f}s  {report.log_digest[:16]}")
        if not report.ok:
            for k, v in report.assertions.items():
                if not v:
                    print(f"      failed: {k}")
        if args.trace_dir:
            out = Path(args.trace_dir)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"{cfg.name}.jsonl").write_text("".join(l + "\n" for l in res.world.trace_lines()))
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
