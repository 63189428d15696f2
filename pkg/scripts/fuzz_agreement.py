#!/usr/bin/env python3
"""Fuzz the encrypting ideal functionality against the device, in shards.

    python scripts/fuzz_agreement.py --scripts 10000 --queries 256
"""

import argparse
import sys
import time

from caifsim import crypto
from caifsim.oracles import check_agreement


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scripts", type=int, default=10_000)
    ap.add_argument("--queries", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--weak-mac", action="store_true")
    ap.add_argument("--forge-prob", type=float, default=0.0)
    args = ap.parse_args()

    mac_fn = crypto.weak_mac if args.weak_mac else crypto.mac
    t0 = time.perf_counter()
    rep = check_agreement(args.scripts, args.queries, args.seed, mac_fn=mac_fn, forge_prob=args.forge_prob)
    dt = time.perf_counter() - t0
    print(f"{rep.scripts} scripts x {rep.queries} queries: {rep.mismatches} mismatches in {dt:.1f}s")
    for m in rep.examples:
        print(f"  script {m.script} query {m.index} {m.command}: ideal {m.ideal} / device {m.device}")
    return 0 if rep.ok else 1


if __name__ == "__main__":
    sys.exit(main())
