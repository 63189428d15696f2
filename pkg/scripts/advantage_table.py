#!/usr/bin/env python3
"""Advantage estimates for every game and strategy, as one CSV table."""

import argparse
import csv
import sys

from caifsim import crypto
from caifsim.oracles import GAMES, STRATEGIES, estimate_advantage


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--weak-mac", action="store_true")
    args = ap.parse_args()

    mac_fn = crypto.weak_mac if args.weak_mac else crypto.mac
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["game", "strategy", "trials", "successes", "estimate", "ci_low", "ci_high", "seed"])
    for game in GAMES:
        for name in STRATEGIES[game]:
            e = estimate_advantage(game, name, args.trials, args.seed, mac_fn=mac_fn)
            out.writerow([e.game, e.strategy, e.trials, e.successes,
                          f"{e.estimate:.6f}", f"{e.ci_low:.6f}", f"{e.ci_high:.6f}", e.seed])
    return 0


if __name__ == "__main__":
    sys.exit(main())
