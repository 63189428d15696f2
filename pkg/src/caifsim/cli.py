"""caifsim command line: run, agree, audit, advantage, vectors."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from caifsim import crypto, ideal, oracles
from caifsim.config import RunReport, ScenarioConfig, load_config
from caifsim.errors import ConfigError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def run_scenario(cfg: ScenarioConfig):
    from caifsim.protocol import run_kind

    res = run_kind(cfg.kind, cfg.seed, **cfg.scenario_kwargs())
    wanted = cfg.assertions or tuple(res.checks)
    report = RunReport(
        name=cfg.name,
        kind=cfg.kind,
        seed=cfg.seed,
        assertions={k: res.checks[k] for k in wanted if k in res.checks},
        event_count=res.event_count,
        log_digest=res.digest,
        missing=[k for k in wanted if k not in res.checks],
    )
    return res, report


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    res, report = run_scenario(cfg)
    if args.trace_out:
        with open(args.trace_out, "w") as fh:
            fh.writelines(line + "\n" for line in res.world.trace_lines())
    text = report.to_json() if args.json else report.to_text()
    if args.report_out:
        with open(args.report_out, "w") as fh:
            fh.write(report.to_json() + "\n")
    print(text)
    return EXIT_OK if report.ok else EXIT_FAIL


def _mac(args):
    return crypto.weak_mac if args.weak_mac else crypto.mac


def cmd_agree(args) -> int:
    rep = oracles.check_agreement(args.scripts, args.queries, args.seed, mac_fn=_mac(args),
                                  forge_prob=args.forge_prob)
    if args.json:
        print(json.dumps(rep.to_dict(), sort_keys=True, indent=2))
    else:
        print(f"scripts {rep.scripts}  queries {rep.queries}  seed {rep.seed}  mismatches {rep.mismatches}")
        for m in rep.examples:
            print(f"  script {m.script} query {m.index} {m.command}: ideal {m.ideal} device {m.device}")
    return EXIT_OK if rep.ok else EXIT_FAIL


def cmd_audit(args) -> int:
    try:
        events = ideal.read_trace(args.trace)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.trace}: {exc.strerror}") from None
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{args.trace}: not a behavior trace ({exc})") from None
    rep = oracles.audit_report(events)
    if args.json:
        print(json.dumps(rep, sort_keys=True, indent=2))
    else:
        print(f"events {rep['events']}  violations {len(rep['violations'])}")
        for v in rep["violations"]:
            print(f"  lemma {v['lemma']} item {v['item']} at {v['indices']}: {v['detail']}")
    return EXIT_FAIL if rep["violations"] else EXIT_OK


def cmd_advantage(args) -> int:
    if args.game not in oracles.GAMES:
        raise ConfigError(f"unknown game {args.game!r}; choose from {', '.join(oracles.GAMES)}")
    if args.trials < 100:
        raise ConfigError("at least 100 trials are required")
    if args.strategy is not None and args.strategy not in oracles.STRATEGIES[args.game]:
        raise ConfigError(f"unknown strategy {args.strategy!r} for {args.game}")
    est = oracles.estimate_advantage(args.game, args.strategy, args.trials, args.seed,
                                     mac_fn=_mac(args), budget=args.budget)
    if args.json:
        print(oracles.advantage_json(est))
    else:
        sys.stdout.write(est.csv_header() + est.csv_row())
    return EXIT_OK


def golden_vectors() -> dict:
    key = bytes(range(32))
    return {
        "code_hash('')": crypto.code_hash(b"").hex(),
        "kdf('at', 00..1f, ['svc'])": crypto.kdf(crypto.LABEL_ATTEST, key, [b"svc"]).hex(),
        "kdf('pf', 00..1f, ['src', 'rcpt'])": crypto.kdf(crypto.LABEL_PROTECT, key, [b"src", b"rcpt"]).hex(),
        "mac(00..1f, 'caif')": crypto.mac(key, b"caif").hex(),
        "weak_mac(00..1f, 'caif')": crypto.weak_mac(key, b"caif").hex(),
        "aead_overhead": crypto.AEAD_OVERHEAD,
    }


def cmd_vectors(args) -> int:
    vecs = golden_vectors()
    if args.json:
        print(json.dumps(vecs, indent=2))
    else:
        for k, v in vecs.items():
            print(f"{k} = {v}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="caifsim", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run a scenario config")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--trace-out")
    r.add_argument("--report-out")
    r.add_argument("--json", action="store_true")
    r.set_defaults(fn=cmd_run)

    a = sub.add_parser("agree", help="fuzz ideal functionality against the device")
    a.add_argument("--scripts", type=int, default=100)
    a.add_argument("--queries", type=int, default=256)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--weak-mac", action="store_true", help="use a 1-byte MAC tag")
    a.add_argument("--forge-prob", type=float, default=0.0, help="rate of injected forgery queries")
    a.add_argument("--json", action="store_true")
    a.set_defaults(fn=cmd_agree)

    u = sub.add_parser("audit", help="audit a JSON-lines behavior trace")
    u.add_argument("trace")
    u.add_argument("--json", action="store_true")
    u.set_defaults(fn=cmd_audit)

    v = sub.add_parser("advantage", help="estimate an adversary's advantage in a game")
    v.add_argument("game")
    v.add_argument("--trials", type=int, default=1000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--strategy")
    v.add_argument("--budget", type=int, default=64)
    v.add_argument("--weak-mac", action="store_true")
    v.add_argument("--json", action="store_true")
    v.set_defaults(fn=cmd_advantage)

    g = sub.add_parser("vectors", help="print golden crypto vectors")
    g.add_argument("--json", action="store_true")
    g.set_defaults(fn=cmd_vectors)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
