"""Command-line entry point: ``sera <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 failure in a pipeline stage.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from . import analysis, io
from . import recommend as rec
from .bank import Bank, records_from_jsonl
from .embed import Embedder
from .errors import ConfigError, SeraError
from .harness import aggregate, evaluate, run_route

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def _llm_handle():
    from .llm import LlmHandle

    return LlmHandle.from_env()


def _load_bank(path: str) -> Bank:
    return Bank.load(path) if Path(path).exists() else Bank()


# --------------------------------------------------------------------------- commands


def cmd_bank(args: argparse.Namespace) -> int:
    if args.bank_cmd == "ingest":
        bank = _load_bank(args.bank)
        report = bank.ingest(records_from_jsonl(args.file))
        bank.save(args.bank)
        print(f"added {report.added}, deduplicated {report.deduped}; bank has {len(bank)} scenarios")
    elif args.bank_cmd == "list":
        for record in Bank.load(args.bank).scan():
            print(f"{record.scenario_id}\t{record.text.text}")
    else:
        print(json.dumps(Bank.load(args.bank).stats(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    theta = io.load_policy(args.policy)
    routes = io.load_routes(args.routes)
    logs = [evaluate(run_route(theta, route), route) for route in routes]
    io.save_logs(logs, args.out)
    print(json.dumps(aggregate(logs), sort_keys=True))
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    logs = io.load_logs(args.logs)
    llm = _llm_handle() if args.mode == "llm" else None
    patterns = analysis.extract_patterns(logs, args.mode, llm, per_route=args.per_route)
    analysis.save_patterns(patterns, args.out)
    print(f"{len(patterns)} failure patterns written to {args.out}")
    return EXIT_OK


def cmd_recommend(args: argparse.Namespace) -> int:
    patterns = analysis.load_patterns(args.patterns)
    bank = Bank.load(args.bank)
    candidates = rec.recommend(bank, patterns, args.K, Embedder())
    rows = [m.to_dict() for m in candidates.members]
    if args.out:
        io.write_jsonl(args.out, rows)
    else:
        for row in rows:
            print(json.dumps(row))
    return EXIT_OK


def cmd_reflect(args: argparse.Namespace) -> int:
    patterns = analysis.load_patterns(args.patterns)
    bank = Bank.load(args.bank)
    members = io.read_jsonl(args.candidates, rec.ScoredCandidate.from_dict)
    candidates = rec.CandidateSet(len(members), tuple(members))
    embedder = Embedder()
    if args.mode == "rules":
        suggestions = rec.reflect_rules(candidates, patterns, bank, embedder, args.tau_cov, args.tau_dup)
    else:
        suggestions = rec.reflect_llm(candidates, patterns, _llm_handle(), bank, embedder)
    io.write_jsonl(args.out, (s.to_dict() for s in suggestions))
    if args.refined_out:
        refined = rec.refine(candidates, suggestions, bank, patterns, embedder, args.beta)
        Path(args.refined_out).write_text(json.dumps(refined.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(f"{len(suggestions)} suggestions written to {args.out}")
    return EXIT_OK


def _load_config(path: str, seed: int | None):
    import dataclasses

    from .repair import RepairConfig

    cfg = RepairConfig.load(path)
    return dataclasses.replace(cfg, seed=seed) if seed is not None else cfg


def cmd_repair(args: argparse.Namespace) -> int:
    from .repair import dumps_report, run_repair

    cfg = _load_config(args.config, args.seed)
    report = run_repair(cfg)
    text = dumps_report(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    b, a = report["before"]["summary"], report["after"]["summary"]
    print(f"driving score {b['driving_score']:.2f} -> {a['driving_score']:.2f}, "
          f"infractions {b['infractions']} -> {a['infractions']}")
    return EXIT_OK


def cmd_ablation(args: argparse.Namespace) -> int:
    from .repair import ablation_table, dumps_report, run_ablation

    reports = run_ablation(_load_config(args.config, args.seed))
    print(ablation_table(reports))
    if args.out:
        Path(args.out).write_text(dumps_report(reports), encoding="utf-8")
    return EXIT_OK


def cmd_fixture(args: argparse.Namespace) -> int:
    from .fixtures import write_fixture

    print(write_fixture(args.out))
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sera", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    bank = sub.add_parser("bank", help="manage a scenario bank")
    bank_sub = bank.add_subparsers(dest="bank_cmd", required=True)
    ingest = bank_sub.add_parser("ingest", help="add scenarios from a JSON-Lines file")
    ingest.add_argument("file")
    ingest.add_argument("--bank", default="bank.jsonl")
    for name in ("list", "stats"):
        p = bank_sub.add_parser(name)
        p.add_argument("--bank", default="bank.jsonl")
    bank.set_defaults(func=cmd_bank)

    ev = sub.add_parser("evaluate", help="roll a policy out on a route set")
    ev.add_argument("--policy", required=True)
    ev.add_argument("--routes", required=True)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_evaluate)

    an = sub.add_parser("analyze", help="extract failure patterns from logs")
    an.add_argument("--logs", required=True)
    an.add_argument("--mode", choices=("llm", "rules"), default="rules")
    an.add_argument("--out", required=True)
    an.add_argument("--per-route", action="store_true", help="analyse each route on its own")
    an.set_defaults(func=cmd_analyze)

    rc = sub.add_parser("recommend", help="rank bank scenarios against failure patterns")
    rc.add_argument("--patterns", required=True)
    rc.add_argument("--bank", required=True)
    rc.add_argument("-K", type=int, default=rec.DEFAULT_K)
    rc.add_argument("--out")
    rc.set_defaults(func=cmd_recommend)

    rf = sub.add_parser("reflect", help="audit a candidate set")
    rf.add_argument("--mode", choices=("llm", "rules"), default="rules")
    rf.add_argument("--candidates", required=True)
    rf.add_argument("--patterns", required=True)
    rf.add_argument("--bank", required=True)
    rf.add_argument("--out", required=True)
    rf.add_argument("--refined-out", help="also apply the suggestions and write the refined set")
    rf.add_argument("--tau-cov", type=float, default=rec.DEFAULT_TAU_COV)
    rf.add_argument("--tau-dup", type=float, default=rec.DEFAULT_TAU_DUP)
    rf.add_argument("--beta", type=float, default=rec.DEFAULT_BETA)
    rf.set_defaults(func=cmd_reflect)

    rp = sub.add_parser("repair", help="run the repair loop from a TOML config")
    rp.add_argument("--config", required=True)
    rp.add_argument("--out")
    rp.add_argument("--seed", type=int)
    rp.set_defaults(func=cmd_repair)

    ab = sub.add_parser("ablation", help="compare random, initial and full selection")
    ab.add_argument("--config", required=True)
    ab.add_argument("--out")
    ab.add_argument("--seed", type=int)
    ab.set_defaults(func=cmd_ablation)

    fx = sub.add_parser("fixture", help="write the seeded demonstration fixture")
    fx.add_argument("--out", required=True)
    fx.set_defaults(func=cmd_fixture)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SeraError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
