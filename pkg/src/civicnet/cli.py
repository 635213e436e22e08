"""Command-line entry points.

    civicnet simnet run <scenario.json> --seed N [--loss p] [--latency a,b] [--trace out]
    civicnet simnet trace-hash <file.trace.jsonl>
    civicnet node serve --config <file.json>
    civicnet corpus generate --seed N [--out dir]
    civicnet ledger verify <file.ledger.jsonl>

Exit codes: 0 success, 1 assertion or verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path

from . import corpusgen, ledger as ledger_mod
from .scenario import ScenarioAssertionFailed, ScenarioError, load_scenario, run_sim
from .sim import DeadlockDetected
from .world import WorldConfig


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="civicnet")
    sub = parser.add_subparsers(dest="command", required=True)

    simnet = sub.add_parser("simnet", help="deterministic scenario simulator")
    simnet_sub = simnet.add_subparsers(dest="simnet_command", required=True)
    run_p = simnet_sub.add_parser("run", help="execute a scenario script")
    run_p.add_argument("scenario", type=Path)
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--loss", type=float, default=0.0)
    run_p.add_argument("--latency", type=str, default="5,50", help="min,max virtual ms")
    run_p.add_argument("--trace", type=Path, default=None, help="write the trace JSONL here")
    hash_p = simnet_sub.add_parser("trace-hash", help="fingerprint of a trace file")
    hash_p.add_argument("trace_file", type=Path)

    node = sub.add_parser("node", help="run one node")
    node_sub = node.add_subparsers(dest="node_command", required=True)
    serve_p = node_sub.add_parser("serve", help="serve the HTTP API")
    serve_p.add_argument("--config", type=Path, required=True)

    corpus = sub.add_parser("corpus", help="synthetic corpora")
    corpus_sub = corpus.add_subparsers(dest="corpus_command", required=True)
    gen_p = corpus_sub.add_parser("generate", help="regenerate corpus and schema fixtures")
    gen_p.add_argument("--seed", type=int, default=7)
    gen_p.add_argument("--out", type=Path, default=Path("."))

    ledger = sub.add_parser("ledger", help="ledger tools")
    ledger_sub = ledger.add_subparsers(dest="ledger_command", required=True)
    verify_p = ledger_sub.add_parser("verify", help="verify an exported chain")
    verify_p.add_argument("ledger_file", type=Path)
    return parser


def cli(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0

    if args.command == "simnet" and args.simnet_command == "run":
        return _simnet_run(args)
    if args.command == "simnet" and args.simnet_command == "trace-hash":
        if not args.trace_file.exists():
            print(f"no such trace file: {args.trace_file}", file=sys.stderr)
            return 2
        print(hashlib.sha256(args.trace_file.read_bytes()).hexdigest())
        return 0
    if args.command == "node":
        from .httpserve import serve

        if not args.config.exists():
            print(f"no such config file: {args.config}", file=sys.stderr)
            return 2
        serve(args.config)
        return 0
    if args.command == "corpus":
        written = corpusgen.generate_all(args.seed, args.out)
        total = sum(len(v) for v in written.values())
        print(f"wrote {total} fixture files under {args.out}")
        return 0
    if args.command == "ledger":
        return _ledger_verify(args.ledger_file)
    return 2


def _simnet_run(args) -> int:
    if not args.scenario.exists():
        print(f"no such scenario file: {args.scenario}", file=sys.stderr)
        return 2
    try:
        latency = tuple(int(x) for x in args.latency.split(","))
        if len(latency) != 2:
            raise ValueError
    except ValueError:
        print(f"bad --latency value: {args.latency!r} (expected min,max)", file=sys.stderr)
        return 2
    try:
        script = load_scenario(args.scenario)
    except (ScenarioError, ValueError, KeyError) as exc:
        print(f"scenario rejected: {exc}", file=sys.stderr)
        return 2
    config = WorldConfig(seed=args.seed, latency_ms=latency, loss_rate=args.loss)
    try:
        world, fingerprint = run_sim(config, script)
    except (ScenarioAssertionFailed, DeadlockDetected) as exc:
        print(f"scenario failed: {exc}", file=sys.stderr)
        return 1
    print(f"scenario {script.name!r}: {len(script.steps)} steps, "
          f"{len(world.operator.replica.entries)} ledger entries")
    print(f"trace fingerprint {fingerprint}")
    if args.trace:
        args.trace.write_bytes(world.net.trace_bytes())
        print(f"trace written to {args.trace}")
    return 0


def _ledger_verify(path: Path) -> int:
    if not path.exists():
        print(f"no such ledger file: {path}", file=sys.stderr)
        return 2
    entries = ledger_mod.import_jsonl(path.read_bytes())
    if not entries:
        print("empty chain: Ok")
        return 0
    vset = ledger_mod.validator_set_from_entries(entries)
    if vset is None:
        print("first bad index 0: no validator registrations found")
        return 1
    bad = ledger_mod.verify_chain(entries, vset)
    if bad is None:
        print(f"Ok ({len(entries)} entries, {len(vset.validators)} validators)")
        return 0
    print(f"first bad index {bad[0]}: {bad[1]}")
    return 1


def main() -> None:
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
