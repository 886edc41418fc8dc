"""Command-line entry point: ``jje {analyze,sweep,search,simulate,scenario}``."""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from typing import Optional, Sequence

from . import analysis
from .errors import InvalidParameter
from .simharness import (
    SCENARIOS,
    ScenarioFailed,
    World,
    WorldConfig,
    monte_carlo_unlock_without_honest,
    run_scenario,
)

EXIT_INVALID = 2


def _pairs(text: str) -> list[tuple[int, int]]:
    try:
        return [tuple(int(x) for x in p.split(":")) for p in text.split(",") if p]  # type: ignore[misc]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected D:t[,D:t...], got {text!r}")


def _fractions(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}")


@contextlib.contextmanager
def _output(path: Optional[str]):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def cmd_analyze(args) -> int:
    C = analysis.corrupted_count(args.devices, args.corrupted_fraction)
    out = {"N": args.devices, "C": C, "D": args.delegation, "t": args.threshold}
    for model in analysis.MODELS:
        p = analysis.exact_corruption_probability(args.devices, C, args.delegation, args.threshold, model)
        out[f"p_{model}"] = float(p)
        if args.exact:
            out[f"p_{model}_exact"] = str(p)
    out["all_delegates_bound"] = float(analysis.lemma4_bound(args.devices, C, args.delegation))
    print(json.dumps(out, indent=2))
    return 0


def cmd_sweep(args) -> int:
    with _output(args.out) as fh:
        analysis.emit_figure2_data(args.pairs, args.fractions, fh, args.devices)
    return 0


def cmd_search(args) -> int:
    C = analysis.corrupted_count(args.devices, args.corrupted_fraction)
    found = analysis.search_parameters(args.devices, C, args.target, args.max_delegation, args.model)
    if found is None:
        print(json.dumps({"found": False}))
        return 1
    D, t = found
    p = analysis.exact_corruption_probability(args.devices, C, D, t, args.model)
    print(json.dumps({"found": True, "D": D, "t": t, "p": float(p)}))
    return 0


def _config(args) -> WorldConfig:
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = WorldConfig.from_text(fh.read()).__dict__.copy()
    overrides = {
        "N": args.devices,
        "corruption_fraction": args.corrupted_fraction,
        "D": args.delegation,
        "t": args.threshold,
        "seed": args.seed,
        "k": args.custodians,
        "epochs": args.epochs,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if "N" not in base:
        raise InvalidParameter("--devices or a config with N is required")
    return WorldConfig(**base)


def cmd_simulate(args) -> int:
    config = _config(args)
    if args.trials:
        rate = monte_carlo_unlock_without_honest(config, args.trials)
        exact = analysis.exact_corruption_probability(config.N, config.corrupted, config.D, config.t, "hypergeometric")
        print(json.dumps({"trials": args.trials, "estimate": rate, "hypergeometric": float(exact)}))
        return 0
    world = World(config, bootstrap=False)
    world.run()
    summary = {
        "config": config.__dict__ | {"jurisdictions": list(config.jurisdictions)},
        "epochs": [
            {"epoch": h.epoch, "N": h.device_count, "root": h.merkle_root.hex()}
            for h in world.archive.headers()
        ],
        "aborted": sum(1 for o in world.outcomes if type(o).__name__ == "Aborted"),
    }
    if args.dump_headers:
        summary["headers"] = [h.to_bytes().hex() for h in world.archive.headers()]
    print(json.dumps(summary, indent=2))
    if args.out:
        with _output(args.out) as fh:
            fh.write(world.transcript_jsonl())
    return 0


def cmd_scenario(args) -> int:
    if args.list:
        print("\n".join(sorted(SCENARIOS)))
        return 0
    if args.script:
        with open(args.script) as fh:
            script = fh.read()
    elif args.name:
        script = args.name
    else:
        raise InvalidParameter("give a scenario name or --script")
    try:
        result = run_scenario(script)
        status = 0
    except ScenarioFailed as exc:
        result = exc.result
        status = 1
    for name, ok in result.assertions:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    if args.out:
        with _output(args.out) as fh:
            fh.write(result.transcript_jsonl())
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jje", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("analyze", help="corruption probability at one point")
    p.add_argument("--devices", type=int, default=analysis.FIGURE_N)
    p.add_argument("--corrupted-fraction", type=float, required=True)
    p.add_argument("--delegation", type=int, required=True)
    p.add_argument("--threshold", type=int, required=True)
    p.add_argument("--exact", action="store_true", help="also print the exact rational")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="CSV of p over a fraction grid")
    p.add_argument("--devices", type=int, default=analysis.FIGURE_N)
    p.add_argument("--pairs", type=_pairs, default=list(analysis.DEFAULT_PAIRS), help="D:t,D:t,...")
    p.add_argument("--fractions", type=_fractions, default=list(analysis.DEFAULT_FRACTIONS))
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("search", help="smallest (D, t) meeting a target probability")
    p.add_argument("--devices", type=int, default=analysis.FIGURE_N)
    p.add_argument("--corrupted-fraction", type=float, required=True)
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--max-delegation", type=int, default=64)
    p.add_argument("--model", choices=analysis.MODELS, default="binomial")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("simulate", help="run a world, or a Monte Carlo estimate with --trials")
    p.add_argument("--config", help="key = value WorldConfig file")
    p.add_argument("--devices", type=int)
    p.add_argument("--corrupted-fraction", type=float)
    p.add_argument("--delegation", type=int)
    p.add_argument("--threshold", type=int)
    p.add_argument("--custodians", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int, default=0)
    p.add_argument("--dump-headers", action="store_true", help="include hex-encoded headers")
    p.add_argument("--out", help="transcript path (JSON lines)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("scenario", help="run a bundled scenario")
    p.add_argument("name", nargs="?", choices=sorted(SCENARIOS))
    p.add_argument("--script", help="key = value scenario script")
    p.add_argument("--list", action="store_true")
    p.add_argument("--out", help="transcript path (JSON lines)")
    p.set_defaults(func=cmd_scenario)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except InvalidParameter as exc:
        print(f"jje: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
