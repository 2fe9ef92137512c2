"""Command-line front end.

Exit codes: 0 success, 1 domain failure (validation, convergence,
thresholds), 2 I/O or parse failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from sfpsg import files
from sfpsg.engine import RunConfig
from sfpsg.errors import GameFormatError, NotStochastic, SFPError
from sfpsg.game_model import GeneratorSpec, generate_game, validation_report
from sfpsg.harness import ExperimentManifest, default_out_dir, run_experiment, solve_oracle
from sfpsg.oracle import compare

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2

log = logging.getLogger("sfpsg")


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_validate(args) -> int:
    try:
        game = files.load_game(args.game)
    except NotStochastic as exc:
        _print({"ok": False, "checks": [{"check": "row_stochastic", "ok": False,
                                         "state": exc.state, "profile": list(exc.profile),
                                         "message": str(exc)}]})
        return EXIT_DOMAIN
    report = validation_report(game)
    report["checks"].insert(0, {"check": "row_stochastic", "ok": True})
    _print(report)
    return EXIT_OK if report["ok"] else EXIT_DOMAIN


def cmd_generate(args) -> int:
    spec = GeneratorSpec.from_dict(files.read_json(args.spec))
    game = generate_game(spec, args.seed)
    out = Path(args.out) if args.out else default_out_dir() / f"game_seed{args.seed}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    files.save_game(game, out)
    print(out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    game = files.load_game(args.game)
    sol, checks = solve_oracle(game, args.horizon, args.tau, seed=args.seed)
    out = Path(args.out) if args.out else default_out_dir() / "solution.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    files.save_solution(sol, out, checks)
    _print({"solution": str(out), **checks})
    return EXIT_OK


def _manifest_from_flags(args) -> ExperimentManifest:
    if args.manifest:
        manifest = ExperimentManifest.load(args.manifest)
    else:
        if not args.game or args.tau is None:
            raise SFPError("run needs --manifest, or --game together with --tau")
        config = RunConfig(epochs=args.epochs or 100, tau=args.tau)
        horizon = args.horizon
        if horizon is not None:
            config = replace(config, record_max_m=horizon - 1)
        manifest = ExperimentManifest(config=config, seeds=tuple(args.seed or [0]),
                                      game_path=Path(args.game), oracle_horizon=horizon)
    overrides = {}
    if args.tau is not None:
        overrides["tau"] = args.tau
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.checkpoint_every is not None:
        overrides["checkpoint_every"] = args.checkpoint_every
    if args.state_policy is not None:
        overrides["state_policy"] = args.state_policy
    if overrides:
        manifest = replace(manifest, config=replace(manifest.config, **overrides))
    if args.seed:
        manifest = replace(manifest, seeds=tuple(args.seed))
    return manifest


def cmd_run(args) -> int:
    manifest = _manifest_from_flags(args)
    summaries = run_experiment(manifest, out_dir=args.out, jobs=args.jobs)
    _print([{k: s[k] for k in ("seed", "stages", "final_metrics") if k in s}
            | ({"comparison": s["comparison"]} if "comparison" in s else {})
            for s in summaries])
    return EXIT_OK


def cmd_compare(args) -> int:
    record = files.load_record(args.record)
    solution = files.load_solution(args.solution)
    result = compare(record, solution, max_m=args.max_m)
    q_tol = args.q_tol
    if q_tol is None:
        q_tol = 0.1 * float(np.max(np.abs(record.game.payoffs)))
    out = Path(args.out) if args.out else Path(args.record).with_suffix(".compare.csv")
    files.write_comparison_csv(result, out)
    checks = {
        "pi_distance": {"value": result.final_pi, "threshold": args.pi_tol,
                        "ok": result.final_pi <= args.pi_tol},
        "q_distance": {"value": result.final_q, "threshold": q_tol,
                       "ok": result.final_q <= q_tol},
    }
    if args.require_trend:
        checks["trend"] = {"ok": result.trend_ok()}
    ok = all(c["ok"] for c in checks.values())
    _print({"ok": ok, "max_m": result.max_m, "metrics": str(out), "checks": checks,
            "ambiguous": [list(p) for p in result.ambiguous]})
    return EXIT_OK if ok else EXIT_DOMAIN


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfpsg",
        description="Epoch-based stochastic fictitious play for stochastic games "
                    "with turn-based controllers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a game file")
    p.add_argument("--game", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("generate", help="draw a random valid game")
    p.add_argument("--spec", required=True, help="generator spec JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("oracle", help="backward-induction Nash distributions")
    p.add_argument("--game", required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--seed", type=int, default=0, help="seed for the multi-start check")
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("run", help="simulate the learning dynamics")
    p.add_argument("--manifest")
    p.add_argument("--game")
    p.add_argument("--tau", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--horizon", type=int, help="oracle horizon (without a manifest)")
    p.add_argument("--seed", type=int, action="append",
                   help="repeatable; overrides the manifest's seed list")
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--state-policy", help="'continue' or 'reset:<state>'")
    p.add_argument("--out", help="output directory (default $SFP_OUT_DIR or ./sfp_out)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="compare a run record with an oracle solution")
    p.add_argument("--record", required=True)
    p.add_argument("--solution", required=True)
    p.add_argument("--max-m", type=int)
    p.add_argument("--pi-tol", type=float, default=0.05)
    p.add_argument("--q-tol", type=float, help="default: 0.1 * max |r|")
    p.add_argument("--require-trend", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (GameFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SFPError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
