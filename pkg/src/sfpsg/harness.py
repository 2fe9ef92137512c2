"""Reproducible experiment batches: one manifest, several seeds, fixed outputs."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from sfpsg import files
from sfpsg.engine import RunConfig, run, with_seed
from sfpsg.errors import ConfigError
from sfpsg.game_model import GeneratorSpec, StochasticGame, generate_game, require_valid
from sfpsg.oracle import backward_induction, compare, verify_solution
from sfpsg.response import PerturbationSpec

log = logging.getLogger(__name__)

DEFAULT_OUT = "sfp_out"


def default_out_dir() -> Path:
    return Path(os.environ.get("SFP_OUT_DIR", DEFAULT_OUT))


@dataclass(frozen=True)
class ExperimentManifest:
    """A batch of runs on one game.

    JSON keys: ``game`` (path, relative to the manifest) or ``generator``
    (generator spec, optionally with its own ``seed``), ``config`` (run
    config), ``oracle_horizon``, ``seeds`` and ``out_dir``.
    """

    config: RunConfig
    seeds: tuple[int, ...]
    game_path: Path | None = None
    generator: GeneratorSpec | None = None
    generator_seed: int = 0
    oracle_horizon: int | None = None
    out_dir: Path | None = None

    def __post_init__(self):
        if (self.game_path is None) == (self.generator is None):
            raise ConfigError("manifest needs exactly one of 'game' or 'generator'")
        if self.game_path is not None and not Path(self.game_path).is_file():
            raise FileNotFoundError(f"game file {self.game_path} does not exist")
        if not self.seeds:
            raise ConfigError("manifest lists no seeds")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {list(self.seeds)}")
        if self.oracle_horizon is not None:
            if self.oracle_horizon < 1:
                raise ConfigError("oracle_horizon must be at least 1")
            top = self.config.record_max_m
            if top is not None and top >= self.oracle_horizon:
                raise ConfigError(f"record_max_m={top} needs oracle_horizon >= {top + 1}")

    @classmethod
    def from_dict(cls, d: dict, base: Path = Path(".")) -> "ExperimentManifest":
        d = dict(d)
        config = RunConfig.from_dict(d.pop("config", {}))
        horizon = d.pop("oracle_horizon", None)
        if horizon is not None and config.record_max_m is None:
            config = replace(config, record_max_m=int(horizon) - 1)
        seeds = tuple(int(s) for s in d.pop("seeds", [config.seed]))
        game_path = d.pop("game", None)
        generator = d.pop("generator", None)
        generator_seed = 0
        if generator is not None:
            generator = dict(generator)
            generator_seed = int(generator.pop("seed", 0))
            generator = GeneratorSpec.from_dict(generator)
        out_dir = d.pop("out_dir", None)
        if d:
            raise ConfigError(f"unknown manifest keys {sorted(d)}")
        return cls(
            config=config, seeds=seeds,
            game_path=None if game_path is None else base / game_path,
            generator=generator, generator_seed=generator_seed,
            oracle_horizon=None if horizon is None else int(horizon),
            out_dir=None if out_dir is None else base / out_dir)

    @classmethod
    def load(cls, path) -> "ExperimentManifest":
        path = Path(path)
        return cls.from_dict(files.read_json(path), base=path.parent)

    def game(self) -> StochasticGame:
        if self.game_path is not None:
            return files.load_game(self.game_path)
        return generate_game(self.generator, self.generator_seed)


def solve_oracle(game: StochasticGame, horizon: int, tau: float, seed: int = 0):
    perturb = PerturbationSpec(tau)
    sol = backward_induction(game, horizon, perturb, seed=seed)
    return sol, verify_solution(game, sol, perturb)


def _run_seed(game_doc: dict, config_doc: dict, seed: int, out_dir: str,
              solution_doc: dict | None) -> dict:
    game = files.game_from_dict(game_doc)
    config = with_seed(RunConfig.from_dict(config_doc), seed)
    oracle = None if solution_doc is None else files.solution_from_dict(solution_doc)
    record = run(game, config, oracle=oracle)

    out = Path(out_dir)
    files.write_trajectory_csv(record, out / f"trajectory_seed{seed}.csv", oracle)
    files.save_record(record, out / f"record_seed{seed}.npz")
    summary = {
        "seed": seed,
        "epochs": config.epochs,
        "stages": record.n_stages,
        "config": config.to_dict(),
        "checkpoint_epochs": [cp.epoch for cp in record.checkpoints],
        "metrics": {k: [list(p) for p in v] for k, v in record.metrics.items()},
        "final_metrics": {k: v[-1][1] for k, v in record.metrics.items() if v},
        "final_state": record.final_state,
    }
    if oracle is not None:
        cmp = compare(record, oracle)
        summary["comparison"] = {
            "max_m": cmp.max_m, "final_pi_distance": cmp.final_pi,
            "final_q_distance": cmp.final_q, "trend_ok": cmp.trend_ok(),
            "ambiguous": [list(p) for p in cmp.ambiguous]}
    files.dump_json(summary, out / f"summary_seed{seed}.json")
    return summary


def run_experiment(manifest: ExperimentManifest, out_dir=None, jobs: int = 1) -> list[dict]:
    """Run every seed of ``manifest``; returns the per-seed summaries in seed order."""
    out = Path(out_dir or manifest.out_dir or default_out_dir())
    out.mkdir(parents=True, exist_ok=True)
    game = require_valid(manifest.game())
    files.save_game(game, out / "game.json")

    solution_doc = None
    if manifest.oracle_horizon is not None:
        sol, checks = solve_oracle(game, manifest.oracle_horizon, manifest.config.tau)
        solution_doc = files.solution_to_dict(sol, checks)
        files.dump_json(solution_doc, out / "solution.json")

    args = [(files.game_to_dict(game), manifest.config.to_dict(), seed, str(out), solution_doc)
            for seed in manifest.seeds]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_run_seed, *zip(*args)))
    else:
        summaries = [_run_seed(*a) for a in args]
    for s in summaries:
        log.info("seed %d: %d stages", s["seed"], s["stages"])
    return summaries
