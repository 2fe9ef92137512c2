"""On-disk formats: game and solution JSON, run records, CSV tables.

Everything written here is byte-deterministic for identical inputs.
"""

from __future__ import annotations

import csv
import io
import json
import zipfile
from pathlib import Path

import numpy as np

from sfpsg.engine import Checkpoint, RunConfig, RunRecord, StageLog
from sfpsg.errors import GameFormatError, ShapeMismatch
from sfpsg.game_model import StochasticGame, decompose_controller_payoff
from sfpsg.oracle import FiniteHorizonSolution

TRAJECTORY_VERSION = "sfpsg-trajectory v1"
COMPARISON_VERSION = "sfpsg-comparison v1"


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GameFormatError(f"{path}: {exc}") from None


def _dense(nested, name, shape=None) -> np.ndarray:
    try:
        arr = np.array(nested, dtype=float)
    except (ValueError, TypeError) as exc:
        raise GameFormatError(f"'{name}' is ragged or non-numeric: {exc}") from None
    if shape is not None and arr.shape != tuple(shape):
        raise GameFormatError(f"'{name}' has shape {arr.shape}, expected {tuple(shape)}")
    return arr


# -- games ----------------------------------------------------------------------------

def game_to_dict(game: StochasticGame) -> dict:
    return {
        "players": game.n_players,
        "states": game.n_states,
        "actions": list(game.action_counts),
        "payoffs": game.payoffs.tolist(),
        "transition": game.transition.tolist(),
        "discounts": game.discounts.tolist(),
        "controllers": None if game.controllers is None else list(game.controllers),
    }


def game_from_dict(d: dict) -> StochasticGame:
    """Build a game from its JSON document.

    ``states`` may be a count or a list of labels and each ``actions`` entry
    may be a count or a list of labels; only the sizes are kept.
    ``payoffs`` is nested ``[player][state][a^0]...[a^{n-1}]`` and
    ``transition`` is nested ``[state][a^0]...[a^{n-1}][next_state]``.
    """
    if not isinstance(d, dict):
        raise GameFormatError("game document must be a JSON object")
    missing = {"players", "states", "actions", "payoffs", "transition", "discounts"} - set(d)
    if missing:
        raise GameFormatError(f"game document lacks keys {sorted(missing)}")
    try:
        n = int(d["players"])
        states = d["states"]
        n_states = len(states) if isinstance(states, list) else int(states)
        actions = [len(a) if isinstance(a, list) else int(a) for a in d["actions"]]
    except (TypeError, ValueError) as exc:
        raise GameFormatError(f"bad header field: {exc}") from None
    if len(actions) != n:
        raise GameFormatError(f"'actions' lists {len(actions)} players, 'players' says {n}")
    payoffs = _dense(d["payoffs"], "payoffs", (n, n_states, *actions))
    transition = _dense(d["transition"], "transition", (n_states, *actions, n_states))
    discounts = _dense(d["discounts"], "discounts", (n,))
    controllers = d.get("controllers")
    try:
        return StochasticGame(payoffs, transition, discounts,
                              None if controllers is None else tuple(controllers))
    except ShapeMismatch as exc:
        raise GameFormatError(str(exc)) from None


def load_game(path) -> StochasticGame:
    return game_from_dict(read_json(path))


def save_game(game: StochasticGame, path) -> None:
    dump_json(game_to_dict(game), path)


# -- oracle solutions -----------------------------------------------------------------

def solution_to_dict(sol: FiniteHorizonSolution, checks: dict | None = None) -> dict:
    stages = []
    for k in range(sol.horizon):
        states = []
        for s in range(sol.n_states):
            states.append({
                "state": s,
                "pi": [p.tolist() for p in sol.pi[k][s]],
                "Q": sol.q[k, :, s].tolist(),
                "v": sol.values[k, s].tolist(),
                "fixed_point_residual": float(sol.fixed_point_residuals[k, s]),
                "decomposition_residual": sol.decomposition_residuals[k, s].tolist(),
                "unique": bool(sol.unique[k, s]),
                "alternatives": [[p.tolist() for p in fp] for fp in sol.alternatives[k][s]],
            })
        stages.append({"stage": k, "m": sol.horizon - 1 - k, "states": states})
    out = {"horizon": sol.horizon, "tau": sol.tau, "stages": stages}
    if checks is not None:
        out["verification"] = checks
    return out


def solution_from_dict(d: dict) -> FiniteHorizonSolution:
    try:
        horizon = int(d["horizon"])
        stages = sorted(d["stages"], key=lambda st: st["stage"])
        if len(stages) != horizon:
            raise GameFormatError("solution lists the wrong number of stages")
        pi, q, values, fp, dec, unique, alts = [], [], [], [], [], [], []
        for st in stages:
            cells = sorted(st["states"], key=lambda c: c["state"])
            pi.append([[np.array(p, dtype=float) for p in c["pi"]] for c in cells])
            alts.append([[[np.array(p, dtype=float) for p in fpt] for fpt in c["alternatives"]]
                         for c in cells])
            q.append(np.moveaxis(np.array([c["Q"] for c in cells], dtype=float), 0, 1))
            values.append([c["v"] for c in cells])
            fp.append([c["fixed_point_residual"] for c in cells])
            dec.append([c["decomposition_residual"] for c in cells])
            unique.append([c["unique"] for c in cells])
        return FiniteHorizonSolution(
            horizon, float(d["tau"]), pi, np.array(q), np.array(values, dtype=float),
            np.array(fp, dtype=float), np.array(dec, dtype=float),
            np.array(unique, dtype=bool), alts)
    except (KeyError, TypeError, ValueError) as exc:
        raise GameFormatError(f"malformed solution document: {exc}") from None


def save_solution(sol: FiniteHorizonSolution, path, checks: dict | None = None) -> None:
    dump_json(solution_to_dict(sol, checks), path)


def load_solution(path) -> FiniteHorizonSolution:
    return solution_from_dict(read_json(path))


# -- run records ----------------------------------------------------------------------

def _write_npz(path, arrays: dict) -> None:
    # np.savez stamps entries with the current time; fix it for byte-identical output
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(info, buf.getvalue())


def _json_bytes(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode(), dtype=np.uint8)


def save_record(record: RunRecord, path) -> None:
    meta = {
        "seed": record.seed,
        "config": record.config.to_dict(),
        "game": game_to_dict(record.game),
        "final_state": record.final_state,
        "metrics": {k: [list(p) for p in v] for k, v in record.metrics.items()},
        "checkpoint_epochs": [cp.epoch for cp in record.checkpoints],
    }
    arrays = {"meta": _json_bytes(meta)}
    arrays.update({f"log_{k}": v for k, v in record.log.arrays().items()})
    for c, cp in enumerate(record.checkpoints):
        for j, b in enumerate(cp.beliefs):
            arrays[f"cp{c}_beliefs{j}"] = b
        for i, x in enumerate(cp.q):
            arrays[f"cp{c}_q{i}"] = x
        arrays[f"cp{c}_values"] = cp.values
        arrays[f"cp{c}_counts"] = cp.counts
    _write_npz(path, arrays)


def load_record(path) -> RunRecord:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            game = game_from_dict(meta["game"])
            log = StageLog.from_arrays({k: z[f"log_{k}"] for k in
                                        ("epochs", "substages", "states", "actions")})
            checkpoints = []
            for c, epoch in enumerate(meta["checkpoint_epochs"]):
                checkpoints.append(Checkpoint(
                    epoch=epoch,
                    beliefs=[z[f"cp{c}_beliefs{j}"] for j in range(game.n_players)],
                    q=[z[f"cp{c}_q{i}"] for i in range(game.n_players)],
                    values=z[f"cp{c}_values"],
                    counts=z[f"cp{c}_counts"],
                ))
    except (KeyError, ValueError, zipfile.BadZipFile, OSError) as exc:
        raise GameFormatError(f"{path}: not a run record ({exc})") from None
    return RunRecord(
        seed=meta["seed"], config=RunConfig.from_dict(meta["config"]), game=game,
        log=log, checkpoints=checkpoints,
        metrics={k: [tuple(p) for p in v] for k, v in meta["metrics"].items()},
        final_state=meta["final_state"])


# -- CSV tables -----------------------------------------------------------------------

def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def trajectory_rows(record: RunRecord, oracle: FiniteHorizonSolution | None = None):
    game = record.game
    n, S = game.n_players, game.n_states
    width = max(game.action_counts)
    header = ["epoch", "m", "state", "player"] + [f"pi_{a}" for a in range(width)] + [
        "q_residual", "pi_distance", "q_distance"]
    yield header
    for cp in record.checkpoints:
        for m in range(cp.n_slots):
            for s in range(S):
                beliefs = [cp.beliefs[j][m, s] for j in range(n)]
                nearest = None
                if oracle is not None and m < oracle.horizon:
                    nearest = oracle.nearest(m, s, beliefs)
                for i in range(n):
                    probs = [_fmt(p) for p in beliefs[i]] + [""] * (width - len(beliefs[i]))
                    residual = decompose_controller_payoff(
                        cp.q[i][m, s], game, s, i, game.controllers[s]).residual
                    pi_d = q_d = None
                    if nearest is not None:
                        pi_d = float(np.max(np.abs(beliefs[i] - nearest[i])))
                        q_d = float(np.max(np.abs(cp.q[i][m, s] - oracle.q_at_m(m, s, i))))
                    yield [str(cp.epoch), str(m), str(s), str(i), *probs,
                           _fmt(residual), _fmt(pi_d), _fmt(q_d)]


def _write_csv(path, version: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {version}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerows(rows)


def write_trajectory_csv(record: RunRecord, path,
                         oracle: FiniteHorizonSolution | None = None) -> None:
    _write_csv(path, TRAJECTORY_VERSION, trajectory_rows(record, oracle))


def read_csv_table(path) -> tuple[str, list[dict]]:
    """Return the version comment and the rows of a table written here."""
    with open(path, newline="") as fh:
        version = fh.readline().lstrip("#").strip()
        return version, list(csv.DictReader(fh))


def write_comparison_csv(comparison, path) -> None:
    header = ["epoch", "m", "state", "player", "pi_distance", "q_distance"]
    rows = ([str(r["epoch"]), str(r["m"]), str(r["state"]), str(r["player"]),
             _fmt(r["pi_distance"]), _fmt(r["q_distance"])] for r in comparison.rows)
    _write_csv(path, COMPARISON_VERSION, [header, *rows])
