"""Epoch-based stochastic fictitious play for stochastic games.

Epoch ``t`` (``t = 1, 2, ...``) consists of ``t`` substages.  Substage ``l``
of epoch ``t`` and substage ``l + 1`` of epoch ``t + 1`` are the same
auxiliary game seen from the end of the epoch, so all learner quantities
are keyed by ``m = t - l`` (``m = 0`` is the last substage).  Epoch ``t``
opens the fresh slot ``m = t - 1``.

All players observe the same actions, start from the same uniform beliefs
and use the same step sizes, so one shared belief per ``(m, s, player)``
stands in for every player's private copy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from sfpsg import response
from sfpsg.errors import ConfigError, ShapeMismatch
from sfpsg.game_model import StochasticGame, decompose_controller_payoff, require_valid
from sfpsg.response import PerturbationSpec
from sfpsg.rng import stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepSchedule:
    """Power-law step sizes ``1 / (k + 1) ** exponent``.

    The belief step (``role="alpha"``) must be square-summable but not
    summable, so its exponent lies in (0.5, 1].  The Q step (``role="beta"``)
    only needs to be non-summable: exponent in (0, 1].
    """

    exponent: float
    role: str = "alpha"

    def __post_init__(self):
        if self.role == "alpha":
            ok = 0.5 < self.exponent <= 1.0
            rng = "(0.5, 1]"
        elif self.role == "beta":
            ok = 0.0 < self.exponent <= 1.0
            rng = "(0, 1]"
        else:
            raise ConfigError(f"unknown schedule role {self.role!r}")
        if not ok:
            raise ConfigError(
                f"{self.role} exponent {self.exponent} outside {rng}")

    def __call__(self, k: int) -> float:
        return (k + 1.0) ** -self.exponent


def _step(schedule, k: int) -> float:
    return float(schedule(k)) if callable(schedule) else float(schedule)


@dataclass(frozen=True)
class RunConfig:
    epochs: int
    tau: float
    alpha_exponent: float = 0.7
    beta_exponent: float = 0.6
    seed: int = 0
    checkpoint_every: int = 10
    state_policy: str = "continue"
    initial_state: int = 0
    metrics: tuple[str, ...] = ("q_residual",)
    # slots m > record_max_m are simulated but left out of checkpoints
    record_max_m: int | None = None
    # which beliefs enter the continuation value: "post" follows the printed
    # update order (beliefs updated first), "pre" uses the beliefs the
    # response was computed from
    value_beliefs: str = "post"

    KNOWN_METRICS = ("q_residual", "pi_distance", "q_distance")

    def __post_init__(self):
        if int(self.epochs) < 1:
            raise ConfigError("epochs must be at least 1")
        if not self.tau > 0:
            raise ConfigError("tau must be strictly positive")
        if int(self.checkpoint_every) < 1:
            raise ConfigError("checkpoint_every must be at least 1")
        self.alpha  # noqa: B018 - validates the exponents
        self.beta  # noqa: B018
        self.reset_state  # noqa: B018
        if self.value_beliefs not in ("post", "pre"):
            raise ConfigError("value_beliefs must be 'post' or 'pre'")
        unknown = set(self.metrics) - set(self.KNOWN_METRICS)
        if unknown:
            raise ConfigError(f"unknown metrics {sorted(unknown)}")
        if self.record_max_m is not None and self.record_max_m < 0:
            raise ConfigError("record_max_m must be non-negative")

    @property
    def alpha(self) -> StepSchedule:
        return StepSchedule(self.alpha_exponent, "alpha")

    @property
    def beta(self) -> StepSchedule:
        return StepSchedule(self.beta_exponent, "beta")

    @property
    def perturbation(self) -> PerturbationSpec:
        return PerturbationSpec(self.tau)

    @property
    def reset_state(self) -> int | None:
        if self.state_policy == "continue":
            return None
        if self.state_policy.startswith("reset:"):
            try:
                return int(self.state_policy.split(":", 1)[1])
            except ValueError:
                pass
        raise ConfigError(
            f"state_policy must be 'continue' or 'reset:<state>', got {self.state_policy!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown run config keys {sorted(extra)}")
        d = dict(d)
        if "metrics" in d:
            d["metrics"] = tuple(d["metrics"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return {f: (list(v) if isinstance(v, tuple) else v)
                for f, v in self.__dict__.items()}


# -- learner state -------------------------------------------------------------------

@dataclass
class LearnerState:
    """Belief bank for all slots ``m < capacity``.

    ``beliefs[j][m, s]`` is the belief about player ``j``; ``q[i][m, s]`` is
    player ``i``'s payoff estimate for the substage game; ``values[m, s, i]``
    is her continuation value; ``counts[m, s]`` counts visits.
    """

    beliefs: list
    q: list
    values: np.ndarray
    counts: np.ndarray
    epoch: int = 0
    substage: int = 0
    state: int = 0

    @classmethod
    def empty(cls, game: StochasticGame, capacity: int, state: int = 0) -> "LearnerState":
        n, S = game.n_players, game.n_states
        beliefs = [np.zeros((capacity, S, a)) for a in game.action_counts]
        q = [np.zeros((capacity, S, *game.profile_shape)) for _ in range(n)]
        return cls(beliefs, q, np.zeros((capacity, S, n)),
                   np.zeros((capacity, S), dtype=np.int64), state=state)

    @property
    def capacity(self) -> int:
        return self.counts.shape[0]

    def open_slot(self, m: int, game: StochasticGame) -> None:
        """Uniform beliefs, stage-payoff Q, uniform-play value, zero count."""
        if m >= self.capacity:
            self._grow(max(2 * self.capacity, m + 1))
        for j, a in enumerate(game.action_counts):
            self.beliefs[j][m] = 1.0 / a
        for i in range(game.n_players):
            self.q[i][m] = game.payoffs[i]
        axes = tuple(range(2, game.n_players + 2))
        self.values[m] = game.payoffs.mean(axis=axes).T
        self.counts[m] = 0

    def _grow(self, capacity: int) -> None:
        def grow(a):
            out = np.zeros((capacity, *a.shape[1:]), dtype=a.dtype)
            out[:a.shape[0]] = a
            return out
        self.beliefs = [grow(b) for b in self.beliefs]
        self.q = [grow(x) for x in self.q]
        self.values = grow(self.values)
        self.counts = grow(self.counts)

    def snapshot(self, max_m: int | None = None) -> "Checkpoint":
        live = self.epoch if max_m is None else min(self.epoch, max_m + 1)
        return Checkpoint(
            epoch=self.epoch,
            beliefs=[b[:live].copy() for b in self.beliefs],
            q=[x[:live].copy() for x in self.q],
            values=self.values[:live].copy(),
            counts=self.counts[:live].copy(),
        )


@dataclass
class Checkpoint:
    epoch: int
    beliefs: list
    q: list
    values: np.ndarray
    counts: np.ndarray

    @property
    def n_slots(self) -> int:
        return self.counts.shape[0]

    def same_as(self, other: "Checkpoint") -> bool:
        return (self.epoch == other.epoch
                and all(np.array_equal(a, b) for a, b in zip(self.beliefs, other.beliefs))
                and all(np.array_equal(a, b) for a, b in zip(self.q, other.q))
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.counts, other.counts))


@dataclass
class StageLog:
    """History of play: one entry per stage."""

    epochs: list = field(default_factory=list)
    substages: list = field(default_factory=list)
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)

    def append(self, epoch, substage, state, actions):
        self.epochs.append(epoch)
        self.substages.append(substage)
        self.states.append(state)
        self.actions.append(actions)

    def __len__(self):
        return len(self.states)

    def arrays(self) -> dict:
        n = len(self.actions[0]) if self.actions else 0
        return {
            "epochs": np.asarray(self.epochs, dtype=np.int64),
            "substages": np.asarray(self.substages, dtype=np.int64),
            "states": np.asarray(self.states, dtype=np.int64),
            "actions": np.asarray(self.actions, dtype=np.int64).reshape(-1, n),
        }

    @classmethod
    def from_arrays(cls, d: dict) -> "StageLog":
        return cls([int(x) for x in d["epochs"]], [int(x) for x in d["substages"]],
                   [int(x) for x in d["states"]],
                   [tuple(int(a) for a in row) for row in d["actions"]])


@dataclass
class RunRecord:
    seed: int
    config: RunConfig
    game: StochasticGame
    log: StageLog
    checkpoints: list
    metrics: dict
    final_state: int = 0

    @property
    def n_stages(self) -> int:
        return len(self.log)


# -- updates ---------------------------------------------------------------------------

def _sample(rng: np.random.Generator, p: np.ndarray) -> int:
    cdf = np.cumsum(p)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, p.size - 1)


def sfp_step(k: int, q_rows: Sequence, beliefs: Sequence, perturb: PerturbationSpec,
             alpha: Callable | float, rng: np.random.Generator | None = None,
             actions: Sequence[int] | None = None, value_beliefs: str = "post"):
    """One joint stochastic fictitious play update.

    Every player ``i`` responds to the shared beliefs about her opponents
    through her own ``q_rows[i]`` and samples an action (or plays the given
    ``actions``, used for replay).  Each belief then moves toward the action
    realized by that player with step ``alpha(k)``.  Returns the profile, the
    new beliefs and every player's unperturbed value of her response.
    """
    n = len(q_rows)
    if len(beliefs) != n:
        raise ShapeMismatch(f"{len(beliefs)} beliefs for {n} players")
    responses = [response.smoothed_best_response(q_rows[i], response.opponents(beliefs, i),
                                                 perturb, i)
                 for i in range(n)]
    if actions is None:
        actions = tuple(_sample(rng, b) for b in responses)
    else:
        actions = tuple(int(a) for a in actions)

    step = _step(alpha, k)
    updated = []
    for j, b in enumerate(beliefs):
        b = np.array(b, dtype=float)
        b += step * (-b)
        b[actions[j]] += step
        updated.append(b)

    seen = updated if value_beliefs == "post" else beliefs
    values = np.array([
        responses[i] @ response.marginal_payoffs(q_rows[i], response.opponents(seen, i), i)
        for i in range(n)])
    return actions, updated, values


def q_update(k: int, s: int, q_row, v_next, game: StochasticGame, player: int,
             beta: Callable | float) -> np.ndarray:
    """Move ``q_row`` toward the model-based backup ``r + gamma * sum_s' p v_next``."""
    q_row = np.asarray(q_row, dtype=float)
    v_next = np.asarray(v_next, dtype=float)
    if q_row.shape != game.profile_shape or v_next.shape != (game.n_states,):
        raise ShapeMismatch("Q row or continuation values have the wrong shape")
    target = game.payoffs[player, s] + game.discounts[player] * (game.transition[s] @ v_next)
    return q_row + _step(beta, k) * (target - q_row)


def _stage(state: LearnerState, game: StochasticGame, perturb: PerturbationSpec,
           alpha, beta, m: int, s: int, rng, actions=None, value_beliefs="post"):
    n = game.n_players
    k = int(state.counts[m, s])
    q_rows = [state.q[i][m, s] for i in range(n)]
    beliefs = [state.beliefs[j][m, s] for j in range(n)]
    played, updated, values = sfp_step(k, q_rows, beliefs, perturb, alpha, rng,
                                       actions=actions, value_beliefs=value_beliefs)
    for j in range(n):
        state.beliefs[j][m, s] = updated[j]
    if m > 0:
        # continuation comes from one substage later, i.e. slot m - 1, whose
        # value has not been touched yet in this epoch
        for i in range(n):
            state.q[i][m, s] = q_update(k, s, q_rows[i], state.values[m - 1, :, i],
                                        game, i, beta)
    state.values[m, s] = values
    state.counts[m, s] = k + 1
    return played


def run_epoch(state: LearnerState, game: StochasticGame, perturb: PerturbationSpec,
              alpha, beta, rng: np.random.Generator | None, log: StageLog | None = None,
              reset_state: int | None = None, forced: Callable | None = None,
              value_beliefs: str = "post", on_stage: Callable | None = None) -> LearnerState:
    """Play the next epoch in place and return ``state``.

    ``forced(epoch, substage)`` may return ``(state, actions, next_state)``
    to replay recorded history instead of sampling.  ``on_stage(state, m, s)``
    is called after every stage update.
    """
    t = state.epoch + 1
    state.epoch = t
    state.open_slot(t - 1, game)
    if reset_state is not None:
        state.state = reset_state
    for ell in range(1, t + 1):
        m = t - ell
        s = state.state
        state.substage = ell
        if forced is not None:
            rec_s, rec_a, nxt = forced(t, ell)
            if rec_s != s:
                raise ValueError(f"replay diverged at epoch {t}, substage {ell}")
            played = _stage(state, game, perturb, alpha, beta, m, s, None,
                            actions=rec_a, value_beliefs=value_beliefs)
        else:
            played = _stage(state, game, perturb, alpha, beta, m, s, rng,
                            value_beliefs=value_beliefs)
            nxt = _sample(rng, game.transition[(s, *played)])
        if log is not None:
            log.append(t, ell, s, played)
        if on_stage is not None:
            on_stage(state, m, s)
        state.state = nxt
    return state


# -- driver ------------------------------------------------------------------------------

def checkpoint_metrics(game: StochasticGame, cp: Checkpoint, metrics: Sequence[str],
                       oracle=None, controllers=None) -> dict:
    """Scalar summaries of a checkpoint (max over recorded slots, states and players)."""
    from sfpsg.game_model import resolved_controllers

    out = {}
    if controllers is None:
        controllers = resolved_controllers(game)
    if "q_residual" in metrics:
        out["q_residual"] = max(
            decompose_controller_payoff(cp.q[i][m, s], game, s, i, controllers[s]).residual
            for m in range(cp.n_slots) for s in range(game.n_states)
            for i in range(game.n_players))
    if oracle is not None:
        top = min(cp.n_slots, oracle.horizon)
        if "pi_distance" in metrics:
            out["pi_distance"] = max(
                oracle.pi_distance(m, s, [cp.beliefs[j][m, s] for j in range(game.n_players)])
                for m in range(top) for s in range(game.n_states))
        if "q_distance" in metrics:
            out["q_distance"] = max(
                float(np.max(np.abs(cp.q[i][m, s] - oracle.q_at_m(m, s, i))))
                for m in range(top) for s in range(game.n_states)
                for i in range(game.n_players))
    return out


def _checkpoint_epochs(config: RunConfig) -> set:
    every = config.checkpoint_every
    marks = set(range(every, config.epochs + 1, every))
    marks.add(config.epochs)
    return marks


def run(game: StochasticGame, config: RunConfig, seed: int | None = None,
        oracle=None, on_stage: Callable | None = None) -> RunRecord:
    """Simulate epochs ``1..config.epochs`` from one seed.

    ``oracle`` (a :class:`sfpsg.oracle.FiniteHorizonSolution`) enables the
    distance metrics.
    """
    game = require_valid(game)
    seed = config.seed if seed is None else seed
    if not 0 <= config.initial_state < game.n_states:
        raise ConfigError(f"initial_state {config.initial_state} is not a state")
    reset = config.reset_state
    if reset is not None and not 0 <= reset < game.n_states:
        raise ConfigError(f"reset state {reset} is not a state")

    rng = stream(seed, "run")
    perturb, alpha, beta = config.perturbation, config.alpha, config.beta
    state = LearnerState.empty(game, config.epochs, state=config.initial_state)
    stage_log = StageLog()
    marks = _checkpoint_epochs(config)
    checkpoints = []
    series = {name: [] for name in config.metrics}
    for _ in range(config.epochs):
        run_epoch(state, game, perturb, alpha, beta, rng, stage_log,
                  reset_state=reset, value_beliefs=config.value_beliefs, on_stage=on_stage)
        if state.epoch in marks:
            cp = state.snapshot(config.record_max_m)
            checkpoints.append(cp)
            values = checkpoint_metrics(game, cp, config.metrics, oracle, game.controllers)
            for name, v in values.items():
                series[name].append((cp.epoch, v))
            log.debug("epoch %d: %s", cp.epoch, values)
    return RunRecord(seed=seed, config=config, game=game, log=stage_log,
                     checkpoints=checkpoints, metrics=series, final_state=state.state)


def replay(record: RunRecord) -> list:
    """Re-derive every checkpoint from the logged history, without randomness."""
    game, config = record.game, record.config
    states = record.log.states
    index = {}
    for pos, (t, ell) in enumerate(zip(record.log.epochs, record.log.substages)):
        index[(t, ell)] = pos

    def forced(t, ell):
        pos = index[(t, ell)]
        nxt = states[pos + 1] if pos + 1 < len(states) else record.final_state
        return states[pos], record.log.actions[pos], nxt

    state = LearnerState.empty(game, config.epochs, state=config.initial_state)
    marks = _checkpoint_epochs(config)
    out = []
    for _ in range(config.epochs):
        run_epoch(state, game, config.perturbation, config.alpha, config.beta, None,
                  reset_state=config.reset_state, forced=forced,
                  value_beliefs=config.value_beliefs)
        if state.epoch in marks:
            out.append(state.snapshot(config.record_max_m))
    return out


def run_repeated(q_rows: Sequence, perturb: PerturbationSpec, alpha, n_stages: int,
                 rng: np.random.Generator, beliefs: Sequence | None = None,
                 value_beliefs: str = "post"):
    """Stochastic fictitious play in a repeated strategic-form game.

    This is what the epoch scheme reduces to for a single state with zero
    discount when one belief slot is followed across consecutive updates.
    Returns the final beliefs and the ``(n_stages, n)`` array of actions.
    """
    if beliefs is None:
        beliefs = [np.full(a, 1.0 / a) for a in np.shape(q_rows[0])]
    beliefs = [np.array(b, dtype=float) for b in beliefs]
    played = np.empty((n_stages, len(q_rows)), dtype=np.int64)
    for k in range(n_stages):
        actions, beliefs, _ = sfp_step(k, q_rows, beliefs, perturb, alpha, rng,
                                       value_beliefs=value_beliefs)
        played[k] = actions
    return beliefs, played


def with_seed(config: RunConfig, seed: int) -> RunConfig:
    return replace(config, seed=seed)
