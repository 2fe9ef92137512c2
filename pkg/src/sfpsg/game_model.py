"""Finite n-player stochastic games with turn-based controllers.

Arrays are indexed as follows (``n`` players, ``S`` states, ``A^i`` actions
for player ``i``)::

    payoffs[i, s, a^0, ..., a^{n-1}]            stage payoff r^i(s, a)
    transition[s, a^0, ..., a^{n-1}, s_next]    p(s_next | s, a)

Players, states and actions are all 0-indexed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import networkx as nx
import numpy as np

from sfpsg.errors import (
    ControllerViolation, Disconnected, Infeasible, NotStochastic,
    ShapeMismatch, UnstructuredState,
)
from sfpsg.rng import stream

TOL = 1e-12


class StageGameStructure(str, enum.Enum):
    ZERO_SUM = "zero_sum"
    IDENTICAL_INTEREST = "identical_interest"
    UNSTRUCTURED = "unstructured"

    @classmethod
    def parse(cls, tag: str) -> "StageGameStructure":
        key = tag.replace("-", "").replace("_", "").lower()
        for member in cls:
            if member.value.replace("_", "") == key:
                return member
        raise ValueError(f"unknown stage-game structure {tag!r}")


def _frozen(x) -> np.ndarray:
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StochasticGame:
    """Immutable stochastic game ``<S, A, r, p, gamma>`` plus controller map.

    ``controllers`` may be left as ``None``; :func:`validate_turn_based_controller`
    then infers one.  Row-stochasticity of ``transition`` is checked on
    construction, structural properties are checked by the validators.
    """

    payoffs: np.ndarray
    transition: np.ndarray
    discounts: np.ndarray
    controllers: tuple[int, ...] | None = None

    def __post_init__(self):
        payoffs = _frozen(self.payoffs)
        transition = _frozen(self.transition)
        discounts = _frozen(self.discounts)
        object.__setattr__(self, "payoffs", payoffs)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "discounts", discounts)

        if payoffs.ndim < 4:
            raise ShapeMismatch(
                "payoffs must have shape (players, states, A^0, ..., A^{n-1}) "
                "with at least two players")
        n, n_states = payoffs.shape[:2]
        if payoffs.ndim != n + 2:
            raise ShapeMismatch(
                f"payoffs declare {n} players but have {payoffs.ndim - 2} action axes")
        if n < 2:
            raise ShapeMismatch("a game needs at least two players")
        expected = (n_states, *payoffs.shape[2:], n_states)
        if transition.shape != expected:
            raise ShapeMismatch(f"transition has shape {transition.shape}, expected {expected}")
        if discounts.shape != (n,):
            raise ShapeMismatch(f"discounts must have shape ({n},), got {discounts.shape}")
        if np.any(discounts < 0) or np.any(discounts >= 1):
            raise ValueError(f"discounts must lie in [0, 1), got {discounts.tolist()}")
        if not (np.all(np.isfinite(payoffs)) and np.all(np.isfinite(transition))):
            raise ValueError("payoffs and transitions must be finite")

        if np.any(transition < 0):
            idx = np.argwhere(transition < 0)[0]
            raise NotStochastic(int(idx[0]), tuple(int(a) for a in idx[1:-1]),
                                float(transition[tuple(idx[:-1])].sum()))
        sums = transition.sum(axis=-1)
        bad = np.abs(sums - 1.0) > TOL
        if np.any(bad):
            idx = np.argwhere(bad)[0]
            raise NotStochastic(int(idx[0]), tuple(int(a) for a in idx[1:]),
                                float(sums[tuple(idx)]))

        if self.controllers is not None:
            ctrl = tuple(int(c) for c in self.controllers)
            if len(ctrl) != n_states or any(not 0 <= c < n for c in ctrl):
                raise ShapeMismatch(
                    f"controllers must name one player in 0..{n - 1} per state")
            object.__setattr__(self, "controllers", ctrl)

    @property
    def n_players(self) -> int:
        return self.payoffs.shape[0]

    @property
    def n_states(self) -> int:
        return self.payoffs.shape[1]

    @property
    def action_counts(self) -> tuple[int, ...]:
        return tuple(self.payoffs.shape[2:])

    @property
    def profile_shape(self) -> tuple[int, ...]:
        return tuple(self.payoffs.shape[2:])

    def with_controllers(self, controllers: Sequence[int]) -> "StochasticGame":
        return StochasticGame(self.payoffs, self.transition, self.discounts,
                              tuple(controllers))


# -- turn-based controllers ---------------------------------------------------

@dataclass(frozen=True)
class ControllerReport:
    controllers: tuple[int, ...]
    candidates: tuple[frozenset, ...]


def _controller_witness(game: StochasticGame, s: int, i: int):
    """Spread of p(.|s, .) over a^{-i}, and a witness pair for the worst entry."""
    rows = np.moveaxis(game.transition[s], i, 0)
    n_own = rows.shape[0]
    rest_shape = rows.shape[1:-1]
    flat = rows.reshape(n_own, -1, game.n_states)
    spread = flat.max(axis=1) - flat.min(axis=1)
    worst = float(spread.max())
    own, nxt = np.unravel_index(int(np.argmax(spread)), spread.shape)
    hi = np.unravel_index(int(np.argmax(flat[own, :, nxt])), rest_shape)
    lo = np.unravel_index(int(np.argmin(flat[own, :, nxt])), rest_shape)

    def profile(rest):
        rest = [int(x) for x in rest]
        return tuple(rest[:i] + [int(own)] + rest[i:])

    return worst, (profile(hi), profile(lo))


def controller_candidates(game: StochasticGame, s: int, tol: float = TOL) -> frozenset:
    """Players whose own action alone determines p(.|s, a)."""
    return frozenset(i for i in range(game.n_players)
                     if _controller_witness(game, s, i)[0] <= tol)


def validate_turn_based_controller(game: StochasticGame, tol: float = TOL) -> ControllerReport:
    """Check the turn-based controller property at every state.

    Returns the candidate controller set per state and a chosen controller
    (the declared one if the game carries a controller map, otherwise the
    lowest-index candidate).  Raises :class:`ControllerViolation` with two
    witness profiles when a state has no valid controller.
    """
    chosen, candidates = [], []
    for s in range(game.n_states):
        spreads = {i: _controller_witness(game, s, i) for i in range(game.n_players)}
        cands = frozenset(i for i, (w, _) in spreads.items() if w <= tol)
        candidates.append(cands)
        if game.controllers is not None:
            declared = game.controllers[s]
            if declared not in cands:
                a, b = spreads[declared][1]
                raise ControllerViolation(s, a, b, player=declared)
            chosen.append(declared)
        elif cands:
            chosen.append(min(cands))
        else:
            witnesses = {i: pair for i, (_, pair) in spreads.items()}
            a, b = witnesses[0]
            raise ControllerViolation(s, a, b, player=0, witnesses=witnesses)
    return ControllerReport(tuple(chosen), tuple(candidates))


def resolved_controllers(game: StochasticGame) -> tuple[int, ...]:
    if game.controllers is not None:
        return game.controllers
    return validate_turn_based_controller(game).controllers


# -- stage-game structure ------------------------------------------------------

def classify_stage_game(game: StochasticGame, s: int, tol: float = TOL) -> StageGameStructure:
    r = game.payoffs[:, s]
    # identical-interest first so that all-zero payoffs land there
    if np.all(np.abs(r - r[0]) <= tol):
        return StageGameStructure.IDENTICAL_INTEREST
    if game.n_players == 2 and np.all(np.abs(r[0] + r[1]) <= tol):
        return StageGameStructure.ZERO_SUM
    return StageGameStructure.UNSTRUCTURED


# -- connectivity ---------------------------------------------------------------

def transition_graph(game: StochasticGame) -> nx.DiGraph:
    """Directed graph with an edge s -> s' iff p(s'|s,a) > 0 for some a."""
    reach = game.transition.reshape(game.n_states, -1, game.n_states).max(axis=1) > 0
    graph = nx.DiGraph()
    graph.add_nodes_from(range(game.n_states))
    graph.add_edges_from((int(s), int(t)) for s, t in np.argwhere(reach))
    return graph


def check_connectivity(game: StochasticGame) -> None:
    """Raise :class:`Disconnected` for the first ordered pair with no path."""
    graph = transition_graph(game)
    for s in range(game.n_states):
        reachable = nx.descendants(graph, s) | {s}
        for t in range(game.n_states):
            if t not in reachable:
                raise Disconnected(s, t)


# -- whole-game validation ------------------------------------------------------

def validation_report(game: StochasticGame) -> dict:
    """Run every validator and collect a JSON-friendly report."""
    checks = []
    ok = True
    try:
        ctrl = validate_turn_based_controller(game)
        checks.append({"check": "turn_based_controller", "ok": True,
                       "controllers": list(ctrl.controllers),
                       "candidates": [sorted(c) for c in ctrl.candidates]})
    except ControllerViolation as exc:
        ok = False
        checks.append({"check": "turn_based_controller", "ok": False,
                       "state": exc.state, "player": exc.player,
                       "witness": [list(exc.a), list(exc.b)], "message": str(exc)})

    structures = [classify_stage_game(game, s) for s in range(game.n_states)]
    bad = [s for s, tag in enumerate(structures) if tag is StageGameStructure.UNSTRUCTURED]
    ok &= not bad
    checks.append({"check": "stage_structure", "ok": not bad,
                   "structures": [t.value for t in structures],
                   "unstructured_states": bad})

    try:
        check_connectivity(game)
        checks.append({"check": "connectivity", "ok": True})
    except Disconnected as exc:
        ok = False
        checks.append({"check": "connectivity", "ok": False,
                       "source": exc.source, "target": exc.target, "message": str(exc)})
    return {"ok": ok, "checks": checks}


def require_valid(game: StochasticGame) -> StochasticGame:
    """Raise on the first failing validator; return the game with controllers resolved."""
    ctrl = validate_turn_based_controller(game)
    for s in range(game.n_states):
        if classify_stage_game(game, s) is StageGameStructure.UNSTRUCTURED:
            raise UnstructuredState(s)
    check_connectivity(game)
    if game.controllers is None:
        game = game.with_controllers(ctrl.controllers)
    return game


# -- strategic-equivalence decomposition ----------------------------------------

@dataclass(frozen=True)
class Decomposition:
    base: np.ndarray      # r^i(s, .)
    g: np.ndarray         # controller-only term, indexed by a^{i_s}
    residual: float


def decompose_controller_payoff(q_row, game: StochasticGame, s: int, player: int,
                                controller: int | None = None) -> Decomposition:
    """Split ``q_row`` into ``r^player(s, .)`` plus a function of the controller's action.

    The controller-only term is the mean over the other players' actions of
    ``q_row - r``; ``residual`` is the largest deviation left after removing it.
    """
    q_row = np.asarray(q_row, dtype=float)
    if q_row.shape != game.profile_shape:
        raise ShapeMismatch(f"Q row has shape {q_row.shape}, expected {game.profile_shape}")
    if controller is None:
        controller = resolved_controllers(game)[s]
    base = game.payoffs[player, s]
    diff = q_row - base
    others = tuple(ax for ax in range(game.n_players) if ax != controller)
    g = diff.mean(axis=others, keepdims=True)
    residual = float(np.max(np.abs(diff - g)))
    return Decomposition(base=base, g=g.reshape(-1), residual=residual)


# -- generator -------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters for :func:`generate_game`.

    ``controllers`` is ``"round_robin"`` (state s -> player s mod n),
    ``"random"``, ``"single:<i>"`` or an explicit per-state list.
    ``edge_density`` is the chance that a given successor gets positive mass in
    a transition row (at least one always does).
    """

    actions: tuple[int, ...]
    structures: tuple[str, ...]
    discounts: tuple[float, ...]
    controllers: str | tuple[int, ...] = "round_robin"
    payoff_range: tuple[float, float] = (-1.0, 1.0)
    edge_density: float = 1.0
    self_loop_states: tuple[int, ...] = field(default_factory=tuple)
    max_attempts: int = 100

    @property
    def n_states(self) -> int:
        return len(self.structures)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        d = dict(d)
        n_states = d.pop("states", None)
        structures = d.pop("structures")
        if isinstance(structures, str):
            structures = [structures] * int(n_states)
        if n_states is not None and len(structures) != int(n_states):
            raise ValueError("'structures' must list one tag per state")
        ctrl = d.pop("controllers", "round_robin")
        if not isinstance(ctrl, str):
            ctrl = tuple(int(c) for c in ctrl)
        return cls(
            actions=tuple(int(a) for a in d.pop("actions")),
            structures=tuple(structures),
            discounts=tuple(float(g) for g in d.pop("discounts")),
            controllers=ctrl,
            payoff_range=tuple(d.pop("payoff_range", (-1.0, 1.0))),
            edge_density=float(d.pop("edge_density", 1.0)),
            self_loop_states=tuple(int(s) for s in d.pop("self_loop_states", ())),
            max_attempts=int(d.pop("max_attempts", 100)),
            **d,
        )


def _controller_map(spec: GeneratorSpec, rng: np.random.Generator) -> tuple[int, ...]:
    n = len(spec.actions)
    rule = spec.controllers
    if not isinstance(rule, str):
        ctrl = tuple(int(c) for c in rule)
        if len(ctrl) != spec.n_states:
            raise ValueError("explicit controller list must have one entry per state")
        return ctrl
    if rule == "round_robin":
        return tuple(s % n for s in range(spec.n_states))
    if rule == "random":
        return tuple(int(c) for c in rng.integers(n, size=spec.n_states))
    if rule.startswith("single:"):
        return (int(rule.split(":", 1)[1]),) * spec.n_states
    raise ValueError(f"unknown controller rule {rule!r}")


def generate_game(spec: GeneratorSpec, seed: int) -> StochasticGame:
    """Draw a random valid game; identical ``(spec, seed)`` give identical games."""
    rng = stream(seed, "generator")
    n = len(spec.actions)
    shape = tuple(spec.actions)
    n_states = spec.n_states
    structures = [StageGameStructure.parse(t) for t in spec.structures]
    if len(spec.discounts) != n:
        raise ValueError("one discount per player required")
    controllers = _controller_map(spec, rng)

    lo, hi = spec.payoff_range
    payoffs = np.empty((n, n_states, *shape))
    for s, tag in enumerate(structures):
        base = rng.uniform(lo, hi, size=shape)
        if tag is StageGameStructure.ZERO_SUM:
            if n != 2:
                raise ValueError("zero-sum states need exactly two players")
            payoffs[0, s], payoffs[1, s] = base, -base
        elif tag is StageGameStructure.IDENTICAL_INTEREST:
            payoffs[:, s] = base
        else:
            raise ValueError(f"cannot generate a {tag.value} state")

    for attempt in range(1, spec.max_attempts + 1):
        transition = np.zeros((n_states, *shape, n_states))
        for s in range(n_states):
            c = controllers[s]
            for own in range(shape[c]):
                row = np.zeros(n_states)
                if s in spec.self_loop_states:
                    row[s] = 1.0
                else:
                    support = np.flatnonzero(rng.random(n_states) < spec.edge_density)
                    if support.size == 0:
                        support = rng.integers(n_states, size=1)
                    row[support] = rng.dirichlet(np.ones(support.size))
                    row /= row.sum()
                index = [slice(None)] * n
                index[c] = own
                transition[(s, *index)] = row
        game = StochasticGame(payoffs, transition, np.asarray(spec.discounts), controllers)
        try:
            check_connectivity(game)
        except Disconnected as exc:
            last = str(exc)
            continue
        return game
    raise Infeasible(spec.max_attempts, last)
