"""Reference solutions: stage Nash distributions and finite-horizon backward induction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from sfpsg import response
from sfpsg.errors import EquivalenceViolation, IndexMismatch, NoConvergence
from sfpsg.game_model import StochasticGame, decompose_controller_payoff, require_valid
from sfpsg.response import PerturbationSpec
from sfpsg.rng import stream

log = logging.getLogger(__name__)

EQUIVALENCE_TOL = 1e-10


@dataclass
class StageNash:
    profile: list
    residual: float
    iterations: int
    unique: bool
    fixed_points: list = field(default_factory=list)


def best_response_map(q_rows: Sequence, profile: Sequence, perturb: PerturbationSpec) -> list:
    return [response.smoothed_best_response(q_rows[i], response.opponents(profile, i),
                                            perturb, i)
            for i in range(len(q_rows))]


def fixed_point_residual(q_rows, profile, perturb) -> float:
    br = best_response_map(q_rows, profile, perturb)
    return max(float(np.max(np.abs(b - p))) for b, p in zip(br, profile))


STALL_WINDOW = 100


def _damped_iteration(q_rows, start, perturb, damping, tol, max_iter):
    # Zero-sum games at small tau make the damped map spiral outward around
    # the fixed point; halving the damping whenever the residual stops
    # falling over a window restores contraction.
    # The residual rotates along with the iterate, so windows are compared
    # by their maxima, and a window spans about 2 / damping iterations.
    pi = [np.array(p, dtype=float) for p in start]
    previous, peak, left = np.inf, 0.0, STALL_WINDOW
    for it in range(max_iter + 1):
        br = best_response_map(q_rows, pi, perturb)
        res = max(float(np.max(np.abs(b - p))) for b, p in zip(br, pi))
        if res <= tol:
            return pi, res, it
        if it == max_iter:
            break
        peak = max(peak, res)
        left -= 1
        if left == 0:
            if peak >= 0.99 * previous:
                damping *= 0.5
            previous, peak = peak, 0.0
            left = max(STALL_WINDOW, int(2.0 / damping))
        pi = [(1.0 - damping) * p + damping * b for p, b in zip(pi, br)]
    raise NoConvergence(res, max_iter)


def solve_stage_nash(q_rows: Sequence, perturb: PerturbationSpec, damping: float = 0.5,
                     tol: float = 1e-10, max_iter: int = 10**6, n_starts: int = 10,
                     seed: int = 0, stream_key: Sequence[int] = (),
                     agree_tol: float = 1e-6) -> StageNash:
    """Nash distribution of the strategic-form game with payoffs ``q_rows``.

    Runs ``pi <- (1 - damping) pi + damping B(pi)`` from the uniform profile,
    halving ``damping`` whenever a window of iterations brings no progress.
    The same iteration from ``n_starts`` random interior profiles decides the
    ``unique`` flag: it is set when every start lands within ``agree_tol`` of
    the main fixed point.  Distinct fixed points seen along the way are kept
    in ``fixed_points`` (the main one first).
    """
    q_rows = [np.asarray(q, dtype=float) for q in q_rows]
    shape = q_rows[0].shape
    uniform = [np.full(a, 1.0 / a) for a in shape]
    profile, residual, iterations = _damped_iteration(q_rows, uniform, perturb, damping,
                                                      tol, max_iter)
    found = [profile]
    unique = True
    rng = stream(seed, "oracle", *stream_key)
    for _ in range(n_starts):
        start = [rng.dirichlet(np.ones(a)) for a in shape]
        try:
            other, _, _ = _damped_iteration(q_rows, start, perturb, damping, tol, max_iter)
        except NoConvergence:
            unique = False
            continue
        gaps = [_profile_distance(other, f) for f in found]
        if gaps[0] > agree_tol:
            unique = False
        if min(gaps) > agree_tol:
            found.append(other)
    return StageNash(profile, residual, iterations, unique, found)


def _profile_distance(a, b) -> float:
    return max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))


def profile_value(q_row, profile, player) -> float:
    """``E_{a ~ profile}[q_row(a)]`` under independent play."""
    u = response.marginal_payoffs(q_row, response.opponents(profile, player), player)
    return float(profile[player] @ u)


@dataclass
class FiniteHorizonSolution:
    """Backward-induction solution of the ``horizon``-stage game.

    Stage ``k`` runs from 0 (first) to ``horizon - 1`` (terminal).  Learner
    slots count from the end, so slot ``m`` corresponds to stage
    ``horizon - 1 - m``.

    ``pi[k][s]`` is a list of per-player strategies, ``q`` has shape
    ``(horizon, n, S, *A)`` and ``values`` has shape ``(horizon, S, n)``.
    """

    horizon: int
    tau: float
    pi: list
    q: np.ndarray
    values: np.ndarray
    fixed_point_residuals: np.ndarray
    decomposition_residuals: np.ndarray
    unique: np.ndarray
    alternatives: list

    def stage(self, m: int) -> int:
        if not 0 <= m < self.horizon:
            raise IndexMismatch(f"slot m={m} needs a horizon of at least {m + 1}, "
                                f"solution has {self.horizon}")
        return self.horizon - 1 - m

    def pi_at_m(self, m: int, s: int) -> list:
        return self.pi[self.stage(m)][s]

    def q_at_m(self, m: int, s: int, player: int) -> np.ndarray:
        return self.q[self.stage(m), player, s]

    def pi_distance(self, m: int, s: int, beliefs: Sequence) -> float:
        """L-inf distance to the nearest known fixed point at slot ``m``, state ``s``."""
        return _profile_distance(beliefs, self.nearest(m, s, beliefs))

    def nearest(self, m: int, s: int, beliefs: Sequence) -> list:
        k = self.stage(m)
        return min(self.alternatives[k][s], key=lambda fp: _profile_distance(beliefs, fp))

    @property
    def n_states(self) -> int:
        return self.q.shape[2]


def backward_induction(game: StochasticGame, horizon: int, perturb: PerturbationSpec,
                       damping: float = 0.5, tol: float = 1e-10, max_iter: int = 10**6,
                       n_starts: int = 10, seed: int = 0) -> FiniteHorizonSolution:
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    game = require_valid(game)
    n, S = game.n_players, game.n_states
    last = horizon - 1
    q = np.empty((horizon, n, S, *game.profile_shape))
    values = np.empty((horizon, S, n))
    fp_res = np.empty((horizon, S))
    dec_res = np.zeros((horizon, S, n))
    unique = np.empty((horizon, S), dtype=bool)
    pi = [None] * horizon
    alternatives = [None] * horizon

    for k in range(last, -1, -1):
        if k == last:
            q[k] = game.payoffs
        else:
            cont = np.einsum("s...t,ti->is...", game.transition, values[k + 1])
            q[k] = game.payoffs + game.discounts.reshape((n,) + (1,) * (q.ndim - 2)) * cont
            for s in range(S):
                for i in range(n):
                    d = decompose_controller_payoff(q[k, i, s], game, s, i,
                                                    game.controllers[s])
                    dec_res[k, s, i] = d.residual
                    if d.residual > EQUIVALENCE_TOL:
                        raise EquivalenceViolation(k, s, i, d.residual)
        pi[k], alternatives[k] = [], []
        for s in range(S):
            sol = solve_stage_nash([q[k, i, s] for i in range(n)], perturb, damping, tol,
                                   max_iter, n_starts, seed, stream_key=(k, s))
            if not sol.unique:
                log.warning("stage %d, state %d: %d distinct Nash distributions found",
                            k, s, len(sol.fixed_points))
            pi[k].append(sol.profile)
            alternatives[k].append(sol.fixed_points)
            fp_res[k, s] = sol.residual
            unique[k, s] = sol.unique
            for i in range(n):
                values[k, s, i] = profile_value(q[k, i, s], sol.profile, i)

    return FiniteHorizonSolution(horizon, perturb.tau, pi, q, values, fp_res, dec_res,
                                 unique, alternatives)


def verify_solution(game: StochasticGame, sol: FiniteHorizonSolution,
                    perturb: PerturbationSpec | None = None) -> dict:
    """Recompute every residual of ``sol`` from scratch.

    Independent of the solver loop: the best-response map, the Q recursion
    and the value recursion are all re-evaluated entry by entry.
    """
    perturb = perturb or PerturbationSpec(sol.tau)
    n, S = game.n_players, game.n_states
    last = sol.horizon - 1
    fixed_point = 0.0
    recursion = 0.0
    for k in range(sol.horizon):
        for s in range(S):
            profile = sol.pi[k][s]
            q_rows = [sol.q[k, i, s] for i in range(n)]
            fixed_point = max(fixed_point, fixed_point_residual(q_rows, profile, perturb))
            for i in range(n):
                recursion = max(recursion, abs(profile_value(q_rows[i], profile, i)
                                               - sol.values[k, s, i]))
                if k < last:
                    expected = np.empty(game.profile_shape)
                    for a in np.ndindex(*game.profile_shape):
                        row = game.transition[(s, *a)]
                        expected[a] = (game.payoffs[(i, s, *a)] + game.discounts[i]
                                       * sum(row[t] * sol.values[k + 1, t, i] for t in range(S)))
                    recursion = max(recursion, float(np.max(np.abs(expected - q_rows[i]))))
    terminal_exact = bool(np.array_equal(sol.q[last], game.payoffs))
    return {"fixed_point_residual": fixed_point, "recursion_residual": recursion,
            "terminal_exact": terminal_exact,
            "max_decomposition_residual": float(sol.decomposition_residuals.max()),
            "unique": bool(sol.unique.all())}


# -- limiting dynamics ---------------------------------------------------------------

def ode_rhs(profile: Sequence, q_rows: Sequence, perturb: PerturbationSpec) -> list:
    """Right-hand side ``B^j(pi^{-j}) - pi^j`` of the smoothed best-response ODE."""
    return [b - np.asarray(p, dtype=float)
            for b, p in zip(best_response_map(q_rows, profile, perturb), profile)]


def integrate_ode(profile: Sequence, q_rows: Sequence, perturb: PerturbationSpec,
                  step: float = 1e-3, n_steps: int = 100_000) -> list:
    """Forward Euler integration of :func:`ode_rhs`."""
    pi = [np.array(p, dtype=float) for p in profile]
    for _ in range(n_steps):
        tangent = ode_rhs(pi, q_rows, perturb)
        pi = [p + step * d for p, d in zip(pi, tangent)]
    return pi


# -- learner vs oracle ---------------------------------------------------------------

@dataclass
class Comparison:
    rows: list               # dicts: epoch, m, state, player, pi_distance, q_distance
    pi_series: list          # (epoch, max pi distance)
    q_series: list           # (epoch, max q distance)
    final_pi: float
    final_q: float
    ambiguous: list          # (m, state) pairs without a uniqueness certificate
    max_m: int

    def trend_ok(self, window: int = 5, factor: float = 0.5) -> bool:
        """Late distances shrink: median of last ``window`` < factor * median of first."""
        d = [v for _, v in self.pi_series]
        if len(d) < 2 * window:
            return False
        return float(np.median(d[-window:])) < factor * float(np.median(d[:window]))


def compare(record, solution: FiniteHorizonSolution, max_m: int | None = None) -> Comparison:
    """Distances between a run's checkpoints and the oracle, per slot and state."""
    game = record.game
    if solution.n_states != game.n_states or solution.q.shape[3:] != game.profile_shape:
        raise IndexMismatch("record and solution describe different games")
    if not record.checkpoints:
        raise IndexMismatch("record has no checkpoints")
    recorded = record.checkpoints[-1].n_slots - 1
    if max_m is None:
        max_m = recorded
    if max_m > recorded:
        raise IndexMismatch(f"record only holds slots m <= {recorded}, asked for {max_m}")
    if max_m >= solution.horizon:
        raise IndexMismatch(f"slot m={max_m} needs horizon >= {max_m + 1}, "
                            f"solution has {solution.horizon}")

    n, S = game.n_players, game.n_states
    rows, pi_series, q_series = [], [], []
    for cp in record.checkpoints:
        worst_pi = worst_q = 0.0
        for m in range(min(max_m + 1, cp.n_slots)):
            for s in range(S):
                beliefs = [cp.beliefs[j][m, s] for j in range(n)]
                d_pi = solution.pi_distance(m, s, beliefs)
                worst_pi = max(worst_pi, d_pi)
                for i in range(n):
                    d_q = float(np.max(np.abs(cp.q[i][m, s] - solution.q_at_m(m, s, i))))
                    worst_q = max(worst_q, d_q)
                    rows.append({"epoch": cp.epoch, "m": m, "state": s, "player": i,
                                 "pi_distance": d_pi, "q_distance": d_q})
        pi_series.append((cp.epoch, worst_pi))
        q_series.append((cp.epoch, worst_q))
    ambiguous = [(m, s) for m in range(max_m + 1) for s in range(S)
                 if not solution.unique[solution.stage(m), s]]
    return Comparison(rows, pi_series, q_series, pi_series[-1][1], q_series[-1][1],
                      ambiguous, max_m)
