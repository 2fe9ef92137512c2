"""Per-stage structural invariant checks for the learner state."""

import numpy as np


class InvariantMonitor:
    """Checks every invariant after each stage against a shadow copy."""

    def __init__(self, game):
        self.game = game
        self.bound = np.max(np.abs(game.payoffs.reshape(game.n_players, -1)), axis=1) / (
            1 - game.discounts)
        self.uniform_value = game.payoffs.mean(axis=tuple(range(2, game.n_players + 2))).T
        self.shadow = None
        self.violations = {"simplex": 0, "q_bound": 0, "m0_stationary": 0, "locality": 0,
                           "counters": 0}
        self.stages = 0

    def _copy(self, st):
        live = st.epoch
        return ([b[:live].copy() for b in st.beliefs], [x[:live].copy() for x in st.q],
                st.values[:live].copy(), st.counts[:live].copy())

    def __call__(self, st, m, s):
        g, v = self.game, self.violations
        self.stages += 1
        live = st.epoch
        if m == live - 1:
            # first stage of the epoch: the new slot must be fresh except at (m, s)
            for t in range(g.n_states):
                if t == s:
                    continue
                fresh = (all(np.all(st.beliefs[j][m, t] == 1.0 / a)
                             for j, a in enumerate(g.action_counts))
                         and all(np.array_equal(st.q[i][m, t], g.payoffs[i, t])
                                 for i in range(g.n_players))
                         and np.array_equal(st.values[m, t], self.uniform_value[t])
                         and st.counts[m, t] == 0)
                v["locality"] += not fresh
        if self.shadow is not None:
            old = self.shadow
            top = old[3].shape[0]
            mask = np.ones((top, g.n_states), dtype=bool)
            if m < top:
                mask[m, s] = False
            same = (all(np.array_equal(b[:top][mask], o[mask]) for b, o in zip(st.beliefs, old[0]))
                    and all(np.array_equal(x[:top][mask], o[mask]) for x, o in zip(st.q, old[1]))
                    and np.array_equal(st.values[:top][mask], old[2][mask])
                    and np.array_equal(st.counts[:top][mask], old[3][mask]))
            v["locality"] += not same
        for j in range(g.n_players):
            b = st.beliefs[j][m, s]
            v["simplex"] += bool(abs(b.sum() - 1) > 1e-12 or np.any(b < 0))
        for i in range(g.n_players):
            v["q_bound"] += bool(np.any(np.abs(st.q[i][:live]) > self.bound[i] + 1e-12))
            v["m0_stationary"] += not np.array_equal(
                st.q[i][0], g.payoffs[i])
        if m == 0:
            # end of epoch: slot m has been played in every epoch longer than m
            per_slot = st.counts[:live].sum(axis=1)
            v["counters"] += not np.array_equal(per_slot, live - np.arange(live))
        self.shadow = self._copy(st)
