"""Smoothed best responses under product beliefs.

A *Q row* is one player's payoff tensor over full action profiles, indexed
``q[a^0, ..., a^{n-1}]``.  Beliefs are passed as the opponents' mixed
strategies in increasing player order, i.e. without the responder's own
entry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from sfpsg.errors import NonFinite, ShapeMismatch

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class PerturbationSpec:
    tau: float
    kind: str = "entropy"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"temperature must be strictly positive, got {self.tau}")
        if self.kind not in _CHOICE_RULES:
            raise ValueError(f"unsupported perturbation {self.kind!r}")


def marginal_payoffs(q_row, beliefs: Sequence, player: int) -> np.ndarray:
    """Expected payoff of each own action against the product of ``beliefs``."""
    u = np.asarray(q_row, dtype=float)
    if len(beliefs) != u.ndim - 1 or not 0 <= player < u.ndim:
        raise ShapeMismatch(
            f"{len(beliefs)} opponent beliefs for a {u.ndim}-player Q row")
    opponents = [j for j in range(u.ndim) if j != player]
    # contract from the highest axis down so remaining axis indices stay valid
    for j, b in zip(reversed(opponents), reversed(beliefs)):
        b = np.asarray(b, dtype=float)
        if b.shape != (u.shape[j],):
            raise ShapeMismatch(
                f"belief about player {j} has shape {b.shape}, expected ({u.shape[j]},)")
        if j == u.ndim - 1:
            u = u @ b
        elif j == 0 and u.ndim == 2:
            u = b @ u
        else:
            u = np.tensordot(u, b, axes=([j], [0]))
    return u


def expected_payoff(q_row, own, beliefs: Sequence, player: int) -> float:
    own = np.asarray(own, dtype=float)
    u = marginal_payoffs(q_row, beliefs, player)
    if own.shape != u.shape:
        raise ShapeMismatch(f"own strategy has shape {own.shape}, expected {u.shape}")
    return float(own @ u)


def entropy(mu) -> float:
    mu = np.asarray(mu, dtype=float)
    nz = mu[mu > 0]
    return float(-(nz * np.log(nz)).sum())


def logit(u, tau: float) -> np.ndarray:
    """Logit choice ``exp(u/tau) / sum exp(u/tau)``, safe for tiny ``tau``."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise NonFinite("payoffs fed to the logit choice are not finite")
    z = np.exp((u - u.max()) / tau)
    p = z / z.sum()
    # keep every action strictly playable even when exp underflows
    return np.maximum(p, _TINY)


_CHOICE_RULES = {"entropy": logit}


def choice(u, perturb: PerturbationSpec) -> np.ndarray:
    """Maximizer of ``mu . u + tau * eta(mu)`` over the simplex."""
    return _CHOICE_RULES[perturb.kind](u, perturb.tau)


def smoothed_best_response(q_row, beliefs: Sequence, perturb: PerturbationSpec,
                           player: int) -> np.ndarray:
    return choice(marginal_payoffs(q_row, beliefs, player), perturb)


def best_response_value(q_row, beliefs: Sequence, perturb: PerturbationSpec,
                        player: int) -> float:
    """Unperturbed expected payoff of the smoothed best response (no entropy bonus)."""
    u = marginal_payoffs(q_row, beliefs, player)
    return float(choice(u, perturb) @ u)


def perturbed_payoff(q_row, own, beliefs: Sequence, perturb: PerturbationSpec,
                     player: int) -> float:
    if perturb.kind != "entropy":
        raise ValueError(f"no objective registered for {perturb.kind!r}")
    return expected_payoff(q_row, own, beliefs, player) + perturb.tau * entropy(own)


def opponents(profile: Sequence, player: int) -> list:
    """Drop ``player``'s entry from a full strategy profile."""
    return [p for j, p in enumerate(profile) if j != player]
