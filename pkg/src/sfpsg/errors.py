"""Exception types raised across the package."""


class SFPError(Exception):
    """Base class for all domain failures."""


class ShapeMismatch(SFPError, ValueError):
    pass


class GameFormatError(SFPError, ValueError):
    """A game, config or solution document could not be parsed."""


class NotStochastic(SFPError, ValueError):
    def __init__(self, state, profile, total):
        self.state = state
        self.profile = profile
        self.total = total
        super().__init__(
            f"p(.|s={state}, a={profile}) is not a probability vector (sum={total!r})")


class ControllerViolation(SFPError):
    """No single player explains the transitions of ``state``.

    ``a`` and ``b`` are two profiles that agree on the action of ``player``
    but lead to different transition rows.
    """

    def __init__(self, state, a, b, player=0, witnesses=None):
        self.state = state
        self.a = tuple(a)
        self.b = tuple(b)
        self.player = player
        self.witnesses = witnesses or {player: (self.a, self.b)}
        super().__init__(
            f"state {state}: transitions depend on more than one player "
            f"(profiles {self.a} and {self.b} agree on player {player} "
            f"but lead to different rows)")


class Disconnected(SFPError):
    def __init__(self, source, target):
        self.source = source
        self.target = target
        super().__init__(f"no directed path from state {source} to state {target}")


class UnstructuredState(SFPError):
    def __init__(self, state):
        self.state = state
        super().__init__(
            f"stage game at state {state} is neither zero-sum nor identical-interest")


class Infeasible(SFPError):
    def __init__(self, attempts, reason=""):
        self.attempts = attempts
        msg = f"could not generate a connected game in {attempts} attempts"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class NonFinite(SFPError, ValueError):
    pass


class NoConvergence(SFPError):
    def __init__(self, residual, iterations):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"fixed-point iteration stopped after {iterations} iterations "
            f"with residual {residual:.3e}")


class EquivalenceViolation(SFPError):
    def __init__(self, stage, state, player, residual):
        self.stage = stage
        self.state = state
        self.player = player
        self.residual = residual
        super().__init__(
            f"Q at stage {stage}, state {state}, player {player} is not "
            f"stage payoff plus a controller-only term (residual {residual:.3e})")


class IndexMismatch(SFPError):
    pass


class ConfigError(SFPError, ValueError):
    pass
