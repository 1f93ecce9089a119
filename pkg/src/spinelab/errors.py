"""Exception types raised by the simulators, solvers and config layer."""


class SpinelabError(Exception):
    """Base class; ``code`` is the CLI exit status for this failure."""

    code = 1


class ConfigInvalid(SpinelabError, ValueError):
    code = 2


class PopulationExplosion(SpinelabError, RuntimeError):
    """Alive population exceeded the configured cap."""

    code = 3

    def __init__(self, count, cap, replicate=None):
        self.count = count
        self.cap = cap
        self.replicate = replicate
        where = "" if replicate is None else f" (replicate {replicate})"
        super().__init__(f"population {count} exceeded cap {cap}{where}")


class Nonconverged(SpinelabError, ArithmeticError):
    code = 4


class BracketFailure(SpinelabError, ArithmeticError):
    code = 5


class OutOfDomain(SpinelabError, ValueError):
    code = 6
