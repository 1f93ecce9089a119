"""Convergence verdicts returned by the three classifiers."""
from __future__ import annotations

import enum
from dataclasses import dataclass


class Verdict(str, enum.Enum):
    AS_ZERO = "AS_ZERO"
    L1_CONVERGENT = "L1_CONVERGENT"
    LP_CONVERGENT = "LP_CONVERGENT"
    LP_UNBOUNDED = "LP_UNBOUNDED"
    BOUNDARY_UNDETERMINED = "BOUNDARY_UNDETERMINED"


@dataclass(frozen=True)
class ConvergenceVerdict:
    """``clause`` is a stable identifier of the rule that fired."""

    tag: Verdict
    reason: str
    clause: str

    def to_dict(self):
        return {"verdict": self.tag.value, "reason": self.reason, "clause": self.clause}


def check_p(p):
    if p is not None and not 1.0 < p <= 2.0:
        raise ValueError(f"p must lie in (1, 2], got {p!r}")
