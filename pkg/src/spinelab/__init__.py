"""Spine methods for branching Brownian motion with and without types.

Spectral quantities, convergence classifiers and exact or step-controlled
simulators for three models: single-type BBM, finite-type BBM driven by a
reversible Markov chain, and BBM whose type follows an Ornstein-Uhlenbeck
process with quadratic fission rate.
"""
__version__ = "0.1.0"

from .errors import (BracketFailure, ConfigInvalid, Nonconverged, OutOfDomain,  # noqa: F401
                     PopulationExplosion, SpinelabError)
from .verdict import ConvergenceVerdict, Verdict  # noqa: F401
