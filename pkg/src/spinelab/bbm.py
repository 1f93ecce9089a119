"""Single-type branching Brownian motion.

Particles perform standard Brownian motion and fission at rate ``r`` into
``1 + A`` children.  For ``λ <= 0`` the additive martingale is

    Z_λ(t) = Σ_{u ∈ N_t} exp(λ X_u(t) - E_λ t),   E_λ = λ²/2 + r m.

Under the size-biased measure the spine drifts at speed ``λ``, fissions at
rate ``(1 + m) r`` and has size-biased families; everything off the spine is
an ordinary copy of the process.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernel
from .errors import OutOfDomain
from .offspring import OffspringDist
from .rng import as_generator
from .trees import Snapshot, SpineRecord
from .verdict import ConvergenceVerdict, Verdict, check_p

DEFAULT_CAP = 1_000_000


@dataclass(frozen=True)
class BbmParams:
    r: float
    offspring: OffspringDist
    x0: float = 0.0

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("fission rate r must be > 0")

    @property
    def m(self) -> float:
        return self.offspring.mean()


@dataclass(frozen=True)
class BbmSpectral:
    lam: float
    e_lambda: float
    c_lambda: Optional[float]
    lambda_tilde: float


def _check_lambda(lam):
    if lam > 0:
        raise OutOfDomain(f"lambda must be <= 0 (got {lam}); reflect space for lambda > 0")


def bbm_spectral(params: BbmParams, lam: float) -> BbmSpectral:
    _check_lambda(lam)
    rm = params.r * params.m
    e = 0.5 * lam * lam + rm
    return BbmSpectral(
        lam=float(lam),
        e_lambda=e,
        c_lambda=None if lam == 0 else -e / lam,
        lambda_tilde=-math.sqrt(2.0 * rm),
    )


def classify_bbm(params: BbmParams, lam: float, p: Optional[float] = None) -> ConvergenceVerdict:
    """Classify ``Z_λ`` as a.s. zero / L¹ / Lᵖ-bounded / Lᵖ-unbounded."""
    _check_lambda(lam)
    check_p(p)
    rm = params.r * params.m
    if p is None:
        lam_tilde = -math.sqrt(2.0 * rm)
        if lam <= lam_tilde or math.isclose(lam, lam_tilde, rel_tol=1e-12):
            return ConvergenceVerdict(Verdict.AS_ZERO, f"λ ≤ λ̃ = {lam_tilde:.6g}", "bbm.l1.below_critical")
        if math.isinf(params.offspring.xlogx()):
            return ConvergenceVerdict(Verdict.AS_ZERO, "λ ∈ (λ̃, 0] and E[A log⁺A] = ∞",
                                      "bbm.l1.xlogx_infinite")
        return ConvergenceVerdict(Verdict.L1_CONVERGENT, "λ ∈ (λ̃, 0] and E[A log⁺A] < ∞",
                                  "bbm.l1.convergent")
    lhs, rhs = p * lam * lam, 2.0 * rm
    moment = params.offspring.p_moment(p)
    if math.isinf(moment):
        return ConvergenceVerdict(Verdict.LP_UNBOUNDED, f"E[A^{p:g}] = ∞", "bbm.lp.moment_infinite")
    if math.isclose(lhs, rhs, rel_tol=1e-12):
        return ConvergenceVerdict(Verdict.BOUNDARY_UNDETERMINED, "pλ² = 2mr (boundary)",
                                  "bbm.lp.boundary")
    if lhs > rhs:
        return ConvergenceVerdict(Verdict.LP_UNBOUNDED, "pλ² > 2mr", "bbm.lp.unbounded")
    return ConvergenceVerdict(Verdict.LP_CONVERGENT, "pλ² < 2mr and E[A^p] < ∞",
                              "bbm.lp.convergent")


def dynamics(params: BbmParams) -> _kernel.Dynamics:
    return _kernel.Dynamics.build([params.r], [1.0], [params.offspring])


def spine_dynamics(params: BbmParams, lam: float) -> _kernel.Dynamics:
    return _kernel.Dynamics.build([(1.0 + params.m) * params.r], [1.0], [params.offspring],
                                  drift=[lam])


def simulate_p_bbm(params: BbmParams, t: float, seed=0, cap: int = DEFAULT_CAP,
                   replicate=None) -> Snapshot:
    """Exact simulation of the population alive at time ``t``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    rng = as_generator(seed)
    pop = _kernel.grow(rng, t, [0.0], [params.x0], [0], [()], dynamics(params), cap,
                       replicate=replicate)
    return Snapshot.build(t, pop.labels, pop.positions, pop.birth_times)


def leftmost_bbm(params: BbmParams, t: float, seed=0, cap: int = DEFAULT_CAP) -> float:
    """Position of the left-most particle at ``t``, in memory independent of the population size."""
    rng = as_generator(seed)
    return _kernel.leftmost(rng, t, params.x0, 0, dynamics(params), cap)


def simulate_spine_bbm(params: BbmParams, lam: float, t: float, seed=0) -> SpineRecord:
    """The spine skeleton alone (cheap; no population is grown)."""
    _check_lambda(lam)
    if t < 0:
        raise ValueError("t must be >= 0")
    rng = as_generator(seed)
    return _kernel.spine(rng, t, params.x0, 0, spine_dynamics(params, lam),
                         [params.offspring.size_bias()])


def grow_off_spine(params: BbmParams, record: SpineRecord, seed, cap: int = DEFAULT_CAP,
                   replicate=None) -> Snapshot:
    """Population at the horizon given a fixed spine skeleton."""
    rng = as_generator(seed)
    pop = _kernel.subtrees(rng, record, dynamics(params), cap - 1, replicate=replicate)
    birth = record.fission_times[-1] if record.n_fissions else 0.0
    return Snapshot.build(
        record.horizon,
        pop.labels + [record.spine_label],
        np.append(pop.positions, record.terminal_position),
        np.append(pop.birth_times, birth),
    )


def simulate_q_bbm(params: BbmParams, lam: float, t: float, seed=0, cap: int = DEFAULT_CAP,
                   replicate=None):
    """Pathwise construction of the size-biased measure: ``(Snapshot, SpineRecord)``."""
    rng = as_generator(seed)
    record = simulate_spine_bbm(params, lam, t, rng)
    return grow_off_spine(params, record, rng, cap, replicate), record


def z_lambda_bbm(snap: Snapshot, spec: BbmSpectral) -> float:
    if snap.extinct:
        return 0.0
    return float(np.sum(np.exp(spec.lam * snap.positions - spec.e_lambda * snap.horizon)))


def spine_decomposition_bbm(rec: SpineRecord, spec: BbmSpectral) -> float:
    """Conditional mean of ``Z_λ(t)`` given the spine skeleton."""
    births = rec.extra_offspring * np.exp(spec.lam * rec.fission_positions
                                          - spec.e_lambda * rec.fission_times)
    return float(np.sum(births)) + math.exp(spec.lam * rec.terminal_position
                                            - spec.e_lambda * rec.horizon)
