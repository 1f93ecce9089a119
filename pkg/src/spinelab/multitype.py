"""Finite-type branching diffusion.

Each particle carries a type ``y ∈ {0, …, n-1}`` that moves as a reversible
Markov chain with rate matrix ``θQ``; while of type ``y`` the particle
diffuses with variance ``a(y)`` and fissions at rate ``r(y)`` into
``1 + A(y)`` children of the same type.

The additive martingale uses the Perron-Frobenius pair of
``H_λ = ½λ²A + θQ + MR``:  ``Z_λ(t) = Σ_u v_λ(Y_u) exp(λ X_u - E_λ t)``.
Reversibility makes ``H_λ`` self-adjoint in ``L²(π)``, so the eigenproblem is
solved as a symmetric one after conjugating by ``diag(√π)``.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import _kernel
from .errors import BracketFailure, ConfigInvalid, Nonconverged, OutOfDomain
from .offspring import FiniteOffspring, OffspringDist
from .rng import as_generator
from .trees import Snapshot, SpineRecord
from .verdict import ConvergenceVerdict, Verdict, check_p

log = logging.getLogger(__name__)

DEFAULT_CAP = 1_000_000
MAX_TYPES = 32


def stationary_distribution(q: np.ndarray) -> np.ndarray:
    """Invariant probability row of an irreducible rate matrix."""
    n = q.shape[0]
    lhs = np.vstack([q.T, np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    return pi


@dataclass(frozen=True, eq=False)
class TypedParams:
    """Model parameters; ``pi`` is computed from ``q_matrix`` when omitted.

    Construction validates every structural assumption and raises
    :class:`ConfigInvalid` naming the violated one.
    """

    theta: float
    q_matrix: np.ndarray
    a: np.ndarray
    r: np.ndarray
    offspring: Sequence[OffspringDist]
    pi: Optional[np.ndarray] = None
    x0: float = 0.0
    y0: int = 0

    def __post_init__(self):
        q = np.asarray(self.q_matrix, dtype=float)
        a = np.asarray(self.a, dtype=float)
        r = np.asarray(self.r, dtype=float)
        n = q.shape[0]
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        if q.ndim != 2 or q.shape != (n, n):
            raise ConfigInvalid("Q must be a square matrix")
        if not 2 <= n <= MAX_TYPES:
            raise ConfigInvalid(f"number of types must lie in [2, {MAX_TYPES}]")
        if not self.theta > 0:
            raise ConfigInvalid("theta must be > 0")
        off = q - np.diag(np.diag(q))
        if np.any(off < 0):
            raise ConfigInvalid("off-diagonal entries of Q must be >= 0")
        if np.max(np.abs(q.sum(axis=1))) > 1e-12:
            raise ConfigInvalid("rows of Q sum to 0")
        if connected_components(off > 0, directed=True, connection="strong")[0] != 1:
            raise ConfigInvalid("Q must be irreducible")
        if a.shape != (n,) or r.shape != (n,) or len(self.offspring) != n:
            raise ConfigInvalid("a, r and offspring need one entry per type")
        if np.any(a <= 0):
            raise ConfigInvalid("diffusion coefficients a(y) must be > 0")
        if np.any(r < 0):
            raise ConfigInvalid("fission rates r(y) must be >= 0")
        for y in range(n):
            if r[y] == 0 and self.offspring[y].p0 != 1.0:
                raise ConfigInvalid("r(y) = 0 requires offspring at y to be finite(1) (A(y) = 0)")
        computed = stationary_distribution(q)
        if self.pi is None:
            pi = computed
        else:
            pi = np.asarray(self.pi, dtype=float)
            if pi.shape != (n,) or np.max(np.abs(pi - computed)) > 1e-8:
                raise ConfigInvalid("supplied pi disagrees with the invariant measure of Q")
        if np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ConfigInvalid("pi must be strictly positive and sum to 1")
        if np.max(np.abs(pi @ q)) > 1e-10:
            raise ConfigInvalid("pi Q = 0")
        flux = pi[:, None] * q
        if np.max(np.abs(flux - flux.T)) > 1e-10:
            raise ConfigInvalid("detailed balance pi_i Q(i,j) = pi_j Q(j,i) (Q must be reversible)")
        if not 0 <= int(self.y0) < n:
            raise ConfigInvalid("initial type y0 out of range")
        for k, v in (("q_matrix", q), ("a", a), ("r", r), ("pi", pi)):
            v.setflags(write=False)
            set_(k, v)
        set_("offspring", tuple(self.offspring))
        set_("y0", int(self.y0))

    @property
    def n(self) -> int:
        return self.q_matrix.shape[0]

    @property
    def m(self) -> np.ndarray:
        return np.array([d.mean() for d in self.offspring])

    def h_matrix(self, lam: float) -> np.ndarray:
        """``½λ²A + θQ + MR``."""
        return np.diag(0.5 * lam * lam * self.a + self.m * self.r) + self.theta * self.q_matrix

    @classmethod
    def degenerate(cls, a0=1.0, r0=1.0, offspring=None, theta=1.0, n=2, x0=0.0, y0=0):
        """Type-independent model on ``n`` types (uniform chain)."""
        offspring = offspring or FiniteOffspring((0.0, 1.0))
        q = np.full((n, n), 1.0 / (n - 1))
        np.fill_diagonal(q, -1.0)
        return cls(theta, q, np.full(n, a0), np.full(n, r0), [offspring] * n, x0=x0, y0=y0)


@dataclass(frozen=True, eq=False)
class TypedSpectral:
    lam: float
    e_lambda: float
    v_lambda: np.ndarray
    c_lambda: Optional[float]
    e_prime: float
    pi: np.ndarray = field(repr=False)


def pi_inner(u, v, pi) -> float:
    u, v, pi = (np.asarray(z, dtype=float) for z in (u, v, pi))
    if not u.shape == v.shape == pi.shape:
        raise ValueError("vectors must have matching lengths")
    return float(np.sum(u * v * pi))


def _check_lambda(lam):
    if lam > 0:
        raise OutOfDomain(f"lambda must be <= 0 (got {lam})")


def typed_spectral(params: TypedParams, lam: float) -> TypedSpectral:
    """Rightmost eigenvalue and π-normalised positive eigenvector of ``H_λ``."""
    _check_lambda(lam)
    h = params.h_matrix(lam)
    root = np.sqrt(params.pi)
    s = root[:, None] * h / root[None, :]
    s = 0.5 * (s + s.T)
    w, vecs = np.linalg.eigh(s)
    e = float(w[-1])
    v = vecs[:, -1] / root
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    if np.any(v <= 0):
        raise Nonconverged("Perron eigenvector is not strictly positive")
    v = v / math.sqrt(pi_inner(v, v, params.pi))
    resid = float(np.max(np.abs(h @ v - e * v)))
    if resid > 1e-10:
        raise Nonconverged(f"eigen residual {resid:.3g} exceeds 1e-10")
    v.setflags(write=False)
    return TypedSpectral(
        lam=float(lam),
        e_lambda=e,
        v_lambda=v,
        c_lambda=None if lam == 0 else -e / lam,
        e_prime=lam * pi_inner(params.a * v, v, params.pi),
        pi=params.pi,
    )


def e_lambda(params: TypedParams, lam: float) -> float:
    """Rightmost eigenvalue only (valid for either sign of ``λ``: ``E`` is even)."""
    return typed_spectral(params, -abs(lam)).e_lambda


def e_prime_check(params: TypedParams, lam: float, h: float = 1e-5) -> float:
    """Central finite difference of ``E_λ``; independent of the closed form."""
    if not h > 0:
        raise ValueError("h must be > 0")
    return (e_lambda(params, lam + h) - e_lambda(params, lam - h)) / (2.0 * h)


def lambda_tilde_typed(params: TypedParams, tol: float = 1e-10) -> float:
    """Minimiser of the speed ``c_λ = -E_λ/λ`` on ``(-∞, 0)``.

    Solves ``E_λ - λ E'_λ = 0`` by bisection; the bracket is grown
    geometrically from ``λ = -1e-3``.
    """
    def g(lam):
        sp = typed_spectral(params, lam)
        return sp.e_lambda - lam * sp.e_prime

    hi = -1e-3
    if g(hi) <= 0:
        raise BracketFailure("E_λ - λE'_λ is not positive near 0 (E_0 <= 0?)")
    lo = 2.0 * hi
    while g(lo) > 0:
        lo *= 2.0
        if lo < -1e3:
            raise BracketFailure("no sign change of E_λ - λE'_λ within |λ| <= 1e3")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def speed(params: TypedParams, lam: float) -> float:
    if not lam < 0:
        raise OutOfDomain("the speed c_λ needs λ < 0")
    return -typed_spectral(params, lam).e_lambda / lam


def q_lambda_matrix(params: TypedParams, spec: TypedSpectral) -> np.ndarray:
    """Rate matrix ``θQ_λ`` of the spine's type under the size-biased measure.

    Off-diagonal entries are ``θQ(i,j) v(j)/v(i)``.  The diagonal is first
    taken as ``θQ(i,i) + ½λ²a(i) - E_λ + r(i)``; if the rows then fail to sum
    to zero (which happens whenever ``m(i) r(i) != r(i)``) the diagonal is
    replaced by minus the off-diagonal row sum, which equals
    ``θQ(i,i) + ½λ²a(i) - E_λ + m(i) r(i)`` by the eigen-relation.
    """
    v = spec.v_lambda
    tq = params.theta * params.q_matrix
    out = tq * (v[None, :] / v[:, None])
    lam = spec.lam
    printed = np.diag(tq) + 0.5 * lam * lam * params.a - spec.e_lambda + params.r
    np.fill_diagonal(out, printed)
    rows = out.sum(axis=1)
    if np.max(np.abs(rows)) > 1e-10:
        msg = (f"diagonal θQ(i,i)+½λ²a(i)-E_λ+r(i) gives row sums up to {np.max(np.abs(rows)):.3g};"
               " using the row-sum-zero diagonal (equivalently +m(i)r(i))")
        log.info(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        np.fill_diagonal(out, 0.0)
        np.fill_diagonal(out, -out.sum(axis=1))
    return out


def classify_typed(params: TypedParams, lam: float, p: Optional[float] = None) -> ConvergenceVerdict:
    _check_lambda(lam)
    check_p(p)
    if p is None:
        lam_tilde = lambda_tilde_typed(params)
        if lam <= lam_tilde or math.isclose(lam, lam_tilde, rel_tol=1e-9):
            return ConvergenceVerdict(Verdict.AS_ZERO, f"λ ≤ λ̃(θ) = {lam_tilde:.6g}",
                                      "typed.l1.below_critical")
        bad = [y for y, d in enumerate(params.offspring) if math.isinf(d.xlogx())]
        if bad:
            return ConvergenceVerdict(Verdict.AS_ZERO,
                                      f"λ ∈ (λ̃(θ), 0] and E[A(y) log⁺A(y)] = ∞ for y = {bad[0]}",
                                      "typed.l1.xlogx_infinite")
        return ConvergenceVerdict(Verdict.L1_CONVERGENT,
                                  "λ ∈ (λ̃(θ), 0] and E[A(y) log⁺A(y)] < ∞ for all y",
                                  "typed.l1.convergent")
    bad = [y for y, d in enumerate(params.offspring) if math.isinf(d.p_moment(p))]
    if bad:
        return ConvergenceVerdict(Verdict.LP_UNBOUNDED, f"E[A(y)^{p:g}] = ∞ for y = {bad[0]}",
                                  "typed.lp.moment_infinite")
    gap = p * e_lambda(params, lam) - e_lambda(params, p * lam)
    if abs(gap) <= 1e-12 * max(1.0, abs(e_lambda(params, p * lam))):
        return ConvergenceVerdict(Verdict.BOUNDARY_UNDETERMINED, "pE_λ = E_pλ (boundary)",
                                  "typed.lp.boundary")
    if gap < 0:
        return ConvergenceVerdict(Verdict.LP_UNBOUNDED, f"pE_λ - E_pλ = {gap:.6g} < 0",
                                  "typed.lp.unbounded")
    return ConvergenceVerdict(Verdict.LP_CONVERGENT,
                              f"pE_λ - E_pλ = {gap:.6g} > 0 and E[A(y)^p] < ∞ for all y",
                              "typed.lp.convergent")


def decay_rate_typed(params: TypedParams, lam: float) -> float:
    """Exponential rate at which ``Z_λ(t) → 0`` for ``λ < λ̃``: ``|λ| (c_λ - c_λ̃)``."""
    lam_tilde = lambda_tilde_typed(params)
    if not lam < lam_tilde:
        raise OutOfDomain(f"decay rate needs λ < λ̃ = {lam_tilde:.6g}")
    return -lam * (speed(params, lam) - speed(params, lam_tilde))


def lmp_speed_typed(params: TypedParams) -> float:
    """Asymptotic velocity ``-c_λ̃`` of the left-most particle."""
    return -speed(params, lambda_tilde_typed(params))


# -- simulation -------------------------------------------------------------

def dynamics(params: TypedParams) -> _kernel.Dynamics:
    return _kernel.Dynamics.build(params.r, params.a, params.offspring,
                                  generator=params.theta * params.q_matrix)


def spine_dynamics(params: TypedParams, spec: TypedSpectral) -> _kernel.Dynamics:
    return _kernel.Dynamics.build((1.0 + params.m) * params.r, params.a, params.offspring,
                                  generator=q_lambda_matrix(params, spec),
                                  drift=params.a * spec.lam)


def simulate_p_typed(params: TypedParams, t: float, seed=0, cap: int = DEFAULT_CAP,
                     replicate=None, track_labels=True) -> Snapshot:
    if t < 0:
        raise ValueError("t must be >= 0")
    rng = as_generator(seed)
    pop = _kernel.grow(rng, t, [0.0], [params.x0], [params.y0], [()], dynamics(params), cap,
                       track_labels=track_labels, replicate=replicate)
    if not track_labels:
        return pop
    return Snapshot.build(t, pop.labels, pop.positions, pop.birth_times, pop.types)


def simulate_spine_typed(params: TypedParams, lam: float, t: float, seed=0,
                         spec: Optional[TypedSpectral] = None, dyn=None) -> SpineRecord:
    """Spine skeleton under the size-biased measure (records type occupation times)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    spec = spec or typed_spectral(params, lam)
    dyn = dyn or spine_dynamics(params, spec)
    biased = [d.size_bias() for d in params.offspring]
    return _kernel.spine(as_generator(seed), t, params.x0, params.y0, dyn, biased, n_types=params.n)


def grow_off_spine(params: TypedParams, record: SpineRecord, seed, cap: int = DEFAULT_CAP,
                   replicate=None) -> Snapshot:
    pop = _kernel.subtrees(as_generator(seed), record, dynamics(params), cap - 1, replicate=replicate)
    birth = record.fission_times[-1] if record.n_fissions else 0.0
    return Snapshot.build(
        record.horizon,
        pop.labels + [record.spine_label],
        np.append(pop.positions, record.terminal_position),
        np.append(pop.birth_times, birth),
        np.append(pop.types, record.terminal_type).astype(np.intp),
    )


def simulate_q_typed(params: TypedParams, lam: float, t: float, seed=0, cap: int = DEFAULT_CAP,
                     spec: Optional[TypedSpectral] = None, replicate=None, dyn=None):
    rng = as_generator(seed)
    record = simulate_spine_typed(params, lam, t, rng, spec, dyn)
    return grow_off_spine(params, record, rng, cap, replicate), record


def z_lambda_typed(snap: Snapshot, spec: TypedSpectral) -> float:
    if snap.extinct:
        return 0.0
    v = spec.v_lambda[snap.types]
    return float(np.sum(v * np.exp(spec.lam * snap.positions - spec.e_lambda * snap.horizon)))


def spine_decomposition_typed(rec: SpineRecord, spec: TypedSpectral) -> float:
    """``Σ_k A_k v(η_k) e^{λξ_k - E S_k} + v(η_t) e^{λξ_t - E t}``."""
    v = spec.v_lambda
    births = rec.extra_offspring * v[rec.fission_types] * np.exp(
        spec.lam * rec.fission_positions - spec.e_lambda * rec.fission_times)
    return float(np.sum(births)) + v[rec.terminal_type] * math.exp(
        spec.lam * rec.terminal_position - spec.e_lambda * rec.horizon)
