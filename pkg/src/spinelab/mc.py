"""Monte Carlo harness: replicate orchestration, estimators and the
cross-model verification experiments.

Every replicate draws from its own counter-based stream keyed by
``(seed, replicate)``, and per-replicate results are stored by index before
any reduction, so estimates are bit-identical for any number of workers.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from scipy.linalg import expm

from . import bbm, multitype, outype
from .errors import ConfigInvalid
from .offspring import FiniteOffspring
from .rng import stream

TAG_P, TAG_Q, TAG_SPINE, TAG_LMP, TAG_SKELETON, TAG_SUBTREE = 1, 2, 3, 4, 5, 6
TAG_SUBTREE_OU = 24
HIGH_REL_SE = 0.1
UNRELIABLE_SHARE = 0.5
SLOPE_CI_SE = 3.0


# -- estimates ---------------------------------------------------------------

@dataclass(frozen=True)
class Estimate:
    """Sample mean with standard error ``std/√n``.

    ``max_share`` is the largest single-replicate share of ``Σ|values|``;
    ``flag`` is ``UNRELIABLE`` when it exceeds 50%, ``HIGH_REL_SE`` when the
    relative standard error exceeds 10%, else ``OK``.
    """

    mean: float
    se: float
    n: int
    extinct_fraction: float = 0.0
    flag: str = "OK"
    max_share: float = 0.0

    @classmethod
    def from_values(cls, values, extinct=None) -> "Estimate":
        v = np.asarray(values, dtype=float)
        if v.size < 2:
            raise ValueError("an estimate needs at least 2 replicates")
        if np.all(v == v[0]):
            # constant samples (e.g. t = 0): exact, free of summation rounding
            mean, se = float(v[0]), 0.0
        else:
            mean = float(np.mean(v))
            se = float(np.std(v, ddof=1) / math.sqrt(v.size))
        total = float(np.sum(np.abs(v)))
        share = float(np.max(np.abs(v)) / total) if total > 0 else 0.0
        if share > UNRELIABLE_SHARE:
            flag = "UNRELIABLE"
        elif se > HIGH_REL_SE * abs(mean):
            flag = "HIGH_REL_SE"
        else:
            flag = "OK"
        ext = 0.0 if extinct is None else float(np.mean(extinct))
        return cls(mean, se, int(v.size), ext, flag, share)

    def z(self, value: float) -> float:
        """Standardised distance of ``value`` from the mean."""
        diff = self.mean - value
        if self.se == 0:
            return 0.0 if diff == 0 else math.copysign(math.inf, diff)
        return diff / self.se

    def within(self, value: float, k: float = 3.0) -> bool:
        return abs(self.z(value)) <= k

    def to_dict(self):
        return asdict(self)


def combined_z(a: Estimate, b: Estimate) -> float:
    se = math.hypot(a.se, b.se)
    diff = a.mean - b.mean
    if se == 0:
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return diff / se


def variance_estimate(values) -> Estimate:
    """Sample variance with SE ``√((μ₄ - σ⁴)/n)``."""
    v = np.asarray(values, dtype=float)
    n = v.size
    var = float(np.var(v, ddof=1))
    m4 = float(np.mean((v - v.mean()) ** 4))
    se = math.sqrt(max(m4 - var * var, 0.0) / n)
    return Estimate(var, se, int(n))


@dataclass(frozen=True)
class GrowthCurve:
    """``E[Z^p]`` against time with a least-squares log-slope.

    The slope is fitted on ``log(mean)`` over ``fit_times`` (those with a
    positive mean); its half-width is ``3·SE`` by the delta method, grid
    points being independent.
    """

    times: np.ndarray
    values: List[Estimate]
    fitted_log_slope: float
    slope_halfwidth: float
    fit_times: np.ndarray = field(default=None)

    @property
    def slope_ci(self):
        return (self.fitted_log_slope - self.slope_halfwidth,
                self.fitted_log_slope + self.slope_halfwidth)

    def ci_contains(self, value: float = 0.0) -> bool:
        lo, hi = self.slope_ci
        return lo <= value <= hi


def fit_log_slope(times, estimates: Sequence[Estimate], k: float = SLOPE_CI_SE):
    t = np.asarray(times, dtype=float)
    m = np.array([e.mean for e in estimates])
    s = np.array([e.se for e in estimates])
    keep = m > 0
    t, m, s = t[keep], m[keep], s[keep]
    if t.size < 2:
        return math.nan, math.nan, t
    w = (t - t.mean()) / np.sum((t - t.mean()) ** 2)
    slope = float(np.sum(w * np.log(m)))
    half = k * float(math.sqrt(np.sum((w * s / m) ** 2)))
    return slope, half, t


# -- model dispatch ----------------------------------------------------------

def model_kind(model) -> str:
    if isinstance(model, bbm.BbmParams):
        return "bbm"
    if isinstance(model, multitype.TypedParams):
        return "typed"
    if isinstance(model, outype.OuParams):
        return "ou"
    raise TypeError(f"unsupported model {type(model).__name__}")


def spectral(model, lam):
    kind = model_kind(model)
    if kind == "bbm":
        return bbm.bbm_spectral(model, lam)
    if kind == "typed":
        return multitype.typed_spectral(model, lam)
    return outype.ou_spectral(model, lam)


def z_value(model, snap, spec) -> float:
    kind = model_kind(model)
    if kind == "bbm":
        return bbm.z_lambda_bbm(snap, spec)
    if kind == "typed":
        return multitype.z_lambda_typed(snap, spec)
    return outype.z_lambda_ou(snap, spec)


def z_initial(model, spec) -> float:
    kind = model_kind(model)
    base = math.exp(spec.lam * model.x0)
    if kind == "bbm":
        return base
    if kind == "typed":
        return float(spec.v_lambda[model.y0]) * base
    return float(spec.v(model.y0)) * base


def spine_decomposition(model, record, spec) -> float:
    kind = model_kind(model)
    if kind == "bbm":
        return bbm.spine_decomposition_bbm(record, spec)
    if kind == "typed":
        return multitype.spine_decomposition_typed(record, spec)
    return outype.spine_decomposition_ou(record, spec)


def _cap(model, cap):
    if cap is not None:
        return int(cap)
    return {"bbm": bbm.DEFAULT_CAP, "typed": multitype.DEFAULT_CAP, "ou": outype.DEFAULT_CAP}[model_kind(model)]


def p_snapshots(model, t, reps, seed, cap=None, h=outype.DEFAULT_H, substeps=1):
    """Yield ``(rep, Snapshot)`` for P-simulations of the given replicates."""
    kind, cap = model_kind(model), _cap(model, cap)
    if kind == "ou":
        snaps = outype.simulate_p_ou_batch(model, t, reps, h, seed, cap, substeps)
        for r in reps:
            yield r, snaps[r]
        return
    sim = bbm.simulate_p_bbm if kind == "bbm" else multitype.simulate_p_typed
    for r in reps:
        yield r, sim(model, t, stream(seed, r, TAG_P), cap, replicate=r)


def q_snapshots(model, lam, t, reps, seed, cap=None, h=outype.DEFAULT_H, substeps=1):
    """Yield ``(rep, Snapshot, SpineRecord)`` under the size-biased measure."""
    kind, cap = model_kind(model), _cap(model, cap)
    if kind == "ou":
        out = outype.simulate_q_ou_batch(model, lam, t, reps, h, seed, cap, substeps)
        for r in reps:
            yield (r,) + out[r]
        return
    if kind == "bbm":
        for r in reps:
            yield (r,) + bbm.simulate_q_bbm(model, lam, t, stream(seed, r, TAG_Q), cap, replicate=r)
        return
    spec = multitype.typed_spectral(model, lam)
    dyn = multitype.spine_dynamics(model, spec)
    for r in reps:
        yield (r,) + multitype.simulate_q_typed(model, lam, t, stream(seed, r, TAG_Q), cap, spec,
                                                replicate=r, dyn=dyn)


# -- replicate orchestration ------------------------------------------------

def resolve_workers(workers: Optional[int] = None) -> int:
    """Requested worker count, defaulting to the CPU count, capped by ``SPINELAB_WORKERS``."""
    n = workers if workers is not None else (os.cpu_count() or 1)
    env = os.environ.get("SPINELAB_WORKERS")
    if env:
        n = min(n, max(1, int(env)))
    return max(1, int(n))


def _blocks(reps: Sequence[int], n_blocks: int):
    reps = list(reps)
    size = max(1, math.ceil(len(reps) / n_blocks))
    return [reps[i:i + size] for i in range(0, len(reps), size)]


def map_replicates(fn, reps: Sequence[int], workers: Optional[int] = None, **kwargs) -> np.ndarray:
    """Apply ``fn(block, **kwargs)`` to contiguous replicate blocks and stack the rows in order."""
    n = resolve_workers(workers)
    blocks = _blocks(reps, n * 4 if n > 1 else 1)
    job = partial(fn, **kwargs)
    if n == 1:
        parts = [job(b) for b in blocks]
    else:
        with ProcessPoolExecutor(max_workers=n) as ex:
            parts = list(ex.map(job, blocks))
    return np.concatenate([np.asarray(p, dtype=float).reshape(len(b), -1) for p, b in zip(parts, blocks)])


def _p_block(reps, model, lam, t, seed, cap, h, substeps):
    spec = spectral(model, lam)
    return [(z_value(model, snap, spec), snap.size)
            for _, snap in p_snapshots(model, t, reps, seed, cap, h, substeps)]


def _q_block(reps, model, lam, t, seed, cap, h, substeps):
    return [(snap.size, rec.n_fissions) for _, snap, rec in q_snapshots(model, lam, t, reps, seed, cap, h, substeps)]


def _check_reps(n_reps):
    if int(n_reps) < 2:
        raise ValueError("n_reps must be >= 2")


def p_samples(model, lam, t, n_reps, seed=0, cap=None, h=outype.DEFAULT_H, substeps=1,
              workers=None, offset=0):
    """Per-replicate ``(Z_λ(t), |N_t|)`` rows under P."""
    _check_reps(n_reps)
    reps = range(offset, offset + int(n_reps))
    return map_replicates(_p_block, reps, workers, model=model, lam=lam, t=t, seed=seed, cap=cap,
                          h=h, substeps=substeps)


# -- experiments ---------------------------------------------------------------

def estimate_martingale_mean(model, lam, t, n_reps, seed=0, cap=None, h=outype.DEFAULT_H,
                             workers=None, substeps=1, offset=0) -> Estimate:
    """Mean of ``Z_λ(t)`` over replicates ``offset, ..., offset + n_reps - 1``."""
    rows = p_samples(model, lam, t, n_reps, seed, cap, h, substeps, workers, offset)
    return Estimate.from_values(rows[:, 0], extinct=rows[:, 1] == 0)


def estimate_p_moment_curve(model, lam, p, time_grid, n_reps, seed=0, cap=None,
                            h=outype.DEFAULT_H, workers=None, fit_from=None) -> GrowthCurve:
    """``E[Z_λ(t)^p]`` on a time grid, independent replicates per grid point."""
    if p is None or not 1.0 < p <= 2.0:
        raise ValueError("p must lie in (1, 2]")
    times = np.asarray(sorted(time_grid), dtype=float)
    if times.size == 0:
        raise ValueError("time grid must be nonempty")
    values = []
    for i, t in enumerate(times):
        rows = p_samples(model, lam, t, n_reps, seed, cap, h, 1, workers, offset=i * int(n_reps))
        values.append(Estimate.from_values(rows[:, 0] ** p, extinct=rows[:, 1] == 0))
    mask = times >= (fit_from if fit_from is not None else times[0])
    slope, half, fitted = fit_log_slope(times[mask], [v for v, k in zip(values, mask) if k])
    return GrowthCurve(times, values, slope, half, fitted)


class RnResult(NamedTuple):
    left: Estimate
    right: Estimate
    z_score: float


FUNCTIONALS = {"exp_neg_popsize": lambda size: np.exp(-np.asarray(size, dtype=float))}


def rn_consistency(model, lam, t, functional="exp_neg_popsize", n_reps=10_000, seed=0, cap=None,
                   h=outype.DEFAULT_H, workers=None) -> RnResult:
    """Compare ``E_P[F Z_λ(t)]/Z_λ(0)`` with ``E_Q[F]``."""
    if functional not in FUNCTIONALS:
        raise ValueError(f"unknown functional {functional!r}")
    _check_reps(n_reps)
    f = FUNCTIONALS[functional]
    z0 = z_initial(model, spectral(model, lam))
    prow = p_samples(model, lam, t, n_reps, seed, cap, h, 1, workers)
    qrow = map_replicates(_q_block, range(int(n_reps)), workers, model=model, lam=lam, t=t,
                          seed=seed, cap=cap, h=h, substeps=1)
    left = Estimate.from_values(f(prow[:, 1]) * prow[:, 0] / z0)
    right = Estimate.from_values(f(qrow[:, 0]))
    return RnResult(left, right, combined_z(left, right))


class StepHalving(NamedTuple):
    coarse: Estimate
    fine: Estimate
    shift_in_se: float


def step_halving(model, lam, t, h, n_reps, seed=0, cap=None, workers=None) -> StepHalving:
    """Martingale mean at step ``2h`` and ``h`` on coupled noise (OU model)."""
    if model_kind(model) != "ou":
        raise ValueError("step halving applies to the OU model only")
    coarse = estimate_martingale_mean(model, lam, t, n_reps, seed, cap, 2 * h, workers, substeps=2)
    fine = estimate_martingale_mean(model, lam, t, n_reps, seed, cap, h, workers)
    shift = abs(coarse.mean - fine.mean) / fine.se if fine.se > 0 else 0.0
    return StepHalving(coarse, fine, shift)


@dataclass(frozen=True)
class SpineStat:
    name: str
    estimate: Estimate
    expected: float
    z: float
    passed: bool

    def to_dict(self):
        return {"name": self.name, "estimate": self.estimate.to_dict(), "expected": self.expected,
                "z": self.z, "passed": self.passed}


@dataclass(frozen=True)
class SpineReport:
    model: str
    lam: float
    t: float
    burn_in: float
    stats: List[SpineStat]

    def __getitem__(self, name) -> SpineStat:
        for s in self.stats:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.stats)

    def to_dict(self):
        return {"model": self.model, "lambda": self.lam, "t": self.t, "burn_in": self.burn_in,
                "stats": [s.to_dict() for s in self.stats]}


def _stat(name, est: Estimate, expected, k=3.0):
    z = est.z(expected)
    return SpineStat(name, est, float(expected), float(z), bool(abs(z) <= k))


def _spine_block_bbm(reps, model, lam, t, seed):
    out = []
    for r in reps:
        rec = bbm.simulate_spine_bbm(model, lam, t, stream(seed, r, TAG_SPINE))
        out.append((rec.n_fissions, rec.terminal_position))
    return out


def _spine_block_typed(reps, model, lam, t, burn, seed):
    spec = multitype.typed_spectral(model, lam)
    dyn = multitype.spine_dynamics(model, spec)
    biased = [d.size_bias() for d in model.offspring]
    out = []
    for r in reps:
        rng = stream(seed, r, TAG_SPINE)
        # two segments; exact by the memoryless clocks
        first = multitype._kernel.spine(rng, burn, model.x0, model.y0, dyn, biased, n_types=model.n)
        second = multitype._kernel.spine(rng, t - burn, first.terminal_position, first.terminal_type,
                                         dyn, biased, n_types=model.n)
        disp = second.terminal_position - first.terminal_position
        out.append((first.n_fissions + second.n_fissions, disp)
                   + tuple(second.occupation / (t - burn)))
    return out


def _spine_block_ou(reps, model, lam, t, burn, seed, h):
    paths = outype.simulate_spine_ou(model, lam, t, h, seed, reps)
    kb = int(np.searchsorted(paths.times, burn))
    tb = paths.times[kb]
    rows = []
    for j, rec in enumerate(paths.records):
        rows.append(((paths.x[j, -1] - paths.x[j, kb]) / (t - tb),
                     np.sum(rec.fission_times > tb),
                     paths.y[j, -1] ** 2))
    return rows


def typed_expected_fissions(model, spec, t) -> float:
    """``E[n_t]`` for the typed spine, via the exponential of an augmented generator."""
    g = multitype.q_lambda_matrix(model, spec)
    n = model.n
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = g
    aug[:n, n] = (1.0 + model.m) * model.r
    return float(expm(aug * t)[model.y0, n])


def _spectral_gap(g: np.ndarray) -> float:
    ev = np.sort(np.abs(np.real(np.linalg.eigvals(g))))
    return float(ev[1])


def spine_statistics(model, lam, t, n_reps, seed=0, h=outype.DEFAULT_H, burn_in=None,
                     workers=None) -> SpineReport:
    """Spine statistics under the size-biased measure, each with a 3-SE verdict.

    Long-run quantities (type occupation, drift, OU fission counts) are
    measured after a burn-in of five relaxation times of the spine's type
    process (``5/μ_λ`` for OU, ``5/gap`` of ``θQ_λ`` for the finite-type model),
    capped at ``t/2``.
    """
    _check_reps(n_reps)
    kind = model_kind(model)
    spec = spectral(model, lam)
    reps = range(int(n_reps))
    stats = []
    if kind == "bbm":
        rows = map_replicates(_spine_block_bbm, reps, workers, model=model, lam=lam, t=t, seed=seed)
        rate = (1.0 + model.m) * model.r * t
        stats = [
            _stat("n_t_mean", Estimate.from_values(rows[:, 0]), rate),
            _stat("n_t_variance", variance_estimate(rows[:, 0]), rate),
            _stat("terminal_mean", Estimate.from_values(rows[:, 1]), model.x0 + lam * t),
            _stat("terminal_variance", variance_estimate(rows[:, 1]), t),
        ]
        burn = 0.0
    elif kind == "typed":
        g = multitype.q_lambda_matrix(model, spec)
        burn = min(5.0 / _spectral_gap(g), 0.5 * t) if burn_in is None else float(burn_in)
        if not 0 <= burn < t:
            raise ValueError("burn-in must lie in [0, t)")
        rows = map_replicates(_spine_block_typed, reps, workers, model=model, lam=lam, t=t,
                              burn=burn, seed=seed)
        pi_lam = spec.v_lambda ** 2 * model.pi
        stats = [
            _stat("n_t_mean", Estimate.from_values(rows[:, 0]), typed_expected_fissions(model, spec, t)),
            _stat("drift", Estimate.from_values(rows[:, 1] / (t - burn)), spec.e_prime),
        ]
        for y in range(model.n):
            stats.append(_stat(f"occupation_{y}", Estimate.from_values(rows[:, 2 + y]), pi_lam[y]))
    else:
        burn = min(5.0 / spec.mu, 0.5 * t) if burn_in is None else float(burn_in)
        if not 0 <= burn < t:
            raise ValueError("burn-in must lie in [0, t)")
        rows = map_replicates(_spine_block_ou, reps, workers, model=model, lam=lam, t=t,
                              burn=burn, seed=seed, h=h)
        grid_burn = outype._Grid(t, h, 1).times[np.searchsorted(outype._Grid(t, h, 1).times, burn)]
        stats = [
            _stat("drift", Estimate.from_values(rows[:, 0]), spec.e_prime),
            _stat("n_fissions_after_burn_in", Estimate.from_values(rows[:, 1]),
                  outype.expected_spine_fissions(model, spec, grid_burn, t)),
            _stat("terminal_type_second_moment", Estimate.from_values(rows[:, 2]),
                  model.theta / (2 * spec.mu)),
        ]
    return SpineReport(kind, float(lam), float(t), float(burn), stats)


def _lmp_block(reps, model, t, seed, cap):
    kind = model_kind(model)
    out = []
    for r in reps:
        rng = stream(seed, r, TAG_LMP)
        if kind == "bbm":
            left = bbm._kernel.leftmost(rng, t, model.x0, 0, bbm.dynamics(model), cap, replicate=r)
        else:
            left = multitype._kernel.leftmost(rng, t, model.x0, model.y0, multitype.dynamics(model), cap,
                                              replicate=r)
        out.append(left / t)
    return out


def lmp_estimate(model, t, n_reps, seed=0, cap=None, workers=None) -> Estimate:
    """Mean of ``L(t)/t`` for the left-most particle (``L(0) = x0`` at ``t = 0``)."""
    kind = model_kind(model)
    if kind == "ou":
        raise ConfigInvalid("left-most particle estimates support the bbm and typed models only")
    dists = [model.offspring] if kind == "bbm" else list(model.offspring)
    if any(d.p0 > 0 for d in dists):
        raise ConfigInvalid("left-most particle estimates require p_0 = 0 for every type")
    _check_reps(n_reps)
    if t == 0:
        return Estimate.from_values(np.full(int(n_reps), float(model.x0)))
    rows = map_replicates(_lmp_block, range(int(n_reps)), workers, model=model, t=t, seed=seed,
                          cap=_cap(model, cap))
    return Estimate.from_values(rows[:, 0])


class DecompResult(NamedTuple):
    z_score: float
    estimate: Estimate
    expected: float
    record: object


def _decomp_block(reps, model, lam, record, seed, cap, h):
    kind = model_kind(model)
    spec = spectral(model, lam)
    if kind == "ou":
        snaps = outype.grow_off_spine_ou(model, record, reps, h, seed, cap, tag=TAG_SUBTREE_OU)
        return [z_value(model, snaps[r], spec) for r in reps]
    grow = bbm.grow_off_spine if kind == "bbm" else multitype.grow_off_spine
    return [z_value(model, grow(model, record, stream(seed, r, TAG_SUBTREE), cap, replicate=r), spec)
            for r in reps]


def spine_skeleton(model, lam, t, seed=0, h=outype.DEFAULT_H):
    kind = model_kind(model)
    rng = stream(seed, 0, TAG_SKELETON)
    if kind == "bbm":
        return bbm.simulate_spine_bbm(model, lam, t, rng)
    if kind == "typed":
        return multitype.simulate_spine_typed(model, lam, t, rng)
    if t == 0:
        return outype.empty_record(0.0, model.x0, float(model.y0))
    return outype.simulate_spine_ou(model, lam, t, h, seed, [0]).records[0]


def spine_decomp_check(model, lam, t, n_subtree_reps, seed=0, cap=None, h=outype.DEFAULT_H,
                       workers=None, record=None) -> DecompResult:
    """Hold one spine skeleton fixed, re-simulate the rest, compare with the decomposition."""
    _check_reps(n_subtree_reps)
    spec = spectral(model, lam)
    record = record if record is not None else spine_skeleton(model, lam, t, seed, h)
    rows = map_replicates(_decomp_block, range(int(n_subtree_reps)), workers, model=model, lam=lam,
                          record=record, seed=seed, cap=_cap(model, cap), h=h)
    est = Estimate.from_values(rows[:, 0])
    expected = spine_decomposition(model, record, spec)
    z = est.z(expected)
    if est.se == 0 and math.isclose(est.mean, expected, rel_tol=1e-12):
        z = 0.0
    return DecompResult(float(z), est, float(expected), record)


def _pmf(d, k: int) -> float:
    if isinstance(d, FiniteOffspring):
        return d.probs[k] if k < len(d.probs) else 0.0
    return float(d.pmf(k))


def gw_extinction_probability(offspring_dists, tol: float = 1e-14, max_iter: int = 100_000) -> float:
    """Smallest fixed point of ``s ↦ Σ_k P(A = k) s^{1+k}`` (per-type, worst case).

    Every fission leaves ``1 + A ≥ 1`` children, so the iteration from ``s = 0``
    stays at 0; the oracle is kept so that this is checked, not assumed.
    """
    worst = 0.0
    for d in offspring_dists:
        ks = np.arange(0, 200)
        probs = np.array([_pmf(d, int(k)) for k in ks])
        s = 0.0
        for _ in range(max_iter):
            nxt = float(np.sum(probs * s ** (1 + ks)))
            if abs(nxt - s) < tol:
                s = nxt
                break
            s = nxt
        worst = max(worst, s)
    return worst


# -- output ------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def format_csv(columns: Sequence[str], rows, header: Optional[dict] = None) -> str:
    """CSV text with ``# key: value`` header lines and 17-significant-digit floats."""
    buf = io.StringIO()
    for k, v in (header or {}).items():
        for line in str(v).splitlines() or [""]:
            buf.write(f"# {k}: {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def curve_rows(curve: GrowthCurve):
    return [(float(t), e.mean, e.se, e.n, e.flag) for t, e in zip(curve.times, curve.values)]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def format_json(payload: dict, header: Optional[dict] = None) -> str:
    doc = {"header": header or {}, **payload}
    return json.dumps(_jsonable(doc), indent=2, ensure_ascii=False) + "\n"


def write_text(path, text: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
