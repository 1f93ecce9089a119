"""Family-size laws for the extra offspring count ``A``.

A particle that fissions is replaced by ``1 + A`` children.  Two families are
supported: an explicit finite probability vector, and the heavy-tailed
``p_k ∝ k^-2 (log k)^-gamma`` law (``k >= kmin``) whose ``A log A`` moment is
infinite for ``gamma <= 2`` while the mean stays finite.

Divergent moments are returned as ``math.inf`` rather than raised.
"""
from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import integrate, interpolate

_N_DIRECT = 1_000_000      # terms summed explicitly before the analytic remainder
_TABLE_MAX = 1 << 20       # explicit sampling table for the tail family
_TRUNC_MASS = 1e-12        # tail mass folded into the truncation point
_SAMPLE_MAX = float(1 << 53)


def _tail_integral(s: float, beta: float, n: float) -> float:
    """``∫_n^∞ x^s (log x)^-beta dx`` for a convergent exponent pair."""
    lo = math.log(n)
    if s == -1.0:
        return lo ** (1.0 - beta) / (beta - 1.0)
    c = -(s + 1.0)
    # substitute x = e^u; integrand e^{-c u} u^{-beta} decays exponentially
    val, _ = integrate.quad(lambda u: math.exp(-c * (u - lo)) * u ** (-beta), lo, np.inf,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return val * math.exp(-c * lo)


def _converges(s: float, beta: float) -> bool:
    return s < -1.0 or (s == -1.0 and beta > 1.0)


def _term(s, beta, x):
    return x ** s * np.log(x) ** (-beta)


def _term_deriv(s, beta, x):
    lx = math.log(x)
    return x ** (s - 1.0) * lx ** (-beta) * (s - beta / lx)


@functools.lru_cache(maxsize=256)
def log_power_sum(s: float, beta: float, kmin: int, n_direct: int = _N_DIRECT) -> float:
    """``Σ_{k>=kmin} k^s (log k)^-beta``; ``inf`` when the series diverges.

    The first ``n_direct`` terms are summed exactly; the remainder uses the
    Euler-Maclaurin formula truncated after the first-derivative term, whose
    error is below ``1e-20`` for the exponents used here.
    """
    if kmin < 2:
        raise ValueError("kmin must be >= 2")
    if not _converges(s, beta):
        return math.inf
    k = np.arange(kmin, n_direct + 1, dtype=float)
    head = float(np.sum(_term(s, beta, k)))
    n = float(n_direct)
    tail = _tail_integral(s, beta, n) - 0.5 * float(_term(s, beta, n)) - _term_deriv(s, beta, n) / 12.0
    return head + tail


def _tail_sum_from(s, beta, k):
    """``Σ_{j>=k} j^s (log j)^-beta`` for large ``k`` (Euler-Maclaurin)."""
    return _tail_integral(s, beta, k) + 0.5 * float(_term(s, beta, k)) - _term_deriv(s, beta, k) / 12.0


class OffspringDist:
    """Common interface; see :class:`FiniteOffspring` and :class:`LogTailOffspring`."""

    def mean(self) -> float:
        raise NotImplementedError

    def p_moment(self, p: float) -> float:
        raise NotImplementedError

    def xlogx(self) -> float:
        raise NotImplementedError

    def size_bias(self) -> "OffspringDist":
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    @property
    def p0(self) -> float:
        raise NotImplementedError

    @property
    def is_degenerate_zero(self) -> bool:
        """True when ``A ≡ 0`` (fission replaces a particle by a single child)."""
        return self.p0 == 1.0


@dataclass(frozen=True)
class FiniteOffspring(OffspringDist):
    probs: Tuple[float, ...]

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if not probs:
            raise ValueError("offspring probabilities must be nonempty")
        if any(p < 0 for p in probs):
            raise ValueError("offspring probabilities must be nonnegative")
        if abs(math.fsum(probs) - 1.0) > 1e-12:
            raise ValueError(f"offspring probabilities sum to {math.fsum(probs)!r}, not 1")

    @property
    def p0(self) -> float:
        return self.probs[0]

    @property
    def support_max(self) -> int:
        return len(self.probs) - 1

    def mean(self) -> float:
        return math.fsum(i * p for i, p in enumerate(self.probs))

    def p_moment(self, p: float) -> float:
        if p <= 0:
            raise ValueError("p must be positive")
        return math.fsum(i ** p * q for i, q in enumerate(self.probs) if i > 0)

    def xlogx(self) -> float:
        return math.fsum(i * math.log(i) * q for i, q in enumerate(self.probs) if i > 1)

    def size_bias(self) -> "FiniteOffspring":
        m = self.mean()
        return FiniteOffspring(tuple((i + 1) * p / (m + 1) for i, p in enumerate(self.probs)))

    @functools.cached_property
    def _cdf(self):
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        return cdf

    def sample(self, rng, size=None):
        if len(self.probs) == 1:
            return 0 if size is None else np.zeros(size, dtype=np.int64)
        u = rng.random(size)
        out = np.searchsorted(self._cdf, u, side="right")
        out = np.minimum(out, len(self.probs) - 1)
        return int(out) if size is None else out.astype(np.int64)

    def __str__(self):
        return "finite(" + ", ".join(repr(p) for p in self.probs) + ")"


@dataclass(frozen=True)
class LogTailOffspring(OffspringDist):
    """``P(A=k) = (1-p0) k^-2 (log k)^-gamma / C`` for ``k >= kmin``, ``P(A=0) = p0``.

    With ``size_biased=True`` the law is the size-biased transform
    ``(k+1) P(A=k) / (m+1)`` of the above.
    """

    gamma: float
    kmin: int = 2
    p0_mass: float = 0.0
    size_biased: bool = False

    def __post_init__(self):
        if not self.gamma > 1:
            raise ValueError("logtail requires gamma > 1 (finite mean)")
        if int(self.kmin) != self.kmin or self.kmin < 2:
            raise ValueError("logtail requires integer kmin >= 2")
        if not 0 <= self.p0_mass < 1:
            raise ValueError("logtail p0 must lie in [0, 1)")

    # -- normalisation -------------------------------------------------
    @property
    def norm(self) -> float:
        return log_power_sum(-2.0, float(self.gamma), int(self.kmin))

    def _base(self):
        return LogTailOffspring(self.gamma, self.kmin, self.p0_mass)

    @property
    def _bias_den(self) -> float:
        return self._base().mean() + 1.0

    @property
    def p0(self) -> float:
        if self.size_biased:
            return self.p0_mass / self._bias_den
        return self.p0_mass

    def _series(self, shift: float, beta: float) -> float:
        """``E[A^shift (log A)^(gamma-beta)]`` over ``A >= kmin``."""
        scale = (1.0 - self.p0_mass) / self.norm
        if not self.size_biased:
            return scale * log_power_sum(shift - 2.0, beta, int(self.kmin))
        # (k+1) k^-2 = k^-1 + k^-2
        a = log_power_sum(shift - 1.0, beta, int(self.kmin))
        b = log_power_sum(shift - 2.0, beta, int(self.kmin))
        return scale * (a + b) / self._bias_den

    def pmf(self, k):
        k = np.asarray(k, dtype=float)
        out = np.zeros_like(k)
        mask = k >= self.kmin
        base = (1.0 - self.p0_mass) / self.norm * _term(-2.0, float(self.gamma), k[mask])
        if self.size_biased:
            base = base * (k[mask] + 1.0) / self._bias_den
        out[mask] = base
        out[k == 0] = self.p0
        return out

    def mean(self) -> float:
        return self._series(1.0, float(self.gamma))

    def p_moment(self, p: float) -> float:
        if p <= 0:
            raise ValueError("p must be positive")
        return self._series(float(p), float(self.gamma))

    def xlogx(self) -> float:
        # k log k * k^-2 (log k)^-gamma = k^-1 (log k)^{1-gamma}
        return self._series(1.0, float(self.gamma) - 1.0)

    def size_bias(self) -> "LogTailOffspring":
        if self.size_biased:
            raise ValueError("repeated size-biasing of the logtail family is not supported")
        return LogTailOffspring(self.gamma, self.kmin, self.p0_mass, size_biased=True)

    # -- sampling --------------------------------------------------------
    def _survival_from(self, k: float) -> float:
        """``P(A >= k)`` for ``k`` beyond the explicit table."""
        g = float(self.gamma)
        scale = (1.0 - self.p0_mass) / self.norm
        if self.size_biased:
            return scale * (_tail_sum_from(-1.0, g, k) + _tail_sum_from(-2.0, g, k)) / self._bias_den
        return scale * _tail_sum_from(-2.0, g, k)

    @functools.cached_property
    def _sampler(self):
        ks = np.arange(self.kmin, _TABLE_MAX + 1)
        probs = self.pmf(ks)
        cdf = self.p0 + np.cumsum(probs)
        # truncation point: smallest K (to a factor 1.01) with tail mass < 1e-12
        lo = float(_TABLE_MAX)
        if self._survival_from(lo + 1) < _TRUNC_MASS:
            k_trunc = lo
        else:
            hi = lo
            while hi < _SAMPLE_MAX and self._survival_from(hi) >= _TRUNC_MASS:
                hi = min(hi * 4.0, _SAMPLE_MAX)
            k_trunc = hi
            if hi < _SAMPLE_MAX:
                a, b = math.log(lo), math.log(hi)
                while b - a > 0.01:
                    mid = 0.5 * (a + b)
                    if self._survival_from(math.exp(mid)) < _TRUNC_MASS:
                        b = mid
                    else:
                        a = mid
                k_trunc = math.ceil(math.exp(b))
        # survival curve beyond the table, inverted by interpolation in log-log space
        grid = np.exp(np.linspace(math.log(_TABLE_MAX + 1), math.log(max(k_trunc, _TABLE_MAX + 2)), 400))
        surv = np.array([self._survival_from(x) for x in grid])
        inv = interpolate.PchipInterpolator(np.log(surv)[::-1], np.log(grid)[::-1])
        return cdf, float(k_trunc), inv, float(surv[0]), float(surv[-1])

    def sample(self, rng, size=None):
        cdf, k_trunc, inv, s_first, s_last = self._sampler
        u = rng.random(size)
        u_arr = np.atleast_1d(u)
        out = np.zeros(u_arr.shape, dtype=np.int64)
        in_table = u_arr < cdf[-1]
        zero = u_arr < self.p0
        idx = np.searchsorted(cdf, u_arr[in_table & ~zero], side="right")
        out[in_table & ~zero] = self.kmin + idx
        tail = ~in_table
        if np.any(tail):
            surv = np.clip(1.0 - u_arr[tail], s_last, s_first)
            k = np.exp(inv(np.log(surv)))
            k = np.where(1.0 - u_arr[tail] <= s_last, k_trunc, k)
            out[tail] = np.minimum(np.floor(k), k_trunc).astype(np.int64)
        return int(out[0]) if size is None else out

    def __str__(self):
        extra = "" if self.p0_mass == 0 else f", p0={self.p0_mass!r}"
        base = f"logtail(gamma={self.gamma!r}, kmin={self.kmin}{extra})"
        return f"sizebias({base})" if self.size_biased else base


# -- functional interface ---------------------------------------------------

def finite(*probs: float) -> FiniteOffspring:
    return FiniteOffspring(tuple(probs))


def log_power_tail(gamma: float, kmin: int = 2, p0: float = 0.0) -> LogTailOffspring:
    return LogTailOffspring(float(gamma), int(kmin), float(p0))


def mean(d: OffspringDist) -> float:
    return d.mean()


def p_moment(d: OffspringDist, p: float) -> float:
    return d.p_moment(p)


def xlogx(d: OffspringDist) -> float:
    return d.xlogx()


def size_bias(d: OffspringDist) -> OffspringDist:
    return d.size_bias()


def size_biased_q_moment(d: OffspringDist, q: float) -> float:
    """``E[Ã^q]`` for the size-biased law, via ``(E[A^{q+1}] + E[A^q]) / (m + 1)``."""
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    return (d.p_moment(q + 1.0) + d.p_moment(q)) / (d.mean() + 1.0)


def sample(d: OffspringDist, rng, size=None):
    return d.sample(rng, size)


_FINITE_RE = re.compile(r"^\s*finite\s*\((.*)\)\s*$")
_LOGTAIL_RE = re.compile(r"^\s*logtail\s*\((.*)\)\s*$")


def parse(text: str) -> OffspringDist:
    """Parse ``finite(0.5, 0.5)`` or ``logtail(gamma=1.5, kmin=2)``."""
    m = _FINITE_RE.match(text)
    if m:
        return finite(*(float(s) for s in m.group(1).split(",") if s.strip()))
    m = _LOGTAIL_RE.match(text)
    if m:
        kwargs = {}
        for part in m.group(1).split(","):
            if not part.strip():
                continue
            key, _, val = part.partition("=")
            kwargs[key.strip()] = float(val)
        unknown = set(kwargs) - {"gamma", "kmin", "p0"}
        if unknown or "gamma" not in kwargs:
            raise ValueError(f"bad logtail arguments: {text!r}")
        return log_power_tail(kwargs["gamma"], int(kwargs.get("kmin", 2)), kwargs.get("p0", 0.0))
    raise ValueError(f"unrecognised offspring law: {text!r}")
