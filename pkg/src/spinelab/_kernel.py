"""Exact event-driven simulation shared by the single- and finite-type models.

Particles carry independent exponential clocks (fission at rate ``r(y)``,
type change at rate ``-θQ(y,y)``); between events the spatial motion is a
Gaussian increment, so no time discretisation is involved.  The population
is advanced one "event round" at a time with numpy: every particle still
pending draws its next event, and either reaches the horizon, changes type,
or fissions into ``1 + A`` children.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import PopulationExplosion
from .trees import SpineRecord


@dataclass(frozen=True)
class Dynamics:
    """Per-type rates of a (possibly single-type) branching diffusion.

    ``drift`` is only used for the spine, whose motion is a Brownian motion
    with variance ``diffusion[y]`` and drift ``drift[y]`` per unit time.
    """

    fission_rate: np.ndarray
    diffusion: np.ndarray
    jump_rate: np.ndarray
    jump_cdf: Optional[np.ndarray]
    offspring: Sequence
    drift: Optional[np.ndarray] = None

    @classmethod
    def build(cls, fission_rate, diffusion, offspring, generator=None, drift=None):
        rate = np.asarray(fission_rate, dtype=float)
        n = rate.size
        if generator is None:
            jump_rate = np.zeros(n)
            cdf = None
        else:
            g = np.asarray(generator, dtype=float)
            jump_rate = -np.diag(g).copy()
            off = g.copy()
            np.fill_diagonal(off, 0.0)
            with np.errstate(invalid="ignore", divide="ignore"):
                probs = np.where(jump_rate[:, None] > 0, off / jump_rate[:, None], 0.0)
            cdf = np.cumsum(probs, axis=1)
        return cls(rate, np.asarray(diffusion, dtype=float), jump_rate, cdf, tuple(offspring),
                   None if drift is None else np.asarray(drift, dtype=float))

    @property
    def has_jumps(self) -> bool:
        return self.jump_cdf is not None and bool(np.any(self.jump_rate > 0))

    def inverse(self, rates):
        with np.errstate(divide="ignore"):
            return np.where(rates > 0, 1.0 / np.where(rates > 0, rates, 1.0), np.inf)

    def next_type(self, y, u):
        rows = self.jump_cdf[y]
        dest = np.sum(u[:, None] >= rows, axis=1)
        return np.minimum(dest, rows.shape[1] - 1)


def _sample_offspring(rng, dyn: Dynamics, types: np.ndarray) -> np.ndarray:
    out = np.zeros(types.size, dtype=np.int64)
    if len(dyn.offspring) == 1:
        out[:] = dyn.offspring[0].sample(rng, types.size)
        return out
    for t in np.unique(types):
        mask = types == t
        out[mask] = dyn.offspring[int(t)].sample(rng, int(mask.sum()))
    return out


@dataclass
class Population:
    positions: np.ndarray
    types: np.ndarray
    birth_times: np.ndarray
    labels: Optional[List[tuple]]


def _event(rng, cur, x, y, horizon, dyn: Dynamics, inv_fission, inv_jump, jumps):
    """Advance every pending particle to its next event (or the horizon).

    Returns the moved positions, event times, the finished mask, the indices
    changing type with their new types, and the fissioning indices with their
    child counts.
    """
    n = cur.size
    fis = rng.standard_exponential(n) * inv_fission[y]
    if jumps:
        jmp = rng.standard_exponential(n) * inv_jump[y]
        dt = np.minimum(fis, jmp)
    else:
        dt = fis
    end = cur + dt
    z = rng.standard_normal(n)
    done = end > horizon
    step = np.where(done, horizon - cur, dt)
    x = x + np.sqrt(dyn.diffusion[y] * step) * z
    mi = np.zeros(0, dtype=np.intp)
    y_new = y[mi]
    if jumps:
        moving = ~done & (jmp < fis)
        splitting = ~done & ~moving
        mi = np.flatnonzero(moving)
        if mi.size:
            y_new = dyn.next_type(y[mi], rng.random(mi.size))
    else:
        splitting = ~done
    fi = np.flatnonzero(splitting)
    counts = 1 + _sample_offspring(rng, dyn, y[fi]) if fi.size else np.zeros(0, dtype=np.int64)
    return x, end, done, mi, y_new, fi, counts


def grow(rng, horizon, starts, positions, types, labels, dyn: Dynamics, cap,
         track_labels=True, replicate=None) -> Population:
    """Run independent P-branching diffusions from the given roots to ``horizon``.

    Roots may start at different times (e.g. non-spine children born on the
    spine).  Raises :class:`PopulationExplosion` if the number of particles
    alive at the horizon plus those still pending ever exceeds ``cap``.
    """
    cur = np.asarray(starts, dtype=float).copy()
    x = np.asarray(positions, dtype=float).copy()
    y = np.asarray(types, dtype=np.intp).copy()
    birth = cur.copy()
    labs = list(labels) if track_labels else None
    inv_fission = dyn.inverse(dyn.fission_rate)
    inv_jump = dyn.inverse(dyn.jump_rate)
    jumps = dyn.has_jumps
    out_x, out_y, out_b, out_l = [], [], [], []
    n_done = 0
    while cur.size:
        if n_done + cur.size > cap:
            raise PopulationExplosion(n_done + cur.size, cap, replicate)
        x, end, done, mi, y_new, fi, counts = _event(rng, cur, x, y, horizon, dyn, inv_fission,
                                                     inv_jump, jumps)
        if done.any():
            out_x.append(x[done])
            out_y.append(y[done])
            out_b.append(birth[done])
            if track_labels:
                out_l.extend(labs[i] for i in np.flatnonzero(done))
            n_done += int(done.sum())
        new_t = np.repeat(end[fi], counts)
        if track_labels:
            next_labs = [labs[i] for i in mi]
            next_labs.extend(labs[i] + (j,) for i, c in zip(fi, counts) for j in range(1, c + 1))
            labs = next_labs
        cur = np.concatenate([end[mi], new_t])
        birth = np.concatenate([birth[mi], new_t])
        x = np.concatenate([x[mi], np.repeat(x[fi], counts)])
        y = np.concatenate([y_new, np.repeat(y[fi], counts)])
    if out_x:
        return Population(np.concatenate(out_x), np.concatenate(out_y), np.concatenate(out_b),
                          out_l if track_labels else None)
    return Population(np.zeros(0), np.zeros(0, dtype=np.intp), np.zeros(0), [] if track_labels else None)


def leftmost(rng, horizon, x0, y0, dyn: Dynamics, cap, chunk=1 << 16, replicate=None) -> float:
    """Left-most position at ``horizon`` of a P-branching diffusion from one root.

    Same event dynamics as :func:`grow`, but pending particles are kept on a
    stack and advanced ``chunk`` at a time from the top, so memory stays of
    order ``chunk`` times the lineage depth however large the population.
    ``cap`` bounds the number of particles alive at the horizon.
    Returns ``inf`` if the population dies out.
    """
    cur = np.array([0.0])
    x = np.array([float(x0)])
    y = np.array([int(y0)], dtype=np.intp)
    inv_fission = dyn.inverse(dyn.fission_rate)
    inv_jump = dyn.inverse(dyn.jump_rate)
    jumps = dyn.has_jumps
    best, n_done = np.inf, 0
    while cur.size:
        k = max(cur.size - chunk, 0)
        c, xs, ys = cur[k:], x[k:], y[k:]
        cur, x, y = cur[:k], x[:k], y[:k]
        xs, end, done, mi, y_new, fi, counts = _event(rng, c, xs, ys, horizon, dyn, inv_fission,
                                                      inv_jump, jumps)
        if done.any():
            best = min(best, float(xs[done].min()))
            n_done += int(done.sum())
            if n_done > cap:
                raise PopulationExplosion(n_done, cap, replicate)
        cur = np.concatenate([cur, end[mi], np.repeat(end[fi], counts)])
        x = np.concatenate([x, xs[mi], np.repeat(xs[fi], counts)])
        y = np.concatenate([y, y_new, np.repeat(ys[fi], counts)])
    return best


def spine(rng, horizon, x0, y0, dyn_q: Dynamics, offspring_biased, n_types=None) -> SpineRecord:
    """Simulate the spine alone under the size-biased measure.

    ``dyn_q`` holds the spine's fission rates ``(1 + m) r``, its type
    generator and per-type drift; ``offspring_biased`` the size-biased laws.
    """
    cur, x, y = 0.0, float(x0), int(y0)
    inv_fission = dyn_q.inverse(dyn_q.fission_rate)
    inv_jump = dyn_q.inverse(dyn_q.jump_rate)
    jumps = dyn_q.has_jumps
    occ = np.zeros(n_types if n_types else 1)
    times, xs, ys, extra, choices = [], [], [], [], []
    while True:
        fis = rng.standard_exponential() * inv_fission[y]
        jmp = rng.standard_exponential() * inv_jump[y] if jumps else np.inf
        dt = min(fis, jmp)
        step = min(dt, horizon - cur)
        x += dyn_q.drift[y] * step + np.sqrt(dyn_q.diffusion[y] * step) * rng.standard_normal()
        occ[y] += step
        if cur + dt > horizon:
            break
        cur += dt
        if jmp < fis:
            y = int(dyn_q.next_type(np.array([y]), np.array([rng.random()]))[0])
            continue
        a = int(offspring_biased[y].sample(rng))
        times.append(cur)
        xs.append(x)
        ys.append(y)
        extra.append(a)
        choices.append(int(rng.integers(1, a + 2)))
    return SpineRecord(
        horizon=float(horizon),
        fission_times=np.asarray(times, dtype=float),
        fission_positions=np.asarray(xs, dtype=float),
        extra_offspring=np.asarray(extra, dtype=np.int64),
        terminal_position=float(x),
        fission_types=np.asarray(ys, dtype=np.intp) if n_types else None,
        terminal_type=y if n_types else None,
        choices=tuple(choices),
        occupation=occ if n_types else None,
        initial_position=float(x0),
        initial_type=int(y0) if n_types else None,
    )


def subtrees(rng, record: SpineRecord, dyn: Dynamics, cap, track_labels=True, replicate=None):
    """Grow independent P-subtrees from the non-spine children on the spine."""
    roots = record.sibling_roots()
    labels = [r[0] for r in roots]
    starts = [r[1] for r in roots]
    xs = [r[2] for r in roots]
    ys = [0 if r[3] is None else r[3] for r in roots]
    return grow(rng, record.horizon, starts, xs, ys, labels, dyn, cap, track_labels, replicate)
