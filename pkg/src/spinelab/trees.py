"""Ulam-Harris labels, population snapshots and spine skeletons.

A label is a plain tuple of positive integers; ``()`` is the initial
ancestor.  Child ``j`` of ``u`` is ``u + (j,)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

Label = Tuple[int, ...]
ROOT: Label = ()


def concat(u: Label, v: Label) -> Label:
    return tuple(u) + tuple(v)


def generation(u: Label) -> int:
    return len(u)


def is_ancestor(v: Label, u: Label) -> bool:
    """True iff ``v`` is a strict prefix of ``u``."""
    return len(v) < len(u) and tuple(u[: len(v)]) == tuple(v)


def spine_probability(offspring_counts: Sequence[int]) -> float:
    """Probability that uniform child choices follow a given line of descent.

    ``offspring_counts`` are the extra-offspring counts ``A_v`` of the strict
    ancestors along the line.
    """
    prob = 1.0
    for a in offspring_counts:
        prob /= 1 + int(a)
    return prob


def format_label(u: Label) -> str:
    return "-" if not u else ".".join(str(i) for i in u)


def parse_label(text: str) -> Label:
    text = text.strip()
    if text in ("-", ""):
        return ROOT
    path = tuple(int(s) for s in text.split("."))
    if any(i < 1 for i in path):
        raise ValueError(f"label entries must be >= 1: {text!r}")
    return path


def validate_label(u: Label) -> Label:
    if any(int(i) < 1 for i in u):
        raise ValueError(f"label entries must be >= 1: {u!r}")
    return tuple(int(i) for i in u)


@dataclass(frozen=True)
class ParticleState:
    label: Label
    position: float
    type_value: Optional[float]
    birth_time: float


@dataclass(frozen=True)
class Snapshot:
    """Alive population at ``horizon``, stored column-wise.

    ``types`` is ``None`` for the single-type model.  Rows are sorted by
    label so that sums over the population are reproducible.
    """

    horizon: float
    labels: Tuple[Label, ...]
    positions: np.ndarray
    birth_times: np.ndarray
    types: Optional[np.ndarray] = None

    @property
    def extinct(self) -> bool:
        return len(self.labels) == 0

    @property
    def size(self) -> int:
        return len(self.labels)

    def __len__(self):
        return len(self.labels)

    @property
    def particles(self):
        ys = self.types if self.types is not None else [None] * self.size
        return tuple(
            ParticleState(lab, float(x), None if y is None else y.item(), float(b))
            for lab, x, y, b in zip(self.labels, self.positions, ys, self.birth_times)
        )

    @classmethod
    def build(cls, horizon, labels, positions, birth_times, types=None):
        """Sort rows by label and freeze the arrays."""
        labels = list(labels)
        order = sorted(range(len(labels)), key=labels.__getitem__)
        idx = np.asarray(order, dtype=np.intp)
        pos = np.asarray(positions, dtype=float)[idx]
        births = np.asarray(birth_times, dtype=float)[idx]
        typ = None if types is None else np.asarray(types)[idx]
        for arr in (pos, births, typ):
            if arr is not None:
                arr.setflags(write=False)
        return cls(float(horizon), tuple(labels[i] for i in order), pos, births, typ)

    def check(self):
        """Assert the structural invariants (used by tests)."""
        assert len(set(self.labels)) == self.size, "duplicate labels"
        labs = sorted(self.labels)
        for a, b in zip(labs, labs[1:]):
            assert not is_ancestor(a, b), f"{a} is an ancestor of {b}"
        assert np.all(self.birth_times <= self.horizon + 1e-12)


def spine_weight_sum(snap: Snapshot) -> float:
    """Sum over alive particles of the uniform-choice probability of their line.

    Family sizes are read off the labels, so this equals 1 exactly when no
    particle ever dies childless (always the case with ``1 + A`` offspring).
    """
    children = {}
    for lab in snap.labels:
        for k in range(len(lab)):
            parent = lab[:k]
            children.setdefault(parent, set()).add(lab[k])
    total = 0.0
    for lab in snap.labels:
        total += spine_probability([len(children[lab[:k]]) - 1 for k in range(len(lab))])
    return total


@dataclass(frozen=True)
class SpineRecord:
    """Fission skeleton of the spine on ``[0, horizon]``.

    ``fission_positions``/``fission_types`` hold the spine state at each
    fission; ``choices`` holds the index of the child that continued the
    spine, so the spine label is ``tuple(choices)``.  ``occupation`` is the
    time spent in each type (finite-type model only).
    """

    horizon: float
    fission_times: np.ndarray
    fission_positions: np.ndarray
    extra_offspring: np.ndarray
    terminal_position: float
    fission_types: Optional[np.ndarray] = None
    terminal_type: Optional[float] = None
    choices: Tuple[int, ...] = ()
    occupation: Optional[np.ndarray] = None
    initial_position: float = 0.0
    initial_type: Optional[float] = None

    @property
    def n_fissions(self) -> int:
        return len(self.fission_times)

    @property
    def spine_label(self) -> Label:
        return tuple(self.choices)

    @property
    def states_at_fission(self):
        ys = self.fission_types if self.fission_types is not None else [None] * self.n_fissions
        return list(zip(self.fission_positions.tolist(), list(ys)))

    @property
    def terminal_state(self):
        return (self.terminal_position, self.terminal_type)

    def sibling_roots(self):
        """Non-spine children born on the spine: ``(label, time, position, type)``."""
        roots = []
        for k in range(self.n_fissions):
            prefix = tuple(self.choices[:k])
            chosen = self.choices[k]
            y = None if self.fission_types is None else self.fission_types[k]
            for j in range(1, int(self.extra_offspring[k]) + 2):
                if j != chosen:
                    roots.append((prefix + (j,), float(self.fission_times[k]),
                                  float(self.fission_positions[k]), y))
        return roots

    def check(self):
        n = self.n_fissions
        assert len(self.fission_positions) == n and len(self.extra_offspring) == n
        assert len(self.choices) == n
        times = np.asarray(self.fission_times)
        assert np.all(np.diff(times) > 0), "fission times not increasing"
        assert n == 0 or (times[0] > 0 and times[-1] <= self.horizon)
        for a, c in zip(self.extra_offspring, self.choices):
            assert 1 <= c <= a + 1


def empty_record(horizon, x0, y0=None, n_types=None, choices=()):
    occ = None if n_types is None else np.zeros(n_types)
    return SpineRecord(
        horizon=float(horizon),
        fission_times=np.zeros(0),
        fission_positions=np.zeros(0),
        extra_offspring=np.zeros(0, dtype=np.int64),
        terminal_position=float(x0),
        fission_types=None if y0 is None else np.zeros(0, dtype=type(y0)),
        terminal_type=y0,
        choices=tuple(choices),
        occupation=occ,
        initial_position=float(x0),
        initial_type=y0,
    )


__all__ = [
    "Label", "ROOT", "concat", "generation", "is_ancestor", "spine_probability",
    "format_label", "parse_label", "validate_label", "ParticleState", "Snapshot",
    "SpineRecord", "spine_weight_sum", "empty_record",
]
