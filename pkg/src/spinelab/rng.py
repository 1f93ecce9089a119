"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, replicate)``.  The
counter's upper words select a sub-stream (a tag, optionally combined with a
hash of an Ulam-Harris label), so draws never depend on how replicates are
scheduled across workers or batched together.

Label hashes are chained, ``w(u + (j,)) = H(w(u), j)``, so a simulator can
derive a child's stream from its parent's words without rehashing the path.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1
ROOT_WORDS = (0, 0)


def child_words(words, j: int):
    raw = int(words[0]).to_bytes(8, "little") + int(words[1]).to_bytes(8, "little") + int(j).to_bytes(8, "little")
    digest = hashlib.blake2b(raw, digest_size=16).digest()
    return int.from_bytes(digest[:8], "little"), int.from_bytes(digest[8:], "little")


def label_words(label):
    words = ROOT_WORDS
    for j in label:
        words = child_words(words, j)
    return words


def _state(seed, replicate, tag, depth, words):
    counter = np.array([0, (tag + 1 + (depth << 32)) & _MASK64, words[0], words[1]], dtype=np.uint64)
    key = np.array([int(seed) & _MASK64, int(replicate) & _MASK64], dtype=np.uint64)
    return {"bit_generator": "Philox", "state": {"counter": counter, "key": key},
            "buffer": np.zeros(4, dtype=np.uint64), "buffer_pos": 4, "has_uint32": 0, "uinteger": 0}


def stream(seed: int, replicate: int = 0, tag: int = 0, label=()) -> np.random.Generator:
    """Independent generator for ``(seed, replicate, tag, label)``."""
    bitgen = np.random.Philox(0)
    bitgen.state = _state(seed, replicate, tag, len(label), label_words(label))
    return np.random.Generator(bitgen)


class StreamCursor:
    """One reusable generator repositioned onto many streams.

    ``at`` returns the shared generator, valid only until the next call;
    draws are identical to those of :func:`stream`.
    """

    def __init__(self):
        self._bitgen = np.random.Philox(0)
        self._gen = np.random.Generator(self._bitgen)

    def at(self, seed, replicate, tag, depth, words) -> np.random.Generator:
        self._bitgen.state = _state(seed, replicate, tag, depth, words)
        return self._gen


def as_generator(seed) -> np.random.Generator:
    """Accept an int seed or an existing generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return stream(int(seed))
