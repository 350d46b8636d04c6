"""Deterministic random-stream derivation.

All Monte Carlo code derives its generators from a master seed through
named SeedSequence spawn keys.  A stream therefore depends only on the
(seed, logical role) pair and never on scheduling order or worker count,
which is what makes experiment outputs bit-reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_words(part) -> tuple[int, ...]:
    digest = hashlib.sha256(repr(part).encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))


def substream(master_seed: int, *parts) -> np.random.Generator:
    """Generator for a named child stream of ``master_seed``.

    ``parts`` (ints or strings) identify the logical role, e.g.
    ``substream(seed, "roc", rep, "h0")``.
    """
    key: tuple[int, ...] = ()
    for part in parts:
        key = key + _key_words(part)
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))


def complex_normal(rng: np.random.Generator, shape=()) -> np.ndarray:
    """Standard circular complex Gaussian draws, unit variance per entry."""
    z = rng.standard_normal(size=tuple(np.atleast_1d(shape)) + (2,))
    return (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)
