"""Seeded pseudo-random streams.

Every source of randomness in this package (weight init, noise draws,
minibatch shuffling, data generation) flows through an `RngStream`. The
underlying generator is numpy's PCG64, a named 64-bit algorithm with
documented, platform-independent streams: the same seed always yields the
same sequence of draws.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "PCG64"


class RngStream:
    """A seedable, deterministic random stream backed by PCG64."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @classmethod
    def from_key(cls, *key: int) -> "RngStream":
        """Derive an independent stream from a tuple of integers.

        Used to give sub-tasks (e.g. curriculum phases) their own streams
        in a documented, reproducible way.
        """
        stream = cls.__new__(cls)
        stream.seed = tuple(int(k) for k in key)  # type: ignore[assignment]
        stream._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))
        return stream

    def standard_normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float, high: float, shape=()) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def state_key(self) -> str:
        """Snapshot of the generator position, comparable across calls.

        Two equal keys mean the stream has not been consumed in between.
        """
        state = self._gen.bit_generator.state
        return repr(state["state"])
