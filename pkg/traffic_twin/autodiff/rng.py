from typing import Iterable

import numpy as np

from traffic_twin.utils import label_key

__all__ = ["RngStream"]


class RngStream:
    """
    Counter-keyed source of random numbers.

    Every draw is addressed by the stream's path of labels plus a lane name and
    a counter (typically the simulation step), so the same address always
    yields the same numbers regardless of how many other draws happened
    before it.

    Example: ::

        root = RngStream(42)
        noise = root.child("gumbel").child(iteration)
        generator = noise.generator("link_choice", step)
    """

    def __init__(self, seed: int, path: Iterable[int] = ()):
        if not isinstance(seed, (int, np.integer)) or seed < 0:
            raise ValueError(f"Seed must be a non-negative integer, got {seed!r}")

        self._seed = int(seed)
        self._path = tuple(path)

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def path(self) -> tuple[int, ...]:
        return self._path

    def child(self, label: str | int) -> "RngStream":
        return RngStream(self._seed, self._path + (label_key(label),))

    def generator(self, lane: str | int, *counter: int) -> np.random.Generator:
        key = self._path + (label_key(lane),) + tuple(int(c) for c in counter)
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self._seed, spawn_key=key)))

    def __eq__(self, other):
        if not isinstance(other, RngStream):
            return NotImplemented

        return (self._seed, self._path) == (other._seed, other._path)

    def __hash__(self):
        return hash((self._seed, self._path))

    def __repr__(self):
        return f"RngStream(seed={self._seed}, path={self._path})"
