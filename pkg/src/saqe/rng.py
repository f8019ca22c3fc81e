"""Counter-based random streams.

Every stochastic task (bootstrap replicate b, simulation repetition r,
Monte-Carlo block) owns a stream addressed by (seed, path).  Streams with
distinct paths are statistically independent and reproduce the same draws
regardless of creation order or worker count, which is what makes parallel
runs byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """Address of a reproducible random stream.

    Parameters
    ----------
    seed : int
        64-bit root seed shared by the whole run.
    path : tuple of int
        Position in the task tree, e.g. ``(r,)`` for repetition r and
        ``(r, 3, b)`` for bootstrap replicate b inside repetition r.
    """

    seed: int
    path: tuple[int, ...] = ()

    def child(self, *ids: int) -> "RngStream":
        """Stream for a subtask; independent of siblings and of visit order."""
        return RngStream(self.seed, self.path + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))
