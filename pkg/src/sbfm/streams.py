"""Named random substreams derived from one run seed.

Every source of randomness (data, init, time draws, bridge noise, SDE
increments, ...) gets its own generator so that components can be varied
independently without shifting each other's draws.
"""

from __future__ import annotations

import hashlib

import numpy as np

RandomStream = np.random.Generator

STREAM_NAMES = (
    "data",
    "init",
    "time-draws",
    "bridge-noise",
    "sde",
    "shuffle",
    "validation",
    "eval",
    "verify",
)


def _name_key(name: str) -> int:
    # stable across processes, unlike hash()
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:4], "little")


def substream(seed: int, name: str, *index: int) -> RandomStream:
    """Return the generator for ``(seed, name, *index)``.

    The same arguments always give a generator producing the same draws.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    entropy = [int(seed), _name_key(name), *(int(i) for i in index)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


class StreamFactory:
    """Hands out named substreams for one seed.

    Usage::

        streams = StreamFactory(seed=7)
        rng = streams.stream("time-draws")
        pair_rng = streams.stream("data", 12)
    """

    def __init__(self, seed: int) -> None:
        self.seed = int(seed)

    def stream(self, name: str, *index: int) -> RandomStream:
        """Generator for *name*, optionally indexed (e.g. per pair or epoch).

        Raises:
            KeyError: If *name* is not one of ``STREAM_NAMES``.
        """
        if name not in STREAM_NAMES:
            raise KeyError(name)
        return substream(self.seed, name, *index)
