"""Labeled, reproducible random streams.

Every stochastic routine in the library draws from an :class:`RngStream`.
A stream is identified by an integer seed and a label path such as
``"fedrr/worker/3"``; the same pair always produces the same numbers and
distinct labels give independent generators.
"""
import hashlib

import numpy as np


def _label_key(label):
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    # four 32-bit words are plenty to separate substreams
    return tuple(int.from_bytes(digest[4 * i:4 * i + 4], "little") for i in range(4))


class RngStream:
    """A numpy ``Generator`` bound to ``(seed, label)``.

    Parameters
    ----------
    seed : int
        Non-negative 64-bit seed.
    label : str
        Path naming the consumer. Use :meth:`child` to derive substreams.
    """

    def __init__(self, seed, label=""):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.label = str(label)
        ss = np.random.SeedSequence(entropy=seed, spawn_key=_label_key(self.label))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, name):
        """Independent substream labeled ``<label>/<name>``."""
        return RngStream(self.seed, f"{self.label}/{name}" if self.label else str(name))

    def permutation(self, n):
        """Uniform random permutation of ``range(n)`` (Fisher-Yates)."""
        perm = np.arange(n)
        self.gen.shuffle(perm)
        return perm

    def integers(self, high, size=None):
        return self.gen.integers(0, high, size=size)

    def uniform(self, size=None):
        return self.gen.random(size)

    def normal(self, size=None, scale=1.0):
        return self.gen.normal(0.0, scale, size=size)

    def choice(self, n, p=None, size=None):
        return self.gen.choice(n, size=size, p=p)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, label={self.label!r})"


def as_stream(rng, label="default"):
    """Coerce ``None``/int/RngStream into an :class:`RngStream`."""
    if isinstance(rng, RngStream):
        return rng
    if rng is None:
        return RngStream(0, label)
    return RngStream(int(rng), label)
