"""Deterministic random substreams derived from one master seed."""

import numpy as np

# purpose tags keep the streams for bits, channels, noise, ... disjoint
PURPOSES = {
    "bits": 1,
    "channel": 2,
    "csir": 3,
    "noise": 4,
    "snr": 5,
    "init": 6,
    "shuffle": 7,
    "check": 8,
}


def substream(seed: int, purpose: str, *index: int) -> np.random.Generator:
    """Generator owned by ``(seed, purpose, *index)``.

    Streams for different keys are statistically independent, so blocks of
    Monte-Carlo trials can be evaluated in any order or in parallel. Index
    values must be non-negative integers.
    """
    tag = PURPOSES[purpose]
    key = [int(seed) & (2**64 - 1), tag] + [int(i) for i in (index or (0,))]
    return np.random.default_rng(np.random.SeedSequence(key))


def complex_normal(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with the given variance."""
    scale = np.sqrt(variance / 2.0)
    z = rng.standard_normal(tuple(np.atleast_1d(shape)) + (2,))
    return scale * (z[..., 0] + 1j * z[..., 1])
