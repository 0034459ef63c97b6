"""Seeded random streams.

Every stochastic routine takes a :class:`numpy.random.Generator` backed by the
counter-based Philox bit generator. Independent streams for separate stages of
a run are derived from one 64-bit seed plus a small integer path, so the draw
order of one stage never perturbs another.
"""

import numpy as np

# fixed stream ids used by the experiment driver
NOISE = 1
SPLIT = 2
PRETRAIN = 3
JOINT = 4
SYNTH = 5


def make_rng(seed, *stream):
    """Return a Philox generator for ``seed`` and an optional stream path."""
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    seq = np.random.SeedSequence(seed, spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(seq))
