"""Seeded random streams.

Every stochastic operation draws from its own PCG64 stream keyed by
(seed, operation tag), so one user-facing seed can drive several
operations without their draws interfering. The generator algorithm is
numpy's PCG64 (the ``default_rng`` bit generator); this is part of the
reproducibility contract and is documented in the README.
"""

import numpy as np

_MASK64 = (1 << 64) - 1

# operation tags
SYNTHETIC = 1
IMBALANCE = 2
PLAN = 3
SPLIT = 4
INIT = 5
SHUFFLE = 6


def op_rng(seed, tag):
    """Return a PCG64 generator on the stream for (seed, tag)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & _MASK64, int(tag)]))


def derive_seed(base, *tags):
    """Fold extra integers into a base seed, giving a new 64-bit seed."""
    ss = np.random.SeedSequence([int(base) & _MASK64, *[int(t) & _MASK64 for t in tags]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
