"""Seeded random streams.

Every stochastic stage draws from its own stream keyed by (seed, domain tag,
...) so that, e.g., resampling and epoch shuffling never interact.
"""

from __future__ import annotations

import numpy as np

# domain tags (arbitrary distinct constants)
INIT = 1
SHUFFLE = 2
SPLIT = 3
ROS = 4
RUS = 5
SYNTH = 6
HMM_INIT = 7


def seeded_rng(*key):
    """Deterministic Generator from an integer key tuple."""
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))
