"""Deterministic RNG streams.

All randomness in the package flows through numpy's PCG64 seeded via
SeedSequence, so a run reproduces bit-for-bit across machines for a fixed
numpy version. Subsystems draw from independent child streams keyed by a
small integer tag; this keeps e.g. curricula identical across runs that
differ only in the connection-drop probability.
"""

from __future__ import annotations

import numpy as np

# Stream tags. Changing these renumbers every derived stream.
BACKBONE = 0
CURRICULUM = 1
SCORE_INIT = 2
ACTION_SAMPLING = 3
CONNECTION_DROP = 4
OBSERVATION = 5
MINIBATCH = 6


def stream(seed: int, *tags: int) -> np.random.Generator:
    """A generator for (seed, tags); same arguments always give the same stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, *tags))))
