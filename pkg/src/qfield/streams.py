"""Reproducible random streams.

Every stochastic routine in the package draws from a counter-based Philox
generator on a substream derived from ``(master_seed, *path)``.  Substreams
are independent of evaluation order, so replicate loops can run sequentially
or in parallel and produce identical output.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream"]

# Purpose tags keep substreams for different subsystems disjoint even when
# the remaining path components collide.
TAG_CHOLESKY = 1
TAG_SPECTRAL = 2
TAG_MOVING_AVERAGE = 3
TAG_ISOTROPY = 4
TAG_LND = 5
TAG_ANDERSON = 6

_U64 = (1 << 64) - 1


def stream(master_seed: int, *path: int) -> np.random.Generator:
    """Return a Philox generator for the substream at ``path``.

    Parameters
    ----------
    master_seed : int
        The run-level seed (64-bit).
    *path : int
        Non-negative integers identifying the substream, e.g.
        ``(TAG_CHOLESKY, resolution, replicate)``.
    """
    ss = np.random.SeedSequence(
        entropy=int(master_seed) & _U64,
        spawn_key=tuple(int(p) & _U64 for p in path),
    )
    return np.random.Generator(np.random.Philox(ss))
