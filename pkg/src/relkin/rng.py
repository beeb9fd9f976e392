"""Deterministic derivation of independent random streams from one master seed."""

import numpy as np


def derive_rng(seed, *path: int) -> np.random.Generator:
    """Generator for the stream addressed by an integer path under a master seed.

    The stream for path (a, b, ...) is ``SeedSequence(seed, spawn_key=(a, b, ...))``,
    so distinct paths yield independent streams and the draws do not depend on
    creation order.  Serial and concurrent runs that address streams by the same
    paths therefore see identical noise.
    """
    key = tuple(int(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))
