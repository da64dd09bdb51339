from typing import Tuple

import numpy as np


def replicate_seed(seed: int, replicate: int) -> int:
    """
    Derive the seed of a replicate from the master seed. The pair
    (seed, replicate) is hashed by a `numpy.random.SeedSequence`, so that
    replicate r can be reproduced in isolation and neighbouring replicates
    get unrelated streams.

    Parameters
    ----------
    seed: int
        Master seed of the experiment
    replicate: int
        Replicate index

    Returns
    -------
    int
        A 32-bit seed
    """
    entropy = (int(seed) % 2**63, int(replicate))
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def spawn_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Random generator dedicated to a sub-task (e.g. a model index and a restart)
    of a seeded computation.

    Parameters
    ----------
    seed: int
    keys: int
        Identifiers of the sub-task

    Returns
    -------
    np.random.Generator
    """
    entropy: Tuple[int, ...] = (int(seed) % 2**63, *(int(k) for k in keys))
    return np.random.default_rng(np.random.SeedSequence(entropy))
