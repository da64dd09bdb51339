from typing import Sequence

import numpy as np
from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score


def _check_labels(a: Sequence[int], b: Sequence[int], min_length: int):
    a = np.asarray(a).reshape(-1)
    b = np.asarray(b).reshape(-1)
    if len(a) != len(b):
        raise ValueError(f"labelings have different lengths: {len(a)} and {len(b)}")
    if len(a) < min_length:
        raise ValueError(f"labelings must hold at least {min_length} items")
    return a, b


def ari(a: Sequence[int], b: Sequence[int]) -> float:
    """
    Adjusted Rand index between two labelings, in [-1, 1].

    Parameters
    ----------
    a: Sequence[int]
    b: Sequence[int]

    Returns
    -------
    float
    """
    a, b = _check_labels(a, b, 2)
    return float(adjusted_rand_score(a, b))


def nmi(a: Sequence[int], b: Sequence[int]) -> float:
    """
    Mutual information divided by the arithmetic mean of the two entropies,
    in [0, 1]. Two constant labelings have an NMI of 1.
    """
    a, b = _check_labels(a, b, 1)
    return float(normalized_mutual_info_score(a, b, average_method="arithmetic"))
