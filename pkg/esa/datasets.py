"""
Synthetic data generators of the experiments. Every generator is deterministic
given its seed.
"""

import math
from typing import Tuple

import numpy as np

from esa.erm import RegressionData

SETTING_A_WEIGHTS = np.array([0.35, 0.5, 0.15])
SETTING_A_MEANS = np.array([[-4.0, 0.0], [0.0, 0.0], [4.0, 0.0]])
SEMICIRCLE_NOISE = 0.15


def _rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def setting_a_covariances() -> np.ndarray:
    rotation = _rotation(math.pi / 3)
    return np.stack(
        [
            np.diag([2.0, 1.0]),
            rotation @ np.diag([2.0, 0.2]) @ rotation.T,
            0.15 * np.eye(2),
        ]
    )


def gen_setting_a(n: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Heterogeneous Gaussians: a three-component mixture in the plane with
    weights (0.35, 0.5, 0.15), means (-4, 0), (0, 0), (4, 0), an axis-aligned,
    a rotated elongated and a small spherical covariance.

    Parameters
    ----------
    n: int
    seed: int

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        n x 2 points and their component labels in {0, 1, 2}
    """
    rng = np.random.default_rng(seed)
    labels = rng.choice(3, size=n, p=SETTING_A_WEIGHTS)
    chol = np.linalg.cholesky(setting_a_covariances())
    noise = rng.standard_normal((n, 2))
    data = SETTING_A_MEANS[labels] + np.einsum("nde,ne->nd", chol[labels], noise)
    return data, labels


def gen_setting_b(n: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Interleaving semicircles: with probability 1/2 a point of the upper unit
    semicircle, otherwise of its reflection shifted by (0.8, 0.5), plus
    Gaussian noise of variance 0.15 per coordinate.

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        n x 2 points and their branch labels in {0, 1}
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    phi = rng.uniform(0.0, math.pi, size=n)
    centers = np.where(
        labels[:, None] == 0,
        np.column_stack([np.cos(phi), np.sin(phi)]),
        np.column_stack([0.8 - np.cos(phi), 0.5 - np.sin(phi)]),
    )
    data = centers + math.sqrt(SEMICIRCLE_NOISE) * rng.standard_normal((n, 2))
    return data, labels


def regression_signal(X: np.ndarray) -> np.ndarray:
    """`sin(2 pi x_1) + x_2^2`, the second term is dropped when p = 1."""
    signal = np.sin(2.0 * math.pi * X[:, 0])
    if X.shape[1] > 1:
        signal = signal + X[:, 1] ** 2
    return signal


def gen_regression(
    n: int,
    seed: int,
    p: int = 2,
    sigma: float = 0.3,
) -> RegressionData:
    """
    Additive smooth regression, x uniform on [0, 1]^p and
    `y = sin(2 pi x_1) + x_2^2 + eps`, eps ~ N(0, sigma^2).
    """
    if n < 2 or p < 1:
        raise ValueError("gen_regression needs n >= 2 and p >= 1")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, p))
    y = regression_signal(X) + sigma * rng.standard_normal(n)
    return RegressionData(X=X, y=y)
