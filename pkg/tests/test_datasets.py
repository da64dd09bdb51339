import math

import numpy as np
import pytest

from esa.datasets import (
    gen_regression,
    gen_setting_a,
    gen_setting_b,
    regression_signal,
    setting_a_covariances,
)


def test_setting_a_is_deterministic():
    data, labels = gen_setting_a(50, seed=3)
    again, again_labels = gen_setting_a(50, seed=3)
    assert data.shape == (50, 2)
    np.testing.assert_array_equal(data, again)
    np.testing.assert_array_equal(labels, again_labels)
    assert not np.array_equal(data, gen_setting_a(50, seed=4)[0])


def test_setting_a_mixture():
    n = 10**5
    data, labels = gen_setting_a(n, seed=0)
    np.testing.assert_allclose(
        np.bincount(labels, minlength=3) / n, [0.35, 0.5, 0.15], atol=0.01
    )

    first = data[labels == 0]
    bound = 3 * np.sqrt([2.0, 1.0]) / math.sqrt(n * 0.35)
    assert np.all(np.abs(first.mean(axis=0) - [-4.0, 0.0]) <= bound)

    third = np.cov(data[labels == 2].T)
    np.testing.assert_allclose(np.diag(third), [0.15, 0.15], rtol=0.1)
    assert abs(third[0, 1]) <= 0.015


def test_setting_a_covariances():
    covs = setting_a_covariances()
    assert covs.shape == (3, 2, 2)
    assert np.all(np.linalg.eigvalsh(covs) > 0)
    np.testing.assert_allclose(np.linalg.eigvalsh(covs[1]), [0.2, 2.0])
    # the long axis of the second component points at pi / 3
    _, vectors = np.linalg.eigh(covs[1])
    assert abs(vectors[:, 1] @ [0.5, math.sqrt(3) / 2]) == pytest.approx(1.0)


def test_setting_b():
    n = 10**5
    data, labels = gen_setting_b(n, seed=0)
    assert data.shape == (n, 2)
    assert abs(labels.mean() - 0.5) <= 0.01
    radius = np.linalg.norm(data[labels == 0], axis=1)
    assert abs(radius.mean() - 1.0) <= 0.2
    lower = data[labels == 1].mean(axis=0)
    np.testing.assert_allclose(lower, [0.8, 0.5 - 2 / math.pi], atol=0.02)
    np.testing.assert_array_equal(data, gen_setting_b(n, seed=0)[0])


def test_regression():
    data = gen_regression(10**5, seed=1, p=2, sigma=0.3)
    assert data.X.shape == (10**5, 2)
    assert np.all((data.X >= 0) & (data.X <= 1))
    noise = data.y - regression_signal(data.X)
    assert noise.var() == pytest.approx(0.09, rel=0.05)
    assert abs(noise.mean()) < 0.01

    single = gen_regression(20, seed=1, p=1, sigma=0.0)
    np.testing.assert_allclose(single.y, np.sin(2 * math.pi * single.X[:, 0]))

    again = gen_regression(100, seed=7)
    np.testing.assert_array_equal(again.y, gen_regression(100, seed=7).y)


@pytest.mark.parametrize("params", [dict(n=1), dict(n=10, p=0), dict(n=10, sigma=-1)])
def test_regression_checks(params):
    with pytest.raises(ValueError):
        gen_regression(seed=0, **params)
