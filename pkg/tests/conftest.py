import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


class CountingEvaluator:
    """Replays a fixed trace and counts the evaluated indices."""

    def __init__(self, trace, artifacts=None):
        self.trace = list(trace)
        self.artifacts = artifacts
        self.calls = []

    def __call__(self, k):
        self.calls.append(k)
        artifact = self.artifacts[k - 1] if self.artifacts is not None else k
        return self.trace[k - 1], artifact


@pytest.fixture
def counting():
    return CountingEvaluator
