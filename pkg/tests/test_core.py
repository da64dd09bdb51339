import math

import numpy as np
import pytest
from pydantic import ValidationError

from esa.core import (
    CriterionTrace,
    LadderSpec,
    StopRule,
    aggregate_points,
    as_selection,
    exp_weights,
    run_esa,
    run_full,
    run_ms,
    select_best,
)
from esa.errors import EvaluatorError, NonFiniteCriterionError


def ladder(m):
    return LadderSpec(model_count=m)


def test_monotone_trace_runs_to_the_end(counting):
    evaluator = counting([5, 4, 3, 2])
    result = run_esa(evaluator, ladder(4))
    assert result.stop_index == 4
    assert result.evaluated.values == (5, 4, 3, 2)
    assert result.indices == (1, 2, 3, 4)


def test_stops_at_first_increase(counting):
    evaluator = counting([5, 4, 6, 1, 0])
    result = run_esa(evaluator, ladder(5))
    assert result.stop_index == 3
    assert evaluator.calls == [1, 2, 3]
    assert len(result.weights) == 3
    assert result.artifacts == (1, 2, 3)


def test_multiplicative_promoting_margin(counting):
    rule = StopRule(delta=0.1, margin_mode="multiplicative")
    result = run_esa(counting([10, 9.5, 1]), ladder(3), rule)
    assert result.stop_index == 2


def test_margin_modes_on_negative_criteria(counting):
    trace = [-100.0, -100.5, -101.0]
    additive = StopRule(delta=0.01, margin_mode="additive")
    multiplicative = StopRule(delta=0.01, margin_mode="multiplicative")
    assert run_esa(counting(trace), ladder(3), additive).stop_index == 2
    assert run_esa(counting(trace), ladder(3), multiplicative).stop_index == 3


@pytest.mark.parametrize("mode", ["additive", "multiplicative"])
def test_zero_delta_is_the_strict_rule(mode, counting):
    rule = StopRule(delta=0.0, margin_mode=mode)
    assert run_esa(counting([3, 3, 3, 4]), ladder(4), rule).stop_index == 4
    assert run_esa(counting([3, 2, 2.5, 1]), ladder(4), rule).stop_index == 3


def test_exp_weights_examples():
    np.testing.assert_allclose(exp_weights([7.0, 7.0, 7.0]), [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(
        exp_weights([0.0, math.log(2.0)]), [2 / 3, 1 / 3], atol=1e-15
    )


def test_exp_weights_extended_precision(rng):
    for _ in range(20):
        values = rng.uniform(-50, 50, size=5)
        ref = np.exp(-values.astype(np.longdouble))
        ref = ref / ref.sum()
        expected = ref.astype(float)
        np.testing.assert_allclose(exp_weights(values), expected, rtol=1e-13)


def test_exp_weights_large_values():
    weights = exp_weights([1e8, 1e8 + 1.0, 1e8 + 2.0])
    assert np.all(np.isfinite(weights))
    assert weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert weights[0] > weights[1] > weights[2]


@pytest.mark.parametrize("values", [[], [1.0, math.nan], [math.inf]])
def test_exp_weights_rejects_bad_values(values):
    with pytest.raises((ValueError, NonFiniteCriterionError)):
        exp_weights(values)


def test_select_best():
    assert select_best([3, 1, 2]) == 2
    assert select_best([1, 1, 5]) == 1
    with pytest.raises(ValueError):
        select_best([])


def test_select_best_linear_scan(rng):
    for _ in range(100):
        values = rng.integers(0, 5, size=rng.integers(1, 10)).astype(float)
        best = 0
        for i, v in enumerate(values):
            if v < values[best]:
                best = i
        assert select_best(values) == best + 1


def test_aggregate_points():
    np.testing.assert_array_equal(aggregate_points([1.0], [[3.0, -1.0]]), [3.0, -1.0])
    np.testing.assert_array_equal(
        aggregate_points([0.5, 0.5], [[0.0, 0.0], [2.0, 4.0]]), [1.0, 2.0]
    )
    with pytest.raises(ValueError):
        aggregate_points([0.5, 0.5], [[0.0], [1.0, 2.0]])
    with pytest.raises(ValueError):
        aggregate_points([1.0], [[0.0], [1.0]])


def test_aggregate_points_extended_precision(rng):
    weights = rng.dirichlet(np.ones(4))
    points = rng.normal(size=(4, 6))
    ref = weights.astype(np.longdouble) @ points.astype(np.longdouble)
    np.testing.assert_allclose(
        aggregate_points(weights, points), ref.astype(float), atol=1e-13
    )


def test_full_aggregation(counting):
    result = run_full(counting([1.0, 0.0, 2.0]), ladder(3))
    ref = np.exp([-1.0, 0.0, -2.0])
    np.testing.assert_allclose(result.weights, ref / ref.sum(), rtol=1e-14)
    assert result.stop_index == 3

    single = run_full(counting([42.0]), ladder(1))
    assert single.stop_index == 1
    np.testing.assert_array_equal(single.weights, [1.0])


def test_full_aggregation_threads(counting, rng):
    trace = rng.normal(size=8)
    sequential = run_full(counting(trace), ladder(8))
    threaded = run_full(counting(trace), ladder(8), max_workers=4)
    np.testing.assert_array_equal(sequential.weights, threaded.weights)
    assert threaded.artifacts == tuple(range(1, 9))


def test_model_selection(counting):
    result = run_ms(counting([2.0, 1.0, 1.0, 3.0]), ladder(4))
    np.testing.assert_array_equal(result.weights, [0.0, 1.0, 0.0, 0.0])
    assert result.stop_index == 4
    assert result.best_index == 2
    full = run_full(counting([2.0, 1.0, 1.0, 3.0]), ladder(4))
    np.testing.assert_array_equal(as_selection(full).weights, result.weights)


def test_esa_equals_fa_on_decreasing_traces(counting, rng):
    for _ in range(1000):
        m = int(rng.integers(1, 12))
        trace = np.sort(rng.normal(scale=10, size=m))[::-1]
        trace = trace - np.arange(m) * 1e-6
        points = rng.normal(size=(m, 3))
        esa = run_esa(counting(trace, points), ladder(m))
        fa = run_full(counting(trace, points), ladder(m))
        assert esa.stop_index == fa.stop_index == m
        np.testing.assert_allclose(esa.weights, fa.weights, atol=1e-12)
        np.testing.assert_allclose(
            aggregate_points(esa.weights, esa.artifacts),
            aggregate_points(fa.weights, fa.artifacts),
            atol=1e-12,
        )


def test_lazy_evaluation(counting, rng):
    for _ in range(1000):
        m = int(rng.integers(1, 12))
        evaluator = counting(rng.normal(size=m))
        result = run_esa(evaluator, ladder(m))
        assert len(evaluator.calls) == result.stop_index
        assert evaluator.calls == list(range(1, result.stop_index + 1))

        evaluator = counting(rng.normal(size=m))
        run_full(evaluator, ladder(m))
        assert len(evaluator.calls) == m


def test_weights_in_simplex_and_shift_invariance(counting, rng):
    for _ in range(200):
        m = int(rng.integers(1, 10))
        trace = rng.normal(scale=5, size=m)
        shift = rng.uniform(-1e3, 1e3)
        result = run_esa(counting(trace), ladder(m))
        shifted = run_esa(counting(trace + shift), ladder(m))
        assert result.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all((result.weights >= 0) & (result.weights <= 1))
        assert shifted.stop_index == result.stop_index
        np.testing.assert_allclose(shifted.weights, result.weights, atol=1e-12)


def test_backward_traversal_mirrors_forward(counting, rng):
    backward = StopRule(traversal="backward")
    for _ in range(200):
        m = int(rng.integers(1, 10))
        trace = rng.normal(size=m)
        forward = run_esa(counting(trace), ladder(m))
        evaluator = counting(trace[::-1])
        mirrored = run_esa(evaluator, ladder(m), backward)
        assert mirrored.stop_index == m - forward.stop_index + 1
        assert mirrored.n_evaluated == forward.n_evaluated
        assert evaluator.calls == list(range(m, mirrored.stop_index - 1, -1))
        np.testing.assert_allclose(mirrored.weights, forward.weights, atol=1e-12)


def test_evaluator_failure_is_wrapped():
    def evaluator(k):
        if k == 2:
            raise RuntimeError("boom")
        return float(k), None

    with pytest.raises(EvaluatorError) as excinfo:
        run_esa(evaluator, ladder(3))
    assert excinfo.value.index == 2
    assert isinstance(excinfo.value.__cause__, RuntimeError)
    assert "model 2" in str(excinfo.value) and "boom" in str(excinfo.value)


def test_non_finite_criterion_is_an_error(counting):
    with pytest.raises(NonFiniteCriterionError) as excinfo:
        run_esa(counting([3.0, math.nan, 1.0]), ladder(3))
    assert excinfo.value.index == 2
    with pytest.raises(NonFiniteCriterionError):
        run_full(counting([3.0, 2.0, math.inf]), ladder(3))


def test_types_validation():
    with pytest.raises(ValidationError):
        LadderSpec(model_count=0)
    with pytest.raises(ValidationError):
        LadderSpec(model_count=2, labels=("a",))
    with pytest.raises(ValidationError):
        StopRule(delta=-0.1)
    with pytest.raises(ValidationError):
        StopRule(margin_mode="relative")
    with pytest.raises(ValueError):
        CriterionTrace(())
    assert LadderSpec.from_labels([1, 2]).labels == ("1", "2")


def test_result_is_read_only(counting):
    result = run_esa(counting([2.0, 1.0]), ladder(2))
    with pytest.raises(ValueError):
        result.weights[0] = 0.5
