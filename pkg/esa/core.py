"""
Ladder-generic early-stopped aggregation (ESA) engine.

Models of a ladder are evaluated one after the other, in order of increasing
complexity, by a `LadderCriterion`. The walk stops at the first model whose
criterion value gets worse than its predecessor's, and the evaluated prefix is
aggregated with exponential weights `exp(-criterion)`. The full aggregation (FA)
and single model selection (MS) baselines evaluate the whole ladder.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, NonNegativeFloat, PositiveInt
from pydantic import model_validator
from scipy.special import softmax
from typing_extensions import Literal

from esa.errors import EvaluatorError, NonFiniteCriterionError

logger = logging.getLogger(__name__)

MarginMode = Literal["multiplicative", "additive"]
Traversal = Literal["forward", "backward"]


class LadderCriterion(Protocol):
    """
    Maps a (1-based) model index to its criterion value and fitted artifact.
    """

    def __call__(self, k: int) -> Tuple[float, Any]:
        ...


class LadderSpec(BaseModel):
    """
    An ordered ladder of `model_count` nested models.

    Parameters
    ----------
    model_count: int
        Number of models M of the ladder
    labels: Optional[List[str]]
        Human-readable identifier of each model
    """

    model_config = ConfigDict(frozen=True)

    model_count: PositiveInt
    labels: Optional[Tuple[str, ...]] = None

    @model_validator(mode="after")
    def _check_labels(self):
        if self.labels is not None and len(self.labels) != self.model_count:
            raise ValueError(
                f"expected {self.model_count} labels, got {len(self.labels)}"
            )
        return self

    @classmethod
    def from_labels(cls, labels: Sequence[Any]) -> "LadderSpec":
        return cls(model_count=len(labels), labels=tuple(str(x) for x in labels))


class StopRule(BaseModel):
    """
    Improvement test applied between two consecutive models of the walk.

    With `delta = 0` both margin modes reduce to the strict rule: the walk stops
    at model m when `c[m - 1] < c[m]`. Otherwise:

    - multiplicative: stop when `c[m - 1] < (1 + delta) * c[m]`
    - additive: stop when `c[m - 1] < c[m] + delta * |c[m]|`

    The additive form keeps its promoting effect on negative criteria (such as
    negative ELBOs), where the multiplicative one is inverted.
    """

    model_config = ConfigDict(frozen=True)

    delta: NonNegativeFloat = 0.0
    margin_mode: MarginMode = "additive"
    traversal: Traversal = "forward"

    def violated(self, previous: float, current: float) -> bool:
        """
        Whether the `current` model fails the improvement test against `previous`
        and the walk must stop after it.
        """
        if self.margin_mode == "multiplicative":
            return previous < (1.0 + self.delta) * current
        return previous < current + self.delta * abs(current)

    def order(self, model_count: int) -> List[int]:
        indices = list(range(1, model_count + 1))
        return indices if self.traversal == "forward" else indices[::-1]


@dataclass(frozen=True)
class CriterionTrace:
    """
    Criterion values c_1 ... c_m of the evaluated models, in evaluation order.
    """

    values: Tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if len(values) == 0:
            raise ValueError("a criterion trace holds at least one value")
        for i, value in enumerate(values):
            if not math.isfinite(value):
                raise NonFiniteCriterionError(i + 1, value)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class EsaResult:
    """
    Output of a ladder walk.

    Attributes
    ----------
    stop_index: int
        Ladder index of the last evaluated model
    weights: np.ndarray
        Simplex weights of the evaluated models, in evaluation order
    evaluated: CriterionTrace
        Criterion values of the evaluated models, in evaluation order
    artifacts: Tuple[Any, ...]
        Per-model outputs of the evaluator, in evaluation order
    indices: Tuple[int, ...]
        Ladder indices of the evaluated models, in evaluation order.
        For a forward walk, this is `(1, ..., stop_index)`.
    """

    stop_index: int
    weights: np.ndarray
    evaluated: CriterionTrace
    artifacts: Tuple[Any, ...]
    indices: Tuple[int, ...]

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        if not (len(weights) == len(self.evaluated) == len(self.artifacts)):
            raise ValueError("weights, trace and artifacts must have the same length")

    @property
    def best(self) -> int:
        """Position (in evaluation order) of the maximum-weight model."""
        return int(np.argmax(self.weights))

    @property
    def best_index(self) -> int:
        """Ladder index of the maximum-weight model."""
        return self.indices[self.best]

    @property
    def n_evaluated(self) -> int:
        return len(self.evaluated)


def _check_values(values: Sequence[float]) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("expected a nonempty list of criterion values")
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NonFiniteCriterionError(int(bad[0]) + 1, float(values[bad[0]]))
    return values


def exp_weights(values: Sequence[float]) -> np.ndarray:
    """
    Exponential weights `w_k ∝ exp(-c_k)`, computed after shifting the values
    by their minimum so that large criteria do not underflow.

    Parameters
    ----------
    values: Sequence[float]
        Finite criterion values

    Returns
    -------
    np.ndarray
        Weights summing to one
    """
    values = _check_values(values)
    return softmax(-(values - values.min()))


def select_best(values: Sequence[float]) -> int:
    """
    1-based index of the smallest criterion value. Ties go to the
    smallest index, i.e. the simpler model.
    """
    return int(np.argmin(_check_values(values))) + 1


def aggregate_points(weights: Sequence[float], points: Sequence[Sequence[float]]):
    """
    Coordinatewise convex combination of equal-length vectors.

    Parameters
    ----------
    weights: Sequence[float]
        Simplex weights, one per point
    points: Sequence[Sequence[float]]
        Vectors to aggregate

    Returns
    -------
    np.ndarray
    """
    weights = np.asarray(weights, dtype=float)
    if len(points) != len(weights):
        raise ValueError(f"got {len(weights)} weights for {len(points)} points")
    lengths = {len(p) for p in points}
    if len(lengths) > 1:
        raise ValueError(f"points have different lengths: {sorted(lengths)}")
    return weights @ np.asarray(points, dtype=float)


def _evaluate(evaluator: LadderCriterion, k: int) -> Tuple[float, Any]:
    try:
        value, artifact = evaluator(k)
    except Exception as e:
        raise EvaluatorError(k) from e
    value = float(value)
    if not math.isfinite(value):
        raise NonFiniteCriterionError(k, value)
    logger.debug("model %d: criterion %.17g", k, value)
    return value, artifact


def run_esa(
    evaluator: LadderCriterion,
    ladder: LadderSpec,
    rule: StopRule = StopRule(),
) -> EsaResult:
    """
    Walk the ladder sequentially and stop after the first model that fails the
    improvement test of `rule` against its predecessor, or at the end of the
    ladder. Models beyond the stopping index are never evaluated.

    Parameters
    ----------
    evaluator: LadderCriterion
        Returns (criterion value, artifact) for a model index
    ladder: LadderSpec
    rule: StopRule

    Returns
    -------
    EsaResult
    """
    values: List[float] = []
    artifacts: List[Any] = []
    indices: List[int] = []
    for k in rule.order(ladder.model_count):
        value, artifact = _evaluate(evaluator, k)
        stop = bool(values) and rule.violated(values[-1], value)
        values.append(value)
        artifacts.append(artifact)
        indices.append(k)
        if stop:
            logger.info("criterion increased at model %d, stopping", k)
            break
    return EsaResult(
        stop_index=indices[-1],
        weights=exp_weights(values),
        evaluated=CriterionTrace(tuple(values)),
        artifacts=tuple(artifacts),
        indices=tuple(indices),
    )


def _evaluate_all(
    evaluator: LadderCriterion,
    ladder: LadderSpec,
    max_workers: Optional[int],
) -> List[Tuple[float, Any]]:
    indices = range(1, ladder.model_count + 1)
    if max_workers is None or max_workers <= 1:
        return [_evaluate(evaluator, k) for k in indices]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda k: _evaluate(evaluator, k), indices))


def run_full(
    evaluator: LadderCriterion,
    ladder: LadderSpec,
    max_workers: Optional[int] = None,
) -> EsaResult:
    """
    Full aggregation baseline: every model of the ladder is evaluated and
    aggregated with exponential weights.

    Parameters
    ----------
    evaluator: LadderCriterion
    ladder: LadderSpec
    max_workers: Optional[int]
        Evaluate the models concurrently with this many threads. The evaluator
        must then be pure for each index.

    Returns
    -------
    EsaResult
    """
    evaluations = _evaluate_all(evaluator, ladder, max_workers)
    values = tuple(value for value, _ in evaluations)
    return EsaResult(
        stop_index=ladder.model_count,
        weights=exp_weights(values),
        evaluated=CriterionTrace(values),
        artifacts=tuple(artifact for _, artifact in evaluations),
        indices=tuple(range(1, ladder.model_count + 1)),
    )


def run_ms(
    evaluator: LadderCriterion,
    ladder: LadderSpec,
    max_workers: Optional[int] = None,
) -> EsaResult:
    """
    Model selection baseline: every model of the ladder is evaluated and
    the whole weight goes to the criterion minimizer.
    """
    full = run_full(evaluator, ladder, max_workers=max_workers)
    return as_selection(full)


def as_selection(result: EsaResult) -> EsaResult:
    """
    Turn an evaluated ladder into its single model selection: one-hot weights
    on `select_best` of the trace.
    """
    weights = np.zeros(len(result.evaluated))
    weights[select_best(result.evaluated.values) - 1] = 1.0
    return EsaResult(
        stop_index=result.stop_index,
        weights=weights,
        evaluated=result.evaluated,
        artifacts=result.artifacts,
        indices=result.indices,
    )
