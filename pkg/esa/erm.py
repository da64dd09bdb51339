"""
Frequentist ESA over empirical risk ladders, instantiated on k-nearest-neighbor
regression. A ladder is a strictly increasing list of neighbor counts and each
model is scored by AICc, a penalized training loss or a validation loss.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    PositiveFloat,
    PositiveInt,
    field_validator,
)
from scipy.spatial.distance import cdist
from sklearn.model_selection import KFold, train_test_split
from sklearn.neighbors import KDTree
from typing_extensions import Annotated, Literal

from esa.core import EsaResult, LadderSpec, StopRule, aggregate_points, run_esa
from esa.errors import InterpolationError, LadderIndexError, SplitError
from esa.registry import registry

logger = logging.getLogger(__name__)

DEFAULT_NEIGHBOR_COUNTS = (1, 3, 5, 10, 20, 40, 80, 160)


@dataclass(frozen=True)
class RegressionData:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.ndim != 2 or len(X) != len(y):
            raise ValueError("X must be an n x p matrix and y a vector of length n")
        if len(y) < 2:
            raise ValueError("regression data must hold at least 2 observations")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("X and y must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.y)

    def subset(self, indices) -> "RegressionData":
        return RegressionData(X=self.X[indices], y=self.y[indices])


class KnnLadderSpec(BaseModel):
    """
    Ladder of neighbor counts. Larger counts give smoother fits, so the
    default ladder walks from the most to the least flexible model.
    """

    model_config = ConfigDict(frozen=True)

    neighbor_counts: Tuple[PositiveInt, ...] = DEFAULT_NEIGHBOR_COUNTS

    @field_validator("neighbor_counts")
    @classmethod
    def _check_counts(cls, counts):
        if len(counts) == 0:
            raise ValueError("the ladder must hold at least one neighbor count")
        if any(a >= b for a, b in zip(counts, counts[1:])):
            raise ValueError("neighbor counts must be strictly increasing")
        return counts

    @property
    def ladder(self) -> LadderSpec:
        return LadderSpec.from_labels([f"k_nbr={k}" for k in self.neighbor_counts])

    def check(self, n_train: int):
        if self.neighbor_counts[-1] > n_train:
            raise ValueError(
                f"neighbor count {self.neighbor_counts[-1]} exceeds the "
                f"{n_train} training observations"
            )


class AiccCriterion(BaseModel):
    """AICc of the in-sample fit, with `df = n / k_nbr`."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["aicc"] = "aicc"


class ValidationCriterion(BaseModel):
    """
    Sample splitting: models are fitted on a random training part and scored by
    `alpha` times their squared error on the held-out part.

    Parameters
    ----------
    split_fraction: float
        Fraction of the observations held out for validation
    seed: int
        Seed of the random split
    alpha: float
        Scale of the validation loss in the exponential weights
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["val"] = "val"
    split_fraction: float = Field(0.2, gt=0.0, lt=1.0)
    seed: int = 0
    alpha: PositiveFloat = 1.0


class PenalizedCriterion(BaseModel):
    """
    Penalized training loss `lam * SSE + H_k`. When `H` is not given, the
    `df_log_penalty` of the ladder is used.
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["pen"] = "pen"
    H: Optional[Tuple[NonNegativeFloat, ...]] = None
    lam: PositiveFloat = 1.0


CriterionKind = Annotated[
    Union[AiccCriterion, ValidationCriterion, PenalizedCriterion],
    Field(discriminator="kind"),
]


@registry.criterion.register("aicc")
def aicc_criterion() -> AiccCriterion:
    return AiccCriterion()


@registry.criterion.register("val")
def validation_criterion(
    split_fraction: float = 0.2,
    seed: int = 0,
    alpha: float = 1.0,
) -> ValidationCriterion:
    return ValidationCriterion(split_fraction=split_fraction, seed=seed, alpha=alpha)


@registry.criterion.register("pen")
def penalized_criterion(
    H: Optional[Tuple[float, ...]] = None,
    lam: float = 1.0,
) -> PenalizedCriterion:
    return PenalizedCriterion(H=H, lam=lam)


def knn_predict(train: RegressionData, query: np.ndarray, k_nbr: int) -> np.ndarray:
    """
    Unweighted mean response of the `k_nbr` nearest training points in Euclidean
    distance. Distance ties go to the lower training index.

    Parameters
    ----------
    train: RegressionData
    query: np.ndarray
        m x p query points
    k_nbr: int

    Returns
    -------
    np.ndarray
        m predictions
    """
    return NeighborSearch(train).predict(query, k_nbr)


class NeighborSearch:
    """
    Nearest-neighbor means over a fixed training set, backed by a KD-tree.
    A query for `k_nbr` neighbors visits about `k_nbr` points per row, and
    the tree is never modified after construction.

    Rows whose `k_nbr`-th and next distances coincide are resolved by a full
    stable sort of their distances, so that ties go to the lower training index.
    """

    def __init__(self, train: RegressionData):
        self.train = train
        self.tree = KDTree(train.X)

    def predict(self, query: np.ndarray, k_nbr: int) -> np.ndarray:
        n = len(self.train)
        if not 1 <= k_nbr <= n:
            raise ValueError(f"k_nbr must be between 1 and {n}, got {k_nbr}")
        query = np.asarray(query, dtype=float)
        if query.ndim == 1:
            query = query[:, None]
        if len(query) == 0:
            return np.empty(0)
        if k_nbr == n:
            return np.full(len(query), self.train.y.mean())
        dist, nearest = self.tree.query(query, k=k_nbr + 1)
        ties = np.isclose(dist[:, k_nbr], dist[:, k_nbr - 1], rtol=1e-9, atol=0.0)
        nearest = nearest[:, :k_nbr]
        if ties.any():
            order = np.argsort(
                cdist(query[ties], self.train.X), axis=1, kind="stable"
            )
            nearest[ties] = order[:, :k_nbr]
        return self.train.y[nearest].mean(axis=1)


def sse(y: np.ndarray, predictions: np.ndarray) -> float:
    return float(np.sum((np.asarray(y) - np.asarray(predictions)) ** 2))


def aicc(sse: float, df: float, n: int) -> float:
    """
    Corrected Akaike information criterion
    `n log(SSE / n) + 2 df + 2 df (df + 1) / (n - df - 1)`.

    Parameters
    ----------
    sse: float
        Residual sum of squares, must be positive
    df: float
        Effective degrees of freedom
    n: int
        Number of observations

    Returns
    -------
    float
    """
    if sse < 0:
        raise ValueError("SSE must be nonnegative")
    if sse == 0:
        raise InterpolationError()
    if n - df - 1 <= 0:
        raise ValueError(f"AICc needs df < n - 1, got df={df} for n={n}")
    return n * math.log(sse / n) + 2 * df + 2 * df * (df + 1) / (n - df - 1)


def mper(empirical_loss: float, H_k: float, lam: float) -> float:
    """Penalized empirical risk `lam * loss + H_k`."""
    return lam * empirical_loss + H_k


def df_log_penalty(neighbor_counts: Sequence[int], n: int) -> Tuple[float, ...]:
    """
    Heuristic penalty `H_k = 4 df_k log(3 n)` with `df_k = n / k_nbr`.
    """
    return tuple(4.0 * (n / k) * math.log(3 * n) for k in neighbor_counts)


def aicc_valid_counts(neighbor_counts: Sequence[int], n: int) -> List[int]:
    """Neighbor counts whose AICc is defined, i.e. with `n / k_nbr < n - 1`."""
    return [k for k in neighbor_counts if n - n / k - 1 > 0]


def split_data(
    data: RegressionData,
    split_fraction: float,
    seed: int,
) -> Tuple[RegressionData, RegressionData]:
    """Random (train, held-out) split of the observations."""
    indices = np.arange(len(data))
    try:
        train_idx, held_idx = train_test_split(
            indices, test_size=split_fraction, random_state=seed % 2**32
        )
    except ValueError as e:
        raise SplitError(str(e)) from e
    if len(train_idx) == 0 or len(held_idx) == 0:
        raise SplitError(
            f"split_fraction={split_fraction} leaves an empty part "
            f"of {len(data)} observations"
        )
    return data.subset(np.sort(train_idx)), data.subset(np.sort(held_idx))


class KnnCriterion:
    """
    Ladder evaluator of kNN regression. Model k uses the k-th neighbor count
    and returns its criterion value together with its predictions on `test_X`.
    All models query one KD-tree of the training set, built at construction.
    """

    def __init__(
        self,
        data: RegressionData,
        ladder: KnnLadderSpec,
        criterion: CriterionKind = AiccCriterion(),
        test_X: Optional[np.ndarray] = None,
    ):
        self.ladder = ladder
        self.criterion = criterion
        self.test_X = test_X
        self.data = data
        self.train = data
        self.held_out = None
        if isinstance(criterion, ValidationCriterion):
            self.train, self.held_out = split_data(
                data, criterion.split_fraction, criterion.seed
            )
        ladder.check(len(self.train))
        if isinstance(criterion, AiccCriterion):
            invalid = sorted(
                set(ladder.neighbor_counts)
                - set(aicc_valid_counts(ladder.neighbor_counts, len(data)))
            )
            if invalid:
                raise ValueError(
                    f"AICc is undefined for neighbor counts {invalid} "
                    f"at n={len(data)}, drop them from the ladder"
                )
        self.penalty = None
        if isinstance(criterion, PenalizedCriterion):
            H = criterion.H
            if H is None:
                H = df_log_penalty(ladder.neighbor_counts, len(data))
            if len(H) != len(ladder.neighbor_counts):
                raise ValueError(
                    f"expected {len(ladder.neighbor_counts)} penalties, got {len(H)}"
                )
            self.penalty = H
        self.search = NeighborSearch(self.train)

    def __call__(self, k: int) -> Tuple[float, Optional[np.ndarray]]:
        counts = self.ladder.neighbor_counts
        if not 1 <= k <= len(counts):
            raise LadderIndexError(k, len(counts))
        k_nbr = counts[k - 1]
        criterion = self.criterion
        if isinstance(criterion, ValidationCriterion):
            predictions = self.search.predict(self.held_out.X, k_nbr)
            value = criterion.alpha * sse(self.held_out.y, predictions)
        else:
            fitted = self.search.predict(self.train.X, k_nbr)
            loss = sse(self.train.y, fitted)
            n = len(self.train)
            if isinstance(criterion, AiccCriterion):
                value = aicc(loss, n / k_nbr, n)
            else:
                value = mper(loss, self.penalty[k - 1], criterion.lam)
        artifact = None
        if self.test_X is not None:
            artifact = self.search.predict(self.test_X, k_nbr)
        return value, artifact


def aggregate_predictions(result: EsaResult) -> np.ndarray:
    return aggregate_points(result.weights, result.artifacts)


def esa_regress(
    data: RegressionData,
    ladder: KnnLadderSpec,
    criterion: CriterionKind,
    rule: StopRule = StopRule(),
    test_X: Optional[np.ndarray] = None,
) -> Tuple[EsaResult, np.ndarray]:
    """
    Walk the neighbor-count ladder and aggregate the test predictions of the
    evaluated models with exponential weights of their criterion.

    Parameters
    ----------
    data: RegressionData
        Training observations
    ladder: KnnLadderSpec
    criterion: CriterionKind
    rule: StopRule
    test_X: np.ndarray
        Query points of the aggregated predictor

    Returns
    -------
    Tuple[EsaResult, np.ndarray]
        The ladder walk and the aggregated predictions
    """
    if test_X is None:
        raise ValueError("esa_regress needs query points test_X")
    evaluator = KnnCriterion(data, ladder, criterion, test_X)
    result = run_esa(evaluator, ladder.ladder, rule)
    return result, aggregate_predictions(result)


def cv_select(
    data: RegressionData,
    ladder: KnnLadderSpec,
    folds: int = 5,
    seed: int = 0,
) -> Tuple[int, np.ndarray]:
    """
    K-fold cross-validation baseline: the neighbor count with the smallest
    mean held-out squared error. Every candidate is refitted on every fold.

    Returns
    -------
    Tuple[int, np.ndarray]
        The selected 1-based ladder index and the cross-validated errors
    """
    splitter = KFold(n_splits=folds, shuffle=True, random_state=seed % 2**32)
    errors = np.zeros(len(ladder.neighbor_counts))
    for train_idx, held_idx in splitter.split(data.X):
        train, held = data.subset(train_idx), data.subset(held_idx)
        ladder.check(len(train))
        for i, k_nbr in enumerate(ladder.neighbor_counts):
            errors[i] += sse(held.y, knn_predict(train, held.X, k_nbr))
    errors /= len(data)
    return int(np.argmin(errors)) + 1, errors
