"""
Replicated experiments comparing ESA with the full aggregation (FA) and model
selection (MS) baselines, and their CSV output.
"""

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    PositiveFloat,
    PositiveInt,
    TypeAdapter,
    field_validator,
    model_validator,
)
from typing_extensions import Annotated, Literal

from esa.config import Config
from esa.core import (
    EsaResult,
    LadderSpec,
    StopRule,
    as_selection,
    run_esa,
    run_full,
)
from esa.datasets import gen_regression, gen_setting_a, gen_setting_b
from esa.erm import (
    DEFAULT_NEIGHBOR_COUNTS,
    AiccCriterion,
    CriterionKind,
    KnnCriterion,
    KnnLadderSpec,
    RegressionData,
    aggregate_predictions,
    aicc_valid_counts,
    cv_select,
    knn_predict,
    split_data,
)
from esa.errors import EsaError
from esa.gauss_seq import (
    EbConfig,
    SeqConfig,
    SeqCriterion,
    oracle_curve,
    posterior_mean,
    simulate_seq,
    true_excess_risk,
    true_sequence,
)
from esa.metrics import ari, nmi
from esa.registry import registry
from esa.utils.random import replicate_seed
from esa.vgmm import (
    CaviConfig,
    GmmCriterion,
    empirical_prior,
    is_monotone,
    result_labels,
)

logger = logging.getLogger(__name__)

CSV_HEADER = (
    "experiment",
    "method",
    "replicate",
    "seed",
    "stop_index",
    "criterion_trace",
    "metric",
    "value",
    "wall_time_ms",
)
Method = Literal["esa", "fa", "ms"]
MARGIN_ALIASES = {"mult": "multiplicative", "add": "additive"}
CRITERION_SHORTCUTS = {
    "alpha": "alpha",
    "split": "split_fraction",
    "lam": "lam",
    "H": "H",
}


@dataclass(frozen=True)
class RunRecord:
    experiment: str
    method: str
    replicate: int
    seed: int
    stop_index: int
    criterion_trace: Tuple[float, ...]
    metric: str
    value: float
    wall_time_ms: float

    def __post_init__(self):
        if self.wall_time_ms < 0:
            raise ValueError("wall_time_ms must be nonnegative")
        object.__setattr__(
            self, "criterion_trace", tuple(float(v) for v in self.criterion_trace)
        )


class ExperimentBase(BaseModel):
    """
    Settings shared by every experiment.

    Parameters
    ----------
    method: Tuple[str, ...]
        Methods to run among `esa`, `fa` and `ms`
    replicates: int
        Number of replicates, each with its own seed derived from `seed`
    seed: int
        Master seed
    delta: float
        Promoting margin of the stopping rule
    margin_mode: str
        `additive` (or `add`) or `multiplicative` (or `mult`)
    out: Path
        Output CSV path
    no_timing: bool
        Write 0 in the wall time column, for byte-identical reruns
    workers: int
        Number of replicates run concurrently
    """

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    method: Tuple[Method, ...] = ("esa", "fa", "ms")
    replicates: PositiveInt = 1
    seed: int = 0
    delta: NonNegativeFloat = 0.0
    margin_mode: Literal["multiplicative", "additive"] = Field(
        "additive", alias="margin"
    )
    out: Path = Path("results.csv")
    no_timing: bool = False
    workers: PositiveInt = 1

    @field_validator("method", mode="before")
    @classmethod
    def _as_tuple(cls, value):
        if isinstance(value, str):
            value = [value]
        value = tuple(value)
        if len(value) == 0:
            raise ValueError("at least one method is required")
        if len(set(value)) != len(value):
            raise ValueError("methods must not be repeated")
        return value

    @field_validator("margin_mode", mode="before")
    @classmethod
    def _expand_margin(cls, value):
        return MARGIN_ALIASES.get(value, value)

    @property
    def rule(self) -> StopRule:
        return StopRule(delta=self.delta, margin_mode=self.margin_mode)


class GaussSeqExperiment(ExperimentBase):
    """
    Gaussian sequence experiment. `criterion = "eb"` runs the empirical Bayes
    variant, with the prior variance searched in [psi_min, psi_max].
    """

    experiment: Literal["gauss-seq"] = "gauss-seq"
    n: PositiveInt = 4096
    beta_star: PositiveFloat = 1.0
    q_ladder: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    lam: PositiveFloat = 0.5
    xi1: Optional[PositiveFloat] = None
    trunc_dim: Optional[PositiveInt] = None
    criterion: Literal["vfe", "eb"] = "vfe"
    psi_min: PositiveFloat = 0.01
    psi_max: PositiveFloat = 100.0
    rho_bar: float = Field(1.0, ge=1.0)
    upsilon: Dict[str, Any] = {"@psi_penalty": "zero"}

    @field_validator("q_ladder", mode="before")
    @classmethod
    def _as_ladder(cls, value):
        return (value,) if isinstance(value, (int, float)) else value

    @field_validator("upsilon")
    @classmethod
    def _check_upsilon(cls, value):
        if "@psi_penalty" not in value:
            raise ValueError("expected a section with a `@psi_penalty` key")
        if not callable(Config(value).resolve()):
            raise ValueError("the psi penalty must be callable")
        return value

    @model_validator(mode="after")
    def _check_configs(self):
        self.seq_config
        self.eb_config
        return self

    @property
    def seq_config(self) -> SeqConfig:
        return SeqConfig(
            n=self.n,
            beta_star=self.beta_star,
            q_ladder=self.q_ladder,
            lam=self.lam,
            xi1=self.xi1,
            trunc_dim=self.trunc_dim,
        )

    @property
    def eb_config(self) -> EbConfig:
        return EbConfig(
            psi_min=self.psi_min,
            psi_max=self.psi_max,
            rho_bar=self.rho_bar,
            upsilon=Config(self.upsilon).resolve(),
        )


class GmmExperiment(ExperimentBase):
    """Mixture clustering on the heterogeneous Gaussians (a) or semicircles (b)."""

    experiment: Literal["gmm"] = "gmm"
    n: PositiveInt = 500
    setting: Literal["a", "b"] = "a"
    k_max: PositiveInt = 10
    max_iter: PositiveInt = 500
    rel_tol: PositiveFloat = 1e-6
    restarts: PositiveInt = 5
    cov_floor: NonNegativeFloat = 0.0

    @model_validator(mode="after")
    def _check_size(self):
        if self.k_max > self.n:
            raise ValueError("k_max must not exceed n")
        return self

    def cavi_config(self, seed: int) -> CaviConfig:
        return CaviConfig(
            max_iter=self.max_iter,
            rel_tol=self.rel_tol,
            restarts=self.restarts,
            seed=seed,
            cov_floor=self.cov_floor,
        )


class KnnExperiment(ExperimentBase):
    """
    kNN regression on `y = sin(2 pi x_1) + x_2^2 + eps`. The `alpha` and `split`
    shortcuts set the parameters of the `val` criterion, `lam` and `H` those of
    the `pen` criterion.
    """

    experiment: Literal["knn"] = "knn"
    n: PositiveInt = 500
    p: PositiveInt = 2
    sigma: NonNegativeFloat = 0.3
    test_fraction: float = Field(0.2, gt=0.0, lt=1.0)
    ladder: Tuple[PositiveInt, ...] = DEFAULT_NEIGHBOR_COUNTS
    criterion: CriterionKind = AiccCriterion()
    cv_folds: int = Field(5, ge=2)

    @model_validator(mode="before")
    @classmethod
    def _build_criterion(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        criterion = data.get("criterion", "aicc")
        if isinstance(criterion, str):
            criterion = {"kind": criterion}
        if isinstance(criterion, dict):
            criterion = dict(criterion)
            if "@criterion" in criterion:
                criterion = Config({"criterion": criterion}).resolve()["criterion"]
        for key, field in CRITERION_SHORTCUTS.items():
            if key in data:
                value = data.pop(key)
                if isinstance(criterion, BaseModel):
                    criterion = criterion.model_dump()
                criterion[field] = value
        data["criterion"] = criterion
        if isinstance(data.get("ladder"), int):
            data["ladder"] = (data["ladder"],)
        return data

    @model_validator(mode="after")
    def _check_ladder(self):
        self.ladder_spec
        return self

    @property
    def ladder_spec(self) -> KnnLadderSpec:
        return KnnLadderSpec(neighbor_counts=self.ladder)


ExperimentConfig = Annotated[
    Union[GaussSeqExperiment, GmmExperiment, KnnExperiment],
    Field(discriminator="experiment"),
]
experiment_adapter = TypeAdapter(ExperimentConfig)
EXPERIMENTS = {
    "gauss-seq": GaussSeqExperiment,
    "gmm": GmmExperiment,
    "knn": KnnExperiment,
}


class Stopwatch:
    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.elapsed_ms = 0.0

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        if self.enabled:
            self.elapsed_ms = (time.perf_counter() - self._start) * 1000.0


def _method_runs(
    make_evaluator: Callable[[], Callable],
    config: ExperimentBase,
    ladder,
) -> Dict[str, Tuple[EsaResult, float]]:
    """
    Run the configured methods, each on a fresh evaluator built inside its own
    timed block, so that no method reuses work cached by another. FA and MS
    share one evaluation of the whole ladder, and both report its wall time.
    """
    runs = {}
    timing = not config.no_timing
    if "esa" in config.method:
        with Stopwatch(timing) as watch:
            result = run_esa(make_evaluator(), ladder, config.rule)
        runs["esa"] = (result, watch.elapsed_ms)
    if "fa" in config.method or "ms" in config.method:
        with Stopwatch(timing) as watch:
            full = run_full(make_evaluator(), ladder)
        if "fa" in config.method:
            runs["fa"] = (full, watch.elapsed_ms)
        if "ms" in config.method:
            runs["ms"] = (as_selection(full), watch.elapsed_ms)
    return runs


def _records(
    config: ExperimentBase,
    method: str,
    replicate: int,
    seed: int,
    result: EsaResult,
    metrics: Dict[str, float],
    elapsed_ms: float,
) -> List[RunRecord]:
    return [
        RunRecord(
            experiment=config.experiment,
            method=method,
            replicate=replicate,
            seed=seed,
            stop_index=result.stop_index,
            criterion_trace=result.evaluated.values,
            metric=metric,
            value=float(value),
            wall_time_ms=elapsed_ms,
        )
        for metric, value in metrics.items()
    ]


def _failed_records(
    config: ExperimentBase,
    replicate: int,
    seed: int,
    error: Exception,
) -> List[RunRecord]:
    logger.warning("replicate %d failed: %s", replicate, error)
    return [
        RunRecord(
            experiment=config.experiment,
            method=method,
            replicate=replicate,
            seed=seed,
            stop_index=0,
            criterion_trace=(),
            metric="failed",
            value=math.nan,
            wall_time_ms=0.0,
        )
        for method in config.method
    ]


def _replicates(config: ExperimentBase, run_one: Callable[[int, int], List[RunRecord]]):
    def task(replicate):
        seed = replicate_seed(config.seed, replicate)
        try:
            records = run_one(replicate, seed)
        except EsaError as e:
            return _failed_records(config, replicate, seed, e)
        logger.info("%s: replicate %d done", config.experiment, replicate)
        return records

    indices = range(config.replicates)
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            batches = list(pool.map(task, indices))
    else:
        batches = [task(r) for r in indices]
    return [record for batch in batches for record in batch]


def oracle_records(config: GaussSeqExperiment) -> List[RunRecord]:
    """
    Closed-form excess risks E_n(1), ..., E_n(M) as one row per model, and the
    row of their argmin k*.
    """
    seq_config = config.seq_config
    theta_star = true_sequence(config.beta_star, seq_config.dim)
    curve = tuple(float(v) for v in oracle_curve(seq_config, theta_star))
    argmin = int(np.argmin(curve)) + 1

    def row(k, metric, value):
        return RunRecord(
            experiment=config.experiment,
            method="oracle",
            replicate=0,
            seed=config.seed,
            stop_index=k,
            criterion_trace=curve[:k],
            metric=metric,
            value=value,
            wall_time_ms=0.0,
        )

    rows = [row(k, "excess_risk", curve[k - 1]) for k in range(1, len(curve) + 1)]
    rows.append(row(argmin, "oracle_argmin", float(argmin)))
    return rows


@registry.experiment.register("gauss-seq")
def run_gauss_experiment(config: GaussSeqExperiment) -> List[RunRecord]:
    """
    Per replicate, simulate the sequence, run the methods and record the true
    excess risk of the aggregated posterior mean and the number of evaluated
    models. The oracle curve rows come first.

    Parameters
    ----------
    config: GaussSeqExperiment

    Returns
    -------
    List[RunRecord]
    """
    seq_config = config.seq_config
    eb_config = config.eb_config

    def run_one(replicate, seed):
        data = simulate_seq(seq_config, seed)
        make_evaluator = partial(
            SeqCriterion, data, seq_config, config.criterion, eb_config
        )
        records = []
        for method, (result, elapsed) in _method_runs(
            make_evaluator, config, seq_config.ladder
        ).items():
            risk = true_excess_risk(
                posterior_mean(result), data.theta_star, config.n, config.beta_star
            )
            metrics = {"excess_risk": risk, "evaluations": result.n_evaluated}
            records += _records(
                config, method, replicate, seed, result, metrics, elapsed
            )
        return records

    return oracle_records(config) + _replicates(config, run_one)


@registry.experiment.register("gmm")
def run_cluster_experiment(config: GmmExperiment) -> List[RunRecord]:
    """
    Per replicate, generate the clustering setting, walk the mixture sizes
    1 ... k_max and record the ARI and NMI of the maximum-weight mixture against
    the true labels, the number of fitted mixture sizes and whether every
    ELBO trace increased.
    """
    generate = gen_setting_a if config.setting == "a" else gen_setting_b

    def run_one(replicate, seed):
        data, truth = generate(config.n, seed)
        make_evaluator = partial(
            GmmCriterion, data, empirical_prior(data), config.cavi_config(seed)
        )
        ladder = _mixture_ladder(config.k_max)
        records = []
        runs = _method_runs(make_evaluator, config, ladder)
        for method, (result, elapsed) in runs.items():
            labels = result_labels(result)
            monotone = all(is_monotone(fit.elbo_trace) for fit in result.artifacts)
            metrics = {
                "ari": ari(truth, labels),
                "nmi": nmi(truth, labels),
                "evaluations": result.n_evaluated,
                "cavi_monotone": float(monotone),
            }
            records += _records(
                config, method, replicate, seed, result, metrics, elapsed
            )
        return records

    return _replicates(config, run_one)


def _mixture_ladder(k_max: int) -> LadderSpec:
    return LadderSpec.from_labels([f"K={K}" for K in range(1, k_max + 1)])


def rmse(y: np.ndarray, predictions: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(y) - np.asarray(predictions)) ** 2)))


@registry.experiment.register("knn")
def run_knn_experiment(config: KnnExperiment) -> List[RunRecord]:
    """
    Per replicate, draw the regression data, split it into training and test
    parts, and record the test RMSE of each method together with its tuning
    time. A `cv` row reports the model selected by K-fold cross-validation.
    Neighbor counts for which AICc is undefined are dropped with a warning.
    """
    ladder = config.ladder_spec

    def run_one(replicate, seed):
        data = gen_regression(config.n, seed, p=config.p, sigma=config.sigma)
        train, test = split_data(data, config.test_fraction, seed)
        replicate_ladder = _usable_ladder(ladder, config.criterion, len(train))
        make_evaluator = partial(
            KnnCriterion, train, replicate_ladder, config.criterion, test.X
        )
        records = []
        for method, (result, elapsed) in _method_runs(
            make_evaluator, config, replicate_ladder.ladder
        ).items():
            metrics = {
                "rmse": rmse(test.y, aggregate_predictions(result)),
                "evaluations": result.n_evaluated,
            }
            records += _records(
                config, method, replicate, seed, result, metrics, elapsed
            )
        records.append(_cv_record(config, replicate, seed, train, test))
        return records

    return _replicates(config, run_one)


def _usable_ladder(
    ladder: KnnLadderSpec,
    criterion: CriterionKind,
    n_train: int,
) -> KnnLadderSpec:
    counts = ladder.neighbor_counts
    if isinstance(criterion, AiccCriterion):
        valid = aicc_valid_counts(counts, n_train)
        if len(valid) < len(counts):
            logger.warning(
                "dropping neighbor counts %s, AICc is undefined for them",
                sorted(set(counts) - set(valid)),
            )
        counts = valid
    if not counts:
        raise ValueError("no neighbor count left in the ladder")
    return KnnLadderSpec(neighbor_counts=tuple(counts))


def _cv_record(
    config: KnnExperiment,
    replicate: int,
    seed: int,
    train: RegressionData,
    test: RegressionData,
) -> RunRecord:
    ladder = config.ladder_spec
    with Stopwatch(not config.no_timing) as watch:
        selected, errors = cv_select(train, ladder, folds=config.cv_folds, seed=seed)
    predictions = knn_predict(train, test.X, ladder.neighbor_counts[selected - 1])
    return RunRecord(
        experiment=config.experiment,
        method="cv",
        replicate=replicate,
        seed=seed,
        stop_index=len(errors),
        criterion_trace=tuple(errors),
        metric="rmse",
        value=rmse(test.y, predictions),
        wall_time_ms=watch.elapsed_ms,
    )


def run_experiment(config: Union[ExperimentBase, Dict[str, Any]]) -> List[RunRecord]:
    """
    Validate a config when given as a dict, and run the experiment registered
    under its `experiment` name.
    """
    if isinstance(config, dict):
        config = experiment_adapter.validate_python(config)
    return registry.experiment.get(config.experiment)(config)


def _format_float(value: float) -> str:
    return format(float(value), ".17g")


def write_csv(records: Sequence[RunRecord], path: Union[str, Path]):
    """
    Write records as CSV, UTF-8 with LF line endings. Criterion traces are
    joined with semicolons and floats have 17 significant digits.

    Parameters
    ----------
    records: Sequence[RunRecord]
    path: Union[str, Path]
    """
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow(
                [
                    r.experiment,
                    r.method,
                    r.replicate,
                    r.seed,
                    r.stop_index,
                    ";".join(_format_float(v) for v in r.criterion_trace),
                    r.metric,
                    _format_float(r.value),
                    _format_float(r.wall_time_ms),
                ]
            )


def read_csv(path: Union[str, Path]) -> List[RunRecord]:
    """Parse a file written by `write_csv` back into records."""
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f, lineterminator="\n")
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        return [
            RunRecord(
                experiment=row[0],
                method=row[1],
                replicate=int(row[2]),
                seed=int(row[3]),
                stop_index=int(row[4]),
                criterion_trace=tuple(float(v) for v in row[5].split(";") if v),
                metric=row[6],
                value=float(row[7]),
                wall_time_ms=float(row[8]),
            )
            for row in reader
        ]
