"""
Closed-form early-stopped aggregation on the Gaussian sequence model.

Observations are `x_i = theta*_i + z_i / sqrt(n)` with `theta*_i = i^(-beta* - 1/2)`.
Model k keeps the first `c_k = floor(n^q(k))` coordinates under independent
N(0, psi) priors and sets the others to zero. Under the square loss
`n ||x - theta||^2` with learning rate lambda the generalized posterior is
conjugate, so every criterion, posterior and oracle risk has a closed form.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveFloat,
    PositiveInt,
    field_validator,
    model_validator,
)
from scipy.integrate import simpson
from scipy.optimize import minimize_scalar
from scipy.special import zeta
from scipy.stats import norm
from typing_extensions import Literal

from esa.core import EsaResult, LadderSpec, StopRule, aggregate_points, run_esa
from esa.errors import LadderIndexError
from esa.registry import registry

logger = logging.getLogger(__name__)

# n^q is computed in floating point: 64 ** (1 / 3) is 3.9999999999999996
ROUNDING_SLACK = 1e-9
QUADRATURE_WINDOW = 10.0


class SeqConfig(BaseModel):
    """
    Parameters of the Gaussian sequence experiment.

    Parameters
    ----------
    n: int
        Sample size, the noise variance of each coordinate is 1 / n
    beta_star: float
        Smoothness of the true sequence
    q_ladder: Tuple[float, ...]
        Strictly increasing exponents in [0, 1], model k keeps n^q(k) coordinates
    lam: float
        Learning rate of the generalized posterior
    xi1: Optional[float]
        Scale of the oracle excess risk, defaults to `lam`
    trunc_dim: Optional[int]
        Number of simulated coordinates D, defaults to ceil(n^q(M))
    """

    model_config = ConfigDict(frozen=True)

    n: PositiveInt
    beta_star: PositiveFloat = 1.0
    q_ladder: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    lam: PositiveFloat = 0.5
    xi1: Optional[PositiveFloat] = None
    trunc_dim: Optional[PositiveInt] = None

    @field_validator("q_ladder")
    @classmethod
    def _check_ladder(cls, q_ladder):
        if len(q_ladder) == 0:
            raise ValueError("the ladder must hold at least one model")
        if any(not 0.0 <= q <= 1.0 for q in q_ladder):
            raise ValueError("exponents must lie in [0, 1]")
        if any(a >= b for a, b in zip(q_ladder, q_ladder[1:])):
            raise ValueError("exponents must be strictly increasing")
        return q_ladder

    @model_validator(mode="after")
    def _check_dim(self):
        if self.trunc_dim is not None and self.trunc_dim < self.min_dim:
            raise ValueError(
                f"trunc_dim must be at least ceil(n^q(M)) = {self.min_dim}"
            )
        return self

    @property
    def min_dim(self) -> int:
        return max(1, math.ceil(self.n ** self.q_ladder[-1] - ROUNDING_SLACK))

    @property
    def dim(self) -> int:
        return self.trunc_dim if self.trunc_dim is not None else self.min_dim

    @property
    def xi(self) -> float:
        return self.xi1 if self.xi1 is not None else self.lam

    @property
    def ladder(self) -> LadderSpec:
        return LadderSpec.from_labels([f"q={q:g}" for q in self.q_ladder])

    def cutoff(self, k: int) -> int:
        """Number of active coordinates c_k of model k."""
        if not 1 <= k <= len(self.q_ladder):
            raise LadderIndexError(k, len(self.q_ladder))
        c = math.floor(self.n ** self.q_ladder[k - 1] + ROUNDING_SLACK)
        return min(max(c, 0), self.dim)


class EbConfig(BaseModel):
    """
    Empirical Bayes search over the prior variance psi of the active coordinates.

    Parameters
    ----------
    psi_min: float
    psi_max: float
        Bounds of the prior variance
    rho_bar: float
        Divisor of the learning rate
    upsilon: Callable[[float], float]
        Nonnegative penalty on psi
    tol: float
        Tolerance of the 1-D search on psi
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    psi_min: PositiveFloat = 0.01
    psi_max: PositiveFloat = 100.0
    rho_bar: float = Field(1.0, ge=1.0)
    upsilon: Callable[[float], float] = Field(default_factory=lambda: ZeroPenalty())
    tol: PositiveFloat = 1e-8

    @model_validator(mode="after")
    def _check_bounds(self):
        if self.psi_min > self.psi_max:
            raise ValueError("psi_min must not exceed psi_max")
        return self


class ZeroPenalty:
    def __call__(self, psi: float) -> float:
        return 0.0

    def __repr__(self):
        return "ZeroPenalty()"


class LogSquarePenalty:
    """
    Penalty `scale * log(psi / center)^2`, favouring prior variances
    close to `center`.
    """

    def __init__(self, scale: float, center: float):
        self.scale = scale
        self.center = center

    def __call__(self, psi: float) -> float:
        return self.scale * math.log(psi / self.center) ** 2

    def __repr__(self):
        return f"LogSquarePenalty(scale={self.scale}, center={self.center})"


@registry.psi_penalty.register("zero")
def zero_penalty() -> ZeroPenalty:
    return ZeroPenalty()


@registry.psi_penalty.register("log-square")
def log_square_penalty(scale: PositiveFloat = 1.0, center: PositiveFloat = 1.0):
    return LogSquarePenalty(scale=scale, center=center)


@dataclass(frozen=True)
class SeqData:
    x: np.ndarray
    theta_star: np.ndarray

    def __post_init__(self):
        if self.x.shape != self.theta_star.shape or self.x.ndim != 1:
            raise ValueError("x and theta_star must be vectors of the same length")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.theta_star))):
            raise ValueError("x and theta_star must be finite")


@dataclass(frozen=True)
class CoordGaussPosterior:
    """
    Independent Gaussian posterior on the first `cutoff` coordinates,
    coordinates above the cutoff are identically zero.
    """

    cutoff: int
    means: np.ndarray
    variances: np.ndarray
    dim: int
    prior_variance: float = 1.0

    def mean_vector(self) -> np.ndarray:
        """Posterior mean, zero-padded up to `dim`."""
        mean = np.zeros(self.dim)
        mean[: self.cutoff] = self.means
        return mean


def true_sequence(beta_star: float, dim: int) -> np.ndarray:
    return np.arange(1, dim + 1, dtype=float) ** (-beta_star - 0.5)


def tail_energy(beta_star: float, dim: int) -> float:
    """Sum of theta*_i^2 over i > dim, as a Hurwitz zeta value."""
    return float(zeta(2.0 * beta_star + 1.0, dim + 1))


def simulate_seq(config: SeqConfig, seed: int) -> SeqData:
    """
    Draw `x_i = theta*_i + z_i`, z_i ~ N(0, 1/n), for i <= D.
    """
    rng = np.random.default_rng(seed)
    theta_star = true_sequence(config.beta_star, config.dim)
    x = theta_star + rng.standard_normal(config.dim) / math.sqrt(config.n)
    return SeqData(x=x, theta_star=theta_star)


def gauss_free_energy(
    x: np.ndarray,
    cutoff: int,
    scale: float,
    psi: float = 1.0,
) -> float:
    """
    `-log ∫ exp(-scale ||x - theta||^2) dPi(theta)` where Pi puts independent
    N(0, psi) distributions on the first `cutoff` coordinates and a point mass
    at zero on the others.

    Parameters
    ----------
    x: np.ndarray
        Centers of the quadratic loss
    cutoff: int
        Number of coordinates with a Gaussian prior
    scale: float
        Multiplier of the squared distance (lambda n for the criterion,
        xi1 n for the oracle risk)
    psi: float
        Prior variance of the active coordinates

    Returns
    -------
    float
    """
    x = np.asarray(x, dtype=float)
    active, inactive = x[:cutoff], x[cutoff:]
    a = 2.0 * scale * psi
    return float(
        cutoff * 0.5 * math.log1p(a)
        + scale * np.sum(active**2) / (1.0 + a)
        + scale * np.sum(inactive**2)
    )


def quadrature_free_energy(
    x: np.ndarray,
    cutoff: int,
    scale: float,
    grid_points: int = 4001,
) -> float:
    """
    Same quantity as `gauss_free_energy` with psi = 1, integrating each active
    coordinate numerically with a composite Simpson rule on [-10, 10].
    """
    if grid_points < 1000:
        raise ValueError("grid_points must be at least 1000")
    grid_points += 1 - grid_points % 2
    x = np.asarray(x, dtype=float)
    theta = np.linspace(-QUADRATURE_WINDOW, QUADRATURE_WINDOW, grid_points)
    active = x[:cutoff, None]
    integrand = np.exp(-scale * (active - theta) ** 2) * norm.pdf(theta)
    integrals = simpson(integrand, x=theta, axis=1)
    return float(-np.sum(np.log(integrals)) + scale * np.sum(x[cutoff:] ** 2))


def _check_data(data: SeqData, config: SeqConfig):
    if len(data.x) != config.dim:
        raise ValueError(f"expected {config.dim} coordinates, got {len(data.x)}")


def mvfe_seq(data: SeqData, k: int, config: SeqConfig) -> float:
    """
    Minimized variational free energy of model k. The Gaussian family contains
    the generalized posterior, so it equals `-log ∫ exp(-lambda l_n) dPi_k`.
    """
    _check_data(data, config)
    return gauss_free_energy(data.x, config.cutoff(k), config.lam * config.n)


def mvfe_bruteforce(
    data: SeqData,
    k: int,
    config: SeqConfig,
    grid_points: int = 4001,
) -> float:
    """Quadrature evaluation of `mvfe_seq`."""
    _check_data(data, config)
    return quadrature_free_energy(
        data.x, config.cutoff(k), config.lam * config.n, grid_points
    )


def _gauss_posterior(
    x: np.ndarray,
    cutoff: int,
    scale: float,
    psi: float,
) -> CoordGaussPosterior:
    a = 2.0 * scale * psi
    return CoordGaussPosterior(
        cutoff=cutoff,
        means=a * x[:cutoff] / (1.0 + a),
        variances=np.full(cutoff, psi / (1.0 + a)),
        dim=len(x),
        prior_variance=psi,
    )


def posterior_k(data: SeqData, k: int, config: SeqConfig) -> CoordGaussPosterior:
    """
    Generalized posterior of model k: on active coordinates,
    mean `2 lambda n x_i / (1 + 2 lambda n)` and variance `1 / (1 + 2 lambda n)`.
    """
    _check_data(data, config)
    return _gauss_posterior(data.x, config.cutoff(k), config.lam * config.n, 1.0)


def eb_objective(
    data: SeqData,
    k: int,
    config: SeqConfig,
    eb: EbConfig,
    psi: float,
) -> float:
    """
    Variational free energy of model k minimized over the variational family
    for a fixed prior variance psi, with learning rate lambda / rho_bar,
    plus the penalty upsilon(psi).
    """
    _check_data(data, config)
    scale = config.lam * config.n / eb.rho_bar
    return gauss_free_energy(data.x, config.cutoff(k), scale, psi) + eb.upsilon(psi)


def eb_mvfe(
    data: SeqData,
    k: int,
    config: SeqConfig,
    eb: EbConfig,
) -> Tuple[float, float]:
    """
    Jointly minimize the free energy of model k over the variational family
    and the prior variance psi in [psi_min, psi_max].

    The bounded scalar search (golden-section steps with parabolic
    interpolation) is followed by a comparison with the two bounds, where
    monotone objectives reach their minimum.

    Returns
    -------
    Tuple[float, float]
        The minimized value and the minimizing psi
    """
    if not eb.psi_min <= eb.psi_max:
        raise ValueError("psi_min must not exceed psi_max")

    def objective(psi):
        return eb_objective(data, k, config, eb, float(psi))

    candidates = [eb.psi_min, eb.psi_max]
    if eb.psi_min < eb.psi_max:
        found = minimize_scalar(
            objective,
            bounds=(eb.psi_min, eb.psi_max),
            method="bounded",
            options={"xatol": eb.tol},
        )
        candidates.append(float(found.x))
    values = [objective(psi) for psi in candidates]
    best = int(np.argmin(values))
    return values[best], candidates[best]


def eb_posterior_k(
    data: SeqData,
    k: int,
    config: SeqConfig,
    psi: float,
    rho_bar: float = 1.0,
) -> CoordGaussPosterior:
    """
    Variational posterior of model k under the prior variance psi:
    mean `2 s psi x_i / (1 + 2 s psi)`, variance `psi / (1 + 2 s psi)`,
    with `s = lambda n / rho_bar`.
    """
    _check_data(data, config)
    scale = config.lam * config.n / rho_bar
    return _gauss_posterior(data.x, config.cutoff(k), scale, psi)


class SeqCriterion:
    """
    Ladder evaluator of the sequence model, returning the minimized free energy
    (fixed prior, `vfe`, or empirical Bayes, `eb`) and the posterior of model k.
    """

    def __init__(
        self,
        data: SeqData,
        config: SeqConfig,
        criterion: Literal["vfe", "eb"] = "vfe",
        eb: Optional[EbConfig] = None,
    ):
        self.data = data
        self.config = config
        self.criterion = criterion
        self.eb = eb if eb is not None else EbConfig()

    def __call__(self, k: int) -> Tuple[float, CoordGaussPosterior]:
        if self.criterion == "eb":
            value, psi = eb_mvfe(self.data, k, self.config, self.eb)
            posterior = eb_posterior_k(
                self.data, k, self.config, psi, self.eb.rho_bar
            )
            return value, posterior
        return (
            mvfe_seq(self.data, k, self.config),
            posterior_k(self.data, k, self.config),
        )


def posterior_mean(result: EsaResult) -> np.ndarray:
    """Weighted average of the zero-padded posterior means of a ladder walk."""
    return aggregate_points(
        result.weights, [post.mean_vector() for post in result.artifacts]
    )


def esa_posterior_mean(
    data: SeqData,
    config: SeqConfig,
    rule: StopRule = StopRule(),
) -> np.ndarray:
    """
    Posterior mean of the ESA variational posterior on the mVFE criterion.

    Returns
    -------
    np.ndarray
        Vector of length D
    """
    result = run_esa(SeqCriterion(data, config), config.ladder, rule)
    return posterior_mean(result)


def _check_truth(theta_star: np.ndarray, config: SeqConfig) -> np.ndarray:
    theta_star = np.asarray(theta_star, dtype=float)
    if len(theta_star) != config.dim:
        raise ValueError(f"expected {config.dim} coordinates, got {len(theta_star)}")
    return theta_star


def oracle_excess_risk(config: SeqConfig, theta_star: np.ndarray, k: int) -> float:
    """
    Excess risk of model k, `-log ∫ exp(-xi1 n ||theta - theta*||^2) dPi_k`,
    including the coordinates beyond D.
    """
    theta_star = _check_truth(theta_star, config)
    scale = config.xi * config.n
    tail = scale * tail_energy(config.beta_star, config.dim)
    return gauss_free_energy(theta_star, config.cutoff(k), scale) + tail


def excess_risk_bruteforce(
    config: SeqConfig,
    theta_star: np.ndarray,
    k: int,
    grid_points: int = 4001,
) -> float:
    """Quadrature evaluation of `oracle_excess_risk`."""
    theta_star = _check_truth(theta_star, config)
    scale = config.xi * config.n
    tail = scale * tail_energy(config.beta_star, config.dim)
    energy = quadrature_free_energy(theta_star, config.cutoff(k), scale, grid_points)
    return energy + tail


def oracle_curve(config: SeqConfig, theta_star: np.ndarray) -> np.ndarray:
    return np.array(
        [
            oracle_excess_risk(config, theta_star, k)
            for k in range(1, len(config.q_ladder) + 1)
        ]
    )


def near_optimal_index(excess_risks: Sequence[float], tau: float) -> int:
    """
    First (1-based) k with `E(k) <= (1 + tau) E(k + 1)`, or M if there is none.
    """
    risks = np.asarray(excess_risks, dtype=float)
    if risks.ndim != 1 or risks.size == 0 or not np.all(np.isfinite(risks)):
        raise ValueError("expected a nonempty list of finite excess risks")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    hits = np.flatnonzero(risks[:-1] <= (1.0 + tau) * risks[1:])
    return int(hits[0]) + 1 if hits.size else len(risks)


def true_excess_risk(
    estimate: np.ndarray,
    theta_star: np.ndarray,
    n: int,
    beta_star: Optional[float] = None,
) -> float:
    """
    `n ||estimate - theta*||^2` over all coordinates of the true sequence.

    The estimate and `theta_star` only hold the first D coordinates. With
    `beta_star`, the coordinates beyond D (where the estimate is zero) add
    `n * sum_{i > D} i^(-1 - 2 beta_star)`, computed analytically. Without it
    the risk is truncated at D.

    Parameters
    ----------
    estimate: np.ndarray
    theta_star: np.ndarray
        True coefficients 1 ... D
    n: int
    beta_star: Optional[float]
        Smoothness of the true sequence, needed for the tail beyond D

    Returns
    -------
    float
    """
    estimate = np.asarray(estimate, dtype=float)
    theta_star = np.asarray(theta_star, dtype=float)
    if estimate.shape != theta_star.shape:
        raise ValueError(
            f"estimate has {len(estimate)} coordinates, expected {len(theta_star)}"
        )
    risk = n * float(np.sum((estimate - theta_star) ** 2))
    if beta_star is not None:
        risk += n * tail_energy(beta_star, len(theta_star))
    return risk
