"""
Variational Bayes for finite Gaussian mixtures with a Dirichlet prior on the
weights and independent Normal-Wishart priors on the component means and
precisions, fitted by coordinate ascent (CAVI). The ESA criterion of a mixture
with K components is its negative final ELBO.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, NonNegativeFloat, PositiveFloat
from pydantic import PositiveInt
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist
from scipy.special import digamma, gammaln, multigammaln, softmax, xlogy

from esa.core import EsaResult, LadderSpec, StopRule, run_esa
from esa.errors import DegenerateCovarianceError, NonFiniteCriterionError
from esa.utils.random import spawn_rng

logger = logging.getLogger(__name__)

EMPTY_MASS = 1e-10
MONOTONE_SLACK = 1e-8
INIT_MIX = 0.9


@dataclass(frozen=True)
class GmmPrior:
    """
    Dirichlet(alpha0) prior on the weights, and for each component
    `Lambda ~ Wishart(W0, nu0)`, `mu | Lambda ~ N(m0, (beta0 Lambda)^-1)`.
    """

    alpha0: float
    beta0: float
    m0: np.ndarray
    W0: np.ndarray
    nu0: float

    def __post_init__(self):
        m0 = np.asarray(self.m0, dtype=float).reshape(-1)
        W0 = np.atleast_2d(np.asarray(self.W0, dtype=float))
        d = len(m0)
        if W0.shape != (d, d):
            raise ValueError(f"W0 must be a {d}x{d} matrix, got shape {W0.shape}")
        if not np.allclose(W0, W0.T):
            raise ValueError("W0 must be symmetric")
        if self.alpha0 <= 0 or self.beta0 <= 0:
            raise ValueError("alpha0 and beta0 must be positive")
        if self.nu0 < d:
            raise ValueError(f"nu0 must be at least the dimension {d}")
        try:
            cho_factor(W0)
        except LinAlgError:
            raise ValueError("W0 must be positive definite")
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "W0", W0)

    @property
    def dim(self) -> int:
        return len(self.m0)


def empirical_prior(data: np.ndarray) -> GmmPrior:
    """
    Data-dependent prior: `m0` is the sample mean, `W0` the inverse of the
    sample covariance (1/n normalization), `nu0 = d` and `alpha0 = beta0 = 1`.
    """
    data = np.asarray(data, dtype=float)
    n, d = data.shape
    centered = data - data.mean(axis=0)
    cov = centered.T @ centered / n
    return GmmPrior(
        alpha0=1.0,
        beta0=1.0,
        m0=data.mean(axis=0),
        W0=np.linalg.inv(cov),
        nu0=float(d),
    )


@dataclass(frozen=True)
class GmmVarState:
    """
    Mean-field posterior of a K-component mixture: Dirichlet(alpha) on the
    weights, Normal-Wishart(m, beta, W, nu) per component, and the
    responsibilities `resp` (n x K) of the allocations.
    """

    alpha: np.ndarray
    beta: np.ndarray
    m: np.ndarray
    W: np.ndarray
    nu: np.ndarray
    resp: np.ndarray

    @property
    def n_components(self) -> int:
        return len(self.alpha)

    def labels(self) -> np.ndarray:
        """Hard assignments, ties go to the lowest component index."""
        return np.argmax(self.resp, axis=1)

    def permute(self, order) -> "GmmVarState":
        order = np.asarray(order)
        return GmmVarState(
            alpha=self.alpha[order],
            beta=self.beta[order],
            m=self.m[order],
            W=self.W[order],
            nu=self.nu[order],
            resp=self.resp[:, order],
        )


class CaviConfig(BaseModel):
    """
    Parameters
    ----------
    max_iter: int
        Maximum number of sweeps per run
    rel_tol: float
        A run stops when the relative ELBO change falls below this value
    restarts: int
        Number of independent initializations, the best final ELBO is kept
    seed: int
        Master seed of the initializations
    cov_floor: float
        Added to the diagonal of the scatter matrix of non-empty components
    """

    model_config = ConfigDict(frozen=True)

    max_iter: PositiveInt = 500
    rel_tol: PositiveFloat = 1e-6
    restarts: PositiveInt = 5
    seed: int = 0
    cov_floor: NonNegativeFloat = 0.0


@dataclass(frozen=True)
class GmmFit:
    state: GmmVarState
    elbo_trace: Tuple[float, ...]

    @property
    def elbo(self) -> float:
        return self.elbo_trace[-1]


def _check_data(data: np.ndarray, prior: GmmPrior) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValueError("data must be an n x d matrix")
    if data.shape[1] != prior.dim:
        raise ValueError(
            f"data has dimension {data.shape[1]}, the prior has dimension {prior.dim}"
        )
    if not np.all(np.isfinite(data)):
        raise ValueError("data must be finite")
    return data


def _inverse_and_logdet(precision_inv: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Invert each K x d x d matrix through its Cholesky factor."""
    K, d, _ = precision_inv.shape
    W = np.empty_like(precision_inv)
    logdet = np.empty(K)
    for k in range(K):
        try:
            factor = cho_factor(precision_inv[k])
        except LinAlgError:
            raise DegenerateCovarianceError(k)
        W[k] = cho_solve(factor, np.eye(d))
        # log|W| = -log|W^-1|
        logdet[k] = -2.0 * np.sum(np.log(np.diag(factor[0])))
    return W, logdet


def m_step(
    data: np.ndarray,
    resp: np.ndarray,
    prior: GmmPrior,
    cov_floor: float = 0.0,
) -> GmmVarState:
    """
    Conjugate update of the weight and component posteriors given the
    responsibilities. Statistics are accumulated around `m0`, so that a
    component without mass gets exactly the prior parameters.
    """
    n, d = data.shape
    centered = data - prior.m0
    nk = resp.sum(axis=0)
    empty = nk < EMPTY_MASS
    first = resp.T @ centered
    second = np.einsum("nk,nd,ne->kde", resp, centered, centered)
    first[empty] = 0.0
    second[empty] = 0.0
    nk = np.where(empty, 0.0, nk)

    beta = prior.beta0 + nk
    m = prior.m0 + first / beta[:, None]
    scatter = second - np.einsum("kd,ke->kde", first, first) / beta[:, None, None]
    scatter[~empty] += cov_floor * np.eye(d)
    W, _ = _inverse_and_logdet(np.linalg.inv(prior.W0) + scatter)
    return GmmVarState(
        alpha=prior.alpha0 + nk,
        beta=beta,
        m=m,
        W=W,
        nu=prior.nu0 + nk,
        resp=resp,
    )


def _expected_log_det(state: GmmVarState, logdet_W: np.ndarray) -> np.ndarray:
    d = state.m.shape[1]
    half_nu = 0.5 * (state.nu[:, None] - np.arange(d)[None, :])
    return np.sum(digamma(half_nu), axis=1) + d * math.log(2.0) + logdet_W


def _log_rho(data: np.ndarray, state: GmmVarState, logdet_W: np.ndarray):
    """Unnormalized log responsibilities, n x K."""
    d = data.shape[1]
    e_log_pi = digamma(state.alpha) - digamma(state.alpha.sum())
    e_log_det = _expected_log_det(state, logdet_W)
    diff = data[None, :, :] - state.m[:, None, :]
    maha = np.einsum("knd,kde,kne->nk", diff, state.W, diff)
    e_quad = d / state.beta[None, :] + state.nu[None, :] * maha
    return (
        e_log_pi[None, :]
        + 0.5 * e_log_det[None, :]
        - 0.5 * d * math.log(2.0 * math.pi)
        - 0.5 * e_quad
    )


def _logdet(W: np.ndarray) -> np.ndarray:
    return np.linalg.slogdet(W)[1]


def e_step(data: np.ndarray, state: GmmVarState) -> GmmVarState:
    """Optimal responsibilities given the weight and component posteriors."""
    resp = softmax(_log_rho(data, state, _logdet(state.W)), axis=1)
    return replace(state, resp=resp)


def _log_wishart_norm(W_logdet, nu, d):
    """log B(W, nu) of the Wishart normalization constant."""
    return -0.5 * nu * W_logdet - 0.5 * nu * d * math.log(2.0) - multigammaln(
        0.5 * nu, d
    )


def _log_dirichlet_norm(alpha: np.ndarray) -> float:
    return float(gammaln(alpha.sum()) - gammaln(alpha).sum())


def elbo(state: GmmVarState, data: np.ndarray, prior: GmmPrior) -> float:
    """
    Evidence lower bound of the mean-field posterior `state`.

    Parameters
    ----------
    state: GmmVarState
    data: np.ndarray
        n x d observations
    prior: GmmPrior

    Returns
    -------
    float
    """
    data = _check_data(data, prior)
    K = state.n_components
    d = prior.dim
    if state.resp.shape != (len(data), K):
        raise ValueError("responsibilities do not match the data and components")
    for k in range(K):
        try:
            cho_factor(state.W[k])
        except LinAlgError:
            raise DegenerateCovarianceError(k)

    logdet_W = _logdet(state.W)
    e_log_pi = digamma(state.alpha) - digamma(state.alpha.sum())
    e_log_det = _expected_log_det(state, logdet_W)

    # E[log p(X | Z, mu, Lambda)] + E[log p(Z | pi)] - E[log q(Z)]
    data_term = np.sum(state.resp * _log_rho(data, state, logdet_W))
    entropy_z = -np.sum(xlogy(state.resp, state.resp))

    # E[log p(pi)] - E[log q(pi)]
    dirichlet = (
        _log_dirichlet_norm(np.full(K, prior.alpha0))
        + (prior.alpha0 - 1.0) * e_log_pi.sum()
        - _log_dirichlet_norm(state.alpha)
        - np.sum((state.alpha - 1.0) * e_log_pi)
    )

    # E[log p(mu, Lambda)] - E[log q(mu, Lambda)]
    W0_inv = np.linalg.inv(prior.W0)
    dm = state.m - prior.m0
    maha0 = np.einsum("kd,kde,ke->k", dm, state.W, dm)
    trace0 = np.einsum("de,ked->k", W0_inv, state.W)
    log_p = (
        0.5
        * np.sum(
            d * math.log(prior.beta0 / (2.0 * math.pi))
            + e_log_det
            - d * prior.beta0 / state.beta
            - prior.beta0 * state.nu * maha0
        )
        + K * _log_wishart_norm(_logdet(prior.W0), prior.nu0, d)
        + 0.5 * (prior.nu0 - d - 1.0) * e_log_det.sum()
        - 0.5 * np.sum(state.nu * trace0)
    )
    entropy_lambda = (
        -_log_wishart_norm(logdet_W, state.nu, d)
        - 0.5 * (state.nu - d - 1.0) * e_log_det
        + 0.5 * state.nu * d
    )
    log_q = np.sum(
        0.5 * e_log_det
        + 0.5 * d * np.log(state.beta / (2.0 * math.pi))
        - 0.5 * d
        - entropy_lambda
    )
    return float(data_term + entropy_z + dirichlet + log_p - log_q)


def init_responsibilities(data: np.ndarray, K: int, rng: np.random.Generator):
    """
    Assign each point to the nearest of K distinct random data points,
    softened as `0.9 * onehot + 0.1 / K`.
    """
    n = len(data)
    centers = rng.choice(n, size=K, replace=False)
    nearest = np.argmin(cdist(data, data[centers], "sqeuclidean"), axis=1)
    resp = np.full((n, K), (1.0 - INIT_MIX) / K)
    resp[np.arange(n), nearest] += INIT_MIX
    return resp


def _run(
    data: np.ndarray,
    resp: np.ndarray,
    prior: GmmPrior,
    config: CaviConfig,
) -> GmmFit:
    trace: List[float] = []
    state = None
    for _ in range(config.max_iter):
        state = e_step(data, m_step(data, resp, prior, config.cov_floor))
        resp = state.resp
        value = elbo(state, data, prior)
        if not math.isfinite(value):
            raise NonFiniteCriterionError(state.n_components, value)
        if trace and value < trace[-1] - MONOTONE_SLACK:
            logger.warning(
                "ELBO decreased from %.17g to %.17g at K=%d",
                trace[-1],
                value,
                state.n_components,
            )
        trace.append(value)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < config.rel_tol * abs(
            trace[-1]
        ):
            break
    return GmmFit(state=state, elbo_trace=tuple(trace))


def cavi_fit(
    data: np.ndarray,
    K: int,
    prior: GmmPrior,
    config: CaviConfig = CaviConfig(),
    init_resp: Optional[np.ndarray] = None,
) -> GmmFit:
    """
    Fit a K-component mixture by coordinate ascent. Each sweep updates the
    weight and component posteriors, then the responsibilities.

    Parameters
    ----------
    data: np.ndarray
        n x d observations
    K: int
        Number of components
    prior: GmmPrior
    config: CaviConfig
    init_resp: Optional[np.ndarray]
        Initial responsibilities (n x K). When given, a single run starts from
        them instead of the random restarts.

    Returns
    -------
    GmmFit
        The run with the highest final ELBO and its ELBO trace
    """
    data = _check_data(data, prior)
    n = len(data)
    if not 1 <= K <= n:
        raise ValueError(f"K must be between 1 and n = {n}, got {K}")
    if init_resp is not None:
        init_resp = np.asarray(init_resp, dtype=float)
        if init_resp.shape != (n, K):
            raise ValueError(f"init_resp must have shape {(n, K)}")
        return _run(data, init_resp, prior, config)

    best = None
    for restart in range(config.restarts):
        rng = spawn_rng(config.seed, K, restart)
        fit = _run(data, init_responsibilities(data, K, rng), prior, config)
        logger.debug("K=%d restart %d: ELBO %.17g", K, restart, fit.elbo)
        if best is None or fit.elbo > best.elbo:
            best = fit
    return best


def is_monotone(trace, slack: float = MONOTONE_SLACK) -> bool:
    trace = np.asarray(trace, dtype=float)
    return bool(np.all(np.diff(trace) >= -slack))


class GmmCriterion:
    """
    Ladder evaluator over mixture sizes: model K is fitted by CAVI and its
    criterion is the negative final ELBO.
    """

    def __init__(
        self,
        data: np.ndarray,
        prior: GmmPrior,
        config: CaviConfig = CaviConfig(),
    ):
        self.data = data
        self.prior = prior
        self.config = config

    def __call__(self, K: int) -> Tuple[float, GmmFit]:
        fit = cavi_fit(self.data, K, self.prior, self.config)
        return -fit.elbo, fit


def result_labels(result: EsaResult) -> np.ndarray:
    """Labels of the maximum-weight evaluated mixture."""
    return result.artifacts[result.best].state.labels()


def esa_cluster(
    data: np.ndarray,
    K_max: int,
    prior_builder: Callable[[np.ndarray], GmmPrior] = empirical_prior,
    cavi_config: CaviConfig = CaviConfig(),
    rule: StopRule = StopRule(),
) -> Tuple[EsaResult, np.ndarray]:
    """
    Walk the mixture sizes K = 1 ... K_max and stop at the first increase of
    the negative ELBO.

    Parameters
    ----------
    data: np.ndarray
    K_max: int
    prior_builder: Callable[[np.ndarray], GmmPrior]
        Builds the prior from the data
    cavi_config: CaviConfig
    rule: StopRule

    Returns
    -------
    Tuple[EsaResult, np.ndarray]
        The ladder walk and the labels of its maximum-weight mixture
    """
    if K_max < 1:
        raise ValueError("K_max must be at least 1")
    criterion = GmmCriterion(data, prior_builder(data), cavi_config)
    ladder = LadderSpec.from_labels([f"K={K}" for K in range(1, K_max + 1)])
    result = run_esa(criterion, ladder, rule)
    return result, result_labels(result)
