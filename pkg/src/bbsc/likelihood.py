"""The three exponential-family observation models.

Each variant contributes three things: a closed-form posterior over its
per-datum scale, a pursuit-time bound (the terms of the joint likelihood
that depend on the code), and a decoder-update bound with its gradient
through the decoder output. The pursuit bounds drop code- and
parameter-independent constants; reported metrics use fully normalized
densities instead (see bbsc.metrics).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from bbsc import backend
from bbsc.nn import DecoderNetwork, DimensionError, GradientBuffer, backward


@dataclass(frozen=True)
class GaussianLikelihoodConfig:
    """Isotropic noise sigma2 around a scaled decoder mean; scale prior N(0, c)."""

    sigma2: float = 0.1
    c: float = 1.0

    def __post_init__(self):
        if self.sigma2 <= 0.0 or self.c <= 0.0:
            raise ValueError("sigma2 and c must be strictly positive")


@dataclass(frozen=True)
class GaussianScalePosterior:
    mean: float
    variance: float


@dataclass(frozen=True)
class GammaScalePosterior:
    shape: float
    rate: float

    @property
    def mean(self) -> float:
        return self.shape / self.rate


class PoissonLikelihoodConfig:
    """Gamma(a, b) scale prior plus a column-stochastic topic matrix.

    The matrix is parameterized by unconstrained logits, one softmax per
    column, so the optimizer never has to project back onto the simplex.
    """

    def __init__(self, beta_logits: np.ndarray, a: float = 1.0, b: float = 1.0):
        if a <= 0.0 or b <= 0.0:
            raise ValueError("gamma prior parameters must be strictly positive")
        self.a = float(a)
        self.b = float(b)
        self.beta_logits = np.ascontiguousarray(beta_logits, dtype=np.float64)
        if self.beta_logits.ndim != 2:
            raise ValueError("beta logits must be a (vocab x topics) matrix")

    @property
    def n_words(self) -> int:
        return self.beta_logits.shape[0]

    @property
    def n_topics(self) -> int:
        return self.beta_logits.shape[1]

    @property
    def beta(self) -> np.ndarray:
        return column_softmax(self.beta_logits)

    @classmethod
    def from_beta(cls, beta: np.ndarray, a: float = 1.0, b: float = 1.0) -> "PoissonLikelihoodConfig":
        beta = np.asarray(beta, dtype=np.float64)
        validate_topic_matrix(beta)
        with np.errstate(divide="ignore"):
            logits = np.log(beta)  # exact zeros become -inf and round-trip exactly
        return cls(logits, a=a, b=b)


def column_softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def validate_topic_matrix(beta: np.ndarray, tol: float = 1e-12) -> None:
    if np.any(beta < 0.0):
        raise ValueError("topic matrix has negative entries")
    col = beta.sum(axis=0)
    if np.any(np.abs(col - 1.0) > tol):
        raise ValueError("topic matrix columns must sum to 1")


@dataclass(frozen=True)
class BernoulliLikelihood:
    """Binary data straight from the decoder mean; no scale variable."""


LikelihoodModel = GaussianLikelihoodConfig | PoissonLikelihoodConfig | BernoulliLikelihood


# ---------------------------------------------------------------------------
# scale posteriors

def gauss_lambda_posterior(
    x: np.ndarray, f: np.ndarray, cfg: GaussianLikelihoodConfig
) -> GaussianScalePosterior:
    """Closed-form Gaussian posterior over the datum's scale given f = f(z)."""
    x = np.asarray(x, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if x.shape != f.shape:
        raise DimensionError("scale posterior", x.shape[-1], f.shape[-1])
    variance = 1.0 / (1.0 / cfg.c + float(f @ f) / cfg.sigma2)
    mean = variance * float(f @ x) / cfg.sigma2
    return GaussianScalePosterior(mean=mean, variance=variance)


def gauss_lambda_posterior_many(
    X: np.ndarray, F: np.ndarray, cfg: GaussianLikelihoodConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized scale posterior over rows; returns (means, variances)."""
    ff = np.einsum("ij,ij->i", F, F)
    fx = np.einsum("ij,ij->i", F, X)
    variances = 1.0 / (1.0 / cfg.c + ff / cfg.sigma2)
    means = variances * fx / cfg.sigma2
    return means, variances


def poiss_lambda_posterior(x: np.ndarray, cfg: PoissonLikelihoodConfig) -> GammaScalePosterior:
    """Gamma posterior over the datum's rate scale.

    Depends only on the total count: the decoder output and the topic
    matrix sum out of the likelihood, which is why this is computed once
    per datum for an entire training run.
    """
    x = np.asarray(x)
    if np.any(x < 0) or not np.all(np.equal(np.mod(x, 1), 0)):
        raise ValueError("counts must be nonnegative integers")
    return GammaScalePosterior(shape=float(x.sum()) + cfg.a, rate=cfg.b + 1.0)


# ---------------------------------------------------------------------------
# pursuit-time bounds (code-dependent terms only)

def gauss_marginal_loglik(x: np.ndarray, f: np.ndarray, cfg: GaussianLikelihoodConfig) -> float:
    """Log density of x with the scale integrated out, including its normalizer."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    f = np.ascontiguousarray(f, dtype=np.float64)
    if x.shape != f.shape:
        raise DimensionError("marginal log likelihood", x.shape[-1], f.shape[-1])
    return float(backend.gauss_marginal_scores(f[None, :], x, cfg.sigma2, cfg.c)[0])


def poiss_bound(
    x: np.ndarray, f: np.ndarray, cfg: PoissonLikelihoodConfig, post: GammaScalePosterior
) -> float:
    """Expected complete-data log likelihood terms that depend on the code.

    Returns -inf (not an exception) when a positive count falls on zero
    expected rate; pursuit simply never accepts such a candidate.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    f = np.ascontiguousarray(f, dtype=np.float64)
    return float(backend.poiss_scores(f[None, :], cfg.beta, x, post.mean)[0])


def bern_loglik(x: np.ndarray, f: np.ndarray) -> float:
    """Bernoulli log likelihood of binary x under mean vector f."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    f = np.ascontiguousarray(f, dtype=np.float64)
    if x.shape != f.shape:
        raise DimensionError("bernoulli log likelihood", x.shape[-1], f.shape[-1])
    return float(backend.bern_scores(f[None, :], x)[0])


# ---------------------------------------------------------------------------
# decoder-update bounds and gradients

def gauss_theta_bound_and_grad(
    x: np.ndarray,
    z: np.ndarray,
    net: DecoderNetwork,
    cfg: GaussianLikelihoodConfig,
    post: GaussianScalePosterior,
) -> tuple[float, GradientBuffer]:
    """Expected complete-data log likelihood in theta and its gradient.

    Value is -(1/(2 sigma2)) * (||x - mu f||^2 + var * f.f) with additive
    constants dropped; the gradient flows through the decoder.
    """
    f = net.forward(np.asarray(z, dtype=np.float64))
    bound, upstream = _gauss_bound_upstream(
        np.asarray(x, dtype=np.float64)[None, :], f[None, :],
        np.array([post.mean]), np.array([post.variance]), cfg,
    )
    return float(bound[0]), backward(net, np.asarray(z, dtype=np.float64)[None, :], upstream)


def _gauss_bound_upstream(X, F, means, variances, cfg):
    resid = X - means[:, None] * F
    bounds = -0.5 / cfg.sigma2 * (
        np.einsum("ij,ij->i", resid, resid)
        + variances * np.einsum("ij,ij->i", F, F)
    )
    upstream = (means[:, None] * resid - variances[:, None] * F) / cfg.sigma2
    return bounds, upstream


def gauss_theta_batch(
    X: np.ndarray,
    Z: np.ndarray,
    net: DecoderNetwork,
    cfg: GaussianLikelihoodConfig,
    means: np.ndarray,
    variances: np.ndarray,
) -> tuple[float, GradientBuffer]:
    """Summed bound and gradient over a batch (rows aligned across arguments)."""
    F = net.forward_many(Z)
    bounds, upstream = _gauss_bound_upstream(X, F, means, variances, cfg)
    return float(bounds.sum()), backward(net, Z, upstream)


def bern_theta_grad(x: np.ndarray, z: np.ndarray, net: DecoderNetwork) -> GradientBuffer:
    """Gradient of the Bernoulli log likelihood through the decoder."""
    Z = np.asarray(z, dtype=np.float64)[None, :]
    _, grad = bern_theta_batch(np.asarray(x, dtype=np.float64)[None, :], Z, net)
    return grad


def bern_theta_batch(
    X: np.ndarray, Z: np.ndarray, net: DecoderNetwork
) -> tuple[float, GradientBuffer]:
    F = net.forward_many(Z)
    Fc = np.clip(F, backend.kernels.BERN_EPS, 1.0 - backend.kernels.BERN_EPS)
    bound = float((X * np.log(Fc) + (1.0 - X) * np.log1p(-Fc)).sum())
    upstream = X / Fc - (1.0 - X) / (1.0 - Fc)
    return bound, backward(net, Z, upstream)


def poiss_theta_grad(
    x: np.ndarray,
    z: np.ndarray,
    net: DecoderNetwork,
    cfg: PoissonLikelihoodConfig,
    post: GammaScalePosterior,
) -> tuple[GradientBuffer, np.ndarray]:
    """Gradients of the expected Poisson bound: decoder parameters and topic logits."""
    Z = np.asarray(z, dtype=np.float64)[None, :]
    _, grad, logit_grad = poiss_theta_batch(
        np.asarray(x, dtype=np.float64)[None, :], Z, net, cfg, np.array([post.mean])
    )
    return grad, logit_grad


def poiss_theta_batch(
    X: np.ndarray,
    Z: np.ndarray,
    net: DecoderNetwork,
    cfg: PoissonLikelihoodConfig,
    e_lams: np.ndarray,
) -> tuple[float, GradientBuffer, np.ndarray]:
    """Summed bound, decoder gradient, and topic-logit gradient over a batch.

    The bound residual r_w = x_w/phi_w - E[lambda] drives both chains:
    through phi = beta f into the decoder, and through the per-column
    softmax into the logits. The logit chain is linear in the residual,
    so per-datum contributions are summed before the softmax Jacobian.
    """
    beta = cfg.beta
    F = net.forward_many(Z)  # (B, T) rows on the simplex
    Phi = F @ beta.T  # (B, W)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(X > 0.0, X / Phi, 0.0)
    if not np.isfinite(ratio).all():
        raise FloatingPointError("positive count on zero expected rate")
    pos = X > 0.0
    with np.errstate(divide="ignore"):
        bound = float((np.where(pos, X * np.log(np.where(pos, Phi, 1.0)), 0.0)).sum()
                      - (e_lams * Phi.sum(axis=1)).sum())
    R = ratio - e_lams[:, None]  # (B, W)
    upstream = R @ beta  # (B, T)
    grad = backward(net, Z, upstream)
    beta_grad = R.T @ F  # (W, T), summed over the batch
    colsum = np.einsum("wt,wt->t", beta, beta_grad)
    logit_grad = beta * (beta_grad - colsum[None, :])
    return bound, grad, logit_grad


# ---------------------------------------------------------------------------
# pursuit bound evaluators

class GaussianEvaluator:
    """Marginal Gaussian log likelihood plus the expected code log prior."""

    def __init__(self, x, net: DecoderNetwork, cfg: GaussianLikelihoodConfig, prior=None):
        self.x = np.ascontiguousarray(x, dtype=np.float64)
        self.net = net
        self.cfg = cfg
        self.prior = prior

    def score_many(self, Z: np.ndarray) -> np.ndarray:
        F = self.net.forward_many(Z)
        s = backend.gauss_marginal_scores(F, self.x, self.cfg.sigma2, self.cfg.c)
        if self.prior is not None:
            s = s + self.prior(Z)
        return s

    def score(self, z: np.ndarray) -> float:
        return float(self.score_many(np.asarray(z, dtype=np.float64)[None, :])[0])


class BernoulliEvaluator:
    """Bernoulli log likelihood plus the expected code log prior."""

    def __init__(self, x, net: DecoderNetwork, prior=None):
        self.x = np.ascontiguousarray(x, dtype=np.float64)
        self.net = net
        self.prior = prior

    def score_many(self, Z: np.ndarray) -> np.ndarray:
        s = backend.bern_scores(self.net.forward_many(Z), self.x)
        if self.prior is not None:
            s = s + self.prior(Z)
        return s

    def score(self, z: np.ndarray) -> float:
        return float(self.score_many(np.asarray(z, dtype=np.float64)[None, :])[0])


class PoissonEvaluator:
    """Expected Poisson bound plus the expected code log prior.

    Takes the datum's posterior mean rate explicitly so the caller can
    reuse its once-per-datum table; pass beta to share one softmaxed
    topic matrix across a batch of evaluators.
    """

    def __init__(self, x, net: DecoderNetwork, cfg: PoissonLikelihoodConfig,
                 e_lam: float, prior=None, beta: np.ndarray | None = None):
        self.x = np.ascontiguousarray(x, dtype=np.float64)
        self.net = net
        self.beta = cfg.beta if beta is None else beta
        self.e_lam = float(e_lam)
        self.prior = prior

    def score_many(self, Z: np.ndarray) -> np.ndarray:
        F = self.net.forward_many(Z)
        s = backend.poiss_scores(F, self.beta, self.x, self.e_lam)
        if self.prior is not None:
            s = s + self.prior(Z)
        return s

    def score(self, z: np.ndarray) -> float:
        return float(self.score_many(np.asarray(z, dtype=np.float64)[None, :])[0])


def poisson_nll_full(x: np.ndarray, rate: np.ndarray) -> float:
    """Fully normalized negative Poisson log pmf, log-factorials included."""
    x = np.asarray(x, dtype=np.float64)
    rate = np.asarray(rate, dtype=np.float64)
    if np.any(rate <= 0.0) and np.any(x[rate <= 0.0] > 0.0):
        return float("inf")
    pos = rate > 0.0
    ll = float((x[pos] * np.log(rate[pos])).sum() - rate.sum()
               - sum(math.lgamma(v + 1.0) for v in x))
    return -ll
