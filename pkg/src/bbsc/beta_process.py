"""Finite-truncation beta-process posterior over per-dimension activation rates.

Holds the Beta(a_k, b_k) state that prices every latent bit during pursuit,
plus the stochastic natural-gradient update that moves it toward the
conjugate posterior of the most recent batch of codes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EULER_MASCHERONI = 0.5772156649015328606


@dataclass(frozen=True)
class EtaSchedule:
    """Decaying step size (t0 + t)^(-kappa) for the posterior update."""

    t0: float = 1.0
    kappa: float = 0.7

    def __post_init__(self):
        if self.t0 < 1.0:
            raise ValueError("t0 must be >= 1 so the first step size is <= 1")
        if not 0.0 < self.kappa <= 1.0:
            raise ValueError("kappa must lie in (0, 1]")


def eta_at(t: int, schedule: EtaSchedule) -> float:
    """Step size for the t-th natural-gradient update (t starts at 0)."""
    return float((schedule.t0 + t) ** (-schedule.kappa))


@dataclass(frozen=True)
class BetaProcessConfig:
    k: int
    gamma_mass: float
    alpha: float = 1.0
    schedule: EtaSchedule = EtaSchedule()

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("truncation level must be >= 1")
        if self.alpha <= 0.0:
            raise ValueError("concentration must be positive")
        if not 0.0 < self.gamma_mass < self.k:
            raise ValueError("mass must satisfy 0 < gamma < K so both prior "
                             "parameters stay positive")

    @property
    def prior_a(self) -> float:
        return self.alpha * self.gamma_mass / self.k

    @property
    def prior_b(self) -> float:
        return self.alpha * (1.0 - self.gamma_mass / self.k)


def default_config(k: int) -> BetaProcessConfig:
    """alpha=1, mass K/5: a mildly sparse starting point."""
    return BetaProcessConfig(k=k, gamma_mass=k / 5.0)


@dataclass
class BetaPosterior:
    a: np.ndarray
    b: np.ndarray
    step_count: int = 0

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.a.shape != self.b.shape or self.a.ndim != 1:
            raise ValueError("a and b must be 1-D vectors of equal length")
        if not (np.all(self.a > 0.0) and np.all(self.b > 0.0)):
            raise ValueError("Beta parameters must be strictly positive")

    @property
    def k(self) -> int:
        return self.a.shape[0]


def init_posterior(cfg: BetaProcessConfig) -> BetaPosterior:
    # start at the prior: an unbiased origin for the natural-gradient path
    return BetaPosterior(
        a=np.full(cfg.k, cfg.prior_a),
        b=np.full(cfg.k, cfg.prior_b),
        step_count=0,
    )


def digamma(x) -> float | np.ndarray:
    """psi(x) for x > 0, good to ~1e-10.

    Recurrence psi(x) = psi(x+1) - 1/x shifts the argument to >= 6, then
    the asymptotic series in 1/x^2 finishes the job.
    """
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr <= 0.0):
        raise ValueError("digamma requires strictly positive arguments")
    scalar = arr.ndim == 0
    arr = np.array(arr, ndmin=1, copy=True)
    acc = np.zeros_like(arr)
    small = arr < 6.0
    while np.any(small):
        acc[small] -= 1.0 / arr[small]
        arr[small] += 1.0
        small = arr < 6.0
    u = 1.0 / (arr * arr)
    tail = u * (1.0 / 12.0 - u * (1.0 / 120.0 - u * (1.0 / 252.0 - u * (
        1.0 / 240.0 - u * (1.0 / 132.0 - u * (691.0 / 32760.0))))))
    res = acc + np.log(arr) - 0.5 / arr - tail
    return float(res[0]) if scalar else res


def log_prior_tables(post: BetaPosterior) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension expected log prior of an active bit (on) and inactive bit (off)."""
    dig_ab = digamma(post.a + post.b)
    on = digamma(post.a) - dig_ab
    off = digamma(post.b) - dig_ab
    return on, off


def expected_log_prior(z: np.ndarray, post: BetaPosterior) -> float:
    """E over q(pi) of the code's log prior probability."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != post.a.shape:
        raise ValueError("code length does not match the posterior")
    on, off = log_prior_tables(post)
    return float(z @ on + (1.0 - z) @ off)


class CodeLogPrior:
    """Expected-log-prior penalty, precomputed for fast incremental scoring.

    For a code matrix Z the value per row is base + Z @ delta, with
    base = sum(off) and delta = on - off; this equals expected_log_prior
    row by row and makes single-bit score deltas exactly psi(a_k) - psi(b_k).
    """

    def __init__(self, post: BetaPosterior):
        on, off = log_prior_tables(post)
        self.delta = on - off
        self.base = float(off.sum())

    def __call__(self, Z: np.ndarray) -> np.ndarray:
        return self.base + np.asarray(Z, dtype=np.float64) @ self.delta


def natural_grad_update(
    post: BetaPosterior,
    batch_codes: np.ndarray,
    n_total: int,
    eta: float,
    cfg: BetaProcessConfig,
) -> BetaPosterior:
    """Interpolate (a, b) toward the batch-scaled conjugate target with step eta.

    With eta = 1 and a full batch this lands exactly on the conjugate
    posterior of the given codes; positivity is preserved for any valid eta
    because both targets are strictly positive.
    """
    codes = np.asarray(batch_codes, dtype=np.float64)
    if codes.ndim == 1:
        codes = codes[None, :]
    if codes.shape[0] == 0:
        raise ValueError("cannot update the posterior from an empty batch")
    if codes.shape[1] != post.k:
        raise ValueError("code width does not match the posterior")
    if not 0.0 <= eta <= 1.0:
        raise ValueError("step size must lie in [0, 1]")
    scale = n_total / codes.shape[0]
    active = codes.sum(axis=0)
    a_target = cfg.prior_a + scale * active
    b_target = cfg.prior_b + scale * (codes.shape[0] - active)
    return BetaPosterior(
        a=(1.0 - eta) * post.a + eta * a_target,
        b=(1.0 - eta) * post.b + eta * b_target,
        step_count=post.step_count + 1,
    )


def activation_probabilities(codes: np.ndarray) -> np.ndarray:
    """Empirical per-dimension activation rate of a set of codes."""
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim == 1:
        codes = codes[None, :]
    if codes.shape[0] == 0:
        raise ValueError("no codes given")
    return codes.mean(axis=0)
