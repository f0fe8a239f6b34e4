"""Evaluation quantities: Hoyer sparsity, reconstruction error, NLL, topic groups."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from bbsc import likelihood
from bbsc.nn import DecoderNetwork


@dataclass(frozen=True)
class EvalReport:
    metric: str
    value: float
    n: int
    activation_probabilities: np.ndarray
    sparsity: float
    config_fingerprint: str = ""

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("report needs at least one datum")
        if not math.isfinite(self.value):
            raise ValueError("metric value must be finite")

    def csv_row(self) -> str:
        probs = ";".join(f"{p:.6f}" for p in self.activation_probabilities)
        return (f"{self.metric},{self.value:.10g},{self.n},{self.sparsity:.10g},"
                f"{probs},{self.config_fingerprint}")


CSV_HEADER = "metric,value,n,sparsity,activation_probabilities,config_fingerprint"


def hoyer(z: np.ndarray) -> float:
    """Normalized l1/l2 sparsity: 0 for all-ones, 1 for a single active bit.

    The all-zero code is defined as maximally sparse (1.0); the formula's
    norm ratio is undefined there and the empty code is the sparsest
    encoding possible.
    """
    z = np.asarray(z, dtype=np.float64)
    k = z.shape[-1]
    if k < 2:
        raise ValueError("hoyer sparsity needs K >= 2")
    l1 = np.abs(z).sum()
    l2 = float(np.sqrt((z * z).sum()))
    if l2 == 0.0:
        return 1.0
    rk = math.sqrt(k)
    # clamp the ~1e-16 round-off that sqrt can leak past the exact bounds
    return float(min(max((rk - l1 / l2) / (rk - 1.0), 0.0), 1.0))


def sparsity(codes: np.ndarray) -> float:
    """Mean Hoyer sparsity over a set of codes."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    if codes.shape[0] == 0:
        raise ValueError("no codes given")
    return float(np.mean([hoyer(z) for z in codes]))


def mse(
    data: np.ndarray,
    codes: np.ndarray,
    net: DecoderNetwork,
    scale_means: np.ndarray | None = None,
) -> float:
    """Mean squared reconstruction error with per-datum posterior-mean scales.

    scale_means defaults to 1 everywhere for variants without a scale.
    """
    X = np.atleast_2d(np.asarray(data, dtype=np.float64))
    Z = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    if X.shape[0] != Z.shape[0]:
        raise ValueError("data/code row counts differ")
    F = net.forward_many(Z)
    s = np.ones(X.shape[0]) if scale_means is None else np.asarray(scale_means, dtype=np.float64)
    resid = X - s[:, None] * F
    return float(np.einsum("ij,ij->i", resid, resid).mean())


def nll(data: np.ndarray, codes: np.ndarray, net: DecoderNetwork) -> float:
    """Mean Bernoulli negative log likelihood of the reconstructions."""
    X = np.atleast_2d(np.asarray(data, dtype=np.float64))
    Z = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    total = sum(likelihood.bern_loglik(x, f) for x, f in zip(X, net.forward_many(Z)))
    return -total / X.shape[0]


def poisson_nll(
    counts: np.ndarray,
    codes: np.ndarray,
    net: DecoderNetwork,
    cfg: likelihood.PoissonLikelihoodConfig,
    scale_means: np.ndarray,
) -> float:
    """Mean fully normalized Poisson NLL at rate = E[scale] * beta f(z)."""
    X = np.atleast_2d(np.asarray(counts, dtype=np.float64))
    Z = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    beta = cfg.beta
    F = net.forward_many(Z)
    rates = (F @ beta.T) * np.asarray(scale_means, dtype=np.float64)[:, None]
    total = sum(likelihood.poisson_nll_full(x, r) for x, r in zip(X, rates))
    return total / X.shape[0]


@dataclass
class TopicGroup:
    code: tuple[int, ...]
    count: int
    topic_probs: list[tuple[int, float]]  # (topic, probability), descending
    top_words: dict[int, list[tuple[str, float]]]  # topic -> (word, weight)


@dataclass
class TopicReport:
    groups: list[TopicGroup]

    def to_text(self) -> str:
        lines = []
        for g in self.groups:
            bits = "".join(str(b) for b in g.code)
            lines.append(f"code {bits}  (n={g.count})")
            for t, p in g.topic_probs:
                words = ", ".join(w for w, _ in g.top_words[t])
                lines.append(f"  topic {t}  p={p:.4f}  {words}")
        return "\n".join(lines)

    def to_csv_rows(self) -> list[str]:
        rows = ["code,count,topic,probability,top_words"]
        for g in self.groups:
            bits = "".join(str(b) for b in g.code)
            for t, p in g.topic_probs:
                words = ";".join(w for w, _ in g.top_words[t])
                rows.append(f"{bits},{g.count},{t},{p:.6f},{words}")
        return rows


def topic_report(
    codes: np.ndarray,
    beta_matrix: np.ndarray,
    net: DecoderNetwork,
    vocabulary: list[str],
    top_m: int = 15,
    topic_threshold: float | None = None,
) -> TopicReport:
    """Group data by distinct code and list each group's dominant topics.

    A topic counts as activated by a code when its decoded probability
    reaches the uniform level 1/T (configurable). Word lists rank the
    top_m entries of the topic's column.
    """
    Z = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    beta = np.asarray(beta_matrix, dtype=np.float64)
    n_topics = beta.shape[1]
    if topic_threshold is None:
        topic_threshold = 1.0 / n_topics
    if len(vocabulary) != beta.shape[0]:
        raise ValueError("vocabulary length does not match the topic matrix")

    uniq: dict[tuple[int, ...], int] = {}
    for z in Z:
        key = tuple(int(b) for b in z)
        uniq[key] = uniq.get(key, 0) + 1

    word_order = np.argsort(-beta, axis=0)
    top_words_all = {
        t: [(vocabulary[w], float(beta[w, t])) for w in word_order[:top_m, t]]
        for t in range(n_topics)
    }

    groups = []
    for key in sorted(uniq, key=lambda c: (-uniq[c], c)):
        f = net.forward(np.asarray(key, dtype=np.float64))
        chosen = [(int(t), float(f[t])) for t in np.argsort(-f) if f[t] >= topic_threshold]
        groups.append(TopicGroup(
            code=key,
            count=uniq[key],
            topic_probs=chosen,
            top_words={t: top_words_all[t] for t, _ in chosen},
        ))
    return TopicReport(groups)
