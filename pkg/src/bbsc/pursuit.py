"""Greedy sparse encoder and its exhaustive-search oracle.

Encoding starts from the empty code and repeatedly adds the single bit
whose activation raises the bound the most, stopping as soon as the best
addition no longer improves it. The decoder is nonlinear, so an added bit
can genuinely hurt; the strict-improvement test is what terminates the
search.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np


class BoundEvaluator(Protocol):
    """Deterministic code-scoring closure over one datum and the model state."""

    def score(self, z: np.ndarray) -> float: ...

    def score_many(self, Z: np.ndarray) -> np.ndarray: ...


@dataclass
class PursuitResult:
    code: np.ndarray  # binary K-vector, float64
    active_set: list[int]  # bits in the order they were added
    trace: list[float]  # bound after each accepted addition, strictly increasing
    evaluations: int  # candidate bound evaluations performed
    base_score: float  # bound of the empty code

    @property
    def final_score(self) -> float:
        return self.trace[-1] if self.trace else self.base_score


def encode(evaluator: BoundEvaluator, k: int, max_active: int | None = None) -> PursuitResult:
    """Greedy single-bit pursuit over {0,1}^k.

    Each round scores every inactive bit in one batched evaluator call,
    takes the argmax (ties go to the lowest index), and accepts only a
    strict improvement. Worst case returns the empty code.
    """
    cap = k if max_active is None else min(max_active, k)
    z = np.zeros(k, dtype=np.float64)
    best = float(evaluator.score(z))
    base = best
    active: list[int] = []
    trace: list[float] = []
    evaluations = 0

    while len(active) < cap:
        candidates = np.flatnonzero(z == 0.0)
        if candidates.size == 0:
            break
        Z = np.repeat(z[None, :], candidates.size, axis=0)
        Z[np.arange(candidates.size), candidates] = 1.0
        scores = np.asarray(evaluator.score_many(Z), dtype=np.float64)
        evaluations += candidates.size
        pick = int(np.argmax(scores))
        if not scores[pick] > best:
            break
        j = int(candidates[pick])
        z[j] = 1.0
        active.append(j)
        best = float(scores[pick])
        trace.append(best)

    return PursuitResult(code=z, active_set=active, trace=trace,
                         evaluations=evaluations, base_score=base)


def exhaustive_encode(evaluator: BoundEvaluator, k: int) -> tuple[np.ndarray, float]:
    """Exact argmax over all 2^k codes; refuses k > 16.

    Ties break toward fewer active bits, then the lexicographically
    smallest code (bit 0 first).
    """
    if k > 16:
        raise ValueError(f"exhaustive search over 2^{k} codes refused (k must be <= 16)")
    n = 1 << k
    best_score = -np.inf
    best_code: np.ndarray | None = None
    best_key: tuple | None = None
    chunk = 4096
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n), dtype=np.uint32)
        Z = ((idx[:, None] >> np.arange(k, dtype=np.uint32)[None, :]) & 1).astype(np.float64)
        scores = np.asarray(evaluator.score_many(Z), dtype=np.float64)
        for i in np.flatnonzero(scores >= best_score):
            s = float(scores[i])
            key = (-s, int(Z[i].sum()), tuple(Z[i]))
            if best_key is None or key < best_key:
                best_key = key
                best_score = s
                best_code = Z[i].copy()
    assert best_code is not None
    return best_code, best_score


def is_locally_optimal(evaluator: BoundEvaluator, result: PursuitResult) -> bool:
    """True when no single additional bit improves the returned code's score."""
    z = result.code
    candidates = np.flatnonzero(z == 0.0)
    if candidates.size == 0:
        return True
    Z = np.repeat(z[None, :], candidates.size, axis=0)
    Z[np.arange(candidates.size), candidates] = 1.0
    return bool(np.all(evaluator.score_many(Z) <= result.final_score))


EvaluatorFactory = Callable[[int, np.ndarray], BoundEvaluator]


def batch_encode(
    data: np.ndarray | Sequence[np.ndarray],
    factory: EvaluatorFactory,
    k: int,
    workers: int = 1,
    max_active: int | None = None,
) -> list[PursuitResult]:
    """Encode each row of data independently; order-preserving.

    The factory receives (position, row). Per-datum pursuit is pure given
    the evaluator, so results do not depend on the worker count.
    """
    rows = list(data)

    def one(i_row):
        i, row = i_row
        return encode(factory(i, row), k, max_active=max_active)

    if workers <= 1 or len(rows) <= 1:
        return [one(item) for item in enumerate(rows)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, enumerate(rows)))


def codes_matrix(results: Sequence[PursuitResult], dtype=np.float64) -> np.ndarray:
    """Stack pursuit results into an (N, K) matrix."""
    return np.stack([r.code for r in results]).astype(dtype)
