"""Pure-NumPy kernel implementations.

Fallback backend used when the compiled extension is missing or when
``BBSC_PURE_PYTHON=1`` is set. Signatures and semantics are identical to
``bbsc._core``; the two are interchangeable up to floating-point
summation order (see tests/test_backends.py).
"""

import numpy as np

ACT_IDENTITY = 0
ACT_RELU = 1
ACT_SIGMOID = 2
ACT_SOFTMAX = 3

BERN_EPS = 1e-12


def _sigmoid(p):
    # branch form: never exponentiates a positive argument
    out = np.empty_like(p)
    pos = p >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-p[pos]))
    e = np.exp(p[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _apply_activation(p, act):
    if act == ACT_IDENTITY:
        return p
    if act == ACT_RELU:
        return np.maximum(p, 0.0)
    if act == ACT_SIGMOID:
        return _sigmoid(p)
    if act == ACT_SOFTMAX:
        e = np.exp(p - p.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
    raise ValueError(f"unknown activation code {act}")


def forward_batch(Z, weights, biases, acts):
    """Run a batch of codes through the dense layer stack.

    Z is (B, K) float64; weights[l] is (out, in), biases[l] is (out,),
    acts[l] an activation code. Returns the (B, out_last) activations.
    """
    A = np.asarray(Z, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("forward_batch expects a 2-D code matrix")
    for W, b, act in zip(weights, biases, acts):
        A = _apply_activation(A @ W.T + b, act)
    return A


def gauss_marginal_scores(F, x, sigma2, c):
    """Log density of x with the per-datum scale integrated out, one per row of F.

    Includes the code-independent normalizer so the result is a proper
    log density, not just a score.
    """
    ff = np.einsum("ij,ij->i", F, F)
    fx = F @ x
    xx = float(x @ x)
    d = x.shape[0]
    quad = xx / sigma2 - (fx * fx) / (sigma2 * (sigma2 / c + ff))
    return -0.5 * (np.log1p((c / sigma2) * ff) + quad) - 0.5 * d * np.log(2.0 * np.pi * sigma2)


def bern_scores(F, x):
    """Bernoulli log likelihood of binary x for each mean vector in F.

    Means are clamped away from 0/1 so saturated sigmoid outputs cannot
    produce non-finite scores.
    """
    Fc = np.clip(F, BERN_EPS, 1.0 - BERN_EPS)
    return np.log(Fc) @ x + np.log1p(-Fc) @ (1.0 - x)


def poiss_scores(F, beta, x, e_lam):
    """Expected Poisson bound for each topic-distribution row of F.

    Computes sum_w x_w*log(phi_w) - e_lam*phi_w with phi = beta @ f.
    Rows whose support misses a positive count score -inf (rejected by
    pursuit as an ordinary candidate, never raised).
    """
    Phi = F @ beta.T
    pos = x > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        data_term = np.log(Phi[:, pos]) @ x[pos]
    scores = data_term - e_lam * Phi.sum(axis=1)
    scores[~np.isfinite(data_term)] = -np.inf
    return scores
