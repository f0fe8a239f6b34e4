import numpy as np
import pytest

from bbsc import nn


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_net(rng, k=4, hidden=(6,), out=5, final=nn.Activation.SIGMOID):
    return nn.init_network(k, hidden, out, final, rng)


def identity_net(k):
    """Single Identity layer with weight I and zero bias; f(z) = z."""
    return nn.DecoderNetwork([nn.DenseLayer(np.eye(k), np.zeros(k), nn.Activation.IDENTITY)])


def numeric_grad(f, params, h=1e-5):
    """Central finite differences of a scalar function of the parameter list."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            ix = it.multi_index
            orig = p[ix]
            p[ix] = orig + h
            hi = f()
            p[ix] = orig - h
            lo = f()
            p[ix] = orig
            g[ix] = (hi - lo) / (2.0 * h)
            it.iternext()
        grads.append(g)
    return grads


def assert_grad_close(analytic, numeric, rel=1e-4, abs_floor=1e-8):
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(n), abs_floor)
        err = np.abs(a - n) / denom
        assert err.max() < rel, f"gradient mismatch: max relative error {err.max():.3g}"
