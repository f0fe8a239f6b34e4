"""Parity between the compiled kernels and the pure-NumPy fallback.

Skipped entirely when the extension was not built; the selection logic in
bbsc.backend is covered either way.
"""

import numpy as np
import pytest

from bbsc import _core_py, backend, nn
from conftest import small_net

cython_core = pytest.importorskip("bbsc._core", reason="compiled extension not built")


@pytest.fixture
def batch(rng):
    net = small_net(rng, k=6, hidden=(9,), out=7)
    Z = (rng.random((20, 6)) < 0.5).astype(float)
    return net, Z


class TestParity:
    def test_forward_batch(self, batch):
        net, Z = batch
        a = cython_core.forward_batch(Z, net._weights, net._biases, net._acts)
        b = _core_py.forward_batch(Z, net._weights, net._biases, net._acts)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)

    def test_forward_batch_softmax(self, rng):
        net = small_net(rng, k=5, hidden=(6,), out=4, final=nn.Activation.SOFTMAX)
        Z = (rng.random((15, 5)) < 0.5).astype(float)
        a = cython_core.forward_batch(Z, net._weights, net._biases, net._acts)
        b = _core_py.forward_batch(Z, net._weights, net._biases, net._acts)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)

    def test_gauss_scores(self, batch, rng):
        net, Z = batch
        F = np.ascontiguousarray(
            cython_core.forward_batch(Z, net._weights, net._biases, net._acts))
        x = rng.normal(size=7)
        a = cython_core.gauss_marginal_scores(F, x, 0.1, 1.0)
        b = _core_py.gauss_marginal_scores(F, x, 0.1, 1.0)
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-12)

    def test_bern_scores(self, batch, rng):
        net, Z = batch
        F = np.ascontiguousarray(
            cython_core.forward_batch(Z, net._weights, net._biases, net._acts))
        x = (rng.random(7) < 0.5).astype(float)
        np.testing.assert_allclose(cython_core.bern_scores(F, x),
                                   _core_py.bern_scores(F, x), rtol=1e-13, atol=1e-12)

    def test_bern_scores_clamp_saturated(self):
        F = np.array([[0.0, 1.0, 0.5]])
        x = np.array([1.0, 0.0, 1.0])
        a = cython_core.bern_scores(F, x)
        b = _core_py.bern_scores(F, x)
        assert np.isfinite(a).all()
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_poiss_scores(self, rng):
        W, T, B = 11, 4, 9
        beta = np.ascontiguousarray(np.exp(rng.normal(size=(W, T))))
        beta /= beta.sum(axis=0, keepdims=True)
        F = rng.dirichlet(np.ones(T), size=B)
        x = rng.poisson(2.0, size=W).astype(float)
        a = cython_core.poiss_scores(F, beta, x, 3.5)
        b = _core_py.poiss_scores(F, beta, x, 3.5)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-11)

    def test_poiss_scores_sentinel(self):
        beta = np.array([[1.0, 0.0], [0.0, 1.0]])
        F = np.array([[0.0, 1.0], [1.0, 0.0]])
        x = np.array([2.0, 0.0])
        a = cython_core.poiss_scores(F, beta, x, 1.0)
        b = _core_py.poiss_scores(F, beta, x, 1.0)
        assert a[0] == -np.inf and b[0] == -np.inf
        assert np.isfinite(a[1]) and np.isfinite(b[1])
        np.testing.assert_allclose(a[1], b[1], rtol=1e-13)


class TestSelection:
    def test_active_backend_known(self):
        assert backend.BACKEND in ("cython", "python")

    def test_forced_python_backend(self):
        import subprocess
        import sys

        out = subprocess.run(
            [sys.executable, "-c", "import bbsc; print(bbsc.BACKEND)"],
            env={"BBSC_PURE_PYTHON": "1", "PATH": "/usr/bin:/bin"},
            capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "python"
