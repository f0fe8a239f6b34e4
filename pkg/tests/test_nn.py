import numpy as np
import pytest

from bbsc import nn
from conftest import assert_grad_close, identity_net, numeric_grad, small_net


class TestForward:
    def test_identity_network_passes_basis_vector(self):
        net = identity_net(4)
        z = np.array([1.0, 0.0, 0.0, 0.0])
        np.testing.assert_array_equal(net.forward(z), z)

    def test_sigmoid_output_strictly_inside_unit_interval(self, rng):
        net = small_net(rng, k=6, hidden=(8,), out=7)
        out = net.forward(np.zeros(6))
        assert np.all(out > 0.0) and np.all(out < 1.0)

    def test_softmax_output_sums_to_one(self, rng):
        net = small_net(rng, k=5, hidden=(9, 7), out=6, final=nn.Activation.SOFTMAX)
        for _ in range(10):
            z = (rng.random(5) < 0.5).astype(float)
            out = net.forward(z)
            assert np.all(out >= 0.0)
            assert abs(out.sum() - 1.0) <= 1e-12

    def test_dimension_mismatch_names_widths(self, rng):
        net = small_net(rng, k=4)
        with pytest.raises(nn.DimensionError) as exc:
            net.forward(np.zeros(7))
        assert exc.value.expected == 4
        assert exc.value.actual == 7

    def test_nonbinary_code_rejected(self, rng):
        net = small_net(rng, k=4)
        with pytest.raises(ValueError):
            net.forward(np.array([0.5, 0.0, 0.0, 1.0]))

    def test_forward_deterministic(self, rng):
        net = small_net(rng)
        z = np.array([1.0, 1.0, 0.0, 0.0])
        np.testing.assert_array_equal(net.forward(z), net.forward(z))

    def test_layer_chain_width_validated(self):
        layers = [
            nn.DenseLayer(np.zeros((3, 2)), np.zeros(3), nn.Activation.RELU),
            nn.DenseLayer(np.zeros((2, 4)), np.zeros(2), nn.Activation.IDENTITY),
        ]
        with pytest.raises(nn.DimensionError):
            nn.DecoderNetwork(layers)


class TestBackward:
    def test_linear_net_gradient_is_outer_product(self):
        # single Identity layer: L = f(z) . c  =>  dL/dW = c z^T, dL/db = c
        rng = np.random.default_rng(7)
        W = rng.normal(size=(3, 4))
        net = nn.DecoderNetwork([nn.DenseLayer(W, np.zeros(3), nn.Activation.IDENTITY)])
        z = np.array([1.0, 0.0, 1.0, 1.0])
        c = rng.normal(size=3)
        buf = nn.backward(net, z, c)
        np.testing.assert_allclose(buf.arrays[0], np.outer(c, z), atol=1e-15)
        np.testing.assert_allclose(buf.arrays[1], c, atol=1e-15)

    def test_zero_upstream_gives_zero_buffer(self, rng):
        net = small_net(rng)
        buf = nn.backward(net, np.array([1.0, 0.0, 0.0, 1.0]), np.zeros(net.output_dim))
        for a in buf.arrays:
            np.testing.assert_array_equal(a, 0.0)

    @pytest.mark.parametrize("final", [nn.Activation.SIGMOID, nn.Activation.SOFTMAX,
                                       nn.Activation.IDENTITY])
    def test_matches_finite_differences(self, final):
        rng = np.random.default_rng(99)
        for trial in range(20):
            k, h, d = rng.integers(2, 5), rng.integers(2, 5), rng.integers(2, 5)
            net = nn.init_network(int(k), (int(h),), int(d), final, rng)
            z = (rng.random(k) < 0.5).astype(float)
            # the zero code with zero biases sits exactly on the ReLU kink,
            # where central differences and the subgradient legitimately differ
            z[rng.integers(0, k)] = 1.0
            u = rng.normal(size=d)

            analytic = nn.backward(net, z, u).arrays
            numeric = numeric_grad(lambda: float(net.forward(z) @ u), net.params())
            assert_grad_close(analytic, numeric)

    def test_batch_equals_sum_of_singles(self, rng):
        net = small_net(rng, k=5, hidden=(4,), out=3)
        Z = (rng.random((6, 5)) < 0.5).astype(float)
        U = rng.normal(size=(6, 3))
        batch = nn.backward(net, Z, U)
        total = nn.GradientBuffer.zeros_like(net.params())
        for z, u in zip(Z, U):
            total.add(nn.backward(net, z, u))
        for a, b in zip(batch.arrays, total.arrays):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)
        assert batch.count == 6
        assert total.count == 6

    def test_upstream_shape_mismatch(self, rng):
        net = small_net(rng)
        with pytest.raises(nn.DimensionError):
            nn.backward(net, np.zeros(4), np.zeros(net.output_dim + 1))


def scalar_adam_reference(g_seq, rho, beta1, beta2, eps):
    """Independent scalar ADAM, matching Kingma-Ba with bias correction."""
    theta, m, v = 0.0, 0.0, 0.0
    for t, g in enumerate(g_seq, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        theta += rho * mhat / (np.sqrt(vhat) + eps)
    return theta


class TestAdam:
    def test_zero_gradient_keeps_parameters(self, rng):
        net = small_net(rng)
        params = net.params()
        before = [p.copy() for p in params]
        state = nn.AdamState.for_params(params)
        nn.adam_step(params, nn.GradientBuffer.zeros_like(params), state)
        for p, b in zip(params, before):
            np.testing.assert_array_equal(p, b)
        assert state.t == 1

    def test_constant_gradient_step_magnitude_approaches_rho(self):
        params = [np.zeros(3)]
        state = nn.AdamState.for_params(params, rho=0.01)
        g = nn.GradientBuffer([np.array([1.0, -2.0, 0.5])])
        prev = params[0].copy()
        for _ in range(200):
            prev = params[0].copy()
            nn.adam_step(params, g, state)
        step = params[0] - prev
        np.testing.assert_allclose(np.abs(step), 0.01, rtol=1e-4)
        np.testing.assert_array_equal(np.sign(step), np.sign(g.arrays[0]))

    def test_moments_match_scalar_reference(self, rng):
        params = [np.zeros((2, 2))]
        state = nn.AdamState.for_params(params, rho=0.05, beta1=0.8, beta2=0.95, eps=1e-8)
        gs = [rng.normal(size=(2, 2)) for _ in range(7)]
        for g in gs:
            nn.adam_step(params, nn.GradientBuffer([g]), state)
        for i in range(2):
            for j in range(2):
                ref = scalar_adam_reference([g[i, j] for g in gs], 0.05, 0.8, 0.95, 1e-8)
                assert params[0][i, j] == pytest.approx(ref, rel=1e-12)

    def test_nonfinite_gradient_rejected_without_partial_update(self, rng):
        net = small_net(rng)
        params = net.params()
        before = [p.copy() for p in params]
        state = nn.AdamState.for_params(params)
        bad = nn.GradientBuffer.zeros_like(params)
        bad.arrays[-1][0] = np.nan
        with pytest.raises(ValueError):
            nn.adam_step(params, bad, state)
        for p, b in zip(params, before):
            np.testing.assert_array_equal(p, b)
        assert state.t == 0

    def test_t_strictly_increments(self, rng):
        params = [np.zeros(2)]
        state = nn.AdamState.for_params(params)
        for expected in (1, 2, 3):
            nn.adam_step(params, nn.GradientBuffer([np.ones(2)]), state)
            assert state.t == expected


class TestDeterminism:
    def test_identical_seeds_identical_trajectories(self):
        def run():
            rng = np.random.default_rng(4242)
            net = small_net(rng, k=6, hidden=(8,), out=5)
            state = nn.AdamState.for_params(net.params())
            grad_rng = np.random.default_rng(11)
            for _ in range(5):
                g = nn.GradientBuffer([grad_rng.normal(size=p.shape) for p in net.params()])
                nn.adam_step(net.params(), g, state)
            return net

        a, b = run(), run()
        for pa, pb in zip(a.params(), b.params()):
            assert pa.tobytes() == pb.tobytes()

    def test_init_respects_glorot_bound(self, rng):
        net = nn.init_network(10, (20,), 5, nn.Activation.SIGMOID, rng)
        first = net.layers[0]
        bound = np.sqrt(6.0 / (10 + 20))
        assert np.abs(first.weight).max() <= bound
        np.testing.assert_array_equal(first.bias, 0.0)
