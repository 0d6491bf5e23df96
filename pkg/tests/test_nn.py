import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefermab.nn import Adam, Mlp, adam_step, gradcheck, log_softmax, sigmoid, softplus, stacked_forward


def hand_forward(net, x):
    h = x
    for i, (W, b) in enumerate(((net.W1, net.b1), (net.W2, net.b2), (net.W3, net.b3))):
        h = h @ W + b
        if i < 2:
            h = np.tanh(h)
    return h


class TestMlp:
    def test_param_count(self):
        net = Mlp(6, 2)
        assert net.n_params == 6 * 16 + 16 + 16 * 16 + 16 + 16 * 2 + 2

    def test_zero_net(self, backend):
        np.testing.assert_array_equal(Mlp(3, 2)(np.ones(3)), np.zeros(2))

    def test_zero_input_single_path(self, backend):
        net = Mlp(1, 1)
        net.W1[0, 0] = net.W2[0, 0] = net.W3[0, 0] = 1.0
        assert net(np.zeros(1))[0] == 0.0

    def test_matches_hand_evaluation(self, backend, rng):
        net = Mlp(7, 3, rng=rng)
        net.b1[:] = rng.standard_normal(16)
        x = rng.standard_normal((11, 7))
        np.testing.assert_allclose(net(x), hand_forward(net, x), rtol=0, atol=1e-12)
        np.testing.assert_allclose(net(x[0]), hand_forward(net, x[:1])[0], rtol=0, atol=1e-12)

    def test_input_size_checked(self):
        with pytest.raises(ValueError):
            Mlp(3, 1)(np.ones(4))

    def test_deterministic(self, backend, rng):
        net = Mlp(4, 2, rng=rng)
        x = rng.standard_normal((5, 4))
        np.testing.assert_array_equal(net(x), net(x))

    def test_init_bounds(self, rng):
        net = Mlp(10, 2, rng=rng)
        assert np.abs(net.W1).max() <= np.sqrt(6 / 26)
        np.testing.assert_array_equal(net.b1, 0.0)

    def test_bytes_round_trip_bit_exact(self, rng):
        net = Mlp(5, 3, rng=rng)
        back = Mlp.from_bytes(net.manifest(), net.to_bytes())
        assert back.to_bytes() == net.to_bytes()
        assert back.sizes == net.sizes


class TestBackward:
    def test_zero_upstream(self, backend, rng):
        net = Mlp(4, 2, rng=rng)
        _, cache = net.forward(rng.standard_normal((3, 4)))
        grad, dx = net.backward(cache, np.zeros((3, 2)))
        np.testing.assert_array_equal(grad, 0.0)
        np.testing.assert_array_equal(dx, 0.0)

    @pytest.mark.parametrize("shape", [(6, 2), (6, 3), (21 * 6, 1)])
    def test_finite_differences(self, backend, shape):
        rng = np.random.default_rng(shape[0] * 7 + shape[1])
        worst = 0.0
        for _ in range(10):
            net = Mlp(*shape, rng=rng)
            net.b1[:] = 0.1 * rng.standard_normal(16)
            x = rng.standard_normal((4, shape[0]))
            worst = max(worst, gradcheck(net, x, rng=rng))
        assert worst < 1e-4

    def test_stacked_forward_matches_kernel(self, backend, rng):
        nets = [Mlp(5, 3, rng=rng) for _ in range(4)]
        x = rng.standard_normal((6, 5))
        out = stacked_forward(nets[0].sizes, np.stack([n.params for n in nets]), x)
        for net, y in zip(nets, out):
            np.testing.assert_allclose(y, net(x), rtol=0, atol=1e-12)

    def test_gradcheck_detects_wrong_gradient(self, rng, monkeypatch):
        net = Mlp(4, 2, rng=rng)
        backward = Mlp.backward

        def skewed(self, cache, dy):
            grad, dx = backward(self, cache, dy)
            grad[3] *= 1.01
            return grad, dx

        monkeypatch.setattr(Mlp, "backward", skewed)
        assert gradcheck(net, rng.standard_normal((3, 4)), rng=rng) > 1e-3

    def test_linear_regime(self, backend, rng):
        net = Mlp(3, 2, rng=rng)
        net.params *= 1e-6
        x = rng.standard_normal((5, 3))
        dy = rng.standard_normal((5, 2))
        _, cache = net.forward(x)
        _, dx = net.backward(cache, dy)
        # tanh'(0) = 1, so the network acts like the product of its weights
        np.testing.assert_allclose(dx, dy @ (net.W1 @ net.W2 @ net.W3).T, rtol=1e-6)

    def test_backends_agree(self, rng):
        from prefermab import _pykernels

        kernels = pytest.importorskip("prefermab._kernels")
        net = Mlp(9, 3, rng=rng)
        x = rng.standard_normal((50, 9))
        dy = rng.standard_normal((50, 3))
        f_py = _pykernels.mlp_forward(x, net.W1, net.b1, net.W2, net.b2, net.W3, net.b3)
        f_cy = kernels.mlp_forward(x, net.W1, net.b1, net.W2, net.b2, net.W3, net.b3)
        for a, b in zip(f_py, f_cy):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)
        b_py = _pykernels.mlp_backward(x, f_py[0], f_py[1], net.W1, net.W2, net.W3, dy)
        b_cy = kernels.mlp_backward(x, f_py[0], f_py[1], net.W1, net.W2, net.W3, dy)
        for a, b in zip(b_py, b_cy):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


class TestAdam:
    def test_zero_gradient(self, rng):
        p = rng.standard_normal(5)
        before = p.copy()
        adam_step(p, np.zeros(5), Adam(5), 0.1)
        np.testing.assert_array_equal(p, before)

    def test_zero_lr(self, rng):
        p = rng.standard_normal(5)
        before = p.copy()
        adam_step(p, rng.standard_normal(5), Adam(5), 0.0)
        np.testing.assert_array_equal(p, before)

    def test_unit_step_for_constant_gradient(self):
        p = np.zeros(3)
        opt = Adam(3)
        for _ in range(200):
            prev = p.copy()
            adam_step(p, np.array([3.0, -0.5, 1e-3]), opt, 0.01)
        np.testing.assert_allclose(np.abs(p - prev), 0.01, rtol=1e-4)

    def test_state_round_trip(self, rng):
        opt = Adam(4)
        p = np.zeros(4)
        for _ in range(3):
            opt.step(p, rng.standard_normal(4), 0.1)
        other = Adam(4)
        other.load_state(opt.state())
        g = rng.standard_normal(4)
        p2 = p.copy()
        opt.step(p, g, 0.1)
        other.step(p2, g, 0.1)
        np.testing.assert_array_equal(p, p2)

    def test_fits_line(self, backend):
        rng = np.random.default_rng(3)
        x = np.linspace(-1, 1, 64)[:, None]
        y = 2 * x
        net = Mlp(1, 1, rng=rng)
        opt = Adam(net.n_params)
        for _ in range(2000):
            out, cache = net.forward(x)
            grad, _ = net.backward(cache, 2 * (out - y) / len(x))
            opt.step(net.params, grad, 1e-2)
        assert np.mean((net(x) - y) ** 2) < 1e-3


class TestActivations:
    @settings(max_examples=200, deadline=None)
    @given(st.floats(-500, 500))
    def test_softplus_non_negative(self, x):
        assert softplus(np.array([x]))[0] >= 0

    def test_softplus_zero(self):
        np.testing.assert_allclose(softplus(np.zeros(1)), [np.log(2)], rtol=1e-15)

    def test_sigmoid_is_softplus_derivative(self):
        x = np.linspace(-5, 5, 11)
        h = 1e-6
        np.testing.assert_allclose((softplus(x + h) - softplus(x - h)) / (2 * h), sigmoid(x), atol=1e-8)

    def test_log_softmax(self, rng):
        z = rng.standard_normal((4, 3)) * 30
        ref = z - np.log(np.exp(z - z.max(1, keepdims=True)).sum(1, keepdims=True)) - z.max(1, keepdims=True)
        np.testing.assert_allclose(log_softmax(z), ref, atol=1e-12)
