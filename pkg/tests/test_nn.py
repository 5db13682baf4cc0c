import numpy as np
import pytest

from pivotalcp.errors import (
    DimensionMismatchError,
    NumericalError,
    ValidationError,
)
from pivotalcp.nn import AdamOptimizer, Mlp, clip_global_norm


def finite_difference_grads(net, x, step=1e-5):
    """Central finite differences of the summed output over all parameters."""

    def loss():
        return float(net.forward(x).sum())

    grads = []
    for p in net.parameters():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + step
            hi = loss()
            p[idx] = orig - step
            lo = loss()
            p[idx] = orig
            g[idx] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads


class TestForward:
    def test_zero_parameters_give_zero(self):
        net = Mlp([2, 3, 1], seed=0)
        net.set_parameters([np.zeros_like(p) for p in net.parameters()])
        assert net.forward(np.array([0.4, -1.0])) == pytest.approx(0.0)

    def test_single_affine_layer(self):
        # w=2, b=1, x=3 -> 7
        net = Mlp([1, 1])
        net.set_parameters([np.array([[2.0]]), np.array([1.0])])
        assert net.forward(np.array([3.0]))[0] == pytest.approx(7.0)

    def test_identity_net_at_zero(self):
        # tanh(0) = 0 propagates through the identity 1->1->1 net
        net = Mlp([1, 1, 1])
        net.set_parameters([np.array([[1.0]]), np.array([[1.0]]),
                            np.array([0.0]), np.array([0.0])])
        assert net.forward(np.array([0.0]))[0] == pytest.approx(0.0)

    def test_shape_validation(self):
        net = Mlp([2, 1])
        with pytest.raises(DimensionMismatchError):
            net.forward_batch(np.zeros((3, 5)))
        with pytest.raises(ValidationError):
            Mlp([3])


class TestBackward:
    def test_zero_output_gradient(self):
        net = Mlp([2, 4, 3], seed=1)
        _, cache = net.forward_batch(np.ones((5, 2)))
        wg, bg, xg = net.backward(cache, np.zeros((5, 3)))
        for g in wg + bg + [xg]:
            assert np.all(g == 0.0)

    def test_single_layer_gradients(self):
        # loss = w x + b: dw = x, db = 1
        net = Mlp([1, 1])
        net.set_parameters([np.array([[2.0]]), np.array([1.0])])
        _, cache = net.forward_batch(np.array([[3.0]]))
        wg, bg, _ = net.backward(cache, np.array([[1.0]]))
        assert wg[0][0, 0] == pytest.approx(3.0)
        assert bg[0][0] == pytest.approx(1.0)

    def test_matches_finite_differences(self):
        # central finite-difference oracle over every parameter
        rng = np.random.Generator(np.random.Philox(7))
        for sizes in ([1, 1], [2, 5, 1], [3, 8, 8, 2], [1, 16, 4]):
            net = Mlp(sizes, seed=int(rng.integers(1 << 30)))
            x = rng.normal(size=sizes[0])
            _, cache = net.forward_batch(x[None, :])
            wg, bg, _ = net.backward(cache, np.ones((1, sizes[-1])))
            fd = finite_difference_grads(net, x)
            for got, want in zip(wg + bg, fd):
                np.testing.assert_allclose(got, want, rtol=1e-4, atol=1e-7)

    def test_gradient_shape_validation(self):
        net = Mlp([2, 3], seed=0)
        _, cache = net.forward_batch(np.zeros((4, 2)))
        with pytest.raises(DimensionMismatchError):
            net.backward(cache, np.zeros((4, 5)))


class TestAdam:
    def test_zero_gradient_no_move(self):
        opt = AdamOptimizer()
        params = [np.array([1.0, -2.0])]
        out = opt.step(params, [np.zeros(2)])
        np.testing.assert_array_equal(out[0], params[0])

    def test_first_step_magnitude(self):
        # bias correction makes the first update ~ lr * sign(g)
        opt = AdamOptimizer(learning_rate=1e-3)
        out = opt.step([np.array([0.0])], [np.array([2.7])])
        assert out[0][0] == pytest.approx(-1e-3, rel=1e-4)

    def test_constant_gradient_monotone(self):
        opt = AdamOptimizer()
        p = [np.array([0.0])]
        values = []
        for _ in range(20):
            p = opt.step(p, [np.array([1.0])])
            values.append(p[0][0])
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_nonfinite_gradient_named(self):
        opt = AdamOptimizer()
        with pytest.raises(NumericalError, match="parameter 1"):
            opt.step([np.zeros(1), np.zeros(1)],
                     [np.zeros(1), np.array([np.nan])])

    def test_determinism(self):
        def run():
            net = Mlp([2, 4, 1], seed=3)
            opt = AdamOptimizer()
            rng = np.random.Generator(np.random.Philox(5))
            X = rng.normal(size=(10, 2))
            for _ in range(5):
                _, cache = net.forward_batch(X)
                wg, bg, _ = net.backward(cache, np.ones((10, 1)))
                net.set_parameters(opt.step(net.parameters(), wg + bg))
            return net.parameters()

        for a, b in zip(run(), run()):
            np.testing.assert_array_equal(a, b)


class TestClipGlobalNorm:
    def test_below_threshold_untouched(self):
        grads = [np.array([3.0]), np.array([4.0])]  # norm 5 < 10
        out = clip_global_norm(grads)
        assert out is grads

    def test_rescaled_to_max_norm(self):
        grads = [np.array([30.0]), np.array([40.0])]  # norm 50
        out = clip_global_norm(grads)
        total = np.sqrt(sum(float(np.sum(g * g)) for g in out))
        assert total == pytest.approx(10.0)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        net = Mlp([2, 5, 3], seed=11)
        path = tmp_path / "net.json"
        net.save(path)
        loaded = Mlp.load(path)
        assert loaded.layer_sizes == net.layer_sizes
        for a, b in zip(net.parameters(), loaded.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_version_check(self):
        doc = Mlp([1, 1]).to_dict()
        doc["format_version"] = 99
        with pytest.raises(ValidationError):
            Mlp.from_dict(doc)
