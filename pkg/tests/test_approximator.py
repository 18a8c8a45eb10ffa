import itertools

import numpy as np
import pytest

from pfac import approximator as nn
from pfac.errors import UsageError

COMBOS = list(itertools.product(nn.HIDDEN_ACTIVATIONS, nn.OUTPUT_ACTIVATIONS))


def linear(w, b):
    spec = nn.MlpSpec((len(w[0]), len(w)), "relu", "identity")
    return nn.MlpParams((np.array(w, float),), (np.array(b, float),), spec=spec)


def fd_param_grads(params, x, upstream, h=1e-5):
    flat = nn.flatten(params)
    out = np.zeros_like(flat)
    for k in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[k] += h
        dn[k] -= h
        fu = upstream @ nn.forward(nn.unflatten(params.spec, up), x)
        fdn = upstream @ nn.forward(nn.unflatten(params.spec, dn), x)
        out[k] = (fu - fdn) / (2 * h)
    return out


def fd_input_grad(params, x, upstream, h=1e-5):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (upstream @ nn.forward(params, x + e) - upstream @ nn.forward(params, x - e)) / (2 * h)
    return g


def max_rel_error(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-6)


class TestForward:
    def test_zero_network_gives_zero(self):
        spec = nn.MlpSpec((3, 4, 2), "tanh", "identity")
        p = nn.zeros_like(nn.init_params(spec, np.random.default_rng(0)))
        params = nn.MlpParams(p.weights, p.biases, spec=spec)
        assert np.array_equal(nn.forward(params, [1.0, -2.0, 3.0]), [0.0, 0.0])

    def test_single_linear_layer(self):
        assert np.array_equal(nn.forward(linear([[2.0]], [1.0]), [3.0]), [7.0])

    def test_tanh_output_is_bounded(self):
        rng = np.random.default_rng(1)
        params = nn.init_params(nn.MlpSpec((5, 16, 16, 3), "tanh", "tanh"), rng)
        y = nn.forward(params, rng.normal(size=(100, 5)) * 10)
        assert np.all(np.isfinite(y)) and np.all(np.abs(y) < 1)

    def test_batch_rows_match_single_calls(self):
        rng = np.random.default_rng(2)
        params = nn.init_params(nn.MlpSpec((4, 8, 2)), rng)
        x = rng.normal(size=(6, 4))
        assert np.allclose(nn.forward(params, x), [nn.forward(params, r) for r in x], rtol=0, atol=1e-15)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        params = nn.init_params(nn.MlpSpec((4, 8, 8, 2)), rng)
        x = rng.normal(size=4)
        assert np.array_equal(nn.forward(params, x), nn.forward(params, x))

    def test_dimension_mismatch(self):
        with pytest.raises(UsageError):
            nn.forward(linear([[2.0]], [1.0]), [1.0, 2.0])


class TestBackward:
    def test_single_linear_layer(self):
        g = nn.backward(linear([[2.0]], [1.0]), [3.0], [1.0])
        assert np.array_equal(g.param_grads.weights[0], [[3.0]])
        assert np.array_equal(g.param_grads.biases[0], [1.0])
        assert np.array_equal(g.input_grad, [2.0])

    def test_zero_upstream(self):
        rng = np.random.default_rng(4)
        params = nn.init_params(nn.MlpSpec((3, 5, 2)), rng)
        g = nn.backward(params, rng.normal(size=3), np.zeros(2))
        assert all(np.all(a == 0) for a in g.param_grads.arrays())
        assert np.all(g.input_grad == 0)

    @pytest.mark.parametrize("hidden,output", COMBOS)
    def test_matches_finite_differences(self, hidden, output):
        rng = np.random.default_rng(COMBOS.index((hidden, output)))
        for _ in range(20):
            sizes = (int(rng.integers(2, 6)), int(rng.integers(3, 8)), int(rng.integers(3, 8)), int(rng.integers(1, 4)))
            params = nn.init_params(nn.MlpSpec(sizes, hidden, output), rng)
            x = rng.normal(size=sizes[0])
            up = rng.normal(size=sizes[-1])
            g = nn.backward(params, x, up)
            assert max_rel_error(nn.flatten(g.param_grads), fd_param_grads(params, x, up)) <= 1e-4
            assert max_rel_error(g.input_grad, fd_input_grad(params, x, up)) <= 1e-4

    def test_batch_sums_parameter_gradients(self):
        rng = np.random.default_rng(5)
        params = nn.init_params(nn.MlpSpec((3, 6, 2), "tanh", "identity"), rng)
        x, up = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
        batch = nn.backward(params, x, up)
        singles = [nn.backward(params, x[i], up[i]) for i in range(4)]
        total = sum(nn.flatten(s.param_grads) for s in singles)
        assert np.allclose(nn.flatten(batch.param_grads), total, atol=1e-14)
        assert np.allclose(batch.input_grad, [s.input_grad for s in singles], atol=1e-14)

    def test_upstream_mismatch(self):
        with pytest.raises(UsageError):
            nn.backward(linear([[2.0]], [1.0]), [3.0], [1.0, 1.0])


class TestGradientStep:
    def test_zero_gradient_is_identity(self):
        p = nn.init_params(nn.MlpSpec((2, 3, 1)), np.random.default_rng(0))
        assert nn.apply_gradient_step(p, nn.zeros_like(p), 0.5).equals(p)

    def test_zero_rate_is_identity(self):
        p = nn.init_params(nn.MlpSpec((2, 3, 1)), np.random.default_rng(0))
        assert nn.apply_gradient_step(p, p.grads(), 0.0, "ascent").equals(p)

    def test_ascent(self):
        p = linear([[1.0]], [0.0])
        g = nn.ParamGrads((np.array([[2.0]]),), (np.array([0.0]),))
        assert nn.apply_gradient_step(p, g, 0.1, "ascent").weights[0][0, 0] == pytest.approx(1.2)
        assert nn.apply_gradient_step(p, g, 0.1, "descent").weights[0][0, 0] == pytest.approx(0.8)

    def test_sequential_steps(self):
        rng = np.random.default_rng(6)
        p = nn.init_params(nn.MlpSpec((2, 3, 1)), rng)
        g1 = nn.init_params(p.spec, rng).grads()
        g2 = nn.init_params(p.spec, rng).grads()
        twice = nn.apply_gradient_step(nn.apply_gradient_step(p, g1, 0.3, "ascent"), g2, 0.3, "ascent")
        expected = [(a + 0.3 * b) + 0.3 * c for a, b, c in zip(p.arrays(), g1.arrays(), g2.arrays())]
        assert all(np.array_equal(x, y) for x, y in zip(twice.arrays(), expected))

    def test_shape_mismatch(self):
        p = nn.init_params(nn.MlpSpec((2, 3, 1)), np.random.default_rng(0))
        q = nn.init_params(nn.MlpSpec((2, 4, 1)), np.random.default_rng(0))
        with pytest.raises(UsageError):
            nn.apply_gradient_step(p, q, 0.1)

    def test_params_are_immutable(self):
        p = nn.init_params(nn.MlpSpec((2, 3, 1)), np.random.default_rng(0))
        with pytest.raises(ValueError):
            p.weights[0][0, 0] = 1.0


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        p = linear([[1.0]], [0.0])
        g = nn.ParamGrads((np.array([[4.0]]),), (np.array([-2.0]),))
        q, state = nn.adam_step(p, g, nn.adam_init(p), 0.01, "descent")
        assert q.weights[0][0, 0] == pytest.approx(0.99, abs=1e-8)
        assert q.biases[0][0] == pytest.approx(0.01, abs=1e-8)
        assert state.t == 1

    def test_minimizes_quadratic(self):
        p = linear([[3.0]], [-2.0])
        state = nn.adam_init(p)
        for _ in range(3000):
            p, state = nn.adam_step(p, p.grads(), state, 0.01)
        assert np.all(np.abs(nn.flatten(p)) < 1e-2)


class TestSoftUpdate:
    def test_tau_one_copies_online(self):
        rng = np.random.default_rng(7)
        t, o = (nn.init_params(nn.MlpSpec((2, 3, 1)), rng) for _ in range(2))
        assert nn.soft_update(t, o, 1.0).equals(o)

    def test_tau_zero_is_identity(self):
        rng = np.random.default_rng(7)
        t, o = (nn.init_params(nn.MlpSpec((2, 3, 1)), rng) for _ in range(2))
        assert nn.soft_update(t, o, 0.0).equals(t)

    def test_half(self):
        assert nn.soft_update(linear([[0.0]], [0.0]), linear([[2.0]], [2.0]), 0.5).weights[0][0, 0] == 1.0

    def test_geometric_convergence(self):
        t, o = linear([[0.0]], [0.0]), linear([[1.0]], [-3.0])
        for _ in range(200):
            t = nn.soft_update(t, o, 0.01)
        assert t.weights[0][0, 0] == pytest.approx(1 - 0.99**200, rel=1e-9)
        assert t.biases[0][0] == pytest.approx(-3 * (1 - 0.99**200), rel=1e-9)

    def test_spec_mismatch(self):
        rng = np.random.default_rng(0)
        with pytest.raises(UsageError):
            nn.soft_update(nn.init_params(nn.MlpSpec((2, 3, 1)), rng), nn.init_params(nn.MlpSpec((2, 4, 1)), rng), 0.5)


class TestCheckpoint:
    def test_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(8)
        p = nn.init_params(nn.MlpSpec((4, 7, 3), "tanh", "tanh"), rng)
        p = nn.apply_gradient_step(p, nn.init_params(p.spec, rng), 1 / 3)
        nn.save_params(p, tmp_path / "net.json")
        q = nn.load_params(tmp_path / "net.json")
        assert q.equals(p)

    def test_rejects_other_formats(self):
        with pytest.raises(UsageError):
            nn.params_from_dict({"format": "something-else", "version": 1})

    def test_flat_order_is_row_major(self):
        p = nn.MlpParams((np.array([[1.0, 2.0], [3.0, 4.0]]),), (np.array([5.0, 6.0]),), spec=nn.MlpSpec((2, 2)))
        assert nn.params_to_dict(p)["weights"] == [[1.0, 2.0, 3.0, 4.0]]
        assert nn.flatten(p).tolist() == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]


def test_spec_validation():
    with pytest.raises(UsageError):
        nn.MlpSpec((3,))
    with pytest.raises(UsageError):
        nn.MlpSpec((3, 2), "sigmoid")
    with pytest.raises(UsageError):
        nn.MlpSpec((3, 0, 2))


def test_init_is_bounded_by_fan_in():
    p = nn.init_params(nn.MlpSpec((16, 64, 2)), np.random.default_rng(9))
    assert np.all(np.abs(p.weights[0]) <= 1 / 4) and np.all(np.abs(p.weights[1]) <= 1 / 8)
