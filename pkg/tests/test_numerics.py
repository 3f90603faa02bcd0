import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from oracles import gradient_check_error, naive_forward, random_gradient_case
from sqtlab.errors import InvalidArchitectureError, PoisonedUpdateError, ShapeError
from sqtlab.numerics import (
    AdamState,
    MlpParams,
    adam_step,
    make_rng,
    mlp_backward,
    mlp_forward,
    mlp_grad,
    mlp_init,
    mlp_trace,
    n_params,
    stack_params,
)


class TestRng:
    def test_same_seed_same_stream(self):
        assert_array_equal(make_rng(7).normal(size=5), make_rng(7).normal(size=5))

    def test_streams_differ(self):
        a = make_rng(7, 0).normal(size=5)
        b = make_rng(7, 1).normal(size=5)
        assert not np.array_equal(a, b)


class TestInit:
    def test_shapes_and_zero_biases(self):
        p = mlp_init(make_rng(0), [3, 4, 1])
        assert [w.shape for w in p.weights] == [(4, 3), (1, 4)]
        for b in p.biases:
            assert_array_equal(b, 0.0)
        assert p.flat.size == n_params([3, 4, 1]) == 4 * 3 + 4 + 4 + 1

    def test_deterministic(self):
        a = mlp_init(make_rng(0), [3, 4, 1])
        b = mlp_init(make_rng(0), [3, 4, 1])
        assert_array_equal(a.flat, b.flat)

    def test_fan_in_bound(self):
        p = mlp_init(make_rng(0), [2, 2])
        assert np.max(np.abs(p.weights[0])) <= 1 / np.sqrt(2)

    def test_bound_per_layer(self):
        p = mlp_init(make_rng(3), [9, 25, 4])
        assert np.max(np.abs(p.weights[0])) <= 1 / 3
        assert np.max(np.abs(p.weights[1])) <= 1 / 5
        # the draws actually fill most of the range
        assert np.max(np.abs(p.weights[1])) > 0.15

    @pytest.mark.parametrize("sizes", [[], [3], [3, 0, 1], [2, -1]])
    def test_invalid_architecture(self, sizes):
        with pytest.raises(InvalidArchitectureError):
            mlp_init(make_rng(0), sizes)

    def test_ensemble_members_are_sequential_draws(self):
        rng = make_rng(5)
        singles = [mlp_init(rng, [3, 4, 1]) for _ in range(3)]
        ens = mlp_init(make_rng(5), [3, 4, 1], n_members=3)
        assert ens.n_members == 3
        for i, s in enumerate(singles):
            assert_array_equal(ens.member(i).flat, s.flat)

    def test_weight_views_alias_flat_buffer(self):
        p = mlp_init(make_rng(0), [2, 3, 1])
        p.weights[0][0, 0] = 42.0
        assert 42.0 in p.flat


class TestForward:
    def test_zero_params_give_zero_output(self):
        p = MlpParams((3, 5, 2), np.zeros(n_params([3, 5, 2])))
        assert_array_equal(mlp_forward(p, [1.0, -2.0, 3.0]), [0.0, 0.0])

    def test_identity_layer(self):
        p = MlpParams((3, 3), np.zeros(n_params([3, 3])))
        p.weights[0][...] = np.eye(3)
        x = np.array([0.5, -1.5, 2.0])
        assert_array_equal(mlp_forward(p, x), x)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_scalar_reimplementation(self, seed):
        rng = make_rng(seed)
        sizes = [int(n) for n in rng.integers(1, 8, size=int(rng.integers(2, 5)))]
        act, out_act = ("relu", "linear") if seed % 2 else ("tanh", "tanh")
        p = mlp_init(rng, sizes, act, out_act)
        for b in p.biases:
            b[...] = rng.normal(size=b.shape)
        x = rng.normal(size=sizes[0])
        expected = naive_forward(sizes, p.weights, p.biases, x, act, out_act)
        assert_allclose(mlp_forward(p, x), expected, rtol=0, atol=1e-12)

    def test_batch_rows_match_single_inputs(self):
        rng = make_rng(1)
        p = mlp_init(rng, [4, 8, 3])
        xs = rng.normal(size=(6, 4))
        batched = mlp_forward(p, xs)
        for i in range(6):
            assert_allclose(batched[i], mlp_forward(p, xs[i]), rtol=0, atol=1e-14)

    def test_ensemble_matches_members(self):
        rng = make_rng(2)
        ens = mlp_init(rng, [4, 8, 1], n_members=3)
        xs = rng.normal(size=(5, 4))
        out = mlp_forward(ens, xs)
        assert out.shape == (3, 5, 1)
        for i in range(3):
            assert_allclose(out[i], mlp_forward(ens.member(i), xs), rtol=0, atol=1e-14)

    def test_deterministic(self):
        rng = make_rng(4)
        p = mlp_init(rng, [3, 16, 2])
        x = rng.normal(size=(7, 3))
        assert_array_equal(mlp_forward(p, x), mlp_forward(p, x))

    def test_shape_error(self):
        p = mlp_init(make_rng(0), [3, 4, 1])
        with pytest.raises(ShapeError):
            mlp_forward(p, np.zeros(2))


class TestGradient:
    def test_zero_upstream_gives_zero_gradient(self):
        rng = make_rng(0)
        p = mlp_init(rng, [3, 5, 2])
        g, dx = mlp_grad(p, rng.normal(size=3), np.zeros(2))
        assert_array_equal(g.flat, 0.0)
        assert_array_equal(dx, 0.0)

    def test_single_linear_layer_closed_form(self):
        rng = make_rng(1)
        p = mlp_init(rng, [4, 3], "relu", "linear")
        x, u = rng.normal(size=4), rng.normal(size=3)
        g, dx = mlp_grad(p, x, u)
        assert_array_equal(g.weights[0], np.outer(u, x))
        assert_array_equal(g.biases[0], u)
        assert_allclose(dx, p.weights[0].T @ u, rtol=0, atol=1e-15)

    @pytest.mark.parametrize("seed", range(20))
    def test_finite_difference_oracle(self, seed):
        params, x, upstream = random_gradient_case(make_rng(1000 + seed))
        assert gradient_check_error(params, x, upstream) < 1e-4

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_finite_difference_property(self, seed):
        params, x, upstream = random_gradient_case(make_rng(seed))
        assert gradient_check_error(params, x, upstream) < 1e-4

    def test_ensemble_gradient_matches_members(self):
        rng = make_rng(3)
        ens = mlp_init(rng, [3, 6, 1], n_members=2)
        x = rng.normal(size=(4, 3))
        u = rng.normal(size=(2, 4, 1))
        g, dx = mlp_grad(ens, x, u)
        for i in range(2):
            gi, dxi = mlp_grad(ens.member(i), x, u[i])
            assert_allclose(g.flat[i], gi.flat, rtol=0, atol=1e-14)
            assert_allclose(dx[i], dxi, rtol=0, atol=1e-14)

    def test_input_only_backward(self):
        rng = make_rng(4)
        p = mlp_init(rng, [3, 6, 2])
        x, u = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
        _, trace = mlp_trace(p, x)
        g, dx = mlp_backward(p, trace, u, param_grads=False)
        assert g is None
        assert_array_equal(dx, mlp_grad(p, x, u)[1])

    def test_upstream_shape_error(self):
        p = mlp_init(make_rng(0), [3, 4, 2])
        with pytest.raises(ShapeError):
            mlp_grad(p, np.zeros(3), np.zeros(3))


class TestAdam:
    def _params(self, seed=0):
        return mlp_init(make_rng(seed), [3, 4, 2])

    def test_zero_grad_fresh_state_is_noop(self):
        p = self._params()
        zero = p.with_flat(np.zeros_like(p.flat))
        new, state = adam_step(p, zero, AdamState.zeros_like(p), 1e-3)
        assert_array_equal(new.flat, p.flat)
        assert state.step_count == 1

    def test_constant_gradient_step_tends_to_lr_sign(self):
        p = self._params()
        g = p.with_flat(make_rng(9).normal(size=p.flat.shape))
        state = AdamState.zeros_like(p)
        lr = 1e-3
        for _ in range(1000):
            prev = p.flat
            p, state = adam_step(p, g, state, lr)
        step = p.flat - prev
        assert_allclose(step, -lr * np.sign(g.flat), rtol=0.01)
        assert state.step_count == 1000

    def test_first_step_matches_hand_computation(self):
        p = MlpParams((1, 1), np.array([1.0, 0.0]))
        g = p.with_flat(np.array([0.5, -2.0]))
        new, state = adam_step(p, g, AdamState.zeros_like(p), 0.1)
        # bias-corrected moments equal g and g**2 after one step
        expected = p.flat - 0.1 * g.flat / (np.abs(g.flat) + 1e-8)
        assert_allclose(new.flat, expected, rtol=0, atol=1e-15)
        assert_allclose(state.first_moment, 0.1 * g.flat)
        assert_allclose(state.second_moment, 0.001 * g.flat**2)

    def test_pure(self):
        p = self._params()
        g = p.with_flat(make_rng(2).normal(size=p.flat.shape))
        s = AdamState.zeros_like(p)
        before = (p.flat.copy(), g.flat.copy(), s.first_moment.copy())
        a1, s1 = adam_step(p, g, s, 1e-2)
        a2, s2 = adam_step(p, g, s, 1e-2)
        assert_array_equal(a1.flat, a2.flat)
        assert_array_equal(s1.second_moment, s2.second_moment)
        assert_array_equal(p.flat, before[0])
        assert_array_equal(g.flat, before[1])
        assert_array_equal(s.first_moment, before[2])
        assert s.step_count == 0

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite_gradient_is_poisoned(self, bad):
        p = self._params()
        flat = np.zeros_like(p.flat)
        flat[3] = bad
        with pytest.raises(PoisonedUpdateError):
            adam_step(p, p.with_flat(flat), AdamState.zeros_like(p), 1e-3)

    def test_nonpositive_lr_rejected(self):
        p = self._params()
        with pytest.raises(ValueError):
            adam_step(p, p, AdamState.zeros_like(p), 0.0)

    def test_shape_mismatch(self):
        p = self._params()
        other = mlp_init(make_rng(0), [3, 5, 2])
        with pytest.raises(ShapeError):
            adam_step(p, other, AdamState.zeros_like(p), 1e-3)


class TestStacking:
    def test_stack_and_member_roundtrip(self):
        rng = make_rng(0)
        members = [mlp_init(rng, [2, 3, 1]) for _ in range(3)]
        ens = stack_params(members)
        for i, m in enumerate(members):
            assert_array_equal(ens.member(i).flat, m.flat)

    def test_mismatched_members_rejected(self):
        rng = make_rng(0)
        with pytest.raises(ShapeError):
            stack_params([mlp_init(rng, [2, 3, 1]), mlp_init(rng, [2, 4, 1])])
