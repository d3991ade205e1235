import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cornet import numcore as nc
from cornet.numcore import (ComputationRecord, OptimizerState, ShapeError, Tensor,
                            UnknownPrimitiveError, apply_primitive, backward, grad_check,
                            optimizer_step)


def central_difference(f, x, eps=1e-6):
    """Numerical gradient of scalar f(ndarray) computed entry by entry."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        g[idx] = (f(xp) - f(xm)) / (2 * eps)
    return g


class TestPrimitiveExamples:
    def test_matmul_identity(self):
        a = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(nc.matmul(a, np.eye(3)).data, a)

    def test_sigmoid_of_zero(self):
        np.testing.assert_array_equal(nc.sigmoid(np.zeros((2, 3))).data, 0.5)

    def test_softmax_constant_row(self):
        np.testing.assert_allclose(nc.softmax(np.full((1, 4), 3.7)).data, 0.25, rtol=0, atol=1e-15)

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            nc.matmul(np.ones((2, 3)), np.ones((4, 5)))

    def test_unknown_primitive(self):
        with pytest.raises(UnknownPrimitiveError):
            apply_primitive("fft", np.ones(3))

    def test_sigmoid_extreme_inputs_stay_finite(self):
        out = nc.sigmoid(np.array([-1000.0, 0.0, 1000.0])).data
        assert np.all(np.isfinite(out))
        np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])

    def test_untracked_values_have_no_record(self):
        assert nc.relu(np.ones(3)).record is None


class TestBackwardExamples:
    def test_sum_gives_ones(self):
        rec = ComputationRecord()
        p = rec.leaf("p", np.random.default_rng(0).standard_normal((2, 3, 4)))
        g = backward(rec, nc.tsum(p))["p"].data
        np.testing.assert_array_equal(g, np.ones((2, 3, 4)))

    def test_mean_of_square(self):
        rec = ComputationRecord()
        p = rec.leaf("p", [3.0])
        g = backward(rec, nc.mean(nc.square(p)))["p"].data
        # oracle: central difference of p**2 at 3
        np.testing.assert_allclose(g, central_difference(lambda x: float(np.mean(x ** 2)), [3.0]), atol=1e-8)
        np.testing.assert_allclose(g, [6.0])

    def test_unreachable_parameter_gets_zero(self):
        rec = ComputationRecord()
        p = rec.leaf("p", np.ones(3))
        q = rec.leaf("q", np.ones((2, 2)))
        grads = backward(rec, nc.tsum(p))
        np.testing.assert_array_equal(grads["q"].data, np.zeros((2, 2)))

    def test_non_scalar_loss_rejected(self):
        rec = ComputationRecord()
        p = rec.leaf("p", np.ones(3))
        with pytest.raises(ShapeError):
            backward(rec, p * 2.0)

    def test_record_unmodified(self):
        rec = ComputationRecord()
        p = rec.leaf("p", np.ones(3))
        loss = nc.tsum(nc.square(p))
        before = [n.value.copy() for n in rec.nodes]
        backward(rec, loss)
        assert len(rec.nodes) == len(before)
        for node, value in zip(rec.nodes, before):
            np.testing.assert_array_equal(node.value, value)

    def test_shared_subexpression_accumulates(self):
        rec = ComputationRecord()
        p = rec.leaf("p", [2.0])
        loss = nc.tsum(p * p + p)
        np.testing.assert_allclose(backward(rec, loss)["p"].data, [5.0])


def _random(rng, shape, positive=False):
    x = rng.standard_normal(shape)
    return np.abs(x) + 0.5 if positive else x


# Each case: builder(params) -> scalar tensor, and three parameter shape sets.
# Losses are contracted with a fixed random weight so that every output entry matters.
def _weighted(out, seed=123):
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return nc.tsum(out * w)


PRIMITIVE_CASES = {
    "add": (lambda p: _weighted(p["a"] + p["b"]), [{"a": (3,), "b": (3,)}, {"a": (2, 3), "b": (3,)}, {"a": (2, 1, 4), "b": (3, 1)}]),
    "sub": (lambda p: _weighted(p["a"] - p["b"]), [{"a": (3,), "b": (3,)}, {"a": (2, 3), "b": (1, 3)}, {"a": (4,), "b": (2, 3, 4)}]),
    "mul": (lambda p: _weighted(p["a"] * p["b"]), [{"a": (3,), "b": (3,)}, {"a": (2, 3), "b": ()}, {"a": (2, 1, 4), "b": (3, 1)}]),
    "scale": (lambda p: _weighted(p["a"] * 2.5), [{"a": (3,)}, {"a": (2, 3)}, {"a": (2, 3, 2)}]),
    "matmul": (lambda p: _weighted(p["a"] @ p["b"]), [{"a": (2, 3), "b": (3, 4)}, {"a": (5, 2, 3), "b": (3, 2)}, {"a": (3, 2, 4), "b": (3, 4, 2)}]),
    "affine": (lambda p: _weighted(nc.affine(p["x"], p["w"], p["b"])), [{"x": (2, 3), "w": (3, 4), "b": (4,)}, {"x": (4, 2, 3), "w": (3, 1), "b": (1,)}, {"x": (5,), "w": (5, 2), "b": (2,)}]),
    "sigmoid": (lambda p: _weighted(nc.sigmoid(p["a"])), [{"a": (3,)}, {"a": (2, 3)}, {"a": (2, 3, 4)}]),
    "relu": (lambda p: _weighted(nc.relu(p["a"])), [{"a": (3,)}, {"a": (2, 3)}, {"a": (2, 3, 4)}]),
    "softmax": (lambda p: _weighted(nc.softmax(p["a"])), [{"a": (1, 4)}, {"a": (3, 3)}, {"a": (2, 3, 5)}]),
    "conv1d": (lambda p: _weighted(nc.conv1d(p["x"], p["w"], p["b"])), [{"x": (5, 2), "w": (3, 2, 3), "b": (3,)}, {"x": (4, 1), "w": (1, 1, 2), "b": (2,)}, {"x": (3, 2), "w": (5, 2, 2), "b": (2,)}]),
    "sum": (lambda p: _weighted(nc.tsum(p["a"], axis=0)) + nc.tsum(p["a"]), [{"a": (3, 2)}, {"a": (2, 3, 4)}, {"a": (4, 1)}]),
    "mean": (lambda p: nc.mean(p["a"]) * 3.0, [{"a": (3,)}, {"a": (2, 3)}, {"a": (2, 3, 4)}]),
    "square": (lambda p: _weighted(nc.square(p["a"])), [{"a": (3,)}, {"a": (2, 3)}, {"a": (2, 3, 4)}]),
    "log": (lambda p: _weighted(nc.log(nc.square(p["a"]) + 0.5)), [{"a": (3,)}, {"a": (2, 3)}, {"a": (2, 3, 4)}]),
    "clip": (lambda p: _weighted(nc.clip(p["a"], -0.7, 0.9)), [{"a": (3,)}, {"a": (2, 3)}, {"a": (2, 3, 4)}]),
    "reshape": (lambda p: _weighted(nc.reshape(p["a"], (-1,))), [{"a": (3,)}, {"a": (2, 3)}, {"a": (2, 3, 4)}]),
    "transpose": (lambda p: _weighted(nc.transpose(p["a"])), [{"a": (3, 2)}, {"a": (2, 3, 4)}, {"a": (1, 5)}]),
}


@pytest.mark.parametrize("kind", sorted(PRIMITIVE_CASES))
def test_primitive_gradients_match_finite_differences(kind):
    builder, shape_sets = PRIMITIVE_CASES[kind]
    rng = np.random.default_rng(zlib.crc32(kind.encode()))
    for shapes in shape_sets:
        params = {k: _random(rng, s) for k, s in shapes.items()}
        if kind in ("relu", "clip"):
            # keep entries away from the kinks
            params = {k: np.where(np.abs(v) < 0.05, 0.3, v) for k, v in params.items()}
            params = {k: np.where(np.abs(v - 0.9) < 0.05, 0.5, v) for k, v in params.items()}
            params = {k: np.where(np.abs(v + 0.7) < 0.05, -0.5, v) for k, v in params.items()}
        assert grad_check(builder, params, eps=1e-5) <= 1e-4, shapes


def test_all_primitives_covered():
    assert set(PRIMITIVE_CASES) == set(nc.PRIMITIVES)


class TestGradCheck:
    def test_linear_function_is_exact(self):
        w = np.random.default_rng(1).standard_normal((3, 4))
        err = grad_check(lambda p: nc.tsum(p["x"] * w), {"x": np.random.default_rng(2).standard_normal((3, 4))})
        assert err <= 1e-9

    def test_ignored_parameter(self):
        errs = grad_check(lambda p: nc.tsum(p["x"]), {"x": np.ones(2), "unused": np.ones(3)}, per_param=True)
        assert errs["unused"] == 0.0

    @pytest.mark.filterwarnings("ignore:invalid value")
    def test_non_finite_rejected(self):
        with pytest.raises(FloatingPointError):
            grad_check(lambda p: nc.tsum(nc.log(p["x"])), {"x": -np.ones(2)})

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            grad_check(lambda p: nc.tsum(p["x"]), {"x": np.ones(2)}, eps=0.0)

    def test_detects_wrong_gradient(self):
        # a primitive with a deliberately broken backward rule must be caught
        nc._register("broken", 1, nc._check_any, lambda a, at: a[0] ** 3, lambda g, a, o, at: [g * a[0]])
        try:
            err = grad_check(lambda p: nc.tsum(apply_primitive("broken", p["x"])), {"x": np.array([1.5, -2.0])})
        finally:
            del nc.PRIMITIVES["broken"]
        assert err > 1e-2


class TestProperties:
    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=3, max_side=6),
                      elements=st.floats(-50, 50)))
    def test_softmax_rows_are_distributions(self, x):
        out = nc.softmax(x).data
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, rtol=0, atol=1e-9)

    def test_replay_is_bit_exact(self):
        rng = np.random.default_rng(3)
        rec = ComputationRecord()
        x = rec.leaf("x", rng.standard_normal((6, 3)))
        w = rec.leaf("w", rng.standard_normal((3, 3, 4)))
        b = rec.leaf("b", rng.standard_normal(4))
        loss = nc.mean(nc.square(nc.softmax(nc.relu(nc.conv1d(x, w, b)))))
        replayed = rec.replay()
        for node, value in zip(rec.nodes, replayed):
            assert np.array_equal(node.value, value)
        assert replayed[loss.index].tobytes() == loss.data.tobytes()

    def test_replay_with_substituted_leaf(self):
        rec = ComputationRecord()
        p = rec.leaf("p", [1.0, 2.0])
        loss = nc.tsum(nc.square(p))
        assert rec.replay({"p": np.array([3.0, 4.0])})[loss.index] == 25.0

    @pytest.mark.parametrize("t,c,k", [(7, 3, 3), (5, 1, 9), (12, 4, 5)])
    def test_conv_with_centered_impulse_is_identity(self, t, c, k):
        x = np.random.default_rng(t).standard_normal((t, c))
        w = np.zeros((k, c, c))
        w[k // 2] = np.eye(c)
        np.testing.assert_array_equal(nc.conv1d(x, w, np.zeros(c)).data, x)

    def test_conv_rejects_even_kernel(self):
        with pytest.raises(ShapeError):
            nc.conv1d(np.ones((4, 2)), np.ones((2, 2, 2)), np.ones(2))

    def test_mixed_records_rejected(self):
        a = ComputationRecord().leaf("a", 1.0)
        b = ComputationRecord().leaf("b", 1.0)
        with pytest.raises(ValueError):
            a + b


class TestOptimizer:
    def test_zero_gradient_leaves_parameter(self):
        params = {"p": np.array([1.0, -2.0])}
        state = OptimizerState.for_params(params)
        new, _ = optimizer_step(params, {"p": np.zeros(2)}, state)
        np.testing.assert_array_equal(new["p"], params["p"])

    def test_zero_learning_rate(self):
        params = {"p": np.array([1.0, -2.0]), "q": np.ones((2, 2))}
        state = OptimizerState.for_params(params, lr=0.0)
        new, state2 = optimizer_step(params, {"p": np.ones(2), "q": np.ones((2, 2))}, state)
        for k in params:
            np.testing.assert_array_equal(new[k], params[k])
        assert state2.step == 1

    def test_first_step_by_hand(self):
        # step 1: m = 0.1, v = 0.001, mhat = 1, vhat = 1 -> p = 0 - 5e-4 * 1 / (1 + 1e-8)
        params = {"p": np.array(0.0)}
        state = OptimizerState.for_params(params, lr=5e-4)
        new, state2 = optimizer_step(params, {"p": np.array(1.0)}, state)
        np.testing.assert_allclose(new["p"], -5e-4 / (1 + 1e-8), rtol=1e-12)
        np.testing.assert_allclose(new["p"], -5e-4, rtol=1e-7)
        assert state2.step == 1

    def test_pure_function(self):
        params = {"p": np.array([0.5])}
        state = OptimizerState.for_params(params)
        a, sa = optimizer_step(params, {"p": np.array([0.3])}, state)
        b, sb = optimizer_step(params, {"p": np.array([0.3])}, state)
        assert a["p"].tobytes() == b["p"].tobytes()
        assert state.step == 0 and not state.m["p"].any()
        assert sa.step == sb.step == 1

    def test_step_counter_increments(self):
        params = {"p": np.array([0.5])}
        state = OptimizerState.for_params(params)
        for expected in range(1, 4):
            params, state = optimizer_step(params, {"p": np.array([1.0])}, state)
            assert state.step == expected

    def test_shape_mismatch(self):
        params = {"p": np.zeros(2)}
        state = OptimizerState.for_params(params)
        with pytest.raises(ShapeError):
            optimizer_step(params, {"p": np.zeros(3)}, state)

    def test_tensor_gradients_accepted(self):
        params = {"p": np.zeros(2)}
        state = OptimizerState.for_params(params)
        new, _ = optimizer_step(params, {"p": Tensor([1.0, -1.0])}, state)
        assert new["p"][0] < 0 < new["p"][1]
