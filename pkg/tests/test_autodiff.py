import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drpred.autodiff import Tensor, Tape, ops, gradcheck, AdamState, adam_step
from drpred.autodiff.ops import BatchNormState
from drpred.errors import (
    DegenerateBatchError,
    DimensionError,
    DrpredError,
    TrainingDivergedError,
)


def f64(values, requires_grad=False):
    return Tensor(values, requires_grad=requires_grad, dtype=np.float64)


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = ops.matmul(a, b)
        np.testing.assert_allclose(out.values, [[1, 2], [3, 4]])

    def test_hand_arithmetic(self):
        out = ops.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_allclose(out.values, [[11.0]])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        a = f64(rng.normal(size=(3, 4)), requires_grad=True)
        b = f64(rng.normal(size=(4, 2)), requires_grad=True)
        err = gradcheck(lambda: ops.sum_all(ops.matmul(a, b)), [a, b])
        assert err <= 1e-4


class TestElementwise:
    def test_relu(self):
        out = ops.relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_allclose(out.values, [0.0, 0.0, 2.0])

    def test_sigmoid_at_zero(self):
        out = ops.sigmoid(Tensor([0.0]))
        np.testing.assert_allclose(out.values, [0.5])

    def test_prelu_definition(self):
        alpha = Tensor(0.25)
        out = ops.prelu(Tensor([-4.0, 4.0]), alpha)
        np.testing.assert_allclose(out.values, [-1.0, 4.0])

    def test_incompatible_shapes(self):
        with pytest.raises(DimensionError):
            ops.add(Tensor(np.ones((2, 2))), Tensor(np.ones((3, 2))))

    @pytest.mark.parametrize(
        "build",
        [
            lambda x: ops.relu(x),
            lambda x: ops.sigmoid(x),
            lambda x: ops.tanh(x),
            lambda x: ops.exp(x),
            lambda x: ops.square(x),
            lambda x: ops.mul(x, x),
            lambda x: ops.sub(x, 1.5),
            lambda x: ops.add(x, 0.3),
        ],
        ids=["relu", "sigmoid", "tanh", "exp", "square", "mul", "sub", "add"],
    )
    def test_adjoints_vs_finite_differences(self, build):
        rng = np.random.default_rng(11)
        # Offset away from relu's kink at 0.
        x = f64(rng.normal(size=(4, 3)) + 0.2, requires_grad=True)
        err = gradcheck(lambda: ops.sum_all(build(x)), [x])
        assert err <= 1e-4

    def test_prelu_alpha_grad(self):
        rng = np.random.default_rng(5)
        x = f64(rng.normal(size=(5, 3)), requires_grad=True)
        alpha = f64(0.25, requires_grad=True)
        err = gradcheck(lambda: ops.sum_all(ops.square(ops.prelu(x, alpha))), [x, alpha])
        assert err <= 1e-4

    def test_log_adjoint(self):
        x = f64([[0.5, 1.5], [2.5, 0.1]], requires_grad=True)
        err = gradcheck(lambda: ops.sum_all(ops.log(x)), [x])
        assert err <= 1e-4


class TestStructuralOps:
    def test_gather_scatter_adjoints(self):
        rng = np.random.default_rng(7)
        x = f64(rng.normal(size=(5, 3)), requires_grad=True)
        idx = [0, 2, 2, 4, 1, 0]
        seg = [0, 0, 1, 1, 2, 2]
        err = gradcheck(
            lambda: ops.sum_all(ops.square(ops.segment_sum(ops.gather_rows(x, idx), seg, 3))),
            [x],
        )
        assert err <= 1e-4

    def test_segment_mean_values(self):
        x = Tensor([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        out = ops.segment_mean(x, [0, 0, 1], 2)
        np.testing.assert_allclose(out.values, [[2.0, 3.0], [5.0, 6.0]])

    def test_concat_cols_adjoint(self):
        rng = np.random.default_rng(9)
        a = f64(rng.normal(size=(3, 2)), requires_grad=True)
        b = f64(rng.normal(size=(3, 4)), requires_grad=True)
        err = gradcheck(lambda: ops.sum_all(ops.square(ops.concat_cols([a, b]))), [a, b])
        assert err <= 1e-4

    def test_add_bias_adjoint(self):
        rng = np.random.default_rng(13)
        x = f64(rng.normal(size=(4, 3)), requires_grad=True)
        b = f64(rng.normal(size=3), requires_grad=True)
        err = gradcheck(lambda: ops.sum_all(ops.square(ops.add_bias(x, b))), [x, b])
        assert err <= 1e-4


class TestBatchNorm:
    def test_standardized_input_passthrough(self):
        x = np.array([[1.0, -1.0], [-1.0, 1.0]])  # mean 0, var 1 per column
        state = BatchNormState(2, dtype=np.float64)
        out = ops.batchnorm(
            f64(x), f64(np.ones(2)), f64(np.zeros(2)), state, training=True
        )
        np.testing.assert_allclose(out.values, x, atol=1e-4)  # eps shrinks slightly

    def test_zero_gamma_gives_beta(self):
        rng = np.random.default_rng(2)
        x = f64(rng.normal(size=(6, 3)))
        beta = np.array([0.5, -1.0, 2.0])
        out = ops.batchnorm(x, f64(np.zeros(3)), f64(beta), BatchNormState(3, dtype=np.float64), True)
        np.testing.assert_allclose(out.values, np.tile(beta, (6, 1)))

    def test_batch_of_one_rejected(self):
        with pytest.raises(DegenerateBatchError):
            ops.batchnorm(
                f64(np.ones((1, 3))), f64(np.ones(3)), f64(np.zeros(3)),
                BatchNormState(3, dtype=np.float64), True,
            )

    def test_backward_vs_finite_differences(self):
        rng = np.random.default_rng(21)
        x = f64(rng.normal(size=(6, 4)), requires_grad=True)
        gamma = f64(rng.normal(size=4) + 1.0, requires_grad=True)
        beta = f64(rng.normal(size=4), requires_grad=True)
        # Weighting breaks the moment constraints of the normalized output;
        # an unweighted sum of squares would barely depend on x at all.
        weights = Tensor(rng.normal(size=(6, 4)), dtype=np.float64)

        def loss():
            state = BatchNormState(4, dtype=np.float64)
            normed = ops.batchnorm(x, gamma, beta, state, True)
            return ops.sum_all(ops.square(ops.mul(normed, weights)))

        assert gradcheck(loss, [x, gamma, beta]) <= 1e-4

    def test_eval_uses_running_stats(self):
        state = BatchNormState(2, dtype=np.float64)
        state.running_mean = np.array([1.0, 2.0])
        state.running_var = np.array([4.0, 9.0])
        x = f64([[3.0, 8.0], [1.0, 2.0]])
        out = ops.batchnorm(x, f64(np.ones(2)), f64(np.zeros(2)), state, training=False)
        expected = (x.values - state.running_mean) / np.sqrt(state.running_var + state.eps)
        np.testing.assert_allclose(out.values, expected)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        before = p.values.copy()
        adam_step([p], [np.zeros(2)], AdamState())
        np.testing.assert_array_equal(p.values, before)

    def test_single_step_hand_value(self):
        # m_hat = 1, v_hat = 1 after bias correction, so the step is -lr.
        p = f64(np.array([0.0]), requires_grad=True)
        adam_step([p], [np.array([1.0])], AdamState())
        np.testing.assert_allclose(p.values, [-0.001], rtol=1e-6)

    def test_constant_gradient_monotone(self):
        p = f64(np.array([0.5]), requires_grad=True)
        state = AdamState()
        history = [p.values.copy()]
        for _ in range(50):
            adam_step([p], [np.array([2.0])], state)
            history.append(p.values.copy())
        deltas = np.diff(np.concatenate(history))
        assert np.all(deltas < 0)
        assert state.step == 50

    def test_nan_gradient_raises(self):
        p = f64(np.array([0.0]), requires_grad=True)
        with pytest.raises(TrainingDivergedError):
            adam_step([p], [np.array([np.nan])], AdamState())


class TestGradcheck:
    def test_sum_of_squares_closed_form(self):
        x = f64([1.0, 2.0], requires_grad=True)

        def loss():
            return ops.sum_all(ops.square(x))

        err = gradcheck(loss, [x])
        assert err < 1e-6
        with Tape() as tape:
            out = loss()
        x.zero_grad()
        tape.backward(out)
        np.testing.assert_allclose(x.grad, [2.0, 4.0], rtol=1e-12)

    def test_constant_function_zero_error(self):
        x = f64([3.0], requires_grad=True)
        err = gradcheck(lambda: ops.sum_all(ops.mul(Tensor(np.zeros(1), dtype=np.float64), x)), [x])
        assert err == 0.0

    def test_rejects_float32(self):
        x = Tensor([1.0], requires_grad=True)
        with pytest.raises(DrpredError):
            gradcheck(lambda: ops.sum_all(x), [x])


class TestTape:
    def test_forward_deterministic(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(3, 3)))
        w = Tensor(rng.normal(size=(3, 3)))
        a = ops.matmul(x, w).values
        b = ops.matmul(x, w).values
        np.testing.assert_array_equal(a, b)

    def test_leaf_update_changes_only_downstream(self):
        def build(a_val, b_val):
            a = Tensor(a_val, dtype=np.float64)
            b = Tensor(b_val, dtype=np.float64)
            c = ops.add(a, b)
            d = ops.mul(c, a)
            e = ops.relu(b)  # independent of a
            return c.values.copy(), d.values.copy(), e.values.copy()

        c1, d1, e1 = build([1.0, 2.0], [3.0, -4.0])
        c2, d2, e2 = build([9.0, 9.0], [3.0, -4.0])
        assert not np.array_equal(c1, c2)
        assert not np.array_equal(d1, d2)
        np.testing.assert_array_equal(e1, e2)

    def test_no_recording_outside_tape(self):
        x = Tensor([1.0], requires_grad=True)
        out = ops.relu(x)
        assert out.requires_grad is False

    def test_backward_requires_scalar(self):
        x = f64(np.ones((2, 2)), requires_grad=True)
        with Tape() as tape:
            y = ops.square(x)
        with pytest.raises(DimensionError):
            tape.backward(y)


@settings(max_examples=30, deadline=None)
@given(
    rows=st.integers(2, 5),
    cols=st.integers(1, 4),
    seed=st.integers(0, 2**31 - 1),
)
def test_composite_graph_gradcheck_property(rows, cols, seed):
    rng = np.random.default_rng(seed)
    x = f64(rng.normal(size=(rows, cols)), requires_grad=True)
    w = f64(rng.normal(size=(cols, 3)) * 0.5, requires_grad=True)
    b = f64(rng.normal(size=3) * 0.1, requires_grad=True)

    def loss():
        h = ops.tanh(ops.add_bias(ops.matmul(x, w), b))
        return ops.mean_all(ops.square(ops.sigmoid(h)))

    assert gradcheck(loss, [x, w, b], max_coords=12) <= 1e-4
