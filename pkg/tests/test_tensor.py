import numpy as np
import pytest

from backend.errors import AutogradError, GradCheckError, NonFiniteError, ShapeError
from backend.models.tensor import (
    Tape,
    Tensor,
    apply_op,
    concat,
    get_dtype,
    grad_check,
    no_grad,
    precision,
    softmax,
)


class TestPrecision:
    def test_default_is_f32(self):
        assert get_dtype() is np.float32
        assert Tensor([1.0]).dtype == np.float32

    def test_scoped_f64(self):
        with precision("f64"):
            assert Tensor([1.0]).dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            with precision("f16"):
                pass


class TestConstruction:
    def test_rank_limit(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((1, 1, 1, 1, 1)))

    def test_item_needs_one_element(self):
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]).item()


@pytest.mark.usefixtures("f64")
class TestBackward:
    def test_square_sum(self):
        x = Tensor([1.0, 2.0, -3.0], requires_grad=True)
        with Tape() as tape:
            tape.backward((x * x).sum())
        np.testing.assert_array_equal(x.grad, [2.0, 4.0, -6.0])

    def test_broadcast_operand_gradient_is_summed(self):
        a = Tensor(np.ones((2, 3, 4)), requires_grad=True)
        b = Tensor(np.full((3, 1), 2.0), requires_grad=True)
        with Tape() as tape:
            tape.backward((a * b).sum())
        np.testing.assert_array_equal(a.grad, np.full((2, 3, 4), 2.0))
        np.testing.assert_array_equal(b.grad, np.full((3, 1), 8.0))

    def test_scalar_on_the_left(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            tape.backward((3.0 - x).sum())
        np.testing.assert_array_equal(x.grad, [-1.0, -1.0])

    def test_max_routes_gradient_to_first_maximizer(self):
        x = Tensor([[1.0, 3.0, 3.0]], requires_grad=True)
        with Tape() as tape:
            tape.backward(x.max(1).sum())
        np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0]])

    def test_mean_gradient(self):
        x = Tensor(np.zeros((2, 5)), requires_grad=True)
        with Tape() as tape:
            tape.backward(x.mean())
        np.testing.assert_allclose(x.grad, np.full((2, 5), 0.1))

    def test_concat_splits_gradient(self):
        a = Tensor(np.ones((1, 2)), requires_grad=True)
        b = Tensor(np.ones((1, 3)), requires_grad=True)
        weights = Tensor(np.arange(5.0).reshape(1, 5))
        with Tape() as tape:
            tape.backward((concat([a, b], axis=1) * weights).sum())
        np.testing.assert_array_equal(a.grad, [[0.0, 1.0]])
        np.testing.assert_array_equal(b.grad, [[2.0, 3.0, 4.0]])

    def test_unreachable_leaf_gets_zeros(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        b = Tensor([3.0], requires_grad=True)
        with Tape() as tape:
            _ = a * 2.0
            tape.backward((b * b).sum())
        np.testing.assert_array_equal(a.grad, [0.0, 0.0])
        np.testing.assert_array_equal(b.grad, [6.0])

    def test_targets_limit_written_leaves(self):
        a = Tensor([1.0], requires_grad=True)
        b = Tensor([2.0], requires_grad=True)
        with Tape() as tape:
            tape.backward((a * b).sum(), targets=[b])
        assert a.grad is None
        np.testing.assert_array_equal(b.grad, [1.0])

    def test_gradients_accumulate_until_zero_grad(self):
        x = Tensor([1.0], requires_grad=True)
        for _ in range(2):
            with Tape() as tape:
                tape.backward((x * 5.0).sum())
        np.testing.assert_array_equal(x.grad, [10.0])
        x.zero_grad()
        assert x.grad is None


class TestTapeMisuse:
    def test_detached_loss(self):
        x = Tensor([1.0], requires_grad=True)
        loss = (x * x).sum()
        with Tape() as tape:
            with pytest.raises(AutogradError):
                tape.backward(loss)

    def test_replay_twice(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            loss = (x * x).sum()
            tape.backward(loss)
            with pytest.raises(AutogradError):
                tape.backward(loss)

    def test_reset_allows_reuse(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            tape.backward((x * x).sum())
            tape.reset()
            assert len(tape) == 0
            tape.backward((x * 3.0).sum())
        np.testing.assert_allclose(x.grad, [5.0])

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            with pytest.raises(ShapeError):
                tape.backward(x * 2.0)

    def test_no_grad_skips_recording(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            with no_grad():
                y = x * 2.0
            assert len(tape) == 0
            assert not y.requires_grad


class TestForwardChecks:
    def test_non_finite_result(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0]) * float("inf")

    def test_softmax_slices_sum_to_one(self, f64, rng):
        probs = softmax(Tensor(rng.normal(size=(2, 4, 5)) * 30.0), axis=1)
        np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-12)

    def test_reshape_size_mismatch(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3))).reshape(4, 2)

    def test_broadcast_must_fit_left_operand(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3))) - Tensor(np.zeros((4,)))

    def test_concat_ragged(self):
        with pytest.raises(ShapeError):
            concat([Tensor(np.zeros((1, 2, 3))), Tensor(np.zeros((1, 2, 4)))], axis=1)


class TestGradCheck:
    def test_requires_f64(self):
        with pytest.raises(GradCheckError):
            grad_check(lambda t: (t * t).sum(), Tensor([1.0, 2.0]))

    def test_correct_rule_passes(self, f64, rng):
        x = Tensor(rng.normal(size=(3, 4)))
        assert grad_check(lambda t: (t * t * t).sum(), x) < 1e-6

    def test_wrong_rule_is_caught(self, f64, rng):
        def doubled_backward(t):
            return apply_op("bad_identity", t.data.copy(), (t,), lambda g: (2.0 * g,))

        x = Tensor(rng.normal(size=(4,)))
        assert grad_check(lambda t: doubled_backward(t).sum(), x) > 0.4

    def test_input_left_untouched(self, f64):
        x = Tensor([1.0, 2.0])
        grad_check(lambda t: (t * t).sum(), x)
        np.testing.assert_array_equal(x.data, [1.0, 2.0])
        assert x.grad is None
