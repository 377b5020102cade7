import numpy as np
import pytest

from reprime.autodiff import (
    ShapeError,
    Tape,
    Tensor,
    add,
    backward,
    mul,
    no_grad,
    tmean,
    tsum,
)


class TestTape:
    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones((2, 2), np.float32))
        with Tape() as tape:
            y = mul(x, x)
        with pytest.raises(ShapeError):
            tape.backward(y)

    def test_disconnected_node_gets_zero_grad(self):
        x = Tensor(np.ones(3, np.float32))
        unused = Tensor(np.ones(5, np.float32))
        with Tape() as tape:
            tape.watch(unused)
            loss = tsum(mul(x, x))
        grads = tape.backward(loss)
        assert np.array_equal(grads.of(unused), np.zeros(5, np.float32))

    def test_tensor_never_on_tape_reads_zero(self):
        x = Tensor(np.ones(3, np.float32))
        other = Tensor(np.ones(4, np.float32))
        with Tape() as tape:
            loss = tsum(x)
        assert np.array_equal(tape.backward(loss).of(other), np.zeros(4, np.float32))

    def test_loss_off_tape_rejected(self):
        x = Tensor(np.ones(3, np.float32))
        loss = tsum(x)  # no tape active
        with Tape() as tape:
            pass
        with pytest.raises(ValueError):
            tape.backward(loss)

    def test_reused_input_accumulates(self):
        x = Tensor(np.array([3.0], np.float32))
        with Tape() as tape:
            loss = tsum(mul(x, x))  # both operands are x
        assert np.allclose(tape.backward(loss).of(x), [6.0])

    def test_chain_rule_two_stages(self):
        x = Tensor(np.array([2.0], np.float32))
        with Tape() as tape:
            y = mul(x, x)        # x^2
            loss = tsum(mul(y, y))  # x^4 -> d/dx = 4 x^3 = 32
        assert np.allclose(tape.backward(loss).of(x), [32.0])

    def test_no_grad_suspends_recording(self):
        x = Tensor(np.ones(3, np.float32))
        with Tape() as tape:
            with no_grad():
                hidden = mul(x, x)
            loss = tsum(add(x, Tensor(hidden.data)))
        grads = tape.backward(loss)
        assert np.array_equal(grads.of(x), np.ones(3, np.float32))
        assert hidden.node is None

    def test_no_recording_without_tape(self):
        x = Tensor(np.ones(3, np.float32))
        y = mul(x, x)
        assert y.node is None and x.node is None

    def test_fresh_tape_per_iteration(self):
        x = Tensor(np.array([1.0, 2.0], np.float32))
        for _ in range(3):
            with Tape() as tape:
                loss = tmean(mul(x, x))
            g = tape.backward(loss).of(x)
            assert np.allclose(g, [1.0, 2.0])

    def test_gradient_shapes_match_parameters(self):
        x = Tensor(np.ones((2, 3), np.float32))
        w = Tensor(np.ones((3, 4), np.float32))
        with Tape() as tape:
            from reprime.autodiff import matmul

            loss = tsum(matmul(x, w))
        grads = tape.backward(loss)
        assert grads.of(x).shape == (2, 3)
        assert grads.of(w).shape == (3, 4)

    def test_free_function_backward(self):
        x = Tensor(np.array([3.0], np.float32))
        with Tape() as tape:
            loss = tsum(mul(x, x))
        assert np.allclose(backward(tape, loss).of(x), [6.0])
