"""
Tests for the tensor engine core: storage, graph bookkeeping and backward().
"""

import numpy as np
import pytest

from src.errors import ContractError, DimensionError, NumericError
from src.ndarr import ops
from src.ndarr.tensor import ComputeGraph, Tensor, as_tensor, backward, default_dtype, no_grad, precision


# =============================================================================
# Storage
# =============================================================================

class TestTensorStorage:
    def test_float32_row_major_by_default(self):
        t = Tensor([[1, 2, 3], [4, 5, 6]])
        assert t.data.dtype == np.float32
        assert t.data.flags["C_CONTIGUOUS"]
        assert t.shape == (2, 3)
        assert t.size == int(np.prod(t.shape))

    def test_scalar_keeps_zero_axes(self):
        assert Tensor(3.0).shape == ()
        assert Tensor(3.0).item() == 3.0

    def test_at_most_five_axes(self):
        Tensor(np.zeros((1, 1, 1, 1, 1)))
        with pytest.raises(DimensionError):
            Tensor(np.zeros((1, 1, 1, 1, 1, 1)))

    def test_item_needs_single_element(self):
        with pytest.raises(ContractError):
            Tensor([1.0, 2.0]).item()

    def test_precision_context(self):
        with precision(np.float64):
            assert default_dtype() == np.float64
            assert Tensor([1.0]).data.dtype == np.float64
        assert default_dtype() == np.float32

    def test_as_tensor_passes_tensors_through(self):
        t = Tensor([1.0])
        assert as_tensor(t) is t
        assert isinstance(as_tensor(2.0), Tensor)

    def test_non_finite_forward_is_an_error(self):
        with pytest.raises(NumericError):
            ops.add(Tensor([np.nan]), 1.0)


# =============================================================================
# backward()
# =============================================================================

class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        ops.sum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_square_gives_two_x(self):
        values = np.array([[1.0, -2.0], [0.5, 3.0]])
        x = Tensor(values, requires_grad=True)
        ops.sum(x * x).backward()
        np.testing.assert_allclose(x.grad, 2 * values)

    def test_non_scalar_loss_is_a_contract_error(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            backward(x * 2.0)

    def test_disconnected_loss_is_a_contract_error(self):
        with pytest.raises(ContractError):
            backward(ops.sum(Tensor([1.0, 2.0])))

    def test_graph_is_freed_after_backward(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = ops.sum(x * x)
        loss.backward()
        with pytest.raises(ContractError):
            loss.backward()

    def test_leaf_gradients_accumulate_until_zero_grad(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        ops.sum(x).backward()
        ops.sum(x).backward()
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])
        x.zero_grad()
        assert x.grad is None

    def test_shared_subexpression_visited_once(self):
        x = Tensor([3.0], requires_grad=True)
        y = x * x
        graph = (y + y).backward()
        # d(2x²)/dx = 4x
        np.testing.assert_allclose(x.grad, [12.0])
        kinds = [node.kind for node in graph.nodes]
        assert kinds.count("mul") == 1

    def test_compute_graph_is_topological(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = ops.sum(ops.relu(x * 2.0))
        graph = ComputeGraph(loss)
        position = {t.id: i for i, t in enumerate(graph.tensors)}
        for node in graph.nodes:
            for input_id in node.input_ids:
                if input_id in position:
                    assert position[input_id] < position[node.output_id]
        assert graph.leaves == [x]

    def test_no_grad_builds_no_graph(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with no_grad():
            y = ops.sum(x * x)
        assert not y.requires_grad
        assert y.creator is None
