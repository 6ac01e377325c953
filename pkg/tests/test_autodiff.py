import numpy as np
import pytest

from cropdann import autodiff as ad
from cropdann.autodiff import (Tensor, backward, finite_difference_check, grad_reverse,
                               no_grad, zero_grads)
from cropdann.errors import ContractError, NumericDomainError, ShapeError


def t(data, grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad)


class TestForwardValues:
    def test_relu_definition(self):
        assert np.array_equal(ad.relu(t([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_matmul_identity(self):
        out = ad.matmul(t(np.eye(2)), t([[3.0, 4.0], [5.0, 6.0]]))
        assert np.array_equal(out.data, [[3.0, 4.0], [5.0, 6.0]])

    def test_sigmoid_tanh_exp_log(self):
        x = t([0.0, 1.0, -1.0])
        assert np.allclose(ad.sigmoid(x).data, 1 / (1 + np.exp(-x.data)))
        assert np.allclose(ad.tanh(x).data, np.tanh(x.data))
        assert np.allclose(ad.exp(x).data, np.exp(x.data))
        assert np.allclose(ad.log(t([1.0, 2.0])).data, [0.0, np.log(2.0)])

    def test_sigmoid_stable_at_extremes(self):
        out = ad.sigmoid(t([-800.0, 800.0])).data
        assert out[0] == 0.0 and out[1] == 1.0

    def test_softplus_matches_log1p_exp(self):
        x = np.array([-3.0, 0.0, 2.5])
        assert np.allclose(ad.softplus(t(x)).data, np.log1p(np.exp(x)))

    def test_softplus_stable_for_large_inputs(self):
        assert ad.softplus(t([1000.0])).data[0] == 1000.0

    def test_concat_slice_reshape_transpose(self):
        a, b = t([[1.0, 2.0]]), t([[3.0, 4.0]])
        cat = ad.concat([a, b], axis=0)
        assert np.array_equal(cat.data, [[1, 2], [3, 4]])
        assert np.array_equal(ad.slice_axis(cat, 0, 1, 2).data, [[3, 4]])
        assert np.array_equal(ad.reshape(cat, (4,)).data, [1, 2, 3, 4])
        assert np.array_equal(ad.transpose(cat, 0, 1).data, [[1, 3], [2, 4]])

    def test_pad_left_time(self):
        out = ad.pad_left_time(t([[[1.0, 2.0]]]), 2)
        assert np.array_equal(out.data, [[[0.0, 0.0, 1.0, 2.0]]])

    def test_bias_broadcast_add(self):
        out = ad.add(t([[1.0, 2.0], [3.0, 4.0]]), t([10.0, 20.0]))
        assert np.array_equal(out.data, [[11, 22], [13, 24]])

    def test_disallowed_broadcast_raises(self):
        with pytest.raises(ShapeError):
            ad.add(t(np.ones((2, 3))), t(np.ones((2, 1))))

    def test_matmul_shape_mismatch_names_op(self):
        with pytest.raises(ShapeError, match="matmul"):
            ad.matmul(t(np.ones((2, 3))), t(np.ones((2, 3))))

    def test_log_domain_error(self):
        with pytest.raises(NumericDomainError):
            ad.log(t([1.0, 0.0]))

    def test_div_by_zero_rejected(self):
        with pytest.raises(NumericDomainError):
            ad.div(t([1.0]), t([0.0]))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = t([1.0, 2.0, 3.0], grad=True)
        backward(ad.tensor_sum(x))
        assert np.array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_sum_square_gradient(self):
        # oracle: d/dx sum(x^2) = 2x, cross-checked by central differences below
        x = t([1.0, 2.0], grad=True)
        backward(ad.tensor_sum(ad.square(x)))
        assert np.allclose(x.grad, [2.0, 4.0])
        err = finite_difference_check(lambda: ad.tensor_sum(ad.square(x)), [x])
        assert err < 1e-7

    def test_mean_square_hand_value(self):
        # d/dx mean(x^2) at x=[3] is 2*3/1 = 6
        x = t([3.0], grad=True)
        backward(ad.mean(ad.square(x)))
        assert np.allclose(x.grad, [6.0])

    def test_accumulation_across_calls(self):
        x = t([1.0, 2.0], grad=True)
        loss = ad.tensor_sum(ad.square(x))
        backward(loss)
        first = x.grad.copy()
        backward(loss)
        assert np.array_equal(x.grad, 2 * first)

    def test_non_scalar_root_rejected(self):
        with pytest.raises(ContractError):
            backward(ad.square(t([1.0, 2.0], grad=True)))

    def test_diamond_sums_path_contributions(self):
        # shared subexpression vs an unrolled duplicate of the same graph
        x = t([1.5, -2.0], grad=True)
        s = ad.square(x)
        backward(ad.tensor_sum(ad.add(s, s)))
        shared = x.grad.copy()

        y = t([1.5, -2.0], grad=True)
        backward(ad.tensor_sum(ad.add(ad.square(y), ad.square(y))))
        assert np.array_equal(shared, y.grad)

    def test_no_grad_suppresses_graph(self):
        x = t([1.0], grad=True)
        with no_grad():
            out = ad.square(x)
        assert out.node is None

    def test_topological_order_on_random_dags(self):
        # consumers must all contribute before a node is processed
        rng = np.random.default_rng(7)
        for _ in range(20):
            leaves = [t(rng.standard_normal(3), grad=True) for _ in range(3)]
            nodes = list(leaves)
            for _ in range(12):
                a, b = rng.choice(len(nodes), size=2)
                op = rng.choice(3)
                if op == 0:
                    nodes.append(ad.add(nodes[a], nodes[b]))
                elif op == 1:
                    nodes.append(ad.mul(nodes[a], nodes[b]))
                else:
                    nodes.append(ad.tanh(nodes[a]))
            root = ad.tensor_sum(ad.square(nodes[-1]))
            trace = []
            backward(root, trace=trace)
            position = {id(n): i for i, n in enumerate(trace)}
            for node in trace:
                if node.node is None:
                    continue
                for parent in node.node.parents:
                    if id(parent) in position:
                        assert position[id(parent)] > position[id(node)]


class TestGradReverse:
    def test_forward_bit_identical(self):
        x = t([1.5, -2.0], grad=True)
        out = grad_reverse(x)
        assert np.array_equal(out.data, x.data)
        assert (out.data.view(np.uint64) == x.data.view(np.uint64)).all()

    def test_backward_negates(self):
        x = t([1.0, 1.0, 1.0], grad=True)
        backward(ad.tensor_sum(grad_reverse(x)))
        assert np.array_equal(x.grad, [-1.0, -1.0, -1.0])

    def test_double_reversal_is_identity_backward(self):
        x = t([0.3, -0.7], grad=True)
        backward(ad.tensor_sum(ad.square(grad_reverse(grad_reverse(x)))))
        twice = x.grad.copy()
        y = t([0.3, -0.7], grad=True)
        backward(ad.tensor_sum(ad.square(y)))
        assert np.array_equal(twice, y.grad)


class TestPrimitiveGradients:
    """Every primitive against central differences, 20 seeds."""

    @pytest.mark.parametrize("seed", range(20))
    def test_all_primitives(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        y = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        pos = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal(4), requires_grad=True)
        m = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        cases = {
            "add": lambda: ad.mean(ad.square(ad.add(x, y))),
            "bias_add": lambda: ad.mean(ad.square(ad.add(x, b))),
            "sub": lambda: ad.mean(ad.square(ad.sub(x, y))),
            "mul": lambda: ad.mean(ad.square(ad.mul(x, y))),
            "scalar_mul": lambda: ad.mean(ad.square(ad.scalar_mul(x, -1.7))),
            "div": lambda: ad.mean(ad.square(ad.div(x, pos))),
            "matmul": lambda: ad.mean(ad.square(ad.matmul(x, m))),
            "sigmoid": lambda: ad.mean(ad.square(ad.sigmoid(x))),
            "tanh": lambda: ad.mean(ad.square(ad.tanh(x))),
            "exp": lambda: ad.mean(ad.square(ad.exp(x))),
            "log": lambda: ad.mean(ad.square(ad.log(pos))),
            "square": lambda: ad.mean(ad.square(ad.square(x))),
            "sqrt": lambda: ad.mean(ad.square(ad.sqrt(pos))),
            "softplus": lambda: ad.mean(ad.square(ad.softplus(x))),
            "sum_axis": lambda: ad.mean(ad.square(ad.tensor_sum(ad.square(x), axis=0))),
            "mean_axis": lambda: ad.mean(ad.square(ad.mean(ad.square(x), axis=1))),
            "concat": lambda: ad.mean(ad.square(ad.concat([x, y], axis=1))),
            "slice": lambda: ad.mean(ad.square(ad.slice_axis(x, 1, 1, 3))),
            "reshape": lambda: ad.mean(ad.square(ad.reshape(x, (4, 3)))),
            "transpose": lambda: ad.mean(ad.square(ad.transpose(x, 0, 1))),
            "pad_left": lambda: ad.mean(ad.square(ad.pad_left_time(x, 2))),
            "broadcast_to": lambda: ad.mean(ad.square(
                ad.mul(x, ad.broadcast_to(ad.reshape(b, (1, 4)), (3, 4))))),
            "clip": lambda: ad.mean(ad.square(ad.clip(ad.sigmoid(x), 0.2, 0.8))),
        }
        for name, fn in cases.items():
            params = [p for p in (x, y, pos, b, m)]
            err = finite_difference_check(fn, params)
            assert err < 1e-5, f"{name}: {err}"

    @pytest.mark.parametrize("seed", range(5))
    def test_lstm_cell_primitive(self, seed):
        rng = np.random.default_rng(seed)
        z = Tensor(rng.standard_normal((3, 8)), requires_grad=True)
        c = Tensor(rng.standard_normal((3, 2)), requires_grad=True)

        def loss_h():
            h, _ = ad.lstm_cell(z, c)
            return ad.mean(ad.square(h))

        def loss_c():
            _, c_t = ad.lstm_cell(z, c)
            return ad.mean(ad.square(c_t))

        assert finite_difference_check(loss_h, [z, c]) < 1e-5
        assert finite_difference_check(loss_c, [z, c]) < 1e-5


class TestFiniteDifferenceCheck:
    def test_quadratic_is_tight(self):
        rng = np.random.default_rng(3)
        w = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
        err = finite_difference_check(lambda: ad.tensor_sum(ad.square(w)), [w])
        assert err < 1e-7

    def test_constant_loss_gives_zero_error(self):
        w = Tensor(np.ones(3), requires_grad=True)
        c = Tensor(np.full(3, 2.0))
        err = finite_difference_check(lambda: ad.tensor_sum(ad.square(c)), [w])
        assert err == 0.0

    def test_rejects_nonpositive_step(self):
        w = Tensor(np.ones(2), requires_grad=True)
        with pytest.raises(ContractError):
            finite_difference_check(lambda: ad.tensor_sum(w), [w], step=0.0)

    def test_zero_grads(self):
        x = t([1.0], grad=True)
        backward(ad.tensor_sum(ad.square(x)))
        zero_grads([x])
        assert x.grad is None
