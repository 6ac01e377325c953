import numpy as np
import pytest

from cropdann import autodiff as ad
from cropdann.autodiff import Tensor, finite_difference_check
from cropdann.errors import ContractError, ShapeError
from cropdann.layers import (BatchNorm1d, CausalConv1d, Dense, LSTMLayer, MLP,
                             TCNResidualBlock, param_count)


def rng(seed=0):
    return np.random.default_rng(seed)


class TestDense:
    def test_identity_weights(self):
        layer = Dense(2, 2, rng())
        layer.weight.data = np.eye(2)
        layer.bias.data = np.zeros(2)
        out = layer.forward(Tensor([[3.0, 4.0]]))
        assert np.array_equal(out.data, [[3.0, 4.0]])

    def test_hand_arithmetic(self):
        layer = Dense(2, 1, rng())
        layer.weight.data = np.array([[1.0, 1.0]])
        layer.bias.data = np.array([0.5])
        assert layer.forward(Tensor([[2.0, 3.0]])).item() == 5.5

    def test_param_count(self):
        assert param_count(Dense(40, 2, rng())) == 82

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            Dense(3, 2, rng()).forward(Tensor(np.ones((1, 4))))

    def test_sequence_input(self):
        layer = Dense(3, 2, rng())
        out = layer.forward(Tensor(np.ones((2, 5, 3))))
        assert out.shape == (2, 5, 2)


class TestCausalConv1d:
    def test_identity_tap(self):
        conv = CausalConv1d(1, 1, 2, 1, rng())
        conv.v.data = np.array([[[0.0, 1.0]]])
        conv.g.data = np.array([1.0])
        conv.bias.data = np.array([0.0])
        out = conv.forward(Tensor([[[1.0, 2.0, 3.0]]]))
        assert np.allclose(out.data, [[[1.0, 2.0, 3.0]]])

    def test_two_step_causal_shift(self):
        conv = CausalConv1d(1, 1, 2, 2, rng())
        conv.v.data = np.array([[[1.0, 0.0]]])
        conv.g.data = np.array([1.0])
        conv.bias.data = np.array([0.0])
        out = conv.forward(Tensor([[[1.0, 2.0, 3.0, 4.0]]]))
        assert np.allclose(out.data, [[[0.0, 0.0, 1.0, 2.0]]])

    def test_causality_exact(self):
        conv = CausalConv1d(2, 3, 2, 2, rng(1))
        x = rng(2).standard_normal((1, 2, 8))
        base = conv.forward(Tensor(x)).data
        for t_perturb in range(8):
            xp = x.copy()
            xp[:, :, t_perturb] += 5.0
            out = conv.forward(Tensor(xp)).data
            assert np.array_equal(out[:, :, :t_perturb], base[:, :, :t_perturb])

    def test_param_count(self):
        assert param_count(CausalConv1d(5, 40, 2, 1, rng())) == 5 * 40 * 2 + 80
        assert param_count(CausalConv1d(5, 40, 1, 1, rng(), weight_norm=False)) == 240

    def test_weight_norm_row_norms_equal_gain(self):
        conv = CausalConv1d(3, 4, 2, 1, rng(3))
        conv.g.data = np.abs(rng(4).standard_normal(4)) + 0.1
        w = conv.effective_weight().data
        norms = np.sqrt((w * w).sum(axis=(1, 2)))
        assert np.allclose(norms, np.abs(conv.g.data), atol=1e-12)

    def test_initial_effective_weight_equals_v(self):
        conv = CausalConv1d(3, 4, 2, 1, rng(5))
        assert np.allclose(conv.effective_weight().data, conv.v.data, atol=1e-12)

    def test_gradients(self):
        conv = CausalConv1d(2, 3, 2, 2, rng(7))
        x = Tensor(rng(8).standard_normal((2, 2, 5)), requires_grad=True)
        err = finite_difference_check(
            lambda: ad.mean(ad.square(conv.forward(x))), conv.parameters() + [x])
        assert err < 1e-5


class TestBatchNorm:
    def test_two_point_batch(self):
        bn = BatchNorm1d(1)
        out = bn.forward(Tensor([[1.0], [3.0]]), train=True)
        expected = 1.0 / np.sqrt(1.0 + 1e-5)
        assert np.allclose(out.data.ravel(), [-expected, expected])

    def test_zero_variance_column(self):
        bn = BatchNorm1d(1)
        bn.gamma.data = np.array([2.0])
        bn.beta.data = np.array([5.0])
        out = bn.forward(Tensor([[4.0], [4.0]]), train=True)
        assert np.allclose(out.data, 5.0)

    def test_eval_affine_exact(self):
        bn = BatchNorm1d(2)
        bn.gamma.data = np.array([2.0, 3.0])
        bn.beta.data = np.array([1.0, -1.0])
        x = np.array([[0.5, -0.25], [2.0, 4.0]])
        out = bn.forward(Tensor(x), train=False)
        assert np.array_equal(out.data, x * bn.gamma.data + bn.beta.data)

    def test_train_requires_two(self):
        with pytest.raises(ContractError):
            BatchNorm1d(2).forward(Tensor(np.ones((1, 2))), train=True)

    def test_running_stats_update(self):
        bn = BatchNorm1d(1, momentum=0.5)
        bn.forward(Tensor([[0.0], [2.0]]), train=True)
        assert np.allclose(bn.running_mean, [0.5])  # 0.5*0 + 0.5*1
        assert np.allclose(bn.running_var, [1.0])   # 0.5*1 + 0.5*1

    def test_param_count_excludes_running_stats(self):
        assert param_count(BatchNorm1d(64)) == 128


class TestResidualBlock:
    def test_identity_path_with_zero_gains(self):
        block = TCNResidualBlock(3, 3, 2, 1, rng(1))
        for conv in (block.conv1, block.conv2):
            conv.g.data[:] = 0.0
            conv.bias.data[:] = 0.0
        x = np.abs(rng(2).standard_normal((2, 3, 5)))
        out = block.forward(Tensor(x))
        assert np.allclose(out.data, x)

    def test_param_counts_pin_kernel_size_two(self):
        # the published 4,000 / 6,560 block counts force k=2 with
        # weight-normalized convs and a plain 1x1 downsample
        assert param_count(TCNResidualBlock(5, 40, 2, 1, rng())) == 4000
        assert param_count(TCNResidualBlock(40, 40, 2, 2, rng())) == 6560

    def test_output_length_preserved(self):
        block = TCNResidualBlock(2, 4, 2, 4, rng(3))
        out = block.forward(Tensor(rng(4).standard_normal((3, 2, 11))))
        assert out.shape == (3, 4, 11)

    def test_gradients(self):
        block = TCNResidualBlock(2, 3, 2, 1, rng(5))
        x = Tensor(rng(6).standard_normal((2, 2, 4)), requires_grad=True)
        err = finite_difference_check(
            lambda: ad.mean(ad.square(block.forward(x))), block.parameters() + [x])
        assert err < 1e-5

    def test_dropout_scales_and_masks(self):
        block = TCNResidualBlock(2, 2, 2, 1, rng(7), dropout=0.5)
        x = Tensor(rng(8).standard_normal((2, 2, 5)))
        out_eval = block.forward(x, train=False)
        out_train = block.forward(x, train=True, rng=np.random.default_rng(0))
        assert not np.array_equal(out_eval.data, out_train.data)
        with pytest.raises(ContractError):
            block.forward(x, train=True, rng=None)


class TestLSTM:
    def test_zero_weights_zero_output(self):
        layer = LSTMLayer(3, 4, rng())
        for p in layer.parameters():
            p.data[:] = 0.0
        out = layer.forward(Tensor(rng(1).standard_normal((2, 5, 3))))
        assert np.all(out.data == 0.0)

    def test_param_counts(self):
        assert param_count(LSTMLayer(5, 40, rng())) == 7520
        stacked = [LSTMLayer(5, 40, rng()), LSTMLayer(40, 40, rng())]
        assert sum(param_count(l) for l in stacked) == 20640

    def test_matches_direct_recurrence(self):
        # oracle: plain numpy recurrence with the same parameters
        layer = LSTMLayer(2, 3, rng(3))
        x = rng(4).standard_normal((2, 4, 2))
        out = layer.forward(Tensor(x)).data

        def sigmoid(v):
            return 1.0 / (1.0 + np.exp(-v))

        w_ih, w_hh = layer.w_ih.data, layer.w_hh.data
        b = layer.b_ih.data + layer.b_hh.data
        h = np.zeros((2, 3))
        c = np.zeros((2, 3))
        for step in range(4):
            z = x[:, step, :] @ w_ih.T + h @ w_hh.T + b
            i, f, g, o = z[:, 0:3], z[:, 3:6], z[:, 6:9], z[:, 9:12]
            c = sigmoid(f) * c + sigmoid(i) * np.tanh(g)
            h = sigmoid(o) * np.tanh(c)
            assert np.allclose(out[:, step, :], h, atol=1e-12)

    def test_saturated_forget_gate_carries_cell(self):
        layer = LSTMLayer(3, 4, rng(5))
        nh = 4
        layer.b_ih.data[:] = 0.0
        layer.b_hh.data[0:nh] = -20.0        # input gate shut
        layer.b_hh.data[nh:2 * nh] = 20.0    # forget gate open
        layer.b_hh.data[3 * nh:] = -20.0     # output gate shut
        x = Tensor(np.zeros((2, 11, 3)))
        _, cells = layer.forward(x, return_cell=True)
        drift = np.abs(np.diff(cells.data, axis=1)).max()
        assert drift < 1e-3

    def test_gradients(self):
        layer = LSTMLayer(2, 3, rng(9))
        x = Tensor(rng(10).standard_normal((2, 4, 2)), requires_grad=True)
        err = finite_difference_check(
            lambda: ad.mean(ad.square(layer.forward(x))), layer.parameters() + [x])
        assert err < 1e-5


class TestMLP:
    def test_param_count_formula(self):
        # in*40+40 + 40*40+40 + 40*out+out; for (5 -> 40 -> 40 -> 1): 1,921
        assert param_count(MLP(5, 1, rng())) == 5 * 40 + 40 + 40 * 40 + 40 + 40 + 1
        assert param_count(MLP(5, 1, rng())) == 1921
        assert param_count(MLP(5, 2, rng())) == 2002

    def test_gradients(self):
        mlp = MLP(3, 2, rng(11), hidden=4)
        x = Tensor(rng(12).standard_normal((3, 3)), requires_grad=True)
        err = finite_difference_check(
            lambda: ad.mean(ad.square(mlp.forward(x))), mlp.parameters() + [x])
        assert err < 1e-5
