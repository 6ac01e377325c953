"""Neural layers with exact, auditable parameter accounting.

Every layer exposes ``parameters()`` (trainable tensors, in a stable
order) and ``named_parameters()`` for checkpointing. ``param_count``
sums trainable entries only; batch-norm running statistics are buffers,
not parameters.
"""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError


def param_count(module) -> int:
    """Total number of trainable scalar entries in a layer or composite."""
    return sum(p.data.size for p in module.parameters())


def _uniform_init(rng, shape, fan_in):
    limit = np.sqrt(1.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Dense:
    """Affine map x W^T + b with W of shape [out, in]."""

    def __init__(self, in_features: int, out_features: int, rng):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(_uniform_init(rng, (out_features, in_features), in_features),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError("dense_forward", x.shape, self.weight.shape)
        return ad.matmul(x, ad.transpose(self.weight, 0, 1)) + self.bias

    def parameters(self):
        return [self.weight, self.bias]

    def named_parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]


class CausalConv1d:
    """Dilated 1-D convolution that only reads current and past timesteps.

    With weight normalization (the default) the kernel is parameterized
    as v, per-channel gains g and biases b; the effective weight for
    output channel c is g_c * v_c / ||v_c||_2 with the norm taken over
    all in_ch * k entries. The 1x1 residual downsample convs use a plain
    weight instead (``weight_norm=False``), which is what makes the
    block parameter counts land on 4,000 / 6,560.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 dilation: int, rng, weight_norm: bool = True):
        if kernel_size < 1 or dilation < 1:
            raise ContractError("CausalConv1d: kernel_size and dilation must be >= 1")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.dilation = dilation
        self.weight_norm = weight_norm
        w = _uniform_init(rng, (out_channels, in_channels, kernel_size),
                          in_channels * kernel_size)
        if weight_norm:
            self.v = Tensor(w, requires_grad=True)
            # gains start at ||v_c|| so the initial effective weight equals v
            self.g = Tensor(np.sqrt((w * w).sum(axis=(1, 2))), requires_grad=True)
        else:
            self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)

    def effective_weight(self) -> Tensor:
        if not self.weight_norm:
            return self.weight
        norm = ad.sqrt(ad.tensor_sum(ad.square(self.v), axis=(1, 2)))
        scale = ad.div(self.g, norm)
        scale3 = ad.broadcast_to(ad.reshape(scale, (self.out_channels, 1, 1)),
                                 self.v.shape)
        return ad.mul(self.v, scale3)

    def forward_time_major(self, x: Tensor) -> Tensor:
        """[B, T, in] -> [B, T, out]; the layout the block stack runs in.

        Time-major keeps every tap slice contiguous, so each tap is one
        dense GEMM instead of a strided gather."""
        if x.data.ndim != 3 or x.shape[2] != self.in_channels:
            raise ShapeError("causal_conv1d_forward", x.shape,
                             (self.out_channels, self.in_channels, self.kernel_size))
        steps = x.shape[1]
        if steps < 1:
            raise ContractError("causal_conv1d_forward: empty time axis")
        w = self.effective_weight()
        padded = ad.pad_left_time(x, (self.kernel_size - 1) * self.dilation, axis=1)
        out = None
        for j in range(self.kernel_size):
            tap = ad.transpose(ad.reshape(ad.slice_axis(w, 2, j, j + 1),
                                          (self.out_channels, self.in_channels)), 0, 1)
            window = ad.slice_axis(padded, 1, j * self.dilation,
                                   j * self.dilation + steps)
            term = ad.matmul(window, tap)  # [B, T, out]
            out = term if out is None else out + term
        return out + self.bias

    def forward(self, x: Tensor) -> Tensor:
        """[B, in, T] -> [B, out, T]."""
        if x.data.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeError("causal_conv1d_forward", x.shape,
                             (self.out_channels, self.in_channels, self.kernel_size))
        return ad.transpose(self.forward_time_major(ad.transpose(x, 1, 2)), 1, 2)

    def parameters(self):
        if self.weight_norm:
            return [self.v, self.g, self.bias]
        return [self.weight, self.bias]

    def named_parameters(self):
        if self.weight_norm:
            return [("v", self.v), ("g", self.g), ("bias", self.bias)]
        return [("weight", self.weight), ("bias", self.bias)]


class BatchNorm1d:
    """Batch normalization over the batch axis of [B, F] inputs.

    Train mode normalizes by the batch statistics (epsilon-stabilized,
    differentiable through them) and updates the running statistics;
    eval mode normalizes by the running statistics alone, so running
    mean 0 / var 1 gives exactly gamma * x + beta.
    """

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(num_features), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features), requires_grad=True)
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)

    def forward(self, x: Tensor, train: bool) -> Tensor:
        if x.data.ndim != 2 or x.shape[1] != self.num_features:
            raise ShapeError("batchnorm_forward", x.shape, (self.num_features,))
        if train:
            if x.shape[0] < 2:
                raise ContractError("batchnorm_forward: train mode requires batch size >= 2")
            m = ad.mean(x, axis=0)
            centered = ad.sub(x, m)
            var = ad.mean(ad.square(centered), axis=0)
            self.running_mean = ((1.0 - self.momentum) * self.running_mean
                                 + self.momentum * m.data)
            self.running_var = ((1.0 - self.momentum) * self.running_var
                                + self.momentum * var.data)
            inv = ad.div(ad.Tensor(1.0), ad.sqrt(var + self.eps))
            normalized = ad.mul(centered, inv)
        else:
            inv = 1.0 / np.sqrt(np.maximum(self.running_var, 1e-24))
            normalized = ad.mul(ad.sub(x, Tensor(self.running_mean)), Tensor(inv))
        return ad.mul(normalized, self.gamma) + self.beta

    def parameters(self):
        return [self.gamma, self.beta]

    def named_parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def named_buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]


class TCNResidualBlock:
    """Two weight-normalized causal convolutions with a residual connection.

    out = relu(f(x) + r(x)) where f = conv1 -> relu -> dropout -> conv2
    -> relu -> dropout and r is a plain 1x1 conv when channel counts
    differ, identity otherwise.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 dilation: int, rng, dropout: float = 0.0):
        if not 0.0 <= dropout < 1.0:
            raise ContractError("TCNResidualBlock: dropout must be in [0, 1)")
        self.conv1 = CausalConv1d(in_channels, out_channels, kernel_size, dilation, rng)
        self.conv2 = CausalConv1d(out_channels, out_channels, kernel_size, dilation, rng)
        self.downsample = None
        if in_channels != out_channels:
            self.downsample = CausalConv1d(in_channels, out_channels, 1, 1, rng,
                                           weight_norm=False)
        self.dropout = dropout

    def _drop(self, h: Tensor, train: bool, rng) -> Tensor:
        if not train or self.dropout == 0.0:
            return h
        if rng is None:
            raise ContractError("dropout requires an rng in train mode")
        keep = 1.0 - self.dropout
        mask = (rng.random(h.shape) < keep) / keep
        return ad.mul(h, Tensor(mask))

    def forward_time_major(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        h = self._drop(ad.relu(self.conv1.forward_time_major(x)), train, rng)
        h = self._drop(ad.relu(self.conv2.forward_time_major(h)), train, rng)
        r = self.downsample.forward_time_major(x) if self.downsample is not None else x
        return ad.relu(h + r)

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        """[B, in, T] -> [B, out, T]."""
        return ad.transpose(
            self.forward_time_major(ad.transpose(x, 1, 2), train=train, rng=rng), 1, 2)

    def parameters(self):
        out = self.conv1.parameters() + self.conv2.parameters()
        if self.downsample is not None:
            out += self.downsample.parameters()
        return out

    def named_parameters(self):
        items = [("conv1." + n, p) for n, p in self.conv1.named_parameters()]
        items += [("conv2." + n, p) for n, p in self.conv2.named_parameters()]
        if self.downsample is not None:
            items += [("downsample." + n, p) for n, p in self.downsample.named_parameters()]
        return items


class LSTMLayer:
    """Single LSTM layer; returns the full hidden-state sequence.

    Gate order along the 4h axis is (input, forget, cell, output). Two
    bias vectors (input-side and hidden-side) are kept, which is what
    the 7,520-parameter identity for in=5, h=40 requires.
    """

    def __init__(self, in_features: int, hidden_features: int, rng):
        self.in_features = in_features
        self.hidden_features = hidden_features
        h4 = 4 * hidden_features
        self.w_ih = Tensor(_uniform_init(rng, (h4, in_features), in_features),
                           requires_grad=True)
        self.w_hh = Tensor(_uniform_init(rng, (h4, hidden_features), hidden_features),
                           requires_grad=True)
        self.b_ih = Tensor(np.zeros(h4), requires_grad=True)
        self.b_hh = Tensor(np.zeros(h4), requires_grad=True)

    def forward(self, x: Tensor, return_cell: bool = False):
        if x.data.ndim != 3 or x.shape[2] != self.in_features:
            raise ShapeError("lstm_forward", x.shape, (self.in_features,))
        batch, steps = x.shape[0], x.shape[1]
        nh = self.hidden_features
        wt_ih = ad.transpose(self.w_ih, 0, 1)
        wt_hh = ad.transpose(self.w_hh, 0, 1)
        # input-side projections for every timestep in one GEMM
        zx = ad.matmul(x, wt_ih) + (self.b_ih + self.b_hh)
        h = Tensor(np.zeros((batch, nh)))
        c = Tensor(np.zeros((batch, nh)))
        hs, cs = [], []
        for t in range(steps):
            zxt = ad.reshape(ad.slice_axis(zx, 1, t, t + 1), (batch, 4 * nh))
            z = zxt + ad.matmul(h, wt_hh)
            h, c = ad.lstm_cell(z, c)
            hs.append(ad.reshape(h, (batch, 1, nh)))
            if return_cell:
                cs.append(ad.reshape(c, (batch, 1, nh)))
        out = ad.concat(hs, axis=1)
        if return_cell:
            return out, ad.concat(cs, axis=1)
        return out

    def parameters(self):
        return [self.w_ih, self.w_hh, self.b_ih, self.b_hh]

    def named_parameters(self):
        return [("w_ih", self.w_ih), ("w_hh", self.w_hh),
                ("b_ih", self.b_ih), ("b_hh", self.b_hh)]


class MLP:
    """Three dense layers (in -> hidden -> hidden -> out) with relu between."""

    def __init__(self, in_features: int, out_features: int, rng, hidden: int = 40):
        self.layers = [Dense(in_features, hidden, rng),
                       Dense(hidden, hidden, rng),
                       Dense(hidden, out_features, rng)]

    def forward(self, x: Tensor) -> Tensor:
        h = ad.relu(self.layers[0].forward(x))
        h = ad.relu(self.layers[1].forward(h))
        return self.layers[2].forward(h)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self):
        return [(f"layers.{i}.{n}", p)
                for i, layer in enumerate(self.layers)
                for n, p in layer.named_parameters()]
