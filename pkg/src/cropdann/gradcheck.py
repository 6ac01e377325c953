"""Finite-difference verification of every layer type, both regression
loss modes, the domain loss, and the assembled adversarial objective.

Check losses are random projections of the layer output and biases are
randomized away from zero. Both choices keep every gradient entry at a
healthy scale: a loss that is nearly invariant to a parameter (batch
norm's second moment is fixed by construction) or a relu sitting exactly
on its kink would otherwise drown the comparison in the central
difference noise floor (~1e-10 at step 1e-6) without any backward rule
being wrong.

The assembled objective gets two rows. "dann_objective" disables the
gradient reversal so the composite is a plain differentiable function
and the standard central-difference oracle applies. "dann_objective_grl"
verifies the reversal semantics: analytic gradients come from one
backward pass through the GRL, and the numeric oracle is group-wise,
``reg - lambda * dom`` for extractor parameters (whose true gradient the
reversal realizes) and ``reg + lambda * dom`` for the rest.
"""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, finite_difference_check, no_grad, zero_grads
from .layers import BatchNorm1d, CausalConv1d, Dense, LSTMLayer, MLP, TCNResidualBlock
from .model import DANNModel, DomainDiscriminator, ModelConfig
from .training import assemble_objective, bce_loss, gaussian_nll, gaussian_paper_loss

TOLERANCE = 1e-5
STEP = 1e-6


def _rng(seed):
    return np.random.default_rng(seed)


def _input(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _randomize_biases(params, rng):
    """Zero-initialized biases sit every relu on its kink boundary for
    the bias entry itself; nudge them to generic values."""
    for p in params:
        if np.all(p.data == 0.0):
            p.data = rng.uniform(-0.5, 0.5, size=p.data.shape)


def _projection_loss(rng, forward):
    out = forward()
    c = Tensor(rng.standard_normal(out.shape))
    return lambda: ad.mean(ad.square(ad.mul(forward(), c)))


def check_dense(seed=0):
    rng = _rng(seed)
    layer = Dense(3, 2, rng)
    x = _input(rng, 4, 3)
    params = layer.parameters() + [x]
    _randomize_biases(params, rng)
    loss_fn = _projection_loss(rng, lambda: layer.forward(x))
    return finite_difference_check(loss_fn, params)


def check_causal_conv(seed=0):
    rng = _rng(seed)
    layer = CausalConv1d(2, 3, 2, 2, rng)
    x = _input(rng, 2, 2, 5)
    params = layer.parameters() + [x]
    _randomize_biases(params, rng)
    loss_fn = _projection_loss(rng, lambda: layer.forward(x))
    return finite_difference_check(loss_fn, params)


def check_batchnorm(seed=0):
    rng = _rng(seed)
    layer = BatchNorm1d(3)
    x = _input(rng, 5, 3)
    params = layer.parameters() + [x]
    _randomize_biases(params, rng)
    loss_fn = _projection_loss(rng, lambda: layer.forward(x, train=True))
    return finite_difference_check(loss_fn, params)


def check_residual_block(seed=0):
    rng = _rng(seed)
    block = TCNResidualBlock(2, 3, 2, 1, rng)
    x = _input(rng, 2, 2, 5)
    params = block.parameters() + [x]
    _randomize_biases(params, rng)
    loss_fn = _projection_loss(rng, lambda: block.forward(x, train=False))
    return finite_difference_check(loss_fn, params)


def check_lstm(seed=0):
    rng = _rng(seed)
    layer = LSTMLayer(2, 3, rng)
    x = _input(rng, 2, 4, 2)
    params = layer.parameters() + [x]
    _randomize_biases(params, rng)
    loss_fn = _projection_loss(rng, lambda: layer.forward(x))
    return finite_difference_check(loss_fn, params)


def check_mlp(seed=0):
    rng = _rng(seed)
    layer = MLP(3, 2, rng, hidden=4)
    x = _input(rng, 3, 3)
    params = layer.parameters() + [x]
    _randomize_biases(params, rng)
    loss_fn = _projection_loss(rng, lambda: layer.forward(x))
    return finite_difference_check(loss_fn, params)


def _gaussian_setup(seed):
    rng = _rng(seed)
    head = Dense(3, 2, rng)
    x = _input(rng, 2, 4, 3)
    y = Tensor(rng.standard_normal((2, 4)))
    _randomize_biases(head.parameters(), rng)
    return head, x, y


class _Pred:
    def __init__(self, mu, sigma):
        self.mu = mu
        self.sigma = sigma


def _head_prediction(head, x):
    raw = head.forward(x)
    b, t = x.shape[0], x.shape[1]
    mu = ad.reshape(ad.slice_axis(raw, 2, 0, 1), (b, t))
    sigma = ad.softplus(ad.reshape(ad.slice_axis(raw, 2, 1, 2), (b, t))) + 1e-6
    return _Pred(mu, sigma)


def check_gaussian_nll(seed=0):
    head, x, y = _gaussian_setup(seed)
    params = head.parameters() + [x]
    return finite_difference_check(lambda: gaussian_nll(_head_prediction(head, x), y),
                                   params)


def check_paper_likelihood(seed=0):
    head, x, y = _gaussian_setup(seed)
    params = head.parameters() + [x]
    return finite_difference_check(
        lambda: gaussian_paper_loss(_head_prediction(head, x), y), params)


def check_bce(seed=0):
    rng = _rng(seed)
    layer = Dense(4, 1, rng)
    x = _input(rng, 6, 4)
    d = Tensor((rng.random((6, 1)) > 0.5).astype(np.float64))
    params = layer.parameters() + [x]
    _randomize_biases(params, rng)
    return finite_difference_check(
        lambda: bce_loss(ad.sigmoid(layer.forward(x)), d), params)


def _small_dann(seed):
    cfg = ModelConfig(backbone="tcn", depth=2, in_features=2, seq_len=3,
                      hidden_channels=3, seed=seed)
    model = DANNModel(cfg)
    model.discriminator = DomainDiscriminator(cfg.hidden_channels, cfg.seq_len,
                                              _rng(seed + 17), hidden=6)
    rng = _rng(seed + 1)
    _randomize_biases(model.parameters(), rng)
    data = {"x_src": Tensor(rng.standard_normal((4, 3, 2))),
            "y_src": Tensor(rng.standard_normal((4, 3))),
            "x_tgt": Tensor(rng.standard_normal((4, 3, 2))),
            "y_tgt": Tensor(rng.standard_normal((4, 3))),
            "d": Tensor(np.concatenate([np.zeros((4, 1)), np.ones((4, 1))]))}
    return model, data


def _dann_losses(model, data, apply_grl):
    # The discriminator's batch norm runs on eval statistics here: in
    # train mode the mean subtraction gives its input bias an exactly
    # zero gradient, which the relative-error formula cannot distinguish
    # from the fd noise floor. Train-mode batch-norm backward has its
    # own dedicated row above.
    f_src = model.extract_features(data["x_src"], train=True)
    f_tgt = model.extract_features(data["x_tgt"], train=True)
    reg = gaussian_nll(model.regress(f_src), data["y_src"]) \
        + gaussian_nll(model.regress(f_tgt), data["y_tgt"])
    dom = bce_loss(model.discriminate(ad.concat([f_src, f_tgt], axis=0), train=False,
                                      apply_grl=apply_grl), data["d"])
    return reg, dom


def check_dann_objective(seed=0, lam=1.0):
    """Assembled objective with the reversal disabled: a plain function."""
    model, data = _small_dann(seed)

    def loss_fn():
        reg, dom = _dann_losses(model, data, apply_grl=False)
        return assemble_objective(reg, dom, lam)

    return finite_difference_check(loss_fn, model.parameters())


def _numeric_grads(loss_fn, params, step=STEP):
    grads = []
    for p in params:
        flat = p.data.reshape(-1)
        g = np.empty(flat.size)
        for i in range(flat.size):
            saved = flat[i]
            with no_grad():
                flat[i] = saved + step
                hi = loss_fn().item()
                flat[i] = saved - step
                lo = loss_fn().item()
            flat[i] = saved
            g[i] = (hi - lo) / (2.0 * step)
        grads.append(g.reshape(p.data.shape))
    return grads


def check_dann_objective_grl(seed=0, lam=1.0):
    """Assembled objective through the GRL, checked group-wise."""
    model, data = _small_dann(seed)

    reg, dom = _dann_losses(model, data, apply_grl=True)
    total = assemble_objective(reg, dom, lam)
    zero_grads(model.parameters())
    backward(total)
    analytic = {id(p): p.grad.copy() for p in model.parameters()}
    zero_grads(model.parameters())

    def plus():
        reg, dom = _dann_losses(model, data, apply_grl=False)
        return reg + ad.scalar_mul(dom, lam)

    def minus():
        reg, dom = _dann_losses(model, data, apply_grl=False)
        return reg - ad.scalar_mul(dom, lam)

    worst = 0.0
    groups = [(model.feature_parameters(), minus),
              (model.regressor_parameters(), plus),
              (model.discriminator_parameters(), plus)]
    for params, loss_fn in groups:
        for p, numeric in zip(params, _numeric_grads(loss_fn, params)):
            ana = analytic[id(p)].reshape(-1)
            num = numeric.reshape(-1)
            for a, n in zip(ana, num):
                err = abs(a - n) / max(1e-12, abs(a) + abs(n))
                worst = max(worst, err)
    return worst


COMPONENTS = [
    ("dense", check_dense),
    ("causal_conv1d", check_causal_conv),
    ("batchnorm1d", check_batchnorm),
    ("tcn_residual_block", check_residual_block),
    ("lstm", check_lstm),
    ("mlp", check_mlp),
    ("gaussian_nll", check_gaussian_nll),
    ("paper_likelihood", check_paper_likelihood),
    ("bce_discriminator", check_bce),
    ("dann_objective", check_dann_objective),
    ("dann_objective_grl", check_dann_objective_grl),
]


def run_gradient_checks(seed: int = 0):
    """Returns [(component, max_rel_error, passed)] for every component."""
    rows = []
    for name, fn in COMPONENTS:
        err = fn(seed)
        rows.append((name, err, err < TOLERANCE))
    return rows
