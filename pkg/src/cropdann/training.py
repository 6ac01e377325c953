"""Losses, the adversarial saddle-point objective, SGD updates, the
training regimes, and convergence detection.

The assembled objective is ``reg_loss + lambda * dom_loss`` with the
domain loss computed through the gradient reversal layer. Because the
reversal negates gradients at the feature boundary, one plain descent
step on this total applies exactly the three published update rules:
feature parameters descend ``dL_r - lambda * dL_d``, the regressor
descends ``dL_r``, and the discriminator descends ``lambda * dL_d``.
"""

import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward
from .errors import ContractError, NumericError
from .metrics import evaluate_model

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 16
    lambda_mode: str = "fixed"            # fixed | ganin-schedule
    lambda_value: float = 1.0
    loss_mode: str = "gaussian-nll"       # gaussian-nll | paper-likelihood
    target_supervision: bool = True
    seed: int = 0
    convergence_window: int = 20
    convergence_tol: float = 1e-4
    finetune_epochs: int | None = None    # phase-2 budget; defaults to `epochs`

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if self.batch_size < 2:
            raise ContractError("batch_size must be >= 2")
        if self.lambda_value < 0:
            raise ContractError("lambda_value must be >= 0")
        if self.lambda_mode not in ("fixed", "ganin-schedule"):
            raise ContractError(f"unknown lambda mode {self.lambda_mode!r}")
        if self.loss_mode not in ("gaussian-nll", "paper-likelihood"):
            raise ContractError(f"unknown loss mode {self.loss_mode!r}")

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    source_reg_loss: float | None
    target_reg_loss: float | None
    domain_loss: float | None
    domain_accuracy: float | None
    test_mae: float
    test_rmse: float
    wall_clock_s: float

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# losses

def gaussian_paper_loss(pred, y: Tensor) -> Tensor:
    """Negated Gaussian likelihood, averaged over batch and time.

    This is the published regression loss verbatim; it is bounded in
    (-1/(sqrt(2 pi) sigma), 0) and its gradient vanishes for large
    sigma, which is why the log form below is the default.
    """
    residual = ad.sub(y, pred.mu)
    q = ad.div(ad.square(residual), ad.scalar_mul(ad.square(pred.sigma), 2.0))
    density = ad.div(ad.exp(ad.scalar_mul(q, -1.0)), pred.sigma)
    return ad.scalar_mul(ad.mean(density), -INV_SQRT_2PI)


def gaussian_nll(pred, y: Tensor) -> Tensor:
    """Gaussian negative log likelihood, averaged over batch and time."""
    residual = ad.sub(y, pred.mu)
    q = ad.div(ad.square(residual), ad.scalar_mul(ad.square(pred.sigma), 2.0))
    return ad.mean(ad.log(pred.sigma) + q) + LOG_SQRT_2PI


_REG_LOSSES = {"gaussian-nll": gaussian_nll, "paper-likelihood": gaussian_paper_loss}


def bce_loss(p: Tensor, d: Tensor) -> Tensor:
    """Binary cross entropy with probabilities clamped to [1e-12, 1 - 1e-12]."""
    if not np.all((d.data == 0.0) | (d.data == 1.0)):
        raise ContractError("bce_loss: labels must be 0 or 1")
    clamped = ad.clip(p, 1e-12, 1.0 - 1e-12)
    pos = ad.mul(d, ad.log(clamped))
    neg = ad.mul(ad.sub(Tensor(1.0), d), ad.log(ad.sub(Tensor(1.0), clamped)))
    return ad.scalar_mul(ad.mean(pos + neg), -1.0)


def assemble_objective(reg_loss: Tensor, dom_loss: Tensor, lam: float) -> Tensor:
    if lam < 0:
        raise ContractError("assemble_objective: lambda must be >= 0")
    return reg_loss + ad.scalar_mul(dom_loss, lam)


def ganin_lambda(progress: float) -> float:
    return 2.0 / (1.0 + math.exp(-10.0 * progress)) - 1.0


def sgd_step(params, lr: float):
    """theta <- theta - lr * grad, then zero the gradients."""
    for p in params:
        if p.grad is None:
            raise ContractError("sgd_step: parameter has no gradient")
        p.data -= lr * p.grad
        p.grad = None


# ---------------------------------------------------------------------------
# data plumbing shared by the regimes

def _as_arrays(windows):
    if not windows:
        raise ContractError("empty dataset")
    x = np.stack([w.features for w in windows]).astype(np.float64)
    y = np.stack([w.labels for w in windows]).astype(np.float64)
    return x, y


def _minibatches(n, batch_size, rng):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        if idx.size >= 2:  # batch-norm train mode needs >= 2 per domain
            yield idx


def _check_finite(value, epoch, step):
    if not math.isfinite(value):
        raise NumericError(f"non-finite loss at epoch {epoch}, step {step}")


def _epoch_eval(model, x_test, y_test, stats):
    report = evaluate_model(model, x_test, y_test, stats=stats)
    return report["mae"], report["rmse"]


# ---------------------------------------------------------------------------
# training regimes

def train_dann(model, source, target_train, target_test, cfg: TrainingConfig,
               stats=None):
    """Adversarial training on source (d=0) and target (d=1) windows.

    Per step: regression loss on a source minibatch (plus the resampled
    target minibatch's regression loss when target supervision is on),
    domain BCE on the concatenated batch through the GRL, then one SGD
    step on the assembled objective. Deterministic given cfg.seed.
    """
    xs, ys = _as_arrays(source)
    xt, yt = _as_arrays(target_train)
    xtest, ytest = _as_arrays(target_test)
    loss_fn = _REG_LOSSES[cfg.loss_mode]
    shuffle_rng, target_rng = (np.random.default_rng(s)
                               for s in np.random.SeedSequence(cfg.seed).spawn(2))
    steps_per_epoch = max(1, math.ceil(len(source) / cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    log = []
    global_step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        reg_src_sum = reg_tgt_sum = dom_sum = acc_sum = 0.0
        n_steps = 0
        for idx in _minibatches(len(source), cfg.batch_size, shuffle_rng):
            if cfg.lambda_mode == "ganin-schedule":
                lam = cfg.lambda_value * ganin_lambda(global_step / max(1, total_steps))
            else:
                lam = cfg.lambda_value
            tgt_idx = target_rng.integers(0, len(target_train), size=idx.size)
            x_src, y_src = Tensor(xs[idx]), Tensor(ys[idx])
            x_tgt, y_tgt = Tensor(xt[tgt_idx]), Tensor(yt[tgt_idx])

            f_src = model.extract_features(x_src, train=True)
            f_tgt = model.extract_features(x_tgt, train=True)
            reg_src = loss_fn(model.regress(f_src), y_src)
            reg = reg_src
            reg_tgt = None
            if cfg.target_supervision:
                reg_tgt = loss_fn(model.regress(f_tgt), y_tgt)
                reg = reg + reg_tgt

            f_all = ad.concat([f_src, f_tgt], axis=0)
            d = np.concatenate([np.zeros((idx.size, 1)), np.ones((idx.size, 1))])
            prob = model.discriminate(f_all, train=True)
            dom = bce_loss(prob, Tensor(d))

            total = assemble_objective(reg, dom, lam)
            _check_finite(total.item(), epoch, n_steps)
            backward(total)
            sgd_step(model.parameters(), cfg.learning_rate)

            reg_src_sum += reg_src.item()
            if reg_tgt is not None:
                reg_tgt_sum += reg_tgt.item()
            dom_sum += dom.item()
            acc_sum += float(np.mean((prob.data > 0.5) == (d > 0.5)))
            n_steps += 1
            global_step += 1
        mae, rmse = _epoch_eval(model, xtest, ytest, stats)
        log.append(EpochRecord(
            epoch=epoch,
            source_reg_loss=reg_src_sum / n_steps,
            target_reg_loss=(reg_tgt_sum / n_steps) if cfg.target_supervision else None,
            domain_loss=dom_sum / n_steps,
            domain_accuracy=acc_sum / n_steps,
            test_mae=mae,
            test_rmse=rmse,
            wall_clock_s=time.perf_counter() - t0,
        ))
    return model, log


def train_regression(model, train_windows, test_windows, cfg: TrainingConfig,
                     stats=None, epochs=None, epoch_offset=0, on_target=False,
                     shuffle_rng=None, log=None):
    """Plain regression training; the engine behind the non-adversarial
    regimes and both fine-tuning phases."""
    x, y = _as_arrays(train_windows)
    xtest, ytest = _as_arrays(test_windows)
    loss_fn = _REG_LOSSES[cfg.loss_mode]
    if shuffle_rng is None:
        shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    epochs = cfg.epochs if epochs is None else epochs
    log = [] if log is None else log
    for epoch in range(epochs):
        t0 = time.perf_counter()
        loss_sum = 0.0
        n_steps = 0
        for idx in _minibatches(len(train_windows), cfg.batch_size, shuffle_rng):
            xb, yb = Tensor(x[idx]), Tensor(y[idx])
            loss = loss_fn(model.regress(model.extract_features(xb, train=True)), yb)
            _check_finite(loss.item(), epoch_offset + epoch, n_steps)
            backward(loss)
            sgd_step(model.parameters(), cfg.learning_rate)
            loss_sum += loss.item()
            n_steps += 1
        mae, rmse = _epoch_eval(model, xtest, ytest, stats)
        mean_loss = loss_sum / n_steps
        log.append(EpochRecord(
            epoch=epoch_offset + epoch,
            source_reg_loss=None if on_target else mean_loss,
            target_reg_loss=mean_loss if on_target else None,
            domain_loss=None,
            domain_accuracy=None,
            test_mae=mae,
            test_rmse=rmse,
            wall_clock_s=time.perf_counter() - t0,
        ))
    return model, log


def pretrain_finetune(model, source, target_train, target_test, cfg: TrainingConfig,
                      stats=None):
    """Source pretraining followed by continued training on the target
    windows alone; the log concatenates both phases."""
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    model, log = train_regression(model, source, target_test, cfg, stats=stats,
                                  epochs=cfg.epochs, shuffle_rng=shuffle_rng)
    phase2 = cfg.epochs if cfg.finetune_epochs is None else cfg.finetune_epochs
    if phase2 > 0:
        model, log = train_regression(model, target_train, target_test, cfg,
                                      stats=stats, epochs=phase2,
                                      epoch_offset=cfg.epochs, on_target=True,
                                      shuffle_rng=shuffle_rng, log=log)
    return model, log


def train_direct(model, target_train, target_test, cfg: TrainingConfig, stats=None):
    """Train on the scarce target windows only (no source data)."""
    return train_regression(model, target_train, target_test, cfg, stats=stats,
                            on_target=True)


# ---------------------------------------------------------------------------
# convergence detection

def detect_convergence(log, window: int | None = None, tol: float | None = None,
                       series=None):
    """First epoch index where the mean test RMSE over the next `window`
    epochs differs from the mean over the previous `window` by less than
    `tol` (relative); None if that never happens."""
    w = window if window is not None else 20
    tol = tol if tol is not None else 1e-4
    if w < 1:
        raise ContractError("detect_convergence: window must be >= 1")
    values = series if series is not None else [r.test_rmse for r in log]
    n = len(values)
    if n < 2 * w:
        return None
    arr = np.asarray(values, dtype=np.float64)
    for e in range(w, n - w + 1):
        before = arr[e - w:e].mean()
        after = arr[e:e + w].mean()
        if abs(after - before) / max(1e-12, abs(before)) < tol:
            return e
    return None
