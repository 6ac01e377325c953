"""Evaluation metrics and the shared model-evaluation path.

``evaluate_model`` is used both by the per-epoch logging inside the
training loops and by the ``evaluate`` CLI command, so a checkpoint
evaluated right after training reproduces the final logged metrics
bit for bit.
"""

import math

import numpy as np

from .autodiff import Tensor, no_grad
from .errors import ContractError


def compute_mae(preds, labels) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape:
        raise ContractError(f"compute_mae: shape mismatch {preds.shape} vs {labels.shape}")
    if preds.size == 0:
        raise ContractError("compute_mae: empty input")
    return float(np.mean(np.abs(labels - preds)))


def compute_rmse(preds, labels) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape:
        raise ContractError(f"compute_rmse: shape mismatch {preds.shape} vs {labels.shape}")
    if preds.size == 0:
        raise ContractError("compute_rmse: empty input")
    return float(np.sqrt(np.mean((labels - preds) ** 2)))


def gaussian_nll_value(mu, sigma, labels) -> float:
    """Plain-number Gaussian negative log likelihood for reports."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    return float(np.mean(np.log(sigma) + 0.5 * math.log(2.0 * math.pi)
                         + (labels - mu) ** 2 / (2.0 * sigma * sigma)))


def evaluate_model(model, features, labels, stats=None) -> dict:
    """MAE / RMSE / NLL of a model on [N, T, F] features and [N, T] labels.

    When ``stats`` is given, inputs are assumed normalized and the
    metrics are reported in original label units.
    """
    with no_grad():
        pred = model.predict(Tensor(features))
    mu, sigma = pred.mu.data, pred.sigma.data
    y = np.asarray(labels, dtype=np.float64)
    if stats is not None:
        mu = mu * stats.label_std + stats.label_mean
        sigma = sigma * stats.label_std
        y = y * stats.label_std + stats.label_mean
    return {"mae": compute_mae(mu, y),
            "rmse": compute_rmse(mu, y),
            "nll": gaussian_nll_value(mu, sigma, y)}
