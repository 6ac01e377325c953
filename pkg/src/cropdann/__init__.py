"""Domain-adversarial temporal convolutional networks for crop-growth
time-series regression under target-data scarcity, on a from-scratch
reverse-mode autodiff core."""

import os

# Every matrix here is tiny; multithreaded BLAS only adds handoff
# latency (5x on small GEMMs). Parallelism belongs at the experiment
# grid level (--jobs), not inside a training step.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
try:
    from threadpoolctl import threadpool_limits as _threadpool_limits
    _blas_limit = _threadpool_limits(limits=1, user_api="blas")
except ImportError:  # env defaults above still apply
    _blas_limit = None

from .autodiff import Tensor, backward, finite_difference_check, grad_reverse, no_grad
from .layers import (BatchNorm1d, CausalConv1d, Dense, LSTMLayer, MLP,
                     TCNResidualBlock, param_count)
from .model import (DANNModel, GaussianPrediction, GaussianRegressor, ModelConfig,
                    RegressionModel, strip_discriminator)
from .training import (TrainingConfig, assemble_objective, bce_loss, detect_convergence,
                       gaussian_nll, gaussian_paper_loss, pretrain_finetune, sgd_step,
                       train_dann, train_direct)
from .data import (CropSeason, NormalizationStats, SimulatorConfig, WindowedBatch,
                   fit_normalizer, load_seasons_csv, make_domain_datasets,
                   normalize_windows, simulate_season, window_season, write_seasons_csv)
from .metrics import compute_mae, compute_rmse, evaluate_model

__version__ = "0.1.0"
