"""Adversarial model assembly: feature extractor, Gaussian regression
head, and a gradient-reversal-guarded domain discriminator.

The default configuration matches the reference dimensions: a 4-block
TCN over 11-step, 5-feature windows producing 40 feature channels
(23,680 parameters), a Dense(40, 2) head emitting per-timestep
(mu, sigma) pairs (82 parameters), and a 440 -> 64 -> 1 discriminator
with batch norm (28,417 parameters).
"""

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError
from .layers import BatchNorm1d, Dense, LSTMLayer, TCNResidualBlock, param_count

SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "tcn"          # tcn | lstm | mlp
    depth: int = 4                 # residual blocks / stacked LSTM layers; ignored for mlp
    in_features: int = 5
    seq_len: int = 11
    hidden_channels: int = 40
    kernel_size: int = 2
    dropout: float = 0.0
    sigma_link: str = "softplus"   # softplus | relu (strict form of the published head)
    seed: int = 0

    def __post_init__(self):
        if self.backbone not in ("tcn", "lstm", "mlp"):
            raise ContractError(f"unknown backbone {self.backbone!r}")
        if self.sigma_link not in ("softplus", "relu"):
            raise ContractError(f"unknown sigma link {self.sigma_link!r}")
        if self.depth < 1:
            raise ContractError("depth must be >= 1")

    @property
    def dilations(self):
        return tuple(2 ** i for i in range(self.depth))

    def to_dict(self):
        return asdict(self)


@dataclass
class GaussianPrediction:
    """Per-timestep predictive Gaussians; mu and sigma are [B, T]."""

    mu: Tensor
    sigma: Tensor


class TCNFeatureExtractor:
    """Stack of causal residual blocks; [B, T, F] -> [B, C, T]."""

    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        self.blocks = []
        in_ch = cfg.in_features
        for d in cfg.dilations:
            self.blocks.append(TCNResidualBlock(in_ch, cfg.hidden_channels,
                                                cfg.kernel_size, d, rng,
                                                dropout=cfg.dropout))
            in_ch = cfg.hidden_channels

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        h = x  # the block stack runs time-major; channel-major only at the boundary
        for block in self.blocks:
            h = block.forward_time_major(h, train=train, rng=rng)
        return ad.transpose(h, 1, 2)

    def parameters(self):
        return [p for b in self.blocks for p in b.parameters()]

    def named_parameters(self):
        return [(f"blocks.{i}.{n}", p)
                for i, b in enumerate(self.blocks)
                for n, p in b.named_parameters()]


class LSTMFeatureExtractor:
    """Stacked LSTM layers; [B, T, F] -> [B, C, T]."""

    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        self.layers = []
        in_f = cfg.in_features
        for _ in range(cfg.depth):
            self.layers.append(LSTMLayer(in_f, cfg.hidden_channels, rng))
            in_f = cfg.hidden_channels

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        h = x
        for layer in self.layers:
            h = layer.forward(h)
        return ad.transpose(h, 1, 2)

    def parameters(self):
        return [p for l in self.layers for p in l.parameters()]

    def named_parameters(self):
        return [(f"layers.{i}.{n}", p)
                for i, l in enumerate(self.layers)
                for n, p in l.named_parameters()]


class MLPFeatureExtractor:
    """Two dense+relu layers applied independently per timestep."""

    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        self.fc1 = Dense(cfg.in_features, cfg.hidden_channels, rng)
        self.fc2 = Dense(cfg.hidden_channels, cfg.hidden_channels, rng)

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        h = ad.relu(self.fc1.forward(x))
        h = ad.relu(self.fc2.forward(h))
        return ad.transpose(h, 1, 2)

    def parameters(self):
        return self.fc1.parameters() + self.fc2.parameters()

    def named_parameters(self):
        return ([("fc1." + n, p) for n, p in self.fc1.named_parameters()]
                + [("fc2." + n, p) for n, p in self.fc2.named_parameters()])


_EXTRACTORS = {"tcn": TCNFeatureExtractor, "lstm": LSTMFeatureExtractor,
               "mlp": MLPFeatureExtractor}


class GaussianRegressor:
    """Dense(C, 2) applied per timestep; emits (mu, sigma) with sigma > 0.

    The default link maps the raw sigma channel through softplus plus a
    small floor. The "relu" link applies relu to both channels instead
    (plus the same sigma floor), mirroring the published head verbatim.
    """

    def __init__(self, in_channels: int, rng, sigma_link: str = "softplus"):
        self.dense = Dense(in_channels, 2, rng)
        self.sigma_link = sigma_link

    def forward(self, features: Tensor) -> GaussianPrediction:
        batch, _, steps = features.shape
        raw = self.dense.forward(ad.transpose(features, 1, 2))  # [B, T, 2]
        raw_mu = ad.reshape(ad.slice_axis(raw, 2, 0, 1), (batch, steps))
        raw_sigma = ad.reshape(ad.slice_axis(raw, 2, 1, 2), (batch, steps))
        if self.sigma_link == "softplus":
            mu = raw_mu
            sigma = ad.softplus(raw_sigma) + SIGMA_FLOOR
        else:
            mu = ad.relu(raw_mu)
            sigma = ad.relu(raw_sigma) + SIGMA_FLOOR
        return GaussianPrediction(mu=mu, sigma=sigma)

    def parameters(self):
        return self.dense.parameters()

    def named_parameters(self):
        return [("dense." + n, p) for n, p in self.dense.named_parameters()]


class DomainDiscriminator:
    """flatten -> Dense -> BatchNorm -> relu -> Dense -> sigmoid."""

    def __init__(self, in_channels: int, seq_len: int, rng, hidden: int = 64):
        self.in_features = in_channels * seq_len
        self.fc1 = Dense(self.in_features, hidden, rng)
        self.norm = BatchNorm1d(hidden)
        self.fc2 = Dense(hidden, 1, rng)

    def forward(self, features: Tensor, train: bool, apply_grl: bool = True) -> Tensor:
        h = ad.grad_reverse(features) if apply_grl else features
        h = ad.reshape(h, (features.shape[0], self.in_features))
        h = ad.relu(self.norm.forward(self.fc1.forward(h), train=train))
        return ad.sigmoid(self.fc2.forward(h))

    def parameters(self):
        return self.fc1.parameters() + self.norm.parameters() + self.fc2.parameters()

    def named_parameters(self):
        return ([("fc1." + n, p) for n, p in self.fc1.named_parameters()]
                + [("norm." + n, p) for n, p in self.norm.named_parameters()]
                + [("fc2." + n, p) for n, p in self.fc2.named_parameters()])

    def named_buffers(self):
        return [("norm." + n, b) for n, b in self.norm.named_buffers()]


def _check_input(cfg: ModelConfig, x: Tensor):
    if x.data.ndim != 3 or x.shape[1] != cfg.seq_len or x.shape[2] != cfg.in_features:
        raise ShapeError("extract_features", x.shape,
                         ("B", cfg.seq_len, cfg.in_features))


class RegressionModel:
    """Extractor plus Gaussian head; what remains after stripping the
    discriminator, and the whole model for the non-adversarial regimes."""

    def __init__(self, cfg: ModelConfig, extractor=None, regressor=None):
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
        self.dropout_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        self.extractor = extractor or _EXTRACTORS[cfg.backbone](cfg, rng)
        self.regressor = regressor or GaussianRegressor(cfg.hidden_channels, rng,
                                                        sigma_link=cfg.sigma_link)

    def extract_features(self, x: Tensor, train: bool = False) -> Tensor:
        _check_input(self.cfg, x)
        return self.extractor.forward(x, train=train, rng=self.dropout_rng)

    def regress(self, features: Tensor) -> GaussianPrediction:
        return self.regressor.forward(features)

    def predict(self, x: Tensor) -> GaussianPrediction:
        return self.regress(self.extract_features(x, train=False))

    def parameters(self):
        return self.extractor.parameters() + self.regressor.parameters()

    def named_parameters(self):
        return ([("extractor." + n, p) for n, p in self.extractor.named_parameters()]
                + [("regressor." + n, p) for n, p in self.regressor.named_parameters()])

    def named_buffers(self):
        return []


class DANNModel(RegressionModel):
    """Full adversarial model; the discriminator sees gradient-reversed
    features so one descent step on the assembled objective realizes the
    saddle-point update."""

    def __init__(self, cfg: ModelConfig):
        if cfg.backbone == "mlp":
            raise ContractError("adversarial training supports tcn and lstm backbones only")
        super().__init__(cfg)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
        self.discriminator = DomainDiscriminator(cfg.hidden_channels, cfg.seq_len, rng)

    def discriminate(self, features: Tensor, train: bool, apply_grl: bool = True) -> Tensor:
        return self.discriminator.forward(features, train=train, apply_grl=apply_grl)

    def forward_train(self, x: Tensor):
        features = self.extract_features(x, train=True)
        return self.regress(features), self.discriminate(features, train=True)

    def parameters(self):
        return super().parameters() + self.discriminator.parameters()

    def named_parameters(self):
        return (super().named_parameters()
                + [("discriminator." + n, p)
                   for n, p in self.discriminator.named_parameters()])

    def named_buffers(self):
        return [("discriminator." + n, b)
                for n, b in self.discriminator.named_buffers()]

    def feature_parameters(self):
        return self.extractor.parameters()

    def regressor_parameters(self):
        return self.regressor.parameters()

    def discriminator_parameters(self):
        return self.discriminator.parameters()


def strip_discriminator(model: DANNModel) -> RegressionModel:
    """Inference model sharing the trained extractor and regressor."""
    return RegressionModel(model.cfg, extractor=model.extractor,
                           regressor=model.regressor)


def component_counts(cfg: ModelConfig | None = None) -> dict:
    cfg = cfg or ModelConfig()
    model = DANNModel(cfg) if cfg.backbone != "mlp" else None
    if model is None:
        model = RegressionModel(cfg)
        return {"extractor": param_count(model.extractor),
                "regressor": param_count(model.regressor)}
    return {"extractor": param_count(model.extractor),
            "regressor": param_count(model.regressor),
            "discriminator": param_count(model.discriminator)}
