"""Synthetic crop-season generation, target ingestion, windowing into
11-day training batches, normalization, and the source/target split.

The growth model is thermal-time logistic with late-season exponential
senescence and a mild irradiation response: simple, smooth, and easy to
shift parametrically between domains. Weather is sinusoidal seasonal
means plus i.i.d. noise. Fidelity to any real crop is a non-goal; the
generator only has to produce realistically shaped, shiftable seasons.
"""

import csv
import json
import math
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from .errors import ContractError, CsvFormatError

FEATURE_NAMES = ("lai", "t_max_c", "t_min_c", "humidity_pct", "irradiation_wm2")
CSV_HEADER = ("season_id", "day") + FEATURE_NAMES
WINDOW_LENGTH = 11
WINDOW_STRIDE = 11


@dataclass(frozen=True)
class SimulatorConfig:
    season_length: int = 173
    # weather: seasonal sinusoid (peak mid-season) + gaussian noise
    t_max_base: float = 16.0
    t_max_amplitude: float = 13.0
    t_max_noise: float = 2.0
    t_min_offset: float = 8.0
    t_min_noise: float = 1.5
    humidity_base: float = 60.0
    humidity_amplitude: float = 18.0
    humidity_noise: float = 6.0
    irradiation_base: float = 150.0
    irradiation_amplitude: float = 120.0
    irradiation_noise: float = 25.0
    # growth
    t_base: float = 8.0
    lai_max: float = 4.5
    tt_midpoint: float = 750.0
    steepness: float = 0.006
    senescence_onset: float = 1.25   # thermal-time trigger, as a fraction of 2*tt_midpoint
    senescence_decay: float = 0.03
    irradiation_coef: float = 0.12
    observation_noise: float = 0.04
    # offsets applied by shifted() to derive the target distribution
    shift_deltas: dict = field(default_factory=lambda: {
        "lai_max": 1.2, "tt_midpoint": 180.0, "t_base": 1.0})
    seed: int = 0

    def __post_init__(self):
        if self.lai_max <= 0 or self.steepness <= 0:
            raise ContractError("lai_max and steepness must be positive")
        if self.season_length < 12:
            raise ContractError("season_length must be >= 12")
        for name in ("t_max_noise", "t_min_noise", "humidity_noise",
                     "irradiation_noise", "observation_noise"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0")

    def shifted(self) -> "SimulatorConfig":
        """The target-domain configuration: this one plus its shift deltas."""
        updates = {k: getattr(self, k) + v for k, v in self.shift_deltas.items()}
        return replace(self, **updates)

    def to_dict(self):
        return asdict(self)


@dataclass
class CropSeason:
    """One simulated (or ingested) growth cycle of daily values."""

    season_id: int
    lai: np.ndarray
    t_max: np.ndarray
    t_min: np.ndarray
    humidity: np.ndarray
    irradiation: np.ndarray

    def __len__(self):
        return len(self.lai)

    def validate(self):
        n = len(self.lai)
        if n < 12:
            raise ContractError(f"season {self.season_id}: needs >= 12 days, got {n}")
        if np.any(self.t_max < self.t_min):
            raise ContractError(f"season {self.season_id}: t_max < t_min")
        if np.any(self.lai < 0):
            raise ContractError(f"season {self.season_id}: negative LAI")
        if np.any((self.humidity < 0) | (self.humidity > 100)):
            raise ContractError(f"season {self.season_id}: humidity outside [0, 100]")
        if np.any(self.irradiation < 0):
            raise ContractError(f"season {self.season_id}: negative irradiation")

    def feature_matrix(self) -> np.ndarray:
        return np.column_stack([self.lai, self.t_max, self.t_min,
                                self.humidity, self.irradiation])


@dataclass
class WindowedBatch:
    """11 days of 5 features plus the next-day LAI labels and a domain tag."""

    features: np.ndarray   # [T, 5], feature order per FEATURE_NAMES
    labels: np.ndarray     # [T]
    domain: int            # 0 = source, 1 = target
    season_id: int
    start_day: int         # 1-based

    def to_dict(self):
        return {"season_id": self.season_id, "start_day": self.start_day,
                "domain": self.domain, "features": self.features.tolist(),
                "labels": self.labels.tolist()}


def simulate_season(cfg: SimulatorConfig, rng, season_id: int = 0) -> CropSeason:
    n = cfg.season_length
    u = np.linspace(0.0, 1.0, n)
    seasonal = np.sin(math.pi * u)

    t_max = cfg.t_max_base + cfg.t_max_amplitude * seasonal \
        + cfg.t_max_noise * rng.standard_normal(n)
    t_min = t_max - cfg.t_min_offset + cfg.t_min_noise * rng.standard_normal(n)
    t_min = np.minimum(t_min, t_max)
    humidity = np.clip(cfg.humidity_base + cfg.humidity_amplitude * seasonal
                       + cfg.humidity_noise * rng.standard_normal(n), 0.0, 100.0)
    irradiation = np.maximum(cfg.irradiation_base + cfg.irradiation_amplitude * seasonal
                             + cfg.irradiation_noise * rng.standard_normal(n), 0.0)

    thermal = np.cumsum(np.maximum(0.0, (t_max + t_min) / 2.0 - cfg.t_base))
    logistic = cfg.lai_max / (1.0 + np.exp(-cfg.steepness * (thermal - cfg.tt_midpoint)))
    mean_irr = irradiation.mean()
    if mean_irr > 0 and cfg.irradiation_coef != 0.0:
        modifier = 1.0 + cfg.irradiation_coef * (irradiation - mean_irr) / mean_irr
    else:
        modifier = np.ones(n)
    lai = np.maximum(logistic * modifier, 0.0)

    onset_tt = cfg.senescence_onset * 2.0 * cfg.tt_midpoint
    onset = np.argmax(thermal >= onset_tt) if np.any(thermal >= onset_tt) else None
    if onset is not None:
        days_past = np.arange(n - onset)
        lai[onset:] = lai[onset] * np.exp(-cfg.senescence_decay * days_past)

    if cfg.observation_noise > 0:
        lai = np.maximum(lai + cfg.observation_noise * rng.standard_normal(n), 0.0)

    season = CropSeason(season_id=season_id, lai=lai, t_max=t_max, t_min=t_min,
                        humidity=humidity, irradiation=irradiation)
    season.validate()
    return season


def season_rng(seed: int, season_id: int):
    """One independent stream per season id."""
    return np.random.default_rng(np.random.SeedSequence([seed, season_id]))


def generate_seasons(cfg: SimulatorConfig, n_seasons: int, seed: int | None = None,
                     id_offset: int = 0):
    seed = cfg.seed if seed is None else seed
    return [simulate_season(cfg, season_rng(seed, id_offset + i), season_id=id_offset + i)
            for i in range(n_seasons)]


def window_season(season: CropSeason, length: int = WINDOW_LENGTH,
                  stride: int = WINDOW_STRIDE, domain: int = 0):
    """Windows starting at days 1, 1+stride, ...; each needs length+1 days
    so labels can be the next day's LAI. Too-short seasons yield []."""
    if stride < 1:
        raise ContractError("stride must be >= 1")
    n = len(season)
    features = season.feature_matrix()
    windows = []
    for start in range(1, n - length + 1, stride):
        i = start - 1
        windows.append(WindowedBatch(
            features=features[i:i + length].copy(),
            labels=season.lai[i + 1:i + length + 1].copy(),
            domain=domain, season_id=season.season_id, start_day=start))
    return windows


def window_seasons(seasons, length: int = WINDOW_LENGTH, stride: int = WINDOW_STRIDE,
                   domain: int = 0):
    return [w for s in seasons for w in window_season(s, length, stride, domain)]


def make_domain_datasets(source_cfg: SimulatorConfig, target_cfg: SimulatorConfig | None = None,
                         seed: int = 0, n_source_seasons: int = 400,
                         n_target_windows: int = 46, train_fraction: float = 0.5,
                         stride: int = WINDOW_STRIDE):
    """Default accounting: 400 source seasons windowed at stride 11 give
    exactly 6,000 source windows; the shifted target distribution yields
    46 windows split into train/test by a seeded shuffle."""
    target_cfg = target_cfg or source_cfg.shifted()
    source = window_seasons(generate_seasons(source_cfg, n_source_seasons, seed=seed),
                            stride=stride, domain=0)
    per_season = len(window_season(simulate_season(
        target_cfg, season_rng(seed, 0), 0), stride=stride))
    n_target_seasons = math.ceil(n_target_windows / max(1, per_season))
    target_all = window_seasons(
        generate_seasons(target_cfg, n_target_seasons, seed=seed, id_offset=10_000),
        stride=stride, domain=1)
    target = target_all[:n_target_windows]
    split_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD07]))
    perm = split_rng.permutation(len(target))
    n_train = int(round(train_fraction * len(target)))
    target_train = [target[i] for i in perm[:n_train]]
    target_test = [target[i] for i in perm[n_train:]]
    return source, target_train, target_test


# ---------------------------------------------------------------------------
# CSV / JSONL interchange

def write_seasons_csv(path, seasons):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for season in seasons:
            for day in range(len(season)):
                writer.writerow([season.season_id, day + 1,
                                 repr(float(season.lai[day])),
                                 repr(float(season.t_max[day])),
                                 repr(float(season.t_min[day])),
                                 repr(float(season.humidity[day])),
                                 repr(float(season.irradiation[day]))])


def load_seasons_csv(path):
    """Parse and validate a season CSV; structured errors carry the
    offending line number."""
    by_season = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("empty file, header required") from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            missing = set(CSV_HEADER) - set(h.strip() for h in header)
            if missing:
                raise CsvFormatError(f"missing column(s): {', '.join(sorted(missing))}",
                                     line=1)
            raise CsvFormatError(f"header must be {','.join(CSV_HEADER)}", line=1)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise CsvFormatError(f"expected {len(CSV_HEADER)} fields, got {len(row)}",
                                     line=line)
            try:
                season_id = int(row[0])
                day = int(row[1])
                values = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise CsvFormatError(f"non-numeric cell ({exc})", line=line) from None
            lai, t_max, t_min, humidity, irradiation = values
            if t_max < t_min:
                raise CsvFormatError(f"t_max {t_max} < t_min {t_min}", line=line)
            if lai < 0:
                raise CsvFormatError("negative LAI", line=line)
            if not 0 <= humidity <= 100:
                raise CsvFormatError("humidity outside [0, 100]", line=line)
            if irradiation < 0:
                raise CsvFormatError("negative irradiation", line=line)
            if day < 1:
                raise CsvFormatError("day must be 1-based", line=line)
            days = by_season.setdefault(season_id, {})
            if day in days:
                raise CsvFormatError(f"duplicate (season_id, day) = ({season_id}, {day})",
                                     line=line)
            days[day] = values

    seasons = []
    for season_id in sorted(by_season):
        days = by_season[season_id]
        ordered = sorted(days)
        if ordered != list(range(1, len(ordered) + 1)):
            raise CsvFormatError(f"season {season_id}: days not contiguous from 1")
        rows = np.array([days[d] for d in ordered])
        season = CropSeason(season_id=season_id, lai=rows[:, 0], t_max=rows[:, 1],
                            t_min=rows[:, 2], humidity=rows[:, 3], irradiation=rows[:, 4])
        season.validate()
        seasons.append(season)
    return seasons


def export_windows_jsonl(path, windows):
    with open(path, "w", encoding="utf-8") as fh:
        for w in windows:
            fh.write(json.dumps(w.to_dict()) + "\n")


def load_windows_jsonl(path):
    windows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            windows.append(WindowedBatch(
                features=np.array(obj["features"], dtype=np.float64),
                labels=np.array(obj["labels"], dtype=np.float64),
                domain=int(obj["domain"]), season_id=int(obj["season_id"]),
                start_day=int(obj["start_day"])))
    return windows


# ---------------------------------------------------------------------------
# normalization

@dataclass
class NormalizationStats:
    """Source-domain z-score statistics; constant channels pass through
    with std forced to 1."""

    feature_mean: np.ndarray
    feature_std: np.ndarray
    label_mean: float
    label_std: float

    def to_dict(self):
        return {"feature_mean": self.feature_mean.tolist(),
                "feature_std": self.feature_std.tolist(),
                "label_mean": self.label_mean, "label_std": self.label_std}

    @classmethod
    def from_dict(cls, obj):
        return cls(feature_mean=np.array(obj["feature_mean"], dtype=np.float64),
                   feature_std=np.array(obj["feature_std"], dtype=np.float64),
                   label_mean=float(obj["label_mean"]), label_std=float(obj["label_std"]))


def fit_normalizer(windows) -> NormalizationStats:
    if len(windows) < 2:
        raise ContractError("fit_normalizer: needs at least 2 windows")
    feats = np.concatenate([w.features for w in windows])
    labels = np.concatenate([w.labels for w in windows])
    fstd = feats.std(axis=0)
    fstd[fstd == 0.0] = 1.0
    lstd = float(labels.std())
    if lstd == 0.0:
        lstd = 1.0
    return NormalizationStats(feature_mean=feats.mean(axis=0), feature_std=fstd,
                              label_mean=float(labels.mean()), label_std=lstd)


def normalize_windows(stats: NormalizationStats, windows):
    out = []
    for w in windows:
        out.append(WindowedBatch(
            features=(w.features - stats.feature_mean) / stats.feature_std,
            labels=(w.labels - stats.label_mean) / stats.label_std,
            domain=w.domain, season_id=w.season_id, start_day=w.start_day))
    return out


def denormalize_windows(stats: NormalizationStats, windows):
    out = []
    for w in windows:
        out.append(WindowedBatch(
            features=w.features * stats.feature_std + stats.feature_mean,
            labels=w.labels * stats.label_std + stats.label_mean,
            domain=w.domain, season_id=w.season_id, start_day=w.start_day))
    return out


def denormalize_prediction(stats: NormalizationStats, mu, sigma):
    """Back to original label units; sigma rescales by the label std."""
    return (np.asarray(mu) * stats.label_std + stats.label_mean,
            np.asarray(sigma) * stats.label_std)
