"""
Learning-based band assignment: features, LR / GR / NN / LSTM models, CV and thresholds.

Design choices:
- Raw features are standardized with train-only statistics (sklearn StandardScaler)
- LR is a closed-form ridge fit (sklearn Ridge); GR, NN and LSTM are torch networks
  ending in FC:2 + softmax, trained with Adam on cross entropy plus an L2 weight penalty
- Weights are initialized from a numpy Generator so training is deterministic per seed
  and safe to run in worker threads
"""

from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F
import torch.optim as optim
from sklearn.linear_model import Ridge
from sklearn.preprocessing import StandardScaler

from errors import DomainError, SchemaError, TrainingError
from strings import Strings as S

DTYPE = torch.float32
CE_CLIP = 1e-12
GAMMA_GRID = tuple(round(0.05 * i, 2) for i in range(21))

# ----------------- Features -----------------

# Feature key -> dataset column
FEATURE_COLUMNS: Dict[str, str] = {
    "d": "d_m",
    "theta": "theta_rad",
    "cm": "snr_c_db",
    "mm": "snr_m_db",
    "delay": "delay_s",
    "aod": "aod_rad",
}
LOG_FEATURES = ("d",)

ONESHOT_COMBOS: Dict[str, Tuple[str, ...]] = {
    "c-1": ("d", "theta"),
    "c-2": ("d", "theta", "cm"),
    "c-3": ("theta", "cm"),
    "c-4": ("d", "cm"),
    "c-5": ("d",),
    "c-6": ("cm",),
    "c-7": ("theta",),
}
SEQ_COMBOS: Dict[str, Tuple[str, ...]] = {
    "c-1": ("d", "theta"),
    "c-2": ("d", "cm"),
    "c-3": ("theta", "cm"),
    "c-4": ("d", "theta", "cm"),
    "c-5": ("d", "theta", "cm", "mm"),
    "c-6": ("cm", "mm"),
    "c-7": ("cm",),
}
TRACE_ONESHOT_COMBOS: Dict[str, Tuple[str, ...]] = {
    "c-1": ("d", "theta"),
    "c-2": ("d", "theta", "cm"),
    "c-3": ("d", "cm"),
    "c-4": ("cm", "delay"),
    "c-5": ("cm",),
    "c-6": ("d",),
    "c-7": ("cm", "delay", "aod"),
    "c-8": ("delay", "aod"),
}
TRACE_SEQ_COMBOS: Dict[str, Tuple[str, ...]] = {
    "c-1": ("d", "theta"),
    "c-2": ("d", "theta", "cm"),
    "c-3": ("d", "theta", "cm", "mm"),
    "c-4": ("cm", "mm"),
    "c-5": ("cm",),
    "c-6": ("mm",),
    "c-7": ("delay", "aod"),
    "c-8": ("cm", "delay", "aod"),
    "c-9": ("cm", "mm", "delay", "aod"),
    "c-10": ("theta", "cm"),
    "c-11": ("cm", "delay"),
}


@dataclass(frozen=True)
class FeatureSpec:
    combination: Tuple[str, ...]
    window: int = 0
    name: str = ""

    def __post_init__(self):
        if not self.combination:
            raise SchemaError(S.FEATURES_EMPTY)
        unknown = [f for f in self.combination if f not in FEATURE_COLUMNS]
        if unknown:
            raise SchemaError(S.FEATURE_UNKNOWN.format(name=unknown[0]))
        if self.window < 0:
            raise DomainError(S.HORIZON_INVALID.format(u=0, q=self.window))

    @property
    def n_features(self) -> int:
        return len(self.combination)

    @property
    def width(self) -> int:
        """Length of one assembled input vector."""
        return self.n_features * (self.window + 1)

    @property
    def columns(self) -> List[str]:
        return [FEATURE_COLUMNS[f] for f in self.combination]


def combination_available(combination: Sequence[str], frame: pd.DataFrame) -> bool:
    """True when every column the combination needs is present and fully populated."""
    for f in combination:
        col = FEATURE_COLUMNS[f]
        if col not in frame.columns or frame[col].isna().any():
            return False
    return True


def window_features(frames: np.ndarray, window: int) -> np.ndarray:
    """Rows t >= Q holding frames t-Q..t, oldest first."""
    frames = np.asarray(frames, dtype=float)
    n = frames.shape[0] - window
    if n <= 0:
        return np.empty((0, frames.shape[1] * (window + 1)))
    return np.hstack([frames[k:k + n] for k in range(window + 1)])


def assemble_features(data: Union[pd.DataFrame, Mapping[str, Sequence[float]]], spec: FeatureSpec) -> np.ndarray:
    """Feature matrix in FeatureSpec column order; distances on log10 scale, windowed when Q > 0."""
    columns = []
    for f in spec.combination:
        col = FEATURE_COLUMNS[f]
        if col not in data:
            raise SchemaError(S.FEATURE_MISSING.format(name=f, column=col))
        values = np.asarray(data[col], dtype=float)
        if np.isnan(values).any():
            raise SchemaError(S.FEATURE_MISSING.format(name=f, column=col))
        columns.append(np.log10(values) if f in LOG_FEATURES else values)
    matrix = np.column_stack(columns) if columns else np.empty((0, 0))
    return window_features(matrix, spec.window) if spec.window else matrix


# ----------------- Standardization -----------------

@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray
    keep: np.ndarray

    @property
    def n_inputs(self) -> int:
        return int(self.keep.size)

    @property
    def n_outputs(self) -> int:
        return int(np.count_nonzero(self.keep))

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_inputs:
            raise SchemaError(S.SHAPE_MISMATCH.format(got=x.shape[-1], expected=self.n_inputs))
        return (x[..., self.keep] - self.mean) / self.scale

    def inverse(self, z: np.ndarray) -> np.ndarray:
        """Back to raw units for the kept columns."""
        return np.asarray(z, dtype=float) * self.scale + self.mean


def fit_standardizer(train_matrix: np.ndarray) -> Standardizer:
    """Per-column mean/std from training rows; constant columns are dropped."""
    train_matrix = np.asarray(train_matrix, dtype=float)
    if train_matrix.ndim != 2 or train_matrix.shape[0] < 2:
        raise DomainError(S.STANDARDIZER_ROWS.format(n=train_matrix.shape[0] if train_matrix.ndim else 0))
    scaler = StandardScaler().fit(train_matrix)
    keep = scaler.var_ > 1e-24
    if not keep.all():
        logging.warning(S.ZERO_VARIANCE_DROPPED.format(columns=np.flatnonzero(~keep).tolist()))
    if not keep.any():
        raise SchemaError(S.FEATURES_EMPTY)
    return Standardizer(mean=scaler.mean_[keep].copy(), scale=scaler.scale_[keep].copy(), keep=keep)


# ----------------- Networks -----------------

@dataclass(frozen=True)
class NetworkSpec:
    """Hidden layers; every network ends with FC:2 + softmax + classification."""
    layers: Tuple[Tuple[str, int], ...]
    name: str = "custom"

    def __post_init__(self):
        for kind, width in self.layers:
            if kind not in ("fc", "lstm", "relu"):
                raise SchemaError(S.LAYER_UNKNOWN.format(kind=kind))
            if kind != "relu" and width < 1:
                raise SchemaError(S.LAYER_UNKNOWN.format(kind=f"{kind}:{width}"))

    @property
    def recurrent(self) -> bool:
        return any(kind == "lstm" for kind, _ in self.layers)

    @property
    def full_layers(self) -> Tuple[Tuple[str, int], ...]:
        return self.layers + (("fc", 2), ("softmax", 0), ("classification", 0))

    @property
    def hidden_neurons(self) -> int:
        return sum(w for kind, w in self.layers if kind == "fc")


def mlp_spec(hidden: Sequence[int], name: str = "") -> NetworkSpec:
    """Fully connected ReLU network; no hidden layers gives logistic regression."""
    layers: List[Tuple[str, int]] = []
    for width in hidden:
        layers += [("fc", int(width)), ("relu", 0)]
    return NetworkSpec(tuple(layers), name or "MLP(" + ",".join(str(h) for h in hidden) + ")")


# Widths given as "kF" scale with the number of features F
_NETWORK_TABLE: Dict[str, Tuple[Tuple[str, Union[int, str]], ...]] = {
    "NW0": (("fc", 5), ("lstm", 5), ("fc", 5)),
    "NW1": (("fc", 15), ("lstm", 10), ("fc", 10)),
    "NW2": (("fc", 50), ("lstm", 10), ("fc", 10)),
    "NW3": (("fc", 30), ("lstm", 20), ("fc", 15)),
    "NW4": (("fc", 20), ("lstm", 40), ("fc", 20)),
    "NW5": (("fc", 15), ("lstm", 10), ("fc", 10), ("relu", 0), ("fc", 7)),
    "NW6": (("fc", 10), ("lstm", 50), ("fc", 7)),
    "NW7": (("fc", "2F"), ("lstm", "2F"), ("fc", "2F")),
    "NW8": (("fc", "3F"), ("lstm", "3F"), ("fc", "2F")),
    "NW9": (("fc", "10F"), ("lstm", "9F"), ("fc", "5F")),
    "NW10": (("fc", "10F"), ("lstm", "5F")),
    "NW11": (("fc", "5F"), ("lstm", "10F")),
    "NW12": (("lstm", "10F"),),
    "NW13": (("fc", "3F"), ("lstm", "15F"), ("fc", "4F")),
    "NW14": (("fc", 20), ("lstm", 40), ("relu", 0)),
    "NW15": (("fc", "3F"), ("lstm", "15F"), ("fc", "4F"), ("relu", 0)),
}
NETWORK_MENU = tuple(_NETWORK_TABLE)


def resolve_network(name: str, n_features: int) -> NetworkSpec:
    """Concrete NetworkSpec of a menu entry for F input features."""
    if name not in _NETWORK_TABLE:
        raise SchemaError(S.NETWORK_UNKNOWN.format(name=name))
    layers = []
    for kind, width in _NETWORK_TABLE[name]:
        if isinstance(width, str):
            width = int(width[:-1]) * n_features
        layers.append((kind, int(width)))
    return NetworkSpec(tuple(layers), name)


# One-shot CV menu: at most four hidden layers and 100 neurons
ONESHOT_LAYOUTS: Tuple[Tuple[int, ...], ...] = (
    (10,), (20,), (50,), (100,),
    (10, 10), (20, 10), (50, 50),
    (30, 20, 10), (40, 30, 20),
    (10, 10, 10, 10), (25, 25, 25, 25), (40, 30, 20, 10),
)


class BandNet(nn.Module):
    """Layer stack from a NetworkSpec followed by an FC:2 head producing logits."""

    def __init__(self, spec: NetworkSpec, n_inputs: int):
        super().__init__()
        self.spec = spec
        self.body = nn.ModuleList()
        width = n_inputs
        for kind, size in spec.layers:
            if kind == "fc":
                self.body.append(nn.Linear(width, size))
                width = size
            elif kind == "lstm":
                self.body.append(nn.LSTM(width, size, batch_first=True))
                width = size
            else:
                self.body.append(nn.ReLU())
        self.head = nn.Linear(width, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.body:
            x = layer(x)[0] if isinstance(layer, nn.LSTM) else layer(x)
        return self.head(x)


def init_weights(module: nn.Module, seed: int) -> None:
    """Glorot-uniform weight matrices, zero biases."""
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for _, param in module.named_parameters():
            if param.dim() >= 2:
                fan_out, fan_in = param.shape[0], param.shape[1]
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                param.copy_(torch.from_numpy(rng.uniform(-bound, bound, tuple(param.shape))))
            else:
                param.zero_()


def weight_penalty(module: nn.Module) -> torch.Tensor:
    """Sum of squared weight-matrix entries (biases excluded)."""
    terms = [(p ** 2).sum() for p in module.parameters() if p.dim() >= 2]
    return torch.stack(terms).sum() if terms else torch.zeros(())


# ----------------- Training configuration -----------------

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    drop_factor: float = 1.0
    drop_after_epochs: int = 0
    max_epochs: int = 500
    minibatch: Optional[int] = None
    shuffle: bool = False
    l2_alpha: float = 0.0
    seed: int = 0
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    tol: float = 0.0

    def __post_init__(self):
        if self.lr <= 0 or self.max_epochs < 1 or (self.minibatch is not None and self.minibatch < 1):
            raise DomainError(S.TRAIN_CONFIG_INVALID)

    @classmethod
    def shuffled(cls, section=None, **kwargs) -> "TrainConfig":
        """Sequence schedule with per-epoch shuffling."""
        if section is None:
            return cls(lr=0.01, drop_factor=0.1, drop_after_epochs=120, max_epochs=600, minibatch=3,
                       shuffle=True, **kwargs)
        return cls(lr=section.lr, drop_factor=section.shuffled_drop, drop_after_epochs=section.shuffled_drop_every,
                   max_epochs=section.shuffled_epochs, minibatch=section.shuffled_batch, shuffle=True,
                   l2_alpha=section.lstm_alpha, **kwargs)

    @classmethod
    def unshuffled(cls, section=None, **kwargs) -> "TrainConfig":
        """Sequence schedule keeping the sequence order fixed."""
        if section is None:
            return cls(lr=0.01, drop_factor=0.009, drop_after_epochs=50, max_epochs=120, minibatch=4,
                       shuffle=False, **kwargs)
        return cls(lr=section.lr, drop_factor=section.unshuffled_drop,
                   drop_after_epochs=section.unshuffled_drop_every, max_epochs=section.unshuffled_epochs,
                   minibatch=section.unshuffled_batch, shuffle=False, l2_alpha=section.lstm_alpha, **kwargs)

    @classmethod
    def schedule(cls, name: str, section=None, **kwargs) -> "TrainConfig":
        if name == "shuffled":
            return cls.shuffled(section, **kwargs)
        if name == "unshuffled":
            return cls.unshuffled(section, **kwargs)
        raise SchemaError(S.SCHEDULE_UNKNOWN.format(name=name))


# ----------------- Models -----------------

MODEL_KINDS = ("LR", "GR", "NN", "NN_H", "GR_H", "LSTM")


@dataclass(frozen=True)
class TrainedModel:
    kind: str
    feature_spec: FeatureSpec
    standardizer: Standardizer
    gamma_t: float = 0.5
    network: Optional[NetworkSpec] = None
    module: Optional[nn.Module] = None
    coef: Optional[np.ndarray] = None
    intercept: float = 0.0
    alpha: float = 0.0
    horizon: int = 0
    schedule: str = ""

    def with_threshold(self, gamma_t: float) -> "TrainedModel":
        return replace(self, gamma_t=float(gamma_t))


class ValidationOutcome(NamedTuple):
    ce: float
    soft: np.ndarray
    labels: np.ndarray


class CvResult(NamedTuple):
    best: object
    best_index: int
    scores: np.ndarray
    outcomes: List[List[ValidationOutcome]]


def cross_entropy(soft, labels) -> float:
    """Mean binary cross entropy with clipped soft decisions."""
    soft = np.clip(np.asarray(soft, dtype=float), CE_CLIP, 1.0 - CE_CLIP)
    labels = np.asarray(labels, dtype=float)
    if soft.shape != labels.shape:
        raise SchemaError(S.SHAPE_MISMATCH.format(got=soft.shape, expected=labels.shape))
    return float(np.mean(-labels * np.log(soft) - (1.0 - labels) * np.log(1.0 - soft)))


def _objective(module: nn.Module, x: torch.Tensor, y: torch.Tensor, alpha: float, n_total: int,
               mask: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    logits = module(x)
    if mask is None:
        ce = F.cross_entropy(logits, y)
    else:
        per_frame = F.cross_entropy(logits.reshape(-1, 2), y.reshape(-1), reduction="none")
        weights = mask.reshape(-1).to(per_frame.dtype)
        ce = (per_frame * weights).sum() / weights.sum().clamp_min(1.0)
    loss = ce + alpha / (2.0 * n_total) * weight_penalty(module) if alpha else ce
    return loss, ce


def _optimizer(module: nn.Module, cfg: TrainConfig):
    opt = optim.Adam(module.parameters(), lr=cfg.lr, betas=cfg.betas, eps=cfg.eps)
    sched = None
    if cfg.drop_after_epochs and cfg.drop_factor != 1.0:
        sched = optim.lr_scheduler.StepLR(opt, step_size=cfg.drop_after_epochs, gamma=cfg.drop_factor)
    return opt, sched


def train_linear(x: np.ndarray, y: np.ndarray, alpha: float, feature_spec: FeatureSpec) -> TrainedModel:
    """Ridge least squares on {0,1} labels."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    standardizer = fit_standardizer(x)
    if x.shape[0] < standardizer.n_outputs + 1:
        raise DomainError(S.TOO_FEW_ROWS.format(n=x.shape[0], need=standardizer.n_outputs + 1))
    ridge = Ridge(alpha=alpha, solver="cholesky").fit(standardizer.apply(x), y)
    return TrainedModel(kind="LR", feature_spec=feature_spec, standardizer=standardizer,
                        coef=np.asarray(ridge.coef_, dtype=float), intercept=float(ridge.intercept_),
                        alpha=alpha)


def train_mlp(x: np.ndarray, y: np.ndarray, spec: NetworkSpec, alpha: float, cfg: TrainConfig,
              feature_spec: FeatureSpec, kind: str = "NN") -> TrainedModel:
    """Backpropagation with Adam on CE + (alpha / 2N) * ||W||^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    standardizer = fit_standardizer(x)
    if x.shape[0] < standardizer.n_outputs + 1:
        raise DomainError(S.TOO_FEW_ROWS.format(n=x.shape[0], need=standardizer.n_outputs + 1))
    module = BandNet(spec, standardizer.n_outputs)
    init_weights(module, cfg.seed)
    fit_static(module, standardizer.apply(x), y, alpha, cfg)
    module.eval()
    return TrainedModel(kind=kind, feature_spec=feature_spec, standardizer=standardizer, network=spec,
                        module=module, alpha=alpha)


def fit_static(module: nn.Module, xs: np.ndarray, y: np.ndarray, alpha: float, cfg: TrainConfig) -> List[float]:
    """Train a non-recurrent module in place; returns the objective after each epoch."""
    param = next(module.parameters())
    xt = torch.as_tensor(xs, dtype=param.dtype)
    yt = torch.as_tensor(y, dtype=torch.long)
    n = xt.shape[0]
    batch = cfg.minibatch or n
    opt, sched = _optimizer(module, cfg)
    rng = np.random.default_rng(cfg.seed)
    trace: List[float] = []
    module.train()
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        for start in range(0, n, batch):
            idx = torch.as_tensor(order[start:start + batch])
            opt.zero_grad()
            loss, _ = _objective(module, xt[idx], yt[idx], alpha, n)
            if not torch.isfinite(loss):
                logging.error(S.TRAINING_DIVERGED.format(epoch=epoch))
                raise TrainingError(S.TRAINING_DIVERGED.format(epoch=epoch), epoch=epoch)
            loss.backward()
            opt.step()
        if sched is not None:
            sched.step()
        with torch.no_grad():
            current = float(_objective(module, xt, yt, alpha, n)[0])
        if not math.isfinite(current):
            raise TrainingError(S.TRAINING_DIVERGED.format(epoch=epoch), epoch=epoch)
        if cfg.tol and trace and abs(trace[-1] - current) < cfg.tol:
            trace.append(current)
            break
        trace.append(current)
    return trace


def train_logistic(x: np.ndarray, y: np.ndarray, alpha: float, cfg: TrainConfig,
                   feature_spec: FeatureSpec, kind: str = "GR") -> TrainedModel:
    """Logistic regression as an FC:2 softmax network, full-batch Adam."""
    cfg = replace(cfg, minibatch=None, shuffle=False, tol=cfg.tol or 1e-8)
    return train_mlp(x, y, mlp_spec((), name="GR"), alpha, cfg, feature_spec, kind=kind)


def _shifted_targets(labels: np.ndarray, horizon: int) -> Tuple[np.ndarray, np.ndarray]:
    """Label at t+U for each frame t, and the mask of frames that have one."""
    labels = np.asarray(labels, dtype=int)
    n = labels.size
    target = np.zeros(n, dtype=int)
    mask = np.zeros(n, dtype=bool)
    if n > horizon:
        target[: n - horizon] = labels[horizon:]
        mask[: n - horizon] = True
    return target, mask


def _pad(arrays: Sequence[np.ndarray], dtype) -> torch.Tensor:
    return nn.utils.rnn.pad_sequence([torch.as_tensor(a, dtype=dtype) for a in arrays], batch_first=True)


def train_lstm(sequences: Sequence[np.ndarray], labels: Sequence[np.ndarray], spec: NetworkSpec,
               cfg: TrainConfig, horizon: int, feature_spec: FeatureSpec, schedule: str = "") -> TrainedModel:
    """Many-to-many training with labels shifted by U; the last U frames carry no loss."""
    usable = [(np.asarray(s, dtype=float), np.asarray(l)) for s, l in zip(sequences, labels)
              if len(l) > horizon]
    skipped = len(sequences) - len(usable)
    if skipped:
        logging.warning(S.SEQUENCES_SKIPPED.format(n=skipped, horizon=horizon))
    if not usable:
        raise TrainingError(S.ALL_SEQUENCES_SKIPPED.format(horizon=horizon))

    standardizer = fit_standardizer(np.vstack([s for s, _ in usable]))
    inputs = [standardizer.apply(s) for s, _ in usable]
    shifted = [_shifted_targets(l, horizon) for _, l in usable]
    n_frames = int(sum(m.sum() for _, m in shifted))

    module = BandNet(spec, standardizer.n_outputs)
    init_weights(module, cfg.seed)
    opt, sched = _optimizer(module, cfg)
    rng = np.random.default_rng(cfg.seed)
    batch = cfg.minibatch or len(inputs)
    module.train()
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(inputs)) if cfg.shuffle else np.arange(len(inputs))
        for start in range(0, len(inputs), batch):
            idx = order[start:start + batch]
            xb = _pad([inputs[i] for i in idx], DTYPE)
            yb = _pad([shifted[i][0] for i in idx], torch.long)
            mb = _pad([shifted[i][1] for i in idx], torch.bool)
            opt.zero_grad()
            loss, _ = _objective(module, xb, yb, cfg.l2_alpha, n_frames, mask=mb)
            if not torch.isfinite(loss):
                logging.error(S.TRAINING_DIVERGED.format(epoch=epoch))
                raise TrainingError(S.TRAINING_DIVERGED.format(epoch=epoch), epoch=epoch)
            loss.backward()
            opt.step()
        if sched is not None:
            sched.step()
    module.eval()
    return TrainedModel(kind="LSTM", feature_spec=feature_spec, standardizer=standardizer, network=spec,
                        module=module, alpha=cfg.l2_alpha, horizon=horizon, schedule=schedule)


# ----------------- Inference -----------------

def _softmax_one(module: nn.Module, xs: np.ndarray) -> np.ndarray:
    param = next(module.parameters())
    with torch.no_grad():
        logits = module(torch.as_tensor(xs, dtype=param.dtype))
        return torch.softmax(logits, dim=-1)[..., 1].double().numpy()


def predict(model: TrainedModel, inputs):
    """Soft decision in [0, 1]; a list of per-frame arrays for LSTM models."""
    if model.kind == "LSTM":
        if isinstance(inputs, np.ndarray) and inputs.ndim == 2:
            inputs = [inputs]
        return [_softmax_one(model.module, model.standardizer.apply(s)[None, ...])[0] for s in inputs]
    xs = model.standardizer.apply(np.atleast_2d(np.asarray(inputs, dtype=float)))
    if model.kind == "LR":
        return np.clip(xs @ model.coef + model.intercept, 0.0, 1.0)
    return _softmax_one(model.module, xs)


def decide(model: TrainedModel, inputs):
    """1 iff the soft decision strictly exceeds gamma_t."""
    soft = predict(model, inputs)
    if isinstance(soft, list):
        return [(s > model.gamma_t).astype(int) for s in soft]
    return (soft > model.gamma_t).astype(int)


# ----------------- Model selection -----------------

def monte_carlo_cv(n_items: int, candidates: Sequence[object],
                   score: Callable[[object, np.ndarray, np.ndarray, int], Optional[ValidationOutcome]],
                   repeats: int = 10, val_fraction: float = 0.2, val_count: Optional[int] = None,
                   seed: int = 0, mapper: Optional[Callable] = None) -> CvResult:
    """Random train/validation splits over item indices; lowest mean validation CE wins.

    A score of None marks a split that could not be scored; it is left out of the mean.
    """
    if repeats < 1 or not candidates:
        raise DomainError(S.CV_INVALID.format(repeats=repeats, n=len(candidates)))
    n_val = val_count if val_count is not None else int(round(val_fraction * n_items))
    n_val = min(max(n_val, 1), n_items - 1)
    rng = np.random.default_rng(seed)
    splits = []
    for _ in range(repeats):
        perm = rng.permutation(n_items)
        splits.append((np.sort(perm[n_val:]), np.sort(perm[:n_val])))

    jobs = [(c, r) for c in range(len(candidates)) for r in range(repeats)]

    def run(job):
        c, r = job
        train_idx, val_idx = splits[r]
        return score(candidates[c], train_idx, val_idx, r)

    results = mapper(run, jobs) if mapper is not None else [run(j) for j in jobs]
    outcomes = [[o for o in results[c * repeats:(c + 1) * repeats] if o is not None] for c in range(len(candidates))]
    scores = np.array([np.mean([o.ce for o in outs]) if outs else np.inf for outs in outcomes])
    if not np.isfinite(scores).any():
        logging.warning(S.CV_NOTHING_SCORED.format(n=len(candidates)))
    best = int(np.argmin(scores))
    logging.info(S.CV_SELECTED.format(index=best, n=len(candidates), ce=scores[best]))
    return CvResult(best=candidates[best], best_index=best, scores=scores, outcomes=outcomes)


def calibrate_threshold(outcomes: Sequence[ValidationOutcome], sequential: bool = False,
                        grid: Sequence[float] = GAMMA_GRID) -> float:
    """Grid value minimizing mean validation BA error; ties go to the value nearest 0.5."""
    if sequential:
        return 0.5
    if not outcomes:
        raise DomainError(S.CALIBRATION_EMPTY)
    grid = np.asarray(grid, dtype=float)
    # One-class validation data: always pick that class.
    labels = np.concatenate([np.asarray(o.labels).ravel() for o in outcomes])
    if labels.size and np.all(labels == 1):
        return float(grid.min())
    if labels.size and np.all(labels == 0):
        return float(grid.max())
    errors = np.array([np.mean([np.mean((np.asarray(o.soft) > g).astype(int) != np.asarray(o.labels))
                                for o in outcomes]) for g in grid])
    best = np.flatnonzero(errors <= errors.min() + 1e-12)
    choice = best[np.lexsort((grid[best], np.abs(grid[best] - 0.5)))[0]]
    return float(grid[choice])
