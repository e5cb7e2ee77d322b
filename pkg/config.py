"""
Experiment configuration loaded from dotenv-style KEY=value files.

Design choices:
- Keys are SECTION_FIELD in upper case; each section is a frozen dataclass
- Files are read with dotenv_values, never from the process environment
- Unknown keys are rejected so that typos cannot silently fall back to defaults
- Every random stream is derived from one root seed through split_seed()
"""

from dataclasses import dataclass, field, fields, replace
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union, get_args, get_origin, get_type_hints
import hashlib
import logging
import math
import zlib

import numpy as np
from dotenv import dotenv_values, set_key

from errors import SchemaError
from strings import Strings as S


# ----------------- Sections -----------------

@dataclass(frozen=True)
class BandSection:
    c_freq_hz: float = 2.5e9
    m_freq_hz: float = 28e9
    c_bandwidth_hz: float = 10e6
    m_bandwidth_hz: float = 100e6
    c_tx_power_dbm: float = 15.0
    m_tx_power_dbm: float = 22.0
    noise_psd_dbm_hz: float = -174.0


@dataclass(frozen=True)
class PathlossSection:
    # Intercepts left empty mean free space at 1 m for the band's carrier
    c_intercept_db: Optional[float] = None
    m_intercept_db: Optional[float] = None
    c_break_dist_m: float = 50.0
    m_break_dist_m: float = 50.0
    c_exponent: float = 4.0
    m_exponent: float = 4.0
    c_pre_exponent: float = 2.0
    m_pre_exponent: float = 2.0
    min_dist_m: float = 1.0


@dataclass(frozen=True)
class ShadowSection:
    sigma_c_db: float = 5.0
    sigma_m_db: float = 7.0
    rho: float = 0.75
    dcor_c_m: float = 25.0
    dcor_m_m: float = 24.0
    nu: float = 1.9


@dataclass(frozen=True)
class CellSection:
    side_m: float = 500.0
    grid_spacing_m: float = 5.0


@dataclass(frozen=True)
class SmsSection:
    duration_s: float = 900.0
    sample_period_s: float = 4.0
    max_speed_mps: float = 1.5
    accel_s: Tuple[float, ...] = (4.0, 20.0)
    decel_s: Tuple[float, ...] = (4.0, 20.0)
    pause_s: Tuple[float, ...] = (0.0, 8.0)
    steady_min_fraction: float = 0.5
    direction_hold_prob: float = 0.95
    turn_max_rad: float = math.pi / 6
    max_crossings: int = 3


@dataclass(frozen=True)
class CircleSection:
    count: int = 1000
    radius_m: float = 100.0
    n_frames: int = 40


@dataclass(frozen=True)
class DatasetSection:
    kind: str = "oneshot"


@dataclass(frozen=True)
class OneshotSection:
    realizations: int = 200
    points: int = 2000
    train_fraction: float = 0.65
    trace_train_fraction: float = 0.3
    combinations: Tuple[str, ...] = ("c-1", "c-2", "c-3", "c-4", "c-5", "c-6", "c-7")
    rules: Tuple[str, ...] = ("LR", "GR", "NN", "TBBA", "CM_ONLY")
    nn_epochs: int = 500
    select_once: bool = False


@dataclass(frozen=True)
class SeqSection:
    sequences: int = 1000
    train_fraction: float = 0.7
    cv_sequences: int = 50
    trace_train_sequences: int = 350
    trace_cv_sequences: int = 70
    horizons: Tuple[int, ...] = (4, 8)
    window: int = 5
    nn_hidden: Tuple[int, ...] = (70, 40)
    nn_alpha: float = 0.1
    combinations: Tuple[str, ...] = ("c-1", "c-2", "c-3", "c-4", "c-5", "c-6", "c-7")
    rules: Tuple[str, ...] = ("LSTM_opd", "LSTM_std", "NN_H", "GR_H", "GP", "GP_App")
    lstm_std: str = "NW4"
    lstm_menu: Tuple[str, ...] = ("NW1", "NW4", "NW7", "NW12")
    lstm_schedules: Tuple[str, ...] = ("shuffled", "unshuffled")


@dataclass(frozen=True)
class TrainSection:
    lr: float = 0.01
    shuffled_epochs: int = 600
    shuffled_batch: int = 3
    shuffled_drop: float = 0.1
    shuffled_drop_every: int = 120
    unshuffled_epochs: int = 120
    unshuffled_batch: int = 4
    unshuffled_drop: float = 0.009
    unshuffled_drop_every: int = 50
    gr_max_epochs: int = 2000
    tol: float = 1e-8
    lstm_alpha: float = 0.0


@dataclass(frozen=True)
class CvSection:
    repeats: int = 10
    val_fraction: float = 0.2
    seq_repeats: int = 1
    alphas: Tuple[float, ...] = (0.05, 0.1, 0.15, 0.3, 0.5)


@dataclass(frozen=True)
class SweepSection:
    axis: str = "U"
    u: Tuple[int, ...] = (2, 4, 6, 8, 10, 12, 14, 16)
    gamma_t: Tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(21))
    q: Tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7, 8)
    u_fixed: int = 4
    rules: Tuple[str, ...] = ("LSTM_std", "NN_H", "GR_H", "GP", "GP_App")
    combinations: Tuple[str, ...] = ("c-4", "c-5")


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    jobs: int = 1


SECTIONS: Dict[str, str] = {
    "BAND": "band",
    "PATHLOSS": "pathloss",
    "SHADOW": "shadow",
    "CELL": "cell",
    "SMS": "sms",
    "CIRCLE": "circle",
    "DATASET": "dataset",
    "ONESHOT": "oneshot",
    "SEQ": "seq",
    "TRAIN": "train",
    "CV": "cv",
    "SWEEP": "sweep",
    "RUN": "run",
}

DATASET_KINDS = ("oneshot", "sequential", "circular")
SWEEP_AXES = ("U", "gamma_t", "Q")


@dataclass(frozen=True)
class ExperimentConfig:
    band: BandSection = field(default_factory=BandSection)
    pathloss: PathlossSection = field(default_factory=PathlossSection)
    shadow: ShadowSection = field(default_factory=ShadowSection)
    cell: CellSection = field(default_factory=CellSection)
    sms: SmsSection = field(default_factory=SmsSection)
    circle: CircleSection = field(default_factory=CircleSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    oneshot: OneshotSection = field(default_factory=OneshotSection)
    seq: SeqSection = field(default_factory=SeqSection)
    train: TrainSection = field(default_factory=TrainSection)
    cv: CvSection = field(default_factory=CvSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    run: RunSection = field(default_factory=RunSection)

    def to_lines(self) -> List[str]:
        """Resolved KEY=value lines in a stable order."""
        lines = []
        for prefix, attr in SECTIONS.items():
            section = getattr(self, attr)
            for f in fields(section):
                lines.append(f"{prefix}_{f.name.upper()}={_format_value(getattr(section, f.name))}")
        return lines

    def config_hash(self) -> str:
        digest = hashlib.sha256("\n".join(sorted(self.to_lines())).encode("utf-8"))
        return digest.hexdigest()[:16]

    def with_overrides(self, values: Mapping[str, Optional[str]]) -> "ExperimentConfig":
        """Return a copy with KEY=value overrides applied."""
        updates: Dict[str, Dict[str, object]] = {}
        for key, raw in values.items():
            attr, name, kind = _resolve_key(self, key)
            updates.setdefault(attr, {})[name] = _parse_value(key, raw, kind)
        cfg = self
        for attr, changes in updates.items():
            cfg = replace(cfg, **{attr: replace(getattr(cfg, attr), **changes)})
        _validate(cfg)
        return cfg


# ----------------- Parsing -----------------

def _format_value(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _resolve_key(cfg: ExperimentConfig, key: str):
    prefix, _, rest = key.partition("_")
    attr = SECTIONS.get(prefix)
    if attr is None or not rest:
        raise SchemaError(S.CONFIG_UNKNOWN_KEY.format(key=key))
    section = getattr(cfg, attr)
    hints = get_type_hints(type(section))
    name = rest.lower()
    if name not in hints:
        raise SchemaError(S.CONFIG_UNKNOWN_KEY.format(key=key))
    return attr, name, hints[name]


def _parse_scalar(key: str, raw: str, kind: type):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise SchemaError(S.CONFIG_BAD_VALUE.format(key=key, value=raw)) from exc


def _parse_value(key: str, raw: Optional[str], kind) -> object:
    raw = "" if raw is None else str(raw)
    origin = get_origin(kind)
    if origin is Union:
        inner = [a for a in get_args(kind) if a is not type(None)][0]
        return None if raw.strip() == "" else _parse_value(key, raw, inner)
    if origin is tuple:
        inner = get_args(kind)[0]
        return tuple(_parse_scalar(key, part, inner) for part in raw.split(",") if part.strip())
    return _parse_scalar(key, raw, kind)


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.dataset.kind not in DATASET_KINDS:
        raise SchemaError(S.CONFIG_BAD_VALUE.format(key="DATASET_KIND", value=cfg.dataset.kind))
    if cfg.sweep.axis not in SWEEP_AXES:
        raise SchemaError(S.CONFIG_BAD_VALUE.format(key="SWEEP_AXIS", value=cfg.sweep.axis))
    for key, frac in (("ONESHOT_TRAIN_FRACTION", cfg.oneshot.train_fraction),
                      ("SEQ_TRAIN_FRACTION", cfg.seq.train_fraction),
                      ("CV_VAL_FRACTION", cfg.cv.val_fraction)):
        if not 0.0 < frac < 1.0:
            raise SchemaError(S.CONFIG_BAD_VALUE.format(key=key, value=frac))
    for key, sigma in (("SHADOW_SIGMA_C_DB", cfg.shadow.sigma_c_db), ("SHADOW_SIGMA_M_DB", cfg.shadow.sigma_m_db)):
        if not sigma > 0.0:
            raise SchemaError(S.CONFIG_BAD_VALUE.format(key=key, value=sigma))
    if cfg.run.jobs < 1:
        raise SchemaError(S.CONFIG_BAD_VALUE.format(key="RUN_JOBS", value=cfg.run.jobs))


def load_config(paths: Optional[Iterable[str]] = None,
                overrides: Optional[Mapping[str, Optional[str]]] = None) -> ExperimentConfig:
    """Load and merge config files in order, then apply overrides."""
    cfg = ExperimentConfig()
    for path in paths or []:
        try:
            values = dotenv_values(path)
        except OSError as exc:
            raise SchemaError(S.CONFIG_UNREADABLE.format(path=path)) from exc
        cfg = cfg.with_overrides(values)
        logging.info(f"Loaded {len(values)} config keys from {path}")
    if overrides:
        cfg = cfg.with_overrides(overrides)
    _validate(cfg)
    return cfg


def write_fragment(path: str, values: Mapping[str, object]) -> None:
    """Write KEY=value pairs into a dotenv file that load_config() accepts."""
    probe = ExperimentConfig()
    for key in values:
        _resolve_key(probe, key)
    open(path, "a", encoding="utf-8").close()
    for key, value in values.items():
        set_key(path, key, _format_value(value), quote_mode="never")


# ----------------- Seeds -----------------

def split_seed(root: int, *keys: Union[int, str]) -> int:
    """Derive an independent 63-bit seed for the stream named by keys."""
    spawn_key = tuple(k if isinstance(k, (int, np.integer)) else zlib.crc32(str(k).encode("utf-8"))
                      for k in keys)
    words = np.random.SeedSequence(int(root), spawn_key=spawn_key).generate_state(2, dtype=np.uint32)
    return int((int(words[0]) << 32 | int(words[1])) & ((1 << 63) - 1))
