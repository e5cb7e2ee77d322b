"""
Radio-level math for the dual-band (cmWave / mmWave) link.

Design choices:
- Everything is in dB / dBm / Hz and vectorized over numpy arrays
- Shadowing covariance is stored band-major: index i is band c at position i, T+i is band m
- Factorizations go through one jitter ladder so every caller fails the same way
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple, Union
import logging
import math

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from errors import DomainError, NumericalError
from strings import Strings as S

ArrayLike = Union[float, np.ndarray]

SPEED_OF_LIGHT = 299_792_458.0
D_MIN = 1.0
# Spectral efficiency of 256-QAM
QAM256_BITS = 8.0
# Diagonal jitter ladder, relative to the largest prior variance
JITTER_LADDER = (0.0, 1e-9, 1e-6)


class Band(str, Enum):
    C = "c"
    M = "m"


@dataclass(frozen=True)
class BandConfig:
    band_id: Band
    carrier_freq: float
    bandwidth: float
    tx_power: float
    noise_psd: float = -174.0

    def __post_init__(self):
        if self.bandwidth <= 0 or self.carrier_freq <= 0:
            raise DomainError(S.BAND_INVALID.format(band=self.band_id.value))
        if not math.isfinite(self.noise_power):
            raise DomainError(S.BAND_INVALID.format(band=self.band_id.value))

    @property
    def noise_power(self) -> float:
        """Total noise power N_0 in dBm."""
        return self.noise_psd + 10.0 * math.log10(self.bandwidth)


@dataclass(frozen=True)
class DualBandConfig:
    c: BandConfig
    m: BandConfig

    def __getitem__(self, band: Band) -> BandConfig:
        return self.c if Band(band) is Band.C else self.m


@dataclass(frozen=True)
class PathLossModel:
    intercept_db: float
    break_dist: float
    post_break_exponent: float = 4.0
    pre_break_exponent: float = 2.0
    min_dist: float = D_MIN

    @classmethod
    def free_space(cls, carrier_freq: float, break_dist: float = 50.0,
                   post_break_exponent: float = 4.0, **kwargs) -> "PathLossModel":
        """Intercept equal to free-space loss at 1 m."""
        intercept = 20.0 * math.log10(4.0 * math.pi * carrier_freq / SPEED_OF_LIGHT)
        return cls(intercept, break_dist, post_break_exponent, **kwargs)


@dataclass(frozen=True)
class ShadowingModel:
    sigma_c: float = 5.0
    sigma_m: float = 7.0
    rho: float = 0.75
    dcor_c: float = 25.0
    dcor_m: float = 24.0
    nu: float = 1.9

    def __post_init__(self):
        if self.sigma_c <= 0 or self.sigma_m <= 0:
            raise DomainError(S.SHADOW_INVALID.format(what="sigma", value=(self.sigma_c, self.sigma_m)))
        if abs(self.rho) > 1.0:
            raise DomainError(S.SHADOW_INVALID.format(what="rho", value=self.rho))
        if self.dcor_c <= 0 or self.dcor_m <= 0:
            raise DomainError(S.SHADOW_INVALID.format(what="dcor", value=(self.dcor_c, self.dcor_m)))
        if not 0.0 < self.nu <= 2.0:
            raise DomainError(S.SHADOW_INVALID.format(what="nu", value=self.nu))

    def sigma(self, band: Band) -> float:
        return self.sigma_c if Band(band) is Band.C else self.sigma_m

    def dcor(self, band: Band) -> float:
        return self.dcor_c if Band(band) is Band.C else self.dcor_m


@dataclass(frozen=True)
class ShadowingDraw:
    positions: np.ndarray
    values: np.ndarray
    seed: int

    @property
    def s_c(self) -> np.ndarray:
        return self.values[0]

    @property
    def s_m(self) -> np.ndarray:
        return self.values[1]


# ----------------- Link budget -----------------

def path_loss(model: PathLossModel, d: ArrayLike) -> ArrayLike:
    """Two-segment break-point path loss in dB."""
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < model.min_dist) or np.any(np.isnan(d_arr)):
        raise DomainError(S.DISTANCE_TOO_SMALL.format(d=float(np.nanmin(d_arr)), d_min=model.min_dist))
    near = np.minimum(d_arr, model.break_dist)
    far = np.maximum(d_arr, model.break_dist)
    pl = (model.intercept_db
          + 10.0 * model.pre_break_exponent * np.log10(near)
          + 10.0 * model.post_break_exponent * np.log10(far / model.break_dist))
    return pl if pl.ndim else float(pl)


def received_power(band: BandConfig, pl: ArrayLike, s: ArrayLike) -> ArrayLike:
    """Received power in dBm."""
    return band.tx_power - np.asarray(pl) + np.asarray(s)


def noise_power(band: BandConfig) -> float:
    return band.noise_power


def snr(band: BandConfig, pl: ArrayLike, s: ArrayLike) -> ArrayLike:
    """SNR in dB: P_tx - PL + S - N_0."""
    return band.tx_power - pl + s - band.noise_power


def gamma_prime(band: BandConfig, pl: ArrayLike) -> ArrayLike:
    """Linear SNR without shadowing, 10^(0.1 (P_tx - PL - N_0))."""
    return np.power(10.0, 0.1 * (band.tx_power - np.asarray(pl, dtype=float) - band.noise_power))


def spectral_efficiency(snr_db: ArrayLike) -> ArrayLike:
    """log2(1 + SNR) in bit/s/Hz, accurate for very low SNR."""
    return np.log1p(np.power(10.0, 0.1 * np.asarray(snr_db, dtype=float))) / math.log(2.0)


def rate(band: BandConfig, snr_db: ArrayLike) -> ArrayLike:
    """Shannon rate in bit/s."""
    return band.bandwidth * spectral_efficiency(snr_db)


def capped_rate(band: BandConfig, snr_db: ArrayLike) -> ArrayLike:
    """Rate limited to 256-QAM; used for rate-loss metrics only."""
    return band.bandwidth * np.minimum(spectral_efficiency(snr_db), QAM256_BITS)


# ----------------- Shadowing -----------------

def covariance(model: ShadowingModel, b: Band, b2: Band, delta: ArrayLike) -> ArrayLike:
    """Cross-band space covariance in dB^2."""
    delta = np.asarray(delta, dtype=float)
    rho = 1.0 if Band(b) is Band(b2) else model.rho
    decay = 0.5 * ((delta / model.dcor(b)) ** model.nu + (delta / model.dcor(b2)) ** model.nu)
    cov = rho * model.sigma(b) * model.sigma(b2) * np.exp(-decay)
    return cov if cov.ndim else float(cov)


def build_joint_covariance(model: ShadowingModel, positions: np.ndarray) -> np.ndarray:
    """Joint (2T x 2T) covariance over both bands, band-major."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if positions.shape[0] == 0:
        raise DomainError(S.EMPTY_POSITIONS)
    delta = cdist(positions, positions)
    cc = covariance(model, Band.C, Band.C, delta)
    mm = covariance(model, Band.M, Band.M, delta)
    cm = covariance(model, Band.C, Band.M, delta)
    return np.block([[cc, cm], [cm.T, mm]])


def cholesky_with_jitter(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, escalating diagonal jitter on failure."""
    cov = np.asarray(cov, dtype=float)
    scale = float(np.max(np.diag(cov))) if cov.size else 0.0
    if scale <= 0.0:
        return np.zeros_like(cov)
    for level in JITTER_LADDER:
        try:
            factor = linalg.cholesky(cov + level * scale * np.eye(cov.shape[0]), lower=True)
            if level > 0.0:
                logging.warning(S.JITTER_ESCALATED.format(level=level, n=cov.shape[0]))
            return factor
        except linalg.LinAlgError:
            continue
    eigenvalues = np.linalg.eigvalsh(cov)
    condition = float(np.linalg.cond(cov))
    logging.error(S.FACTORIZATION_FAILED.format(n=cov.shape[0], cond=condition, min_eig=eigenvalues[0]))
    raise NumericalError(
        S.FACTORIZATION_FAILED.format(n=cov.shape[0], cond=condition, min_eig=eigenvalues[0]),
        condition=condition,
        min_eigenvalue=float(eigenvalues[0]),
    )


def sample_shadowing(cov: np.ndarray, seed: int, positions: Optional[np.ndarray] = None) -> ShadowingDraw:
    """One zero-mean draw of the joint shadowing, deterministic per seed."""
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0]
    if n % 2:
        raise DomainError(S.COV_NOT_DUAL_BAND.format(n=n))
    factor = cholesky_with_jitter(cov)
    z = np.random.default_rng(seed).standard_normal(n)
    values = (factor @ z).reshape(2, n // 2)
    if positions is None:
        positions = np.empty((n // 2, 2))
    return ShadowingDraw(positions=np.asarray(positions, dtype=float), values=values, seed=seed)


def sample_shadowing_batch(cov: np.ndarray, n_draws: int, seed: int) -> np.ndarray:
    """n_draws independent draws as rows of an (n_draws x 2T) matrix."""
    factor = cholesky_with_jitter(np.asarray(cov, dtype=float))
    z = np.random.default_rng(seed).standard_normal((n_draws, factor.shape[0]))
    return z @ factor.T


def dual_band_from_config(band_cfg) -> DualBandConfig:
    """Build the two BandConfig values from a BandSection."""
    return DualBandConfig(
        c=BandConfig(Band.C, band_cfg.c_freq_hz, band_cfg.c_bandwidth_hz, band_cfg.c_tx_power_dbm,
                     band_cfg.noise_psd_dbm_hz),
        m=BandConfig(Band.M, band_cfg.m_freq_hz, band_cfg.m_bandwidth_hz, band_cfg.m_tx_power_dbm,
                     band_cfg.noise_psd_dbm_hz),
    )


def pathloss_from_config(band_cfg, pl_cfg) -> Tuple[PathLossModel, PathLossModel]:
    """Per-band PathLossModel from BandSection and PathlossSection."""
    models = []
    for prefix, freq in (("c", band_cfg.c_freq_hz), ("m", band_cfg.m_freq_hz)):
        kwargs = dict(
            break_dist=getattr(pl_cfg, f"{prefix}_break_dist_m"),
            post_break_exponent=getattr(pl_cfg, f"{prefix}_exponent"),
            pre_break_exponent=getattr(pl_cfg, f"{prefix}_pre_exponent"),
            min_dist=pl_cfg.min_dist_m,
        )
        intercept = getattr(pl_cfg, f"{prefix}_intercept_db")
        if intercept is None:
            models.append(PathLossModel.free_space(freq, **kwargs))
        else:
            models.append(PathLossModel(intercept_db=intercept, **kwargs))
    return models[0], models[1]


def shadowing_from_config(sh_cfg) -> ShadowingModel:
    return ShadowingModel(sh_cfg.sigma_c_db, sh_cfg.sigma_m_db, sh_cfg.rho,
                          sh_cfg.dcor_c_m, sh_cfg.dcor_m_m, sh_cfg.nu)
