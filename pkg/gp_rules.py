"""
Gaussian-process band assignment rules.

Design choices:
- Shadowing is a zero-mean joint Gaussian over positions and both bands (see channel.py)
- The exact sequential rule integrates over the future cmWave shadowing with Gauss-Hermite
  nodes and falls back to adaptive quadrature when the node count matters
- Conditioning weights only depend on relative geometry, so they are cached (cachetools LRU)
- Path-loss and shadowing fits let the same rules run on externally produced traces
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence, Tuple
import logging
import math
import threading

import numpy as np
from cachetools import LRUCache
from scipy import integrate, optimize, stats
from scipy.linalg import cho_solve
from scipy.spatial import cKDTree

from channel import (
    DualBandConfig,
    PathLossModel,
    ShadowingModel,
    build_joint_covariance,
    cholesky_with_jitter,
    dual_band_from_config,
    gamma_prime,
    path_loss,
    pathloss_from_config,
    shadowing_from_config,
)
from errors import DomainError, FitError
from strings import Strings as S

# dB-to-exponent factor of the rate formula
GAMMA = 0.1
KAPPA = math.log(10.0) / 10.0
GH_NODES = 64
QUAD_TOL = 1e-6

# Cache conditioning weights keyed by relative geometry
_weights_cache = LRUCache(maxsize=4096)
_weights_lock = threading.Lock()


@dataclass(frozen=True)
class GpRuleParams:
    dual_band: DualBandConfig
    pl_c: PathLossModel
    pl_m: PathLossModel
    shadow: ShadowingModel
    horizon: int = 0
    window: int = 0
    gamma_t: float = 0.5
    bs_position: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.horizon < 0 or self.window < 0:
            raise DomainError(S.HORIZON_INVALID.format(u=self.horizon, q=self.window))
        if not 0.0 <= self.gamma_t <= 1.0:
            raise DomainError(S.GAMMA_T_INVALID.format(gamma_t=self.gamma_t))

    @property
    def bandwidth_ratio(self) -> float:
        """omega_c / omega_m."""
        return self.dual_band.c.bandwidth / self.dual_band.m.bandwidth

    def gamma_primes(self, d) -> Tuple[np.ndarray, np.ndarray]:
        return (gamma_prime(self.dual_band.c, path_loss(self.pl_c, d)),
                gamma_prime(self.dual_band.m, path_loss(self.pl_m, d)))

    def distance(self, position) -> float:
        return float(np.linalg.norm(np.asarray(position, dtype=float) - np.asarray(self.bs_position)))


@dataclass(frozen=True)
class History:
    """Observed frames t-Q..t (oldest first) and the position at t+U."""
    positions: np.ndarray
    s_c: np.ndarray
    s_m: np.ndarray
    target_position: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        n = len(self.s_c)
        if len(self.s_m) != n or np.asarray(self.positions).reshape(-1, 2).shape[0] != n:
            raise DomainError(S.HISTORY_SHAPE.format(n=n))

    @classmethod
    def from_sequence(cls, positions: np.ndarray, s_c: np.ndarray, s_m: np.ndarray,
                      t: int, window: int, horizon: int) -> "History":
        """Window of the Q+1 most recent frames ending at t, target at t+U."""
        lo = max(t - window, 0)
        return cls(positions=np.asarray(positions[lo:t + 1], dtype=float),
                   s_c=np.asarray(s_c[lo:t + 1], dtype=float),
                   s_m=np.asarray(s_m[lo:t + 1], dtype=float),
                   target_position=np.asarray(positions[t + horizon], dtype=float))

    @property
    def values(self) -> np.ndarray:
        return np.concatenate([self.s_c, self.s_m])


class ConditionalGaussian(NamedTuple):
    mean: float
    variance: float


class TbbaDecision(NamedTuple):
    decision: np.ndarray
    probability: np.ndarray
    degenerate: bool


# ----------------- Gaussian utilities -----------------

def q_function(x):
    """Standard normal tail probability."""
    return stats.norm.sf(x)


def q_inverse(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise DomainError(S.PROBABILITY_OPEN.format(p=p))
    if p == 0.5:
        return 0.0
    return float(stats.norm.isf(p))


def _q_step(x, sd: float):
    """Q(x / sd), read as a step function when sd vanishes."""
    x = np.asarray(x, dtype=float)
    if sd <= 1e-12:
        return (x <= 0.0).astype(float)
    return stats.norm.sf(x / sd)


def _regression_weights(prior_cov: np.ndarray, observed_idx: np.ndarray, target_idx: int):
    """Sigma_X^-1 Sigma_X,y and the residual variance of y."""
    prior_var = float(prior_cov[target_idx, target_idx])
    if observed_idx.size == 0:
        return np.zeros(0), prior_var
    block = prior_cov[np.ix_(observed_idx, observed_idx)]
    cross = prior_cov[observed_idx, target_idx]
    factor = cholesky_with_jitter(block)
    if not np.any(factor):
        return np.zeros(observed_idx.size), prior_var
    weights = cho_solve((factor, True), cross)
    return weights, max(prior_var - float(cross @ weights), 0.0)


def condition_gaussian(prior_cov: np.ndarray, observed_idx: Sequence[int],
                       observed_vals: Sequence[float], target_idx: int) -> ConditionalGaussian:
    """Conditional mean and variance of one coordinate of a zero-mean Gaussian."""
    prior_cov = np.asarray(prior_cov, dtype=float)
    observed_idx = np.asarray(observed_idx, dtype=int).reshape(-1)
    observed_vals = np.asarray(observed_vals, dtype=float).reshape(-1)
    n = prior_cov.shape[0]
    if observed_idx.size != observed_vals.size:
        raise DomainError(S.HISTORY_SHAPE.format(n=observed_vals.size))
    if np.any(observed_idx < 0) or np.any(observed_idx >= n) or not 0 <= target_idx < n:
        raise DomainError(S.INDEX_OUT_OF_RANGE.format(n=n))
    weights, variance = _regression_weights(prior_cov, observed_idx, target_idx)
    return ConditionalGaussian(mean=float(weights @ observed_vals) if weights.size else 0.0,
                               variance=variance)


# ----------------- Rate thresholds -----------------

def _v2(s, gp_c, gp_m, bandwidth_ratio: float):
    with np.errstate(divide="ignore", over="ignore"):
        inner = np.expm1(bandwidth_ratio * np.log1p(gp_c * np.power(10.0, GAMMA * np.asarray(s, dtype=float))))
        return np.log10(inner / gp_m) / GAMMA


def v_threshold(s, params: GpRuleParams, d):
    """mmWave shadowing above which R^m >= R^c given cmWave shadowing s at distance d."""
    gp_c, gp_m = params.gamma_primes(d)
    return _v2(s, gp_c, gp_m, params.bandwidth_ratio)


def map_decide(p, gamma_t: float = 0.5):
    """1 iff p >= gamma_t (ties go to mmWave)."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0.0) | (p > 1.0)):
        raise DomainError(S.PROBABILITY_CLOSED.format(p=p))
    out = (p >= gamma_t).astype(int)
    return out if out.ndim else int(out)


# ----------------- One-shot rule -----------------

def tbba_decide(s_c, params: GpRuleParams, d) -> TbbaDecision:
    """Threshold based BA from the co-located cmWave shadowing."""
    shadow = params.shadow
    s_c = np.asarray(s_c, dtype=float)
    v1 = v_threshold(s_c, params, d)
    degenerate = shadow.rho == 0.0
    if degenerate:
        logging.warning(S.TBBA_RHO_ZERO)
    mean = shadow.rho * shadow.sigma_m / shadow.sigma_c * s_c
    sd = shadow.sigma_m * math.sqrt(max(1.0 - shadow.rho ** 2, 0.0))
    probability = _q_step(v1 - mean, sd)
    return TbbaDecision(decision=np.asarray(map_decide(probability, 0.5)),
                        probability=np.asarray(probability), degenerate=degenerate)


def tbba_threshold_decide(s_c, params: GpRuleParams, d):
    """Closed threshold form: compare s_c with (sigma_c / (rho sigma_m)) V(s_c)."""
    shadow = params.shadow
    if shadow.rho == 0.0:
        raise DomainError(S.TBBA_RHO_ZERO)
    s_c = np.asarray(s_c, dtype=float)
    threshold = shadow.sigma_c / (shadow.rho * shadow.sigma_m) * v_threshold(s_c, params, d)
    out = (s_c >= threshold) if shadow.rho > 0 else (s_c <= threshold)
    out = out.astype(int)
    return out if out.ndim else int(out)


# ----------------- Sequential rules -----------------

@dataclass(frozen=True)
class _Weights:
    w_c: np.ndarray
    var_c: float
    w_m: np.ndarray
    a_m: float
    var_m: float
    w_d: np.ndarray
    var_d: float


def _compute_weights(positions: np.ndarray, shadow: ShadowingModel, bandwidth_ratio: float) -> _Weights:
    n = positions.shape[0] - 1
    total = n + 1
    cov = build_joint_covariance(shadow, positions)
    obs = np.concatenate([np.arange(n), total + np.arange(n)]).astype(int)
    tc, tm = n, total + n

    # 1. Future cmWave shadowing given H
    w_c, var_c = _regression_weights(cov, obs, tc)
    # 2. Future mmWave shadowing given H and the future cmWave value
    w_plus, var_m = _regression_weights(cov, np.append(obs, tc), tm)
    # 3. High-SNR rate difference, scaled by 1/omega_m
    a = KAPPA * np.array([-bandwidth_ratio, 1.0])
    targets = np.array([tc, tm])
    sigma_tt = cov[np.ix_(targets, targets)]
    cross = a @ cov[np.ix_(targets, obs)] if obs.size else np.zeros(0)
    if obs.size:
        factor = cholesky_with_jitter(cov[np.ix_(obs, obs)])
        w_d = cho_solve((factor, True), cross) if np.any(factor) else np.zeros(obs.size)
    else:
        w_d = np.zeros(0)
    var_d = max(float(a @ sigma_tt @ a - cross @ w_d), 0.0)
    return _Weights(w_c=w_c, var_c=var_c, w_m=w_plus[:-1], a_m=float(w_plus[-1]), var_m=var_m,
                    w_d=w_d, var_d=var_d)


def _weights_for(h: History, params: GpRuleParams) -> _Weights:
    positions = np.vstack([np.asarray(h.positions, dtype=float).reshape(-1, 2), h.target_position])
    anchor = positions[-2] if positions.shape[0] > 1 else positions[-1]
    key = (tuple(np.round(positions - anchor, 6).ravel()), params.shadow, params.bandwidth_ratio)

    # 1. Check cache first
    with _weights_lock:
        cached = _weights_cache.get(key)
    if cached is not None:
        logging.debug("Cache HIT for conditioning weights")
        return cached

    # 2. Cache MISS - factorize
    logging.debug("Cache MISS for conditioning weights")
    weights = _compute_weights(positions, params.shadow, params.bandwidth_ratio)
    with _weights_lock:
        _weights_cache[key] = weights
    return weights


@lru_cache(maxsize=8)
def _hermite(n: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.polynomial.hermite.hermgauss(n)


def _gauss_hermite(fn, mean: float, sd: float, n: int) -> float:
    x, w = _hermite(n)
    return float(w @ fn(mean + math.sqrt(2.0) * sd * x) / math.sqrt(math.pi))


def exact_success_prob(h: History, params: GpRuleParams, nodes: int = GH_NODES) -> float:
    """P(R^m >= R^c at t+U | history), integrating over the future cmWave shadowing."""
    weights = _weights_for(h, params)
    values = h.values
    gp_c, gp_m = params.gamma_primes(params.distance(h.target_position))
    ratio = params.bandwidth_ratio

    mu_c = float(weights.w_c @ values) if values.size else 0.0
    sd_c = math.sqrt(weights.var_c)
    offset = float(weights.w_m @ values) if values.size else 0.0
    sd_m = math.sqrt(weights.var_m)

    def integrand(s):
        return _q_step(_v2(s, gp_c, gp_m, ratio) - weights.a_m * s - offset, sd_m)

    if sd_c <= 1e-12:
        return float(np.clip(integrand(mu_c), 0.0, 1.0))

    p = _gauss_hermite(integrand, mu_c, sd_c, nodes)
    coarse = _gauss_hermite(integrand, mu_c, sd_c, max(nodes // 2, 2))
    if abs(p - coarse) > QUAD_TOL:
        logging.debug(S.QUADRATURE_FALLBACK.format(diff=abs(p - coarse)))
        p, _ = integrate.quad(lambda s: float(integrand(s)) * stats.norm.pdf(s, mu_c, sd_c),
                              mu_c - 8.0 * sd_c, mu_c + 8.0 * sd_c, epsabs=QUAD_TOL, limit=200)
    return float(np.clip(p, 0.0, 1.0))


def approx_moments(h: History, params: GpRuleParams) -> ConditionalGaussian:
    """Conditional mean and variance of the high-SNR rate difference (scaled by 1/omega_m)."""
    weights = _weights_for(h, params)
    gp_c, gp_m = params.gamma_primes(params.distance(h.target_position))
    mu_tilde = math.log(gp_m) - params.bandwidth_ratio * math.log(gp_c)
    values = h.values
    mean = mu_tilde + (float(weights.w_d @ values) if values.size else 0.0)
    return ConditionalGaussian(mean=mean, variance=weights.var_d)


def approx_decide(h: History, params: GpRuleParams) -> int:
    """1 iff the conditional mean of the high-SNR rate difference is non-negative."""
    return int(approx_moments(h, params).mean >= 0.0)


def approx_success_prob(h: History, params: GpRuleParams) -> float:
    """Q(-mu / sigma) of the high-SNR rate difference."""
    moments = approx_moments(h, params)
    return float(_q_step(-moments.mean, math.sqrt(moments.variance)))


# ----------------- Parameter fitting -----------------

def _two_segment_design(log_d: np.ndarray, log_break: float, fit_pre_exponent: bool, pre_exponent: float):
    near = np.minimum(log_d, log_break)
    far = np.maximum(log_d, log_break) - log_break
    if fit_pre_exponent:
        return np.column_stack([np.ones_like(log_d), 10.0 * near, 10.0 * far]), np.zeros_like(log_d)
    return np.column_stack([np.ones_like(log_d), 10.0 * far]), 10.0 * pre_exponent * near


def _two_segment_rss(log_d, loss, log_break, fit_pre_exponent, pre_exponent):
    design, fixed = _two_segment_design(log_d, log_break, fit_pre_exponent, pre_exponent)
    coef, *_ = np.linalg.lstsq(design, loss - fixed, rcond=None)
    resid = loss - fixed - design @ coef
    return float(resid @ resid), coef


def fit_pathloss_two_segment(d: Sequence[float], rx_power_dbm: Sequence[float], tx_power_dbm: float,
                             fit_pre_exponent: bool = False, pre_exponent: float = 2.0,
                             n_grid: int = 200, min_dist: float = 1.0) -> PathLossModel:
    """Continuous two-segment least-squares fit in log10(d), breakpoint by grid search."""
    d = np.asarray(d, dtype=float)
    loss = tx_power_dbm - np.asarray(rx_power_dbm, dtype=float)
    if d.size < 4 or d.size != loss.size:
        raise FitError(S.FIT_TOO_FEW.format(n=d.size, need=4))
    log_d = np.log10(d)
    order = np.sort(log_d)
    # Leave at least two samples on each side of any candidate break
    lo, hi = order[1], order[-2]
    if hi - lo <= 1e-6:
        raise FitError(S.FIT_NO_SPAN.format(lo=10 ** order[0], hi=10 ** order[-1]))

    grid = np.linspace(lo, hi, n_grid)
    rss = np.array([_two_segment_rss(log_d, loss, g, fit_pre_exponent, pre_exponent)[0] for g in grid])
    best = int(np.argmin(rss))
    bracket = (grid[max(best - 1, 0)], grid[min(best + 1, n_grid - 1)])
    res = optimize.minimize_scalar(
        lambda g: _two_segment_rss(log_d, loss, g, fit_pre_exponent, pre_exponent)[0],
        bounds=bracket, method="bounded", options={"xatol": 1e-12},
    )
    log_break = float(res.x) if res.fun <= rss[best] else float(grid[best])
    _, coef = _two_segment_rss(log_d, loss, log_break, fit_pre_exponent, pre_exponent)
    if fit_pre_exponent:
        intercept, pre, post = coef
    else:
        (intercept, post), pre = coef, pre_exponent
    logging.info(f"Path-loss fit: intercept={intercept:.2f} dB, break={10 ** log_break:.1f} m, "
                 f"exponents={pre:.2f}/{post:.2f}")
    return PathLossModel(intercept_db=float(intercept), break_dist=float(10 ** log_break),
                         post_break_exponent=float(post), pre_break_exponent=float(pre), min_dist=min_dist)


def _correlation(x: float, dcor: float, nu: float):
    return np.exp(-(np.asarray(x) / dcor) ** nu)


def _empirical_correlogram(positions, res_c, res_m, groups, max_lag, n_bins, max_pairs, rng):
    """Per-bin mean lag and normalized products for each band, pairs restricted to groups."""
    pairs = []
    for g in np.unique(groups):
        members = np.flatnonzero(groups == g)
        if members.size < 2:
            continue
        found = cKDTree(positions[members]).query_pairs(r=max_lag, output_type="ndarray")
        if found.size:
            pairs.append(members[found])
    if not pairs:
        return None
    pairs = np.vstack(pairs)
    if pairs.shape[0] > max_pairs:
        pairs = pairs[rng.choice(pairs.shape[0], size=max_pairs, replace=False)]
    lag = np.linalg.norm(positions[pairs[:, 0]] - positions[pairs[:, 1]], axis=1)
    edges = np.linspace(0.0, max_lag, n_bins + 1)
    which = np.clip(np.digitize(lag, edges) - 1, 0, n_bins - 1)
    centers, corr_c, corr_m = [], [], []
    for b in range(n_bins):
        sel = which == b
        if np.count_nonzero(sel) < 20:
            continue
        i, j = pairs[sel, 0], pairs[sel, 1]
        centers.append(float(lag[sel].mean()))
        corr_c.append(float(np.mean(res_c[i] * res_c[j])))
        corr_m.append(float(np.mean(res_m[i] * res_m[j])))
    return np.array(centers), np.array(corr_c), np.array(corr_m)


def fit_shadowing_params(positions: np.ndarray, res_c: Sequence[float], res_m: Sequence[float],
                         groups: Optional[Sequence] = None, nu: Optional[float] = None,
                         max_lag: float = 80.0, n_bins: int = 32, max_pairs: int = 400_000,
                         seed: int = 0) -> ShadowingModel:
    """Fit sigma, rho and the correlogram (d_dcor per band, nu) from shadowing residuals."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    res_c = np.asarray(res_c, dtype=float)
    res_m = np.asarray(res_m, dtype=float)
    if min(res_c.size, res_m.size) < 100:
        raise FitError(S.FIT_TOO_FEW.format(n=min(res_c.size, res_m.size), need=100))
    groups = np.zeros(res_c.size, dtype=int) if groups is None else np.asarray(groups)

    # 1. Marginals and same-location cross-band correlation
    res_c = res_c - res_c.mean()
    res_m = res_m - res_m.mean()
    sigma_c, sigma_m = float(res_c.std(ddof=1)), float(res_m.std(ddof=1))
    rho = float(np.clip(np.corrcoef(res_c, res_m)[0, 1], -1.0, 1.0))

    # 2. Binned correlogram
    gram = _empirical_correlogram(positions, res_c / sigma_c, res_m / sigma_m, groups,
                                  max_lag, n_bins, max_pairs, np.random.default_rng(seed))
    if gram is None or gram[0].size < 3:
        raise FitError(S.FIT_NO_DIVERSITY.format(max_lag=max_lag))
    lags, corr_c, corr_m = gram

    # 3. Least-squares fit of exp(-(lag/dcor)^nu), nu shared by both bands
    def initial(corr):
        below = np.flatnonzero(corr < math.exp(-1.0))
        return float(lags[below[0]]) if below.size else float(max_lag)

    x = np.concatenate([lags, lags])
    y = np.concatenate([corr_c, corr_m])
    band = np.concatenate([np.zeros(lags.size), np.ones(lags.size)])
    d0 = [max(initial(corr_c), 1e-2), max(initial(corr_m), 1e-2)]
    upper = 10.0 * max_lag
    try:
        if nu is None:
            def model(xx, dc, dm, n):
                return _correlation(xx, np.where(band == 0, dc, dm), n)
            popt, _ = optimize.curve_fit(model, x, y, p0=d0 + [1.0],
                                         bounds=([1e-3, 1e-3, 0.05], [upper, upper, 2.0]), maxfev=20000)
            dcor_c, dcor_m, nu_fit = popt
        else:
            def model(xx, dc, dm):
                return _correlation(xx, np.where(band == 0, dc, dm), nu)
            popt, _ = optimize.curve_fit(model, x, y, p0=d0, bounds=([1e-3, 1e-3], [upper, upper]),
                                         maxfev=20000)
            (dcor_c, dcor_m), nu_fit = popt, nu
    except (RuntimeError, ValueError) as exc:
        raise FitError(S.FIT_NO_CONVERGENCE.format(what="correlogram")) from exc

    logging.info(f"Shadowing fit: sigma={sigma_c:.2f}/{sigma_m:.2f} dB, rho={rho:.3f}, "
                 f"dcor={dcor_c:.1f}/{dcor_m:.1f} m, nu={nu_fit:.2f}")
    return ShadowingModel(sigma_c=sigma_c, sigma_m=sigma_m, rho=rho,
                          dcor_c=float(dcor_c), dcor_m=float(dcor_m), nu=float(nu_fit))


def shadowing_residuals(d, snr_db, band_cfg, model: PathLossModel) -> np.ndarray:
    """Shadowing implied by observed SNR under a path-loss model."""
    return np.asarray(snr_db, dtype=float) + band_cfg.noise_power - band_cfg.tx_power + path_loss(model, d)


def params_from_config(cfg, horizon: int = 0, window: int = 0, gamma_t: float = 0.5) -> GpRuleParams:
    pl_c, pl_m = pathloss_from_config(cfg.band, cfg.pathloss)
    return GpRuleParams(dual_band=dual_band_from_config(cfg.band), pl_c=pl_c, pl_m=pl_m,
                        shadow=shadowing_from_config(cfg.shadow), horizon=horizon, window=window,
                        gamma_t=gamma_t)
