"""
Datasets, metrics and the one-shot / sequential experiment protocols.

Design choices:
- A LabeledDataset is a pandas DataFrame in the dataset CSV layout plus provenance metadata
- Per-realization and per-sequence work runs in a thread pool (asyncio.to_thread behind a
  semaphore) with one split seed per item, so results do not depend on the number of jobs
- Training (train_*) and scoring (evaluate_*) are separate so stored models can be re-scored
- GP rules have no learned state; their rows repeat for every feature combination
"""

from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple
import asyncio
import logging
import math
import time

import numpy as np
import pandas as pd

from channel import (
    DualBandConfig,
    PathLossModel,
    ShadowingModel,
    build_joint_covariance,
    capped_rate,
    dual_band_from_config,
    path_loss,
    pathloss_from_config,
    rate,
    sample_shadowing,
    shadowing_from_config,
    snr,
)
from config import ExperimentConfig, split_seed
from errors import DomainError, SchemaError
from gp_rules import (
    GpRuleParams,
    History,
    approx_success_prob,
    exact_success_prob,
    map_decide,
    tbba_decide,
)
from ml_rules import (
    ONESHOT_COMBOS,
    ONESHOT_LAYOUTS,
    SEQ_COMBOS,
    TRACE_ONESHOT_COMBOS,
    TRACE_SEQ_COMBOS,
    FeatureSpec,
    TrainConfig,
    TrainedModel,
    ValidationOutcome,
    assemble_features,
    calibrate_threshold,
    combination_available,
    cross_entropy,
    mlp_spec,
    monte_carlo_cv,
    predict,
    resolve_network,
    train_linear,
    train_logistic,
    train_lstm,
    train_mlp,
)
from mobility import (
    CellGeometry,
    gen_circular_trajectory,
    gen_sms_trajectory,
    gen_uniform_points,
    geometry_from_config,
    sms_from_config,
)
from strings import Strings as S

DATASET_COLUMNS = [
    "seq_id", "frame", "t_s", "x_m", "y_m", "d_m", "theta_rad", "s_c_db", "s_m_db",
    "snr_c_db", "snr_m_db", "rate_c_bps", "rate_m_bps", "delay_s", "aod_rad", "label",
]
RESULT_COLUMNS = ["rule", "combination", "U", "gamma_t", "Q", "ba_error", "rate_loss", "n_test", "seed"]

ONESHOT_ML_RULES = ("LR", "GR", "NN")
SEQ_ML_RULES = ("LSTM_opd", "LSTM_std", "NN_H", "GR_H")
GP_RULES = ("GP", "GP_App")


# ----------------- Worker pool -----------------

async def run_pool(fn: Callable, items: Sequence, jobs: int) -> list:
    """Run blocking fn over items in threads, at most `jobs` at a time, results in input order."""
    semaphore = asyncio.Semaphore(max(jobs, 1))

    async def one(item):
        async with semaphore:
            return await asyncio.to_thread(fn, item)

    return await asyncio.gather(*(one(item) for item in items))


def run_parallel(fn: Callable, items: Iterable, jobs: int = 1) -> list:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    return asyncio.run(run_pool(fn, items, jobs))


# ----------------- Datasets -----------------

@dataclass
class LabeledDataset:
    frame: pd.DataFrame
    kind: str = "oneshot"
    provenance: str = "stochastic"
    realization_size: int = 0
    seed: Optional[int] = None
    config_hash: str = ""

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def label_balance(self) -> float:
        return float(self.frame["label"].mean()) if len(self.frame) else float("nan")

    def group_keys(self) -> np.ndarray:
        seq_id = self.frame["seq_id"].to_numpy()
        if self.kind == "oneshot":
            if self.realization_size > 0:
                return seq_id // self.realization_size
            return np.zeros(len(seq_id), dtype=int)
        return seq_id

    def groups(self) -> List[pd.DataFrame]:
        """Realizations (one-shot) or sequences ordered by frame."""
        keys = self.group_keys()
        out = []
        for _, idx in pd.Series(np.arange(len(keys))).groupby(keys, sort=True):
            part = self.frame.iloc[idx.to_numpy()]
            if self.kind != "oneshot":
                part = part.sort_values("frame", kind="stable")
            out.append(part.reset_index(drop=True))
        return out


@dataclass(frozen=True)
class RadioContext:
    dual_band: DualBandConfig
    pl_c: PathLossModel
    pl_m: PathLossModel
    shadow: ShadowingModel
    geom: CellGeometry

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "RadioContext":
        pl_c, pl_m = pathloss_from_config(cfg.band, cfg.pathloss)
        return cls(dual_band_from_config(cfg.band), pl_c, pl_m, shadowing_from_config(cfg.shadow),
                   geometry_from_config(cfg))

    def gp_params(self, horizon: int = 0, window: int = 0, gamma_t: float = 0.5) -> GpRuleParams:
        return GpRuleParams(self.dual_band, self.pl_c, self.pl_m, self.shadow, horizon=horizon,
                            window=window, gamma_t=gamma_t, bs_position=self.geom.bs_position)


def label_frame(ctx: RadioContext, positions: np.ndarray, s_c: np.ndarray, s_m: np.ndarray,
                seq_id, frame, t_s) -> pd.DataFrame:
    """Link budget, rates and labels for a batch of positions."""
    positions = np.asarray(positions, dtype=float)
    d = ctx.geom.distance(positions)
    snr_c = snr(ctx.dual_band.c, path_loss(ctx.pl_c, d), s_c)
    snr_m = snr(ctx.dual_band.m, path_loss(ctx.pl_m, d), s_m)
    rate_c = rate(ctx.dual_band.c, snr_c)
    rate_m = rate(ctx.dual_band.m, snr_m)
    label = (rate_m > rate_c).astype(int)
    ties = int(np.count_nonzero(rate_m == rate_c))
    if ties:
        logging.warning(S.LABEL_TIES.format(n=ties))
    n = len(d)
    return pd.DataFrame({
        "seq_id": np.broadcast_to(seq_id, n).astype(int),
        "frame": np.broadcast_to(frame, n).astype(int),
        "t_s": np.broadcast_to(t_s, n).astype(float),
        "x_m": positions[:, 0],
        "y_m": positions[:, 1],
        "d_m": d,
        "theta_rad": ctx.geom.angle(positions),
        "s_c_db": s_c,
        "s_m_db": s_m,
        "snr_c_db": snr_c,
        "snr_m_db": snr_m,
        "rate_c_bps": rate_c,
        "rate_m_bps": rate_m,
        "delay_s": np.full(n, np.nan),
        "aod_rad": np.full(n, np.nan),
        "label": label,
    }, columns=DATASET_COLUMNS)


def build_one_shot_dataset(cfg: ExperimentConfig, seed: Optional[int] = None, jobs: int = 1) -> LabeledDataset:
    """Independent cell realizations of uniformly placed UEs with joint shadowing."""
    seed = cfg.run.seed if seed is None else seed
    ctx = RadioContext.from_config(cfg)
    n = cfg.oneshot.points

    def realization(r: int) -> pd.DataFrame:
        points = gen_uniform_points(ctx.geom, n, split_seed(seed, "oneshot-points", r))
        draw = sample_shadowing(build_joint_covariance(ctx.shadow, points),
                                split_seed(seed, "oneshot-shadow", r), points)
        return label_frame(ctx, points, draw.s_c, draw.s_m, seq_id=r * n + np.arange(n), frame=0, t_s=0.0)

    started = time.monotonic()
    parts = run_parallel(realization, range(cfg.oneshot.realizations), jobs)
    dataset = LabeledDataset(pd.concat(parts, ignore_index=True), kind="oneshot", realization_size=n,
                             seed=seed, config_hash=cfg.config_hash())
    logging.info(S.DATASET_BUILT.format(kind="oneshot", rows=len(dataset), balance=dataset.label_balance,
                                        seconds=time.monotonic() - started))
    return dataset


def _trajectory_dataset(cfg: ExperimentConfig, seed: int, jobs: int, kind: str, count: int,
                        make_trajectory: Callable[[int], object]) -> LabeledDataset:
    ctx = RadioContext.from_config(cfg)

    def sequence(i: int) -> pd.DataFrame:
        traj = make_trajectory(i)
        draw = sample_shadowing(build_joint_covariance(ctx.shadow, traj.positions),
                                split_seed(seed, f"{kind}-shadow", i), traj.positions)
        return label_frame(ctx, traj.positions, draw.s_c, draw.s_m, seq_id=i,
                           frame=np.arange(len(traj)), t_s=traj.frame_times)

    started = time.monotonic()
    parts = run_parallel(sequence, range(count), jobs)
    dataset = LabeledDataset(pd.concat(parts, ignore_index=True), kind=kind, seed=seed,
                             config_hash=cfg.config_hash())
    logging.info(S.DATASET_BUILT.format(kind=kind, rows=len(dataset), balance=dataset.label_balance,
                                        seconds=time.monotonic() - started))
    return dataset


def build_sequential_dataset(cfg: ExperimentConfig, seed: Optional[int] = None, jobs: int = 1) -> LabeledDataset:
    """SMS trajectories with one independent shadowing draw per sequence."""
    seed = cfg.run.seed if seed is None else seed
    geom, sms = geometry_from_config(cfg), sms_from_config(cfg)
    return _trajectory_dataset(cfg, seed, jobs, "sequential", cfg.seq.sequences,
                               lambda i: gen_sms_trajectory(geom, sms, split_seed(seed, "sms", i)))


def build_circular_dataset(cfg: ExperimentConfig, seed: Optional[int] = None, jobs: int = 1) -> LabeledDataset:
    """Circles around the BS, each with its own shadowing realization."""
    seed = cfg.run.seed if seed is None else seed
    geom = geometry_from_config(cfg)

    def circle(i: int):
        phase = np.random.default_rng(split_seed(seed, "circle-phase", i)).uniform(0.0, 2.0 * math.pi)
        return gen_circular_trajectory(cfg.circle.radius_m, cfg.circle.n_frames, geom,
                                       sample_period=cfg.sms.sample_period_s, phase=phase)

    return _trajectory_dataset(cfg, seed, jobs, "circular", cfg.circle.count, circle)


def build_dataset(cfg: ExperimentConfig, seed: Optional[int] = None, jobs: int = 1) -> LabeledDataset:
    builders = {
        "oneshot": build_one_shot_dataset,
        "sequential": build_sequential_dataset,
        "circular": build_circular_dataset,
    }
    return builders[cfg.dataset.kind](cfg, seed, jobs)


# ----------------- Metrics -----------------

def ba_error(decisions, labels) -> float:
    """Fraction of wrong band assignments."""
    decisions = np.asarray(decisions, dtype=int).reshape(-1)
    labels = np.asarray(labels, dtype=int).reshape(-1)
    if decisions.size == 0 or decisions.size != labels.size:
        raise DomainError(S.METRIC_INPUTS.format(n=decisions.size, m=labels.size))
    return float(np.mean(np.abs(decisions - labels)))


def rate_loss(decisions, capped_rates) -> float:
    """Mean normalized loss of capped rate against the best band; capped_rates columns are (c, m)."""
    decisions = np.asarray(decisions, dtype=int).reshape(-1)
    capped_rates = np.asarray(capped_rates, dtype=float).reshape(-1, 2)
    if decisions.size == 0 or decisions.size != capped_rates.shape[0]:
        raise DomainError(S.METRIC_INPUTS.format(n=decisions.size, m=capped_rates.shape[0]))
    best = capped_rates.max(axis=1)
    if np.any(best <= 0.0):
        raise DomainError(S.ZERO_MAX_RATE)
    chosen = np.where(decisions == 1, capped_rates[:, 1], capped_rates[:, 0])
    return float(np.mean(np.abs(chosen - best) / best))


def capped_pairs(frame: pd.DataFrame, dual_band: DualBandConfig) -> np.ndarray:
    return np.column_stack([capped_rate(dual_band.c, frame["snr_c_db"].to_numpy()),
                            capped_rate(dual_band.m, frame["snr_m_db"].to_numpy())])


# ----------------- Reports -----------------

@dataclass(frozen=True)
class ResultRow:
    rule: str
    combination: str
    U: int
    gamma_t: float
    Q: int
    ba_error: float
    rate_loss: float
    n_test: int
    seed: int


@dataclass
class ExperimentReport:
    rows: List[ResultRow]
    label_balance: float
    seed: int
    config_lines: List[str] = field(default_factory=list)
    wall_clock_s: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.rows], columns=RESULT_COLUMNS)


class SoftOutputs(NamedTuple):
    soft: np.ndarray
    labels: np.ndarray
    rates: np.ndarray
    inclusive: bool
    gamma_t: float = 0.5


def _decisions(out: SoftOutputs, gamma_t: float) -> np.ndarray:
    if out.inclusive:
        return np.asarray(map_decide(out.soft, gamma_t))
    return (out.soft > gamma_t).astype(int)


def _row(rule, combination, out: SoftOutputs, gamma_t, horizon, window, seed) -> ResultRow:
    if out.labels.size == 0:
        raise DomainError(S.METRIC_INPUTS.format(n=0, m=0))
    decisions = _decisions(out, gamma_t)
    return ResultRow(rule, combination, int(horizon), float(gamma_t), int(window),
                     ba_error(decisions, out.labels), rate_loss(decisions, out.rates),
                     int(out.labels.size), int(seed))


def split_indices(n: int, train_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Disjoint, exhaustive random train/test index split."""
    if n < 2:
        raise DomainError(S.SPLIT_TOO_SMALL.format(n=n))
    n_train = min(max(int(round(train_fraction * n)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def combinations_for(names: Sequence[str], dataset: LabeledDataset, sequential: bool) -> Dict[str, Tuple[str, ...]]:
    """Requested combinations resolved against stochastic or trace presets; unavailable ones dropped."""
    if dataset.provenance == "ingested":
        presets = TRACE_SEQ_COMBOS if sequential else TRACE_ONESHOT_COMBOS
    else:
        presets = SEQ_COMBOS if sequential else ONESHOT_COMBOS
    out = {}
    for name in names:
        if name not in presets:
            raise SchemaError(S.COMBINATION_UNKNOWN.format(name=name))
        if combination_available(presets[name], dataset.frame):
            out[name] = presets[name]
        else:
            logging.warning(S.COMBINATION_DISABLED.format(name=name))
    return out


# ----------------- One-shot protocol -----------------

class Candidate(NamedTuple):
    alpha: float
    layout: Tuple[int, ...] = ()


def _fit_one_shot(rule: str, candidate: Candidate, x, y, spec: FeatureSpec, cfg: ExperimentConfig,
                  seed: int, network=None) -> TrainedModel:
    if rule == "LR":
        return train_linear(x, y, candidate.alpha, spec)
    if rule == "GR":
        tc = TrainConfig(lr=cfg.train.lr, max_epochs=cfg.train.gr_max_epochs, seed=seed, tol=cfg.train.tol)
        return train_logistic(x, y, candidate.alpha, tc, spec)
    tc = TrainConfig(lr=cfg.train.lr, max_epochs=cfg.oneshot.nn_epochs, seed=seed)
    return train_mlp(x, y, network or mlp_spec(candidate.layout), candidate.alpha, tc, spec)


def _train_fraction(dataset: LabeledDataset, cfg: ExperimentConfig) -> float:
    if dataset.provenance == "ingested":
        return cfg.oneshot.trace_train_fraction
    return cfg.oneshot.train_fraction


def _one_shot_split(group: pd.DataFrame, fraction: float, seed: int, r: int):
    train_idx, test_idx = split_indices(len(group), fraction, split_seed(seed, "oneshot-split", r))
    return group.iloc[train_idx], group.iloc[test_idx]


def _select_on_split(train: pd.DataFrame, combos: Dict[str, Tuple[str, ...]], rules: Sequence[str],
                     cfg: ExperimentConfig, seed: int, r: int,
                     mapper: Optional[Callable] = None) -> Dict[Tuple[str, str], TrainedModel]:
    """Monte-Carlo CV, threshold calibration and a final fit on one realization's training split."""
    selected: Dict[Tuple[str, str], TrainedModel] = {}
    for combo, features in combos.items():
        spec = FeatureSpec(features, 0, combo)
        x = assemble_features(train, spec)
        y = train["label"].to_numpy(dtype=int)
        for rule in rules:
            if rule == "NN":
                candidates = [Candidate(a, layout) for layout in ONESHOT_LAYOUTS for a in cfg.cv.alphas]
            else:
                candidates = [Candidate(a) for a in cfg.cv.alphas]

            def score(cand, tr, va, rep, rule=rule, combo=combo, x=x, y=y, spec=spec):
                model = _fit_one_shot(rule, cand, x[tr], y[tr], spec, cfg,
                                      split_seed(seed, "cv-fit", rule, combo, r, rep))
                soft = predict(model, x[va])
                return ValidationOutcome(cross_entropy(soft, y[va]), soft, y[va])

            cv = monte_carlo_cv(len(y), candidates, score, repeats=cfg.cv.repeats,
                                val_fraction=cfg.cv.val_fraction, seed=split_seed(seed, "cv", rule, combo, r),
                                mapper=mapper)
            gamma_t = calibrate_threshold(cv.outcomes[cv.best_index])
            model = _fit_one_shot(rule, cv.best, x, y, spec, cfg, split_seed(seed, "fit", rule, combo, r))
            selected[(rule, combo)] = model.with_threshold(gamma_t)
            logging.debug(S.RULE_SELECTED.format(rule=rule, combo=combo, alpha=cv.best.alpha,
                                                 layout=cv.best.layout, gamma_t=gamma_t))
    return selected


def select_one_shot_rules(dataset: LabeledDataset, cfg: ExperimentConfig, seed: Optional[int] = None,
                          jobs: int = 1, realization: int = 0) -> Dict[Tuple[str, str], TrainedModel]:
    """Selected and calibrated models for one realization (the first by default)."""
    seed = cfg.run.seed if seed is None else seed
    combos = combinations_for(cfg.oneshot.combinations, dataset, sequential=False)
    rules = [r for r in cfg.oneshot.rules if r in ONESHOT_ML_RULES]
    train, _ = _one_shot_split(dataset.groups()[realization], _train_fraction(dataset, cfg), seed, realization)
    return _select_on_split(train, combos, rules, cfg, seed, realization, partial(run_parallel, jobs=jobs))


def _refit(chosen: TrainedModel, x, y, cfg: ExperimentConfig, seed: int) -> TrainedModel:
    """Retrain with the hyperparameters of an already selected model."""
    candidate = Candidate(chosen.alpha)
    model = _fit_one_shot(chosen.kind, candidate, x, y, chosen.feature_spec, cfg, seed, network=chosen.network)
    return model.with_threshold(chosen.gamma_t)


def run_one_shot(cfg: ExperimentConfig, dataset: Optional[LabeledDataset] = None, seed: Optional[int] = None,
                 jobs: int = 1, selected: Optional[Dict[Tuple[str, str], TrainedModel]] = None) -> ExperimentReport:
    """Train, validate and test inside every realization; metrics averaged over realizations.

    With `selected` models (or ONESHOT_SELECT_ONCE) the hyperparameters and thresholds are
    frozen and each realization only retrains.
    """
    started = time.monotonic()
    seed = cfg.run.seed if seed is None else seed
    dataset = dataset if dataset is not None else build_one_shot_dataset(cfg, seed, jobs)
    if selected is None and cfg.oneshot.select_once:
        selected = select_one_shot_rules(dataset, cfg, seed, jobs)
    ctx = RadioContext.from_config(cfg)
    params = ctx.gp_params()
    combos = combinations_for(cfg.oneshot.combinations, dataset, sequential=False)
    learned = [r for r in cfg.oneshot.rules if r in ONESHOT_ML_RULES]
    fraction = _train_fraction(dataset, cfg)
    groups = dataset.groups()
    # nested pools only when there is a single realization to spread
    inner = partial(run_parallel, jobs=jobs) if len(groups) == 1 else None

    def realization(r: int) -> Dict[Tuple[str, str], SoftOutputs]:
        train, test = _one_shot_split(groups[r], fraction, seed, r)
        labels = test["label"].to_numpy(dtype=int)
        rates = capped_pairs(test, ctx.dual_band)
        out: Dict[Tuple[str, str], SoftOutputs] = {}
        if "TBBA" in cfg.oneshot.rules:
            tbba = tbba_decide(test["s_c_db"].to_numpy(), params, test["d_m"].to_numpy())
            out[("TBBA", "")] = SoftOutputs(np.asarray(tbba.probability, dtype=float), labels, rates, True)
        if "CM_ONLY" in cfg.oneshot.rules:
            out[("CM_ONLY", "")] = SoftOutputs(np.zeros(labels.size), labels, rates, False)
        if selected is None:
            models = _select_on_split(train, combos, learned, cfg, seed, r, inner)
        else:
            models = {}
            for (rule, combo), chosen in selected.items():
                if combo not in combos:
                    continue
                x_train = assemble_features(train, chosen.feature_spec)
                models[(rule, combo)] = _refit(chosen, x_train, train["label"].to_numpy(dtype=int), cfg,
                                               split_seed(seed, "fit", rule, combo, r))
        for key, model in models.items():
            soft = predict(model, assemble_features(test, model.feature_spec))
            out[key] = SoftOutputs(np.asarray(soft), labels, rates, False, model.gamma_t)
        return out

    per_realization = run_parallel(realization, range(len(groups)), jobs)

    rows: List[ResultRow] = []
    for combo in combos:
        for rule in cfg.oneshot.rules:
            key = (rule, "") if rule in ("TBBA", "CM_ONLY") else (rule, combo)
            if key not in per_realization[0]:
                continue
            per = [_row(rule, combo, outs[key], outs[key].gamma_t, 0, 0, seed) for outs in per_realization]
            # gamma_t is reported as the mean of the per-realization thresholds
            rows.append(ResultRow(rule, combo, 0, float(np.mean([p.gamma_t for p in per])), 0,
                                  float(np.mean([p.ba_error for p in per])),
                                  float(np.mean([p.rate_loss for p in per])),
                                  int(sum(p.n_test for p in per)), int(seed)))
    elapsed = time.monotonic() - started
    logging.info(S.EXPERIMENT_DONE.format(name="one-shot", rows=len(rows), seconds=elapsed))
    return ExperimentReport(rows, dataset.label_balance, seed, cfg.to_lines(), elapsed)


# ----------------- Sequential protocol -----------------

def _sequence_arrays(seq: pd.DataFrame, spec: FeatureSpec):
    return assemble_features(seq, FeatureSpec(spec.combination, 0, spec.name)), seq["label"].to_numpy(dtype=int)


def _windowed_rows(seq: pd.DataFrame, spec: FeatureSpec, horizon: int):
    """Windowed inputs for frames t in [Q, T-U-1] and their labels at t+U."""
    n_rows = len(seq) - spec.window - horizon
    if n_rows <= 0:
        return np.empty((0, spec.width)), np.empty(0, dtype=int)
    x = assemble_features(seq, spec)[:n_rows]
    y = seq["label"].to_numpy(dtype=int)[spec.window + horizon:]
    return x, y


def _lstm_outcome(model: TrainedModel, seqs: Sequence[pd.DataFrame], horizon: int) -> Optional[ValidationOutcome]:
    softs, labels = [], []
    for seq in seqs:
        if len(seq) <= horizon:
            continue
        x, y = _sequence_arrays(seq, model.feature_spec)
        soft = predict(model, x)[0]
        softs.append(soft[: len(seq) - horizon])
        labels.append(y[horizon:])
    if not softs:
        logging.warning(S.VALIDATION_EMPTY.format(n=len(seqs), horizon=horizon))
        return None
    soft, label = np.concatenate(softs), np.concatenate(labels)
    return ValidationOutcome(cross_entropy(soft, label), soft, label)


def _train_lstm_rule(seqs: Sequence[pd.DataFrame], spec: FeatureSpec, network: str, schedule: str,
                     horizon: int, cfg: ExperimentConfig, seed: int) -> TrainedModel:
    arrays = [_sequence_arrays(s, spec) for s in seqs]
    net = resolve_network(network, spec.n_features)
    tc = TrainConfig.schedule(schedule, cfg.train, seed=seed)
    return train_lstm([a for a, _ in arrays], [l for _, l in arrays], net, tc, horizon, spec, schedule=schedule)


def _split_sequences(dataset: LabeledDataset, cfg: ExperimentConfig, seed: int):
    seqs = dataset.groups()
    fraction = cfg.seq.train_fraction
    if dataset.provenance == "ingested" and len(seqs) > 1:
        fraction = min(cfg.seq.trace_train_sequences, len(seqs) - 1) / len(seqs)
    train_idx, test_idx = split_indices(len(seqs), fraction, split_seed(seed, "seq-split"))
    return [seqs[i] for i in train_idx], [seqs[i] for i in test_idx]


def train_sequential_rules(dataset: LabeledDataset, cfg: ExperimentConfig, seed: Optional[int] = None,
                           horizons: Optional[Sequence[int]] = None, rules: Optional[Sequence[str]] = None,
                           combinations: Optional[Sequence[str]] = None, window: Optional[int] = None,
                           jobs: int = 1) -> Dict[Tuple[str, str, int], TrainedModel]:
    """Train every learned sequential rule per (combination, U) on the training sequences."""
    seed = cfg.run.seed if seed is None else seed
    horizons = tuple(cfg.seq.horizons if horizons is None else horizons)
    rules = [r for r in (cfg.seq.rules if rules is None else rules) if r in SEQ_ML_RULES]
    window = cfg.seq.window if window is None else window
    combos = combinations_for(cfg.seq.combinations if combinations is None else combinations, dataset, True)
    train_seqs, _ = _split_sequences(dataset, cfg, seed)
    cv_count = cfg.seq.trace_cv_sequences if dataset.provenance == "ingested" else cfg.seq.cv_sequences
    mapper = partial(run_parallel, jobs=jobs)
    models: Dict[Tuple[str, str, int], TrainedModel] = {}

    for horizon in horizons:
        for combo, features in combos.items():
            spec = FeatureSpec(features, 0, combo)
            if "LSTM_std" in rules:
                models[("LSTM_std", combo, horizon)] = _train_lstm_rule(
                    train_seqs, spec, cfg.seq.lstm_std, "shuffled", horizon, cfg,
                    split_seed(seed, "lstm-std", combo, horizon))
            if "LSTM_opd" in rules:
                candidates = [(net, sched) for net in cfg.seq.lstm_menu for sched in cfg.seq.lstm_schedules]

                def score(cand, tr, va, r, spec=spec, horizon=horizon):
                    model = _train_lstm_rule([train_seqs[i] for i in tr], spec, cand[0], cand[1], horizon, cfg,
                                             split_seed(seed, "lstm-cv", spec.name, horizon, r))
                    return _lstm_outcome(model, [train_seqs[i] for i in va], horizon)

                cv = monte_carlo_cv(len(train_seqs), candidates, score, repeats=cfg.cv.seq_repeats,
                                    val_count=cv_count, seed=split_seed(seed, "lstm-cv", combo, horizon),
                                    mapper=mapper)
                network, schedule = cv.best
                models[("LSTM_opd", combo, horizon)] = _train_lstm_rule(
                    train_seqs, spec, network, schedule, horizon, cfg, split_seed(seed, "lstm-opd", combo, horizon))
                logging.info(S.LSTM_SELECTED.format(combo=combo, horizon=horizon, network=network, schedule=schedule))
            windowed = FeatureSpec(features, window, combo)
            if {"NN_H", "GR_H"} & set(rules):
                rows = [_windowed_rows(s, windowed, horizon) for s in train_seqs]
                x = np.vstack([r[0] for r in rows])
                y = np.concatenate([r[1] for r in rows])
                tc = TrainConfig(lr=cfg.train.lr, max_epochs=cfg.oneshot.nn_epochs,
                                 seed=split_seed(seed, "nn-h", combo, horizon, window))
                if "NN_H" in rules:
                    models[("NN_H", combo, horizon)] = train_mlp(x, y, mlp_spec(cfg.seq.nn_hidden), cfg.seq.nn_alpha,
                                                                 tc, windowed, kind="NN_H")
                if "GR_H" in rules:
                    gr_cfg = TrainConfig(lr=cfg.train.lr, max_epochs=cfg.train.gr_max_epochs, tol=cfg.train.tol,
                                         seed=split_seed(seed, "gr-h", combo, horizon, window))
                    models[("GR_H", combo, horizon)] = train_logistic(x, y, cfg.seq.nn_alpha, gr_cfg, windowed,
                                                                      kind="GR_H")
    return models


def _gp_outputs(seqs: Sequence[pd.DataFrame], params: GpRuleParams, dual_band: DualBandConfig,
                horizon: int, window: int, jobs: int) -> Dict[str, SoftOutputs]:
    def one(seq: pd.DataFrame):
        positions = seq[["x_m", "y_m"]].to_numpy(dtype=float)
        s_c = seq["s_c_db"].to_numpy(dtype=float)
        s_m = seq["s_m_db"].to_numpy(dtype=float)
        frames = range(window, len(seq) - horizon)
        exact, approx = [], []
        for t in frames:
            history = History.from_sequence(positions, s_c, s_m, t, window, horizon)
            exact.append(exact_success_prob(history, params))
            approx.append(approx_success_prob(history, params))
        return np.array(exact), np.array(approx)

    results = run_parallel(one, seqs, jobs)
    labels, rates = _targets(seqs, dual_band, horizon, window)
    return {
        "GP": SoftOutputs(np.concatenate([r[0] for r in results]), labels, rates, True),
        "GP_App": SoftOutputs(np.concatenate([r[1] for r in results]), labels, rates, True),
    }


def _targets(seqs: Sequence[pd.DataFrame], dual_band: DualBandConfig, horizon: int, window: int):
    """Labels and capped rates at t+U for every evaluated frame t in [Q, T-U-1]."""
    labels, rates = [], []
    for seq in seqs:
        if len(seq) - window - horizon <= 0:
            continue
        future = seq.iloc[window + horizon:]
        labels.append(future["label"].to_numpy(dtype=int))
        rates.append(capped_pairs(future, dual_band))
    if not labels:
        return np.empty(0, dtype=int), np.empty((0, 2))
    return np.concatenate(labels), np.vstack(rates)


def _ml_outputs(model: TrainedModel, seqs: Sequence[pd.DataFrame], dual_band: DualBandConfig,
                horizon: int, window: int) -> SoftOutputs:
    labels, rates = _targets(seqs, dual_band, horizon, window)
    softs = []
    for seq in seqs:
        n_rows = len(seq) - window - horizon
        if n_rows <= 0:
            continue
        if model.kind == "LSTM":
            x, _ = _sequence_arrays(seq, model.feature_spec)
            softs.append(predict(model, x)[0][window:window + n_rows])
        else:
            x, _ = _windowed_rows(seq, model.feature_spec, horizon)
            softs.append(np.asarray(predict(model, x)))
    soft = np.concatenate(softs) if softs else np.empty(0)
    return SoftOutputs(soft, labels, rates, False)


def sequential_outputs(dataset: LabeledDataset, cfg: ExperimentConfig, models: Dict[Tuple[str, str, int], TrainedModel],
                       seed: Optional[int] = None, horizons: Optional[Sequence[int]] = None,
                       rules: Optional[Sequence[str]] = None, combinations: Optional[Sequence[str]] = None,
                       window: Optional[int] = None, jobs: int = 1) -> Dict[Tuple[str, str, int], SoftOutputs]:
    """Soft outputs on the test sequences, keyed by (rule, combination, U)."""
    seed = cfg.run.seed if seed is None else seed
    horizons = tuple(cfg.seq.horizons if horizons is None else horizons)
    rules = list(cfg.seq.rules if rules is None else rules)
    window = cfg.seq.window if window is None else window
    combos = combinations_for(cfg.seq.combinations if combinations is None else combinations, dataset, True)
    _, test_seqs = _split_sequences(dataset, cfg, seed)
    ctx = RadioContext.from_config(cfg)
    outputs: Dict[Tuple[str, str, int], SoftOutputs] = {}
    for horizon in horizons:
        gp = {}
        if set(GP_RULES) & set(rules):
            gp = _gp_outputs(test_seqs, ctx.gp_params(horizon, window), ctx.dual_band, horizon, window, jobs)
        for combo in combos:
            for rule in rules:
                if rule in GP_RULES:
                    outputs[(rule, combo, horizon)] = gp[rule]
                elif (rule, combo, horizon) in models:
                    outputs[(rule, combo, horizon)] = _ml_outputs(models[(rule, combo, horizon)], test_seqs,
                                                                  ctx.dual_band, horizon, window)
    return outputs


def _rows_at(outputs: Dict[Tuple[str, str, int], SoftOutputs], gamma_t: float, window: int,
             seed: int) -> List[ResultRow]:
    return [_row(rule, combo, out, gamma_t, horizon, window, seed)
            for (rule, combo, horizon), out in outputs.items() if out.labels.size]


def run_sequential(cfg: ExperimentConfig, dataset: Optional[LabeledDataset] = None, seed: Optional[int] = None,
                   jobs: int = 1, models: Optional[Dict[Tuple[str, str, int], TrainedModel]] = None,
                   horizons: Optional[Sequence[int]] = None) -> ExperimentReport:
    """Train on 70% of the sequences, score every rule on the rest at each horizon."""
    started = time.monotonic()
    seed = cfg.run.seed if seed is None else seed
    dataset = dataset if dataset is not None else build_sequential_dataset(cfg, seed, jobs)
    if models is None:
        models = train_sequential_rules(dataset, cfg, seed, horizons=horizons, jobs=jobs)
    outputs = sequential_outputs(dataset, cfg, models, seed, horizons=horizons, jobs=jobs)
    rows = _rows_at(outputs, 0.5, cfg.seq.window, seed)
    elapsed = time.monotonic() - started
    logging.info(S.EXPERIMENT_DONE.format(name="sequential", rows=len(rows), seconds=elapsed))
    return ExperimentReport(rows, dataset.label_balance, seed, cfg.to_lines(), elapsed)


# ----------------- Sweeps -----------------

def sweep(axis: str, cfg: ExperimentConfig, dataset: Optional[LabeledDataset] = None, seed: Optional[int] = None,
          jobs: int = 1, values: Optional[Sequence] = None) -> ExperimentReport:
    """Curves of every rule along U, gamma_t or the observation window Q."""
    started = time.monotonic()
    seed = cfg.run.seed if seed is None else seed
    sw = cfg.sweep
    if axis not in ("U", "gamma_t", "Q"):
        raise DomainError(S.SWEEP_AXIS_UNKNOWN.format(axis=axis))
    values = list(values if values is not None else {"U": sw.u, "gamma_t": sw.gamma_t, "Q": sw.q}[axis])
    if not values:
        raise DomainError(S.SWEEP_EMPTY.format(axis=axis))
    if dataset is None:
        dataset = (build_circular_dataset if axis == "Q" else build_sequential_dataset)(cfg, seed, jobs)
    common = dict(rules=sw.rules, combinations=sw.combinations, jobs=jobs)
    rows: List[ResultRow] = []

    if axis == "U":
        models = train_sequential_rules(dataset, cfg, seed, horizons=values, **common)
        outputs = sequential_outputs(dataset, cfg, models, seed, horizons=values, **common)
        rows = _rows_at(outputs, 0.5, cfg.seq.window, seed)
    elif axis == "gamma_t":
        models = train_sequential_rules(dataset, cfg, seed, horizons=[sw.u_fixed], **common)
        outputs = sequential_outputs(dataset, cfg, models, seed, horizons=[sw.u_fixed], **common)
        for gamma_t in values:
            rows += _rows_at(outputs, float(gamma_t), cfg.seq.window, seed)
    else:
        lstm_rules = [r for r in sw.rules if r.startswith("LSTM")]
        lstm_models = train_sequential_rules(dataset, cfg, seed, horizons=[sw.u_fixed], rules=lstm_rules,
                                             combinations=sw.combinations, jobs=jobs) if lstm_rules else {}
        for window in values:
            models = dict(lstm_models)
            windowed_rules = [r for r in sw.rules if r in ("NN_H", "GR_H")]
            if windowed_rules:
                models.update(train_sequential_rules(dataset, cfg, seed, horizons=[sw.u_fixed], rules=windowed_rules,
                                                     combinations=sw.combinations, window=int(window), jobs=jobs))
            outputs = sequential_outputs(dataset, cfg, models, seed, horizons=[sw.u_fixed], window=int(window),
                                         **common)
            rows += _rows_at(outputs, 0.5, int(window), seed)

    elapsed = time.monotonic() - started
    logging.info(S.EXPERIMENT_DONE.format(name=f"{axis}-sweep", rows=len(rows), seconds=elapsed))
    return ExperimentReport(rows, dataset.label_balance, seed, cfg.to_lines(), elapsed)
