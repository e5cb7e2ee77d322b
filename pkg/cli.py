"""
Command-line front end: generate, ingest, train, eval, sweep and summary.

Design choices:
- Configuration comes only from --config files (dotenv format) plus explicit flags
- Every subcommand writes into --out; files are written atomically by store
- Domain failures exit with status 2, unexpected ones with status 1
"""

from typing import Dict, Optional, Sequence
import argparse
import logging
import os
import sys

import numpy as np
import torch

from channel import dual_band_from_config, rate
from config import DATASET_KINDS, SWEEP_AXES, ExperimentConfig, load_config, write_fragment
from errors import BandAssignError, SchemaError
from evaluation import (
    LabeledDataset,
    build_dataset,
    run_one_shot,
    run_sequential,
    select_one_shot_rules,
    sweep,
    train_sequential_rules,
)
from gp_rules import fit_pathloss_two_segment, fit_shadowing_params, shadowing_residuals
from mobility import geometry_from_config
import store
from strings import Strings as S

DATASET_FILE = "dataset.csv"
FITTED_FILE = "fitted.env"
MODELS_DIR = "models"
RESULTS_FILE = "results.csv"


# ----------------- Helpers -----------------

def _overrides(args: argparse.Namespace) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise SchemaError(S.CLI_BAD_SET.format(item=item))
        values[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        values["RUN_SEED"] = str(args.seed)
    if getattr(args, "jobs", None) is not None:
        values["RUN_JOBS"] = str(args.jobs)
    if getattr(args, "kind", None):
        values["DATASET_KIND"] = args.kind
    if getattr(args, "axis", None):
        values["SWEEP_AXIS"] = args.axis
    return values


def _load(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config, _overrides(args))
    if cfg.run.jobs > 1:
        torch.set_num_threads(1)
    logging.info(S.CONFIG_RESOLVED.format(hash=cfg.config_hash(), seed=cfg.run.seed, jobs=cfg.run.jobs))
    return cfg


def _out(args: argparse.Namespace, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _dataset(args: argparse.Namespace) -> LabeledDataset:
    if not args.dataset:
        raise SchemaError(S.CLI_DATASET_REQUIRED)
    return store.load_dataset(args.dataset)


# ----------------- Subcommands -----------------

def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _load(args)
    dataset = build_dataset(cfg, cfg.run.seed, cfg.run.jobs)
    store.save_dataset(dataset, _out(args, DATASET_FILE))
    return 0


def ingest_trace(trace_path: str, cfg: ExperimentConfig, fit_pre_exponent: bool = False):
    """Validate a trace, recompute rates and labels, and fit GP parameters to it."""
    frame, meta = store.read_table(trace_path, store.TRACE_COLUMNS, require_header=False)
    dual_band = dual_band_from_config(cfg.band)
    geom = geometry_from_config(cfg)
    n = len(frame)
    if n == 0:
        raise SchemaError(S.CSV_EMPTY.format(path=trace_path))

    # 1. Geometry and indexing columns absent from the trace
    positions = frame[["x_m", "y_m"]].to_numpy(dtype=float)
    if "seq_id" not in frame:
        frame["seq_id"] = np.arange(n)
    if "frame" not in frame:
        frame["frame"] = 0
    if "t_s" not in frame:
        frame["t_s"] = 0.0
    if "d_m" not in frame:
        frame["d_m"] = geom.distance(positions)
    if "theta_rad" not in frame:
        frame["theta_rad"] = geom.angle(positions)

    # 2. Rates and labels always come from the SNR columns
    frame["rate_c_bps"] = rate(dual_band.c, frame["snr_c_db"].to_numpy())
    frame["rate_m_bps"] = rate(dual_band.m, frame["snr_m_db"].to_numpy())
    labels = (frame["rate_m_bps"] > frame["rate_c_bps"]).astype(int)
    if "label" in frame:
        overridden = int(np.count_nonzero(frame["label"].to_numpy() != labels.to_numpy()))
        if overridden:
            logging.warning(S.LABELS_OVERRIDDEN.format(n=overridden))
    frame["label"] = labels
    for col, feature in (("delay_s", "delay"), ("aod_rad", "aod")):
        if frame[col].isna().any():
            logging.warning(S.FEATURE_ABSENT.format(name=feature))

    # 3. Path loss per band, then shadowing residuals and their correlation model
    d = frame["d_m"].to_numpy(dtype=float)
    fitted = {}
    residuals = {}
    for prefix, band in (("c", dual_band.c), ("m", dual_band.m)):
        snr_db = frame[f"snr_{prefix}_db"].to_numpy(dtype=float)
        model = fit_pathloss_two_segment(d, snr_db + band.noise_power, band.tx_power,
                                         fit_pre_exponent=fit_pre_exponent,
                                         pre_exponent=getattr(cfg.pathloss, f"{prefix}_pre_exponent"),
                                         min_dist=cfg.pathloss.min_dist_m)
        residuals[prefix] = shadowing_residuals(d, snr_db, band, model)
        frame[f"s_{prefix}_db"] = residuals[prefix]
        up = prefix.upper()
        fitted.update({
            f"PATHLOSS_{up}_INTERCEPT_DB": model.intercept_db,
            f"PATHLOSS_{up}_BREAK_DIST_M": model.break_dist,
            f"PATHLOSS_{up}_EXPONENT": model.post_break_exponent,
            f"PATHLOSS_{up}_PRE_EXPONENT": model.pre_break_exponent,
        })

    dataset = LabeledDataset(
        frame=frame,
        kind=meta.get("kind", cfg.dataset.kind),
        provenance="ingested",
        realization_size=int(meta.get("realization_size", "0") or 0),
        seed=cfg.run.seed,
        config_hash=cfg.config_hash(),
    )
    shadow = fit_shadowing_params(positions, residuals["c"], residuals["m"], groups=dataset.group_keys(),
                                  seed=cfg.run.seed)
    fitted.update({
        "SHADOW_SIGMA_C_DB": shadow.sigma_c,
        "SHADOW_SIGMA_M_DB": shadow.sigma_m,
        "SHADOW_RHO": shadow.rho,
        "SHADOW_DCOR_C_M": shadow.dcor_c,
        "SHADOW_DCOR_M_M": shadow.dcor_m,
        "SHADOW_NU": shadow.nu,
    })
    return dataset, fitted


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _load(args)
    dataset, fitted = ingest_trace(args.trace, cfg, fit_pre_exponent=args.fit_pre_exponent)
    store.save_dataset(dataset, _out(args, DATASET_FILE))
    fragment = _out(args, FITTED_FILE)
    if os.path.exists(fragment):
        os.remove(fragment)
    write_fragment(fragment, fitted)
    logging.info(S.INGEST_DONE.format(rows=len(dataset), path=fragment))
    return 0


def _train(cfg: ExperimentConfig, dataset: LabeledDataset) -> Dict:
    if dataset.kind == "oneshot":
        return select_one_shot_rules(dataset, cfg, cfg.run.seed, cfg.run.jobs)
    return train_sequential_rules(dataset, cfg, cfg.run.seed, jobs=cfg.run.jobs)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load(args)
    models = _train(cfg, _dataset(args))
    store.save_models(models, _out(args, MODELS_DIR), config_hash=cfg.config_hash(), seed=cfg.run.seed)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load(args)
    dataset = _dataset(args)
    models = store.load_models(args.models) if args.models else None
    if dataset.kind == "oneshot":
        selected = None if models is None else {k: m for k, m in models.items() if len(k) == 2}
        report = run_one_shot(cfg, dataset, cfg.run.seed, cfg.run.jobs, selected=selected)
    else:
        trained = None if models is None else {k: m for k, m in models.items() if len(k) == 3}
        report = run_sequential(cfg, dataset, cfg.run.seed, cfg.run.jobs, models=trained)
    store.save_results(report, _out(args, RESULTS_FILE), cfg.config_hash())
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load(args)
    dataset = store.load_dataset(args.dataset) if args.dataset else None
    report = sweep(cfg.sweep.axis, cfg, dataset, cfg.run.seed, cfg.run.jobs)
    store.save_results(report, _out(args, f"sweep_{cfg.sweep.axis}.csv"), cfg.config_hash())
    return 0


def cmd_summary(args: argparse.Namespace) -> int:
    dataset = _dataset(args)
    info = store.summarize_dataset(dataset)
    print(S.SUMMARY_HEADER.format(path=args.dataset, kind=dataset.kind, provenance=dataset.provenance))
    for key, value in info.items():
        print(S.SUMMARY_LINE.format(key=key, value=value))
    return 0


# ----------------- Parser -----------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bandassign", description=S.CLI_DESCRIPTION)
    parser.add_argument("--verbose", action="store_true", help=S.HELP_VERBOSE)
    subparsers = parser.add_subparsers(dest="command", required=True)

    def common(sub: argparse.ArgumentParser, dataset: bool = False) -> None:
        sub.add_argument("--config", action="append", default=[], help=S.HELP_CONFIG)
        sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help=S.HELP_SET)
        sub.add_argument("--out", default=".", help=S.HELP_OUT)
        sub.add_argument("--seed", type=int, help=S.HELP_SEED)
        sub.add_argument("--jobs", type=int, help=S.HELP_JOBS)
        if dataset:
            sub.add_argument("--dataset", help=S.HELP_DATASET)

    generate = subparsers.add_parser("generate", help=S.HELP_GENERATE)
    common(generate)
    generate.add_argument("--kind", choices=DATASET_KINDS, help=S.HELP_KIND)
    generate.set_defaults(func=cmd_generate)

    ingest = subparsers.add_parser("ingest", help=S.HELP_INGEST)
    common(ingest)
    ingest.add_argument("trace", help=S.HELP_TRACE)
    ingest.add_argument("--kind", choices=DATASET_KINDS, help=S.HELP_KIND)
    ingest.add_argument("--fit-pre-exponent", action="store_true", help=S.HELP_FIT_PRE)
    ingest.set_defaults(func=cmd_ingest)

    train = subparsers.add_parser("train", help=S.HELP_TRAIN)
    common(train, dataset=True)
    train.set_defaults(func=cmd_train)

    evaluate = subparsers.add_parser("eval", help=S.HELP_EVAL)
    common(evaluate, dataset=True)
    evaluate.add_argument("--models", help=S.HELP_MODELS)
    evaluate.set_defaults(func=cmd_eval)

    sweep_cmd = subparsers.add_parser("sweep", help=S.HELP_SWEEP)
    common(sweep_cmd, dataset=True)
    sweep_cmd.add_argument("--axis", choices=SWEEP_AXES, help=S.HELP_AXIS)
    sweep_cmd.set_defaults(func=cmd_sweep)

    summary = subparsers.add_parser("summary", help=S.HELP_SUMMARY)
    summary.add_argument("--dataset", required=True, help=S.HELP_DATASET)
    summary.set_defaults(func=cmd_summary)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        level=logging.DEBUG if args.verbose else logging.INFO,
    )
    try:
        return args.func(args)
    except BandAssignError as exc:
        logging.error(S.CLI_FAILED.format(command=args.command, error=exc))
        return 2
    except Exception:
        logging.exception(S.CLI_CRASHED.format(command=args.command))
        return 1


if __name__ == "__main__":
    sys.exit(main())
