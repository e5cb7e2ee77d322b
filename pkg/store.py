"""
Data Access Layer for datasets, results and model artifacts on disk.

Design choices:
- Datasets and results are CSV with a versioned `# key=value` comment header
- Parsed datasets are cached for 5 minutes keyed by (path, mtime)
- Every write goes to a temp file in the target directory followed by os.replace
- Models are a torch state dict (.pt, weights_only loadable) plus a JSON manifest
"""

from typing import Dict, List, Optional, Tuple
import csv
import json
import logging
import os
import tempfile

import numpy as np
import pandas as pd
import torch
from cachetools import TTLCache

from errors import SchemaError
from evaluation import DATASET_COLUMNS, RESULT_COLUMNS, ExperimentReport, LabeledDataset
from ml_rules import BandNet, FeatureSpec, NetworkSpec, Standardizer, TrainedModel
from strings import Strings as S

DATASET_SCHEMA = ("bandassign-dataset", 1, 0)
RESULTS_SCHEMA = ("bandassign-results", 1, 0)
MODEL_SCHEMA = ("bandassign-model", 1, 0)

# Columns an external trace must carry; everything else can be recomputed
TRACE_COLUMNS = ("x_m", "y_m", "snr_c_db", "snr_m_db")
OPTIONAL_COLUMNS = ("delay_s", "aod_rad")
INT_COLUMNS = ("seq_id", "frame", "label")

# Cache parsed datasets for 5 minutes (300 seconds)
_dataset_cache = TTLCache(maxsize=16, ttl=300)


# ----------------- Helpers -----------------

def _schema_tag(schema: Tuple[str, int, int]) -> str:
    name, major, minor = schema
    return f"{name}/{major}.{minor}"


def _atomic_write(path: str, payload, binary: bool = False) -> None:
    """Write via a temp file in the same directory, then rename over path."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        text_args = {} if binary else {"encoding": "utf-8", "newline": ""}
        with os.fdopen(fd, "wb" if binary else "w", **text_args) as fh:
            if callable(payload):
                payload(fh)
            else:
                fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_header(path: str) -> Tuple[Dict[str, str], List[str], int]:
    """Comment metadata, the `# KEY=value` lines in order, and the number of comment lines."""
    meta: Dict[str, str] = {}
    extra: List[str] = []
    count = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            count += 1
            body = line[1:].strip()
            key, sep, value = body.partition("=")
            if not sep:
                continue
            if key.isupper():
                extra.append(body)
            else:
                meta[key.strip()] = value.strip()
    return meta, extra, count


def _check_schema(meta: Dict[str, str], expected: Tuple[str, int, int], path: str, required: bool = True) -> None:
    tag = meta.get("schema")
    if tag is None:
        if required:
            raise SchemaError(S.SCHEMA_MISSING.format(path=path))
        return
    name, _, version = tag.partition("/")
    major = version.split(".")[0]
    if name != expected[0] or major != str(expected[1]):
        raise SchemaError(S.SCHEMA_UNSUPPORTED.format(path=path, schema=tag, expected=_schema_tag(expected)))


def _scan_field_counts(path: str, skip: int) -> List[str]:
    """Header fields; raises with line numbers on rows whose field count differs."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.readlines()[skip:]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration as exc:
        raise SchemaError(S.CSV_EMPTY.format(path=path)) from exc
    bad = [skip + 1 + i + 1 for i, row in enumerate(reader) if row and len(row) != len(header)]
    if bad:
        raise SchemaError(S.CSV_MALFORMED.format(path=path, lines=bad[:10]), line_numbers=bad)
    return [h.strip() for h in header]


def _coerce_numeric(raw: pd.DataFrame, path: str, skip: int, optional: Tuple[str, ...]) -> pd.DataFrame:
    """Numeric frame; non-numeric cells and empty required cells are reported by file line."""
    out = pd.DataFrame(index=raw.index)
    bad_rows = set()
    for col in raw.columns:
        text = raw[col].str.strip()
        values = pd.to_numeric(text, errors="coerce")
        bad = values.isna() & (text != "")
        if col not in optional:
            bad |= text == ""
        bad_rows.update(np.flatnonzero(bad.to_numpy()).tolist())
        out[col] = values
    if "label" in out:
        invalid = ~out["label"].isin([0, 1]) & out["label"].notna()
        bad_rows.update(np.flatnonzero(invalid.to_numpy()).tolist())
    if bad_rows:
        lines = [skip + 2 + i for i in sorted(bad_rows)]
        raise SchemaError(S.CSV_MALFORMED.format(path=path, lines=lines[:10]), line_numbers=lines)
    return out


# ----------------- Datasets -----------------

def save_dataset(dataset: LabeledDataset, path: str) -> None:
    header = [
        f"# schema={_schema_tag(DATASET_SCHEMA)}",
        f"# provenance={dataset.provenance}",
        f"# kind={dataset.kind}",
        f"# realization_size={dataset.realization_size}",
        f"# seed={'' if dataset.seed is None else dataset.seed}",
        f"# config_hash={dataset.config_hash}",
    ]
    frame = dataset.frame.reindex(columns=DATASET_COLUMNS)

    def write(fh):
        fh.write("\n".join(header) + "\n")
        frame.to_csv(fh, index=False, na_rep="", lineterminator="\n")

    _atomic_write(path, write)
    _dataset_cache.clear()
    logging.info(f"Wrote {len(frame)} rows to {path}")


def read_table(path: str, required: Tuple[str, ...], require_header: bool = True) -> Tuple[pd.DataFrame, Dict[str, str]]:
    """Validated numeric table from a dataset or trace CSV."""
    if not os.path.exists(path):
        raise SchemaError(S.FILE_MISSING.format(path=path))
    meta, _, skip = _read_header(path)
    _check_schema(meta, DATASET_SCHEMA, path, required=require_header)
    header = _scan_field_counts(path, skip)
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(S.COLUMNS_MISSING.format(path=path, columns=missing))
    raw = pd.read_csv(path, skiprows=skip, dtype=str, keep_default_na=False, skipinitialspace=True)
    raw.columns = [c.strip() for c in raw.columns]
    frame = _coerce_numeric(raw, path, skip, OPTIONAL_COLUMNS)
    for col in OPTIONAL_COLUMNS:
        if col not in frame:
            frame[col] = np.nan
    for col in INT_COLUMNS:
        if col in frame:
            frame[col] = frame[col].astype(int)
    return frame, meta


def load_dataset(path: str) -> LabeledDataset:
    """Load a dataset written by save_dataset (or the generate command)."""
    key = (os.path.abspath(path), os.stat(path).st_mtime_ns if os.path.exists(path) else 0)

    # 1. Check cache first
    cached = _dataset_cache.get(key)
    if cached is not None:
        logging.debug(f"Cache HIT for dataset {path}")
        return _copy(cached)

    # 2. Cache MISS - parse and validate
    logging.debug(f"Cache MISS for dataset {path}")
    frame, meta = read_table(path, tuple(c for c in DATASET_COLUMNS if c not in OPTIONAL_COLUMNS))
    seed = meta.get("seed", "")
    dataset = LabeledDataset(
        frame=frame.reindex(columns=DATASET_COLUMNS),
        kind=meta.get("kind", "oneshot"),
        provenance=meta.get("provenance", "stochastic"),
        realization_size=int(meta.get("realization_size", "0") or 0),
        seed=int(seed) if seed else None,
        config_hash=meta.get("config_hash", ""),
    )
    _dataset_cache[key] = dataset
    return _copy(dataset)


def _copy(dataset: LabeledDataset) -> LabeledDataset:
    return LabeledDataset(dataset.frame.copy(), dataset.kind, dataset.provenance, dataset.realization_size,
                          dataset.seed, dataset.config_hash)


def summarize_dataset(dataset: LabeledDataset) -> Dict[str, float]:
    """Row and group counts, label balance and per-band shadowing spread."""
    frame = dataset.frame
    return {
        "rows": int(len(frame)),
        "groups": int(len(np.unique(dataset.group_keys()))),
        "label_balance": dataset.label_balance,
        "sigma_c_db": float(frame["s_c_db"].std(ddof=1)) if len(frame) > 1 else float("nan"),
        "sigma_m_db": float(frame["s_m_db"].std(ddof=1)) if len(frame) > 1 else float("nan"),
        "has_delay": bool(frame["delay_s"].notna().all()),
        "has_aod": bool(frame["aod_rad"].notna().all()),
    }


# ----------------- Results -----------------

def save_results(report: ExperimentReport, path: str, config_hash: str) -> None:
    """Results CSV with schema, config hash, seed and the resolved config in the header."""
    frame = report.to_frame().sort_values(["rule", "combination", "U", "Q", "gamma_t"], kind="stable",
                                           na_position="first")
    lines = [
        f"# schema={_schema_tag(RESULTS_SCHEMA)}",
        f"# config_hash={config_hash}",
        f"# seed={report.seed}",
        f"# label_balance={report.label_balance:.6f}",
    ]
    lines += [f"# {line}" for line in report.config_lines]

    def write(fh):
        fh.write("\n".join(lines) + "\n")
        frame.to_csv(fh, index=False, float_format="%.6f", na_rep="", lineterminator="\n")

    _atomic_write(path, write)
    logging.info(f"Wrote {len(frame)} result rows to {path}")


def load_results(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise SchemaError(S.FILE_MISSING.format(path=path))
    meta, _, skip = _read_header(path)
    _check_schema(meta, RESULTS_SCHEMA, path)
    frame = pd.read_csv(path, skiprows=skip)
    missing = [c for c in RESULT_COLUMNS if c not in frame.columns]
    if missing:
        raise SchemaError(S.COLUMNS_MISSING.format(path=path, columns=missing))
    return frame


# ----------------- Models -----------------

def model_filename(key: Tuple) -> str:
    """File stem for a model key: (rule, combination) or (rule, combination, U)."""
    rule, combo = key[0], key[1]
    stem = f"{rule}_{combo}"
    return f"{stem}_U{key[2]}" if len(key) > 2 else stem


def save_model(model: TrainedModel, directory: str, key: Tuple, *, config_hash: str, seed: int) -> str:
    """Write <stem>.json (+ <stem>.pt for torch models); returns the manifest path."""
    stem = os.path.join(directory, model_filename(key))
    manifest = {
        "schema": _schema_tag(MODEL_SCHEMA),
        "config_hash": config_hash,
        "seed": int(seed),
        "rule": key[0],
        "combination": key[1],
        "protocol": "sequential" if len(key) > 2 else "oneshot",
        "U": int(key[2]) if len(key) > 2 else None,
        "kind": model.kind,
        "feature_spec": {"combination": list(model.feature_spec.combination),
                         "window": model.feature_spec.window, "name": model.feature_spec.name},
        "network": None if model.network is None else {"name": model.network.name,
                                                       "layers": [list(l) for l in model.network.layers]},
        "standardizer": {"mean": model.standardizer.mean.tolist(), "scale": model.standardizer.scale.tolist(),
                         "keep": model.standardizer.keep.tolist()},
        "gamma_t": model.gamma_t,
        "alpha": model.alpha,
        "horizon": model.horizon,
        "schedule": model.schedule,
        "coef": None if model.coef is None else model.coef.tolist(),
        "intercept": model.intercept,
    }
    if model.module is not None:
        state = {k: v.detach().cpu() for k, v in model.module.state_dict().items()}
        _atomic_write(stem + ".pt", lambda fh: torch.save(state, fh), binary=True)
    _atomic_write(stem + ".json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return stem + ".json"


def load_model(manifest_path: str) -> Tuple[Tuple, TrainedModel]:
    """Rebuild a TrainedModel and its key from a manifest (and its .pt weights)."""
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(S.MODEL_UNREADABLE.format(path=manifest_path)) from exc
    _check_schema(manifest, MODEL_SCHEMA, manifest_path)

    spec = manifest["feature_spec"]
    feature_spec = FeatureSpec(tuple(spec["combination"]), int(spec["window"]), spec["name"])
    std = manifest["standardizer"]
    standardizer = Standardizer(np.asarray(std["mean"], dtype=float), np.asarray(std["scale"], dtype=float),
                                np.asarray(std["keep"], dtype=bool))
    network = None
    module = None
    if manifest["network"] is not None:
        network = NetworkSpec(tuple((k, int(w)) for k, w in manifest["network"]["layers"]),
                              manifest["network"]["name"])
        module = BandNet(network, standardizer.n_outputs)
        weights_path = os.path.splitext(manifest_path)[0] + ".pt"
        try:
            module.load_state_dict(torch.load(weights_path, weights_only=True))
        except (OSError, RuntimeError) as exc:
            raise SchemaError(S.MODEL_UNREADABLE.format(path=weights_path)) from exc
        module.eval()
    model = TrainedModel(
        kind=manifest["kind"],
        feature_spec=feature_spec,
        standardizer=standardizer,
        gamma_t=float(manifest["gamma_t"]),
        network=network,
        module=module,
        coef=None if manifest["coef"] is None else np.asarray(manifest["coef"], dtype=float),
        intercept=float(manifest["intercept"]),
        alpha=float(manifest["alpha"]),
        horizon=int(manifest["horizon"]),
        schedule=manifest["schedule"],
    )
    if manifest["protocol"] == "sequential":
        key = (manifest["rule"], manifest["combination"], int(manifest["U"]))
    else:
        key = (manifest["rule"], manifest["combination"])
    return key, model


def save_models(models: Dict[Tuple, TrainedModel], directory: str, *, config_hash: str, seed: int) -> List[str]:
    os.makedirs(directory, exist_ok=True)
    paths = [save_model(model, directory, key, config_hash=config_hash, seed=seed)
             for key, model in sorted(models.items())]
    logging.info(f"Saved {len(paths)} models to {directory}")
    return paths


def load_models(directory: str) -> Dict[Tuple, TrainedModel]:
    """Every model manifest in a directory, keyed like the evaluation functions expect."""
    if not os.path.isdir(directory):
        raise SchemaError(S.FILE_MISSING.format(path=directory))
    models = {}
    for name in sorted(os.listdir(directory)):
        if name.endswith(".json"):
            key, model = load_model(os.path.join(directory, name))
            models[key] = model
    logging.info(f"Loaded {len(models)} models from {directory}")
    return models
