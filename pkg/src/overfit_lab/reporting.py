"""CSV / JSON emission, plot-data tables and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
from pathlib import Path

import numpy as np

from .errors import ValidationError

PLOT_COLUMNS = {
    "replication_vs_t1": ["t1", "sr_eis", "sr_eoos", "replication_ratio"],
    "replication_vs_p": ["m", "p", "t1", "k", "replication_ratio"],
    "heatmap_sr_t1": ["sr_true", "t1", "replication_ratio"],
    "kan_comparison": ["m", "model", "p", "theta", "t", "sr_is", "sr_oos", "replication_ratio"],
    "resample_bins": ["axis", "bin", "n", "x_mean", "x_lo", "x_hi",
                      "emp_ratio_of_means", "emp_ratio_of_means_se", "emp_mean_of_ratios",
                      "emp_mean_of_ratios_se", "ana_ratio_of_means", "ana_ratio_of_means_se",
                      "ana_mean_of_ratios", "diff_se", "mean_sr_is", "mean_sr_oos",
                      "mean_sr_eis", "mean_sr_eoos"],
}


def _clean(v):
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if v is None:
        return ""
    return v


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> Path:
    path = Path(path)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_repr(_clean(r.get(c, ""))) for c in columns])
    return path


def _repr(v):
    if isinstance(v, float):
        return repr(v)
    return v


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return to_jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(to_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_ndjson(path, records) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(to_jsonable(r), sort_keys=True) + "\n")
    return path


def emit_plot_data(result: list[dict], kind: str, path) -> Path:
    """Long-format CSV for one of the known plot kinds; rows must carry the kind's columns."""
    if kind not in PLOT_COLUMNS:
        raise ValidationError(f"unknown plot kind {kind!r}; expected one of {sorted(PLOT_COLUMNS)}")
    cols = PLOT_COLUMNS[kind]
    for i, row in enumerate(result):
        missing = [c for c in cols if c not in row]
        if missing:
            raise ValidationError(f"{kind}: row {i} is missing columns {missing}")
    return write_csv(path, result, cols)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def manifest(command: str, config: dict, seed, inputs: list[str], outputs: list[str]) -> dict:
    from . import __version__
    return {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "inputs": {str(p): file_sha256(p) for p in inputs},
        "outputs": sorted(os.path.basename(str(p)) for p in outputs),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
