"""CSV export (raw, seed-aggregated, Uniform-normalized) and reading back."""
from __future__ import annotations

import csv
import io
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .runner import METRIC_FIELDS, ResultTable

RAW_COLUMNS = ("config_hash", "policy", "seed", "step") + METRIC_FIELDS
SWEEP_COLUMNS = ("axis", "axis_value")
BASELINE = "uniform"


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _columns(table: ResultTable, base) -> tuple:
    swept = table.axis is not None or any("axis" in r for r in table.rows)
    return (SWEEP_COLUMNS + tuple(base)) if swept else tuple(base)


def _write(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(row[c]) for c in header])
    path.write_text(buf.getvalue())
    return path


def export_csv(table: ResultTable, path) -> Path:
    """One row per (run, recorded step)."""
    return _write(path, _columns(table, RAW_COLUMNS), table.rows)


def _group_key(row):
    return (row.get("axis"), row.get("axis_value"), row["config_hash"], row["policy"], row["step"])


def aggregate_rows(table: ResultTable) -> list[dict]:
    groups: OrderedDict = OrderedDict()
    for row in table.rows:
        groups.setdefault(_group_key(row), []).append(row)
    out = []
    for (axis, value, chash, policy, step), rows in groups.items():
        agg = {"axis": axis, "axis_value": value, "config_hash": chash, "policy": policy, "step": step}
        for f in METRIC_FIELDS:
            vals = np.array([r[f] for r in rows], dtype=float)
            agg[f + "_mean"] = float(vals.mean())
            agg[f + "_std"] = float(vals.std())
        out.append(agg)
    return out


AGG_COLUMNS = ("config_hash", "policy", "step") + tuple(f"{f}_{s}" for f in METRIC_FIELDS for s in ("mean", "std"))


def export_aggregated(table: ResultTable, path) -> Path:
    return _write(path, _columns(table, AGG_COLUMNS), aggregate_rows(table))


NORM_COLUMNS = ("config_hash", "policy", "step") + tuple(f"{f}_ratio" for f in METRIC_FIELDS)


def normalized_rows(table: ResultTable, baseline: str = BASELINE) -> list[dict]:
    """Seed-mean metrics divided by the baseline policy's at the same step and axis value."""
    agg = aggregate_rows(table)
    base = {(r["axis_value"], r["step"]): r for r in agg if r["policy"] == baseline}
    out = []
    for r in agg:
        ref = base.get((r["axis_value"], r["step"]))
        if ref is None:
            continue
        row = {k: r[k] for k in ("axis", "axis_value", "config_hash", "policy", "step")}
        for f in METRIC_FIELDS:
            denom = ref[f + "_mean"]
            row[f + "_ratio"] = r[f + "_mean"] / denom if denom != 0 else float("nan")
        out.append(row)
    return out


def export_normalized(table: ResultTable, path, baseline: str = BASELINE) -> Path:
    return _write(path, _columns(table, NORM_COLUMNS), normalized_rows(table, baseline))


def _convert(value: str):
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


def read_csv(path) -> ResultTable:
    """Inverse of ``export_csv``; numbers come back as int or float."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RAW_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = []
        for raw in reader:
            row = {}
            for k, v in raw.items():
                if k in ("config_hash", "policy", "axis"):
                    row[k] = v
                elif k in ("seed", "step"):
                    row[k] = int(v)
                elif k == "axis_value":
                    row[k] = _convert(v)
                else:
                    row[k] = float(v)
            rows.append(row)
    axis = rows[0].get("axis") if rows else None
    return ResultTable(rows=rows, axis=axis)


def write_results(table: ResultTable, outdir, stem: str = "results") -> dict:
    outdir = Path(outdir)
    paths = {
        "raw": export_csv(table, outdir / f"{stem}_raw.csv"),
        "aggregated": export_aggregated(table, outdir / f"{stem}_aggregated.csv"),
    }
    if BASELINE in table.policies:
        paths["normalized"] = export_normalized(table, outdir / f"{stem}_normalized.csv")
    return paths
