"""CSV and JSON persistence of run records, sweeps, spectra and theory tables."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable

from ..rmt_theory import THEORY_COLUMNS
from ..spectra import HISTOGRAM_BINS, histogram
from .runner import RunRecord

RUN_COLUMNS = ("alpha_index", "replicate", "seed", "config_hash", "n", "d", "N", "alpha", "eta_scale", "lam",
               "sigma_eps", "student", "student_coeffs", "teacher", "teacher_coeffs", "error")


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return " ".join(repr(float(v)) for v in value)
    return "" if value is None else value


def _write_csv(path: Path, columns: list[str], rows: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])
    return path


def record_row(rec: RunRecord) -> dict:
    """Flatten a record: config fields, then each metric's value and std err, then theory."""
    row = {k: rec.config.get(k) for k in RUN_COLUMNS if k in rec.config}
    row.update(alpha_index=rec.alpha_index, replicate=rec.replicate, seed=rec.seed, config_hash=rec.config_hash,
               error=(rec.error or "").splitlines()[0] if rec.error else "")
    for name, m in rec.measured.items():
        row[name] = m["value"]
        row[f"{name}_se"] = m["std_err"]
    for name, v in (rec.theory or {}).items():
        row[f"theory_{name}"] = v
    return row


def write_runs_csv(records: list[RunRecord], path) -> Path:
    """One row per record. Metric columns are the union across records."""
    if not records:
        raise ValueError("no records to write")
    rows = [record_row(r) for r in records]
    extra = []
    for row in rows:
        for key in row:
            if key not in RUN_COLUMNS and key not in extra:
                extra.append(key)
    return _write_csv(path, list(RUN_COLUMNS) + extra, rows)


def dump_records(records: list[RunRecord]) -> str:
    return json.dumps([r.to_dict() for r in records], indent=1, sort_keys=True)


def load_records(text: str) -> list[RunRecord]:
    return [RunRecord.from_dict(d) for d in json.loads(text)]


def write_runs_json(records: list[RunRecord], path) -> Path:
    if not records:
        raise ValueError("no records to write")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_records(records) + "\n")
    return path


def read_runs_json(path) -> list[RunRecord]:
    return load_records(Path(path).read_text())


def write_sweep_csv(rows: list[dict], path) -> Path:
    """Aggregated alpha-vs-metric series with standard errors (from runner.aggregate)."""
    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    return _write_csv(path, columns or ["alpha"], rows)


def spectrum_filename(alpha: float) -> str:
    return f"spectrum_{alpha:.4f}.csv"


def write_spectrum_csv(svals, alpha: float, out_dir, bins: int = HISTOGRAM_BINS) -> Path:
    """Histogram of scaled singular values: one row per bin."""
    edges, counts = histogram(svals, bins)
    rows = [{"bin_left": float(edges[i]), "bin_right": float(edges[i + 1]), "count": int(counts[i])}
            for i in range(len(counts))]
    return _write_csv(Path(out_dir) / spectrum_filename(alpha), ["bin_left", "bin_right", "count"], rows)


def read_spectrum_csv(path) -> list[dict]:
    with Path(path).open() as fh:
        return [{"bin_left": float(r["bin_left"]), "bin_right": float(r["bin_right"]), "count": int(r["count"])}
                for r in csv.DictReader(fh)]


def write_theory_csv(rows: list[dict], path) -> Path:
    columns = list(THEORY_COLUMNS)
    for row in rows:
        columns += [k for k in row if k not in columns]
    return _write_csv(path, columns, rows)


def write_staircase_csv(rows: list[dict], path) -> Path:
    return _write_csv(path, ["alpha", "ell", "delta"], rows)


def write_table_csv(rows: list[dict], path) -> Path:
    columns: list[str] = []
    for row in rows:
        columns += [k for k in row if k not in columns]
    return _write_csv(path, columns, rows)


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if hasattr(obj, "item"):
        return obj.item()
    if hasattr(obj, "tolist"):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def format_float(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{x:.6g}" if isinstance(x, float) else str(x)
