"""CSV and JSON interchange for matrices, draws and diagnostics.

Matrices are written as a ``# shape: KxP`` comment line, a header row of
column names and one row per matrix row. Floats use 17 significant digits so
a write/read cycle is exact and reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from pathlib import Path

import numpy as np

from .errors import InputFormatError
from .tilt import DrawMatrix, Provenance, WeightedDraws, ess


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_matrix_csv(path, M, columns=None) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if columns is None:
        columns = [f"c{j + 1}" for j in range(M.shape[1])]
    if len(columns) != M.shape[1]:
        raise ValueError("need one column name per matrix column")
    with open(path, "w", newline="") as fh:
        fh.write(f"# shape: {M.shape[0]}x{M.shape[1]}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in M:
            w.writerow([_fmt(v) for v in row])


def read_matrix_csv(path) -> tuple[np.ndarray, tuple[str, ...]]:
    """Read a matrix CSV; the shape comment is optional but checked when present."""
    shape = None
    rows = []
    header = None
    try:
        with open(path, newline="") as fh:
            for lineno, line in enumerate(fh, 1):
                s = line.strip()
                if not s:
                    continue
                if s.startswith("#"):
                    body = s[1:].strip()
                    if body.lower().startswith("shape:"):
                        try:
                            a, b = body.split(":", 1)[1].lower().split("x")
                            shape = (int(a), int(b))
                        except ValueError as exc:
                            raise InputFormatError(f"{path}:{lineno}: bad shape comment {s!r}") from exc
                    continue
                cells = next(csv.reader([s]))
                if header is None:
                    try:
                        rows.append([float(c) for c in cells])
                        header = tuple(f"c{j + 1}" for j in range(len(cells)))
                    except ValueError:
                        header = tuple(c.strip() for c in cells)
                    continue
                try:
                    rows.append([float(c) for c in cells])
                except ValueError as exc:
                    raise InputFormatError(f"{path}:{lineno}: non-numeric entry") from exc
    except UnicodeDecodeError as exc:
        raise InputFormatError(f"{path}: not a text file") from exc
    if not rows:
        raise InputFormatError(f"{path}: no numeric rows")
    if any(len(r) != len(header) for r in rows):
        raise InputFormatError(f"{path}: ragged rows")
    M = np.array(rows, dtype=float)
    if shape is not None and M.shape != shape:
        raise InputFormatError(f"{path}: shape comment says {shape}, found {M.shape}")
    return M, header


def read_draws_csv(path, provenance: Provenance) -> DrawMatrix:
    M, cols = read_matrix_csv(path)
    if not np.all(np.isfinite(M)):
        raise InputFormatError(f"{path}: draws must be finite")
    return DrawMatrix(M, provenance, None, cols)


def write_draws_csv(path, draws: DrawMatrix, extra: dict | None = None) -> None:
    """Draws plus optional extra columns (e.g. phi, iteration)."""
    cols = list(draws.columns)
    M = draws.draws
    for name, v in (extra or {}).items():
        cols.append(name)
        M = np.column_stack([M, np.asarray(v, dtype=float)])
    write_matrix_csv(path, M, cols)


def write_weighted_csv(path, wd: WeightedDraws) -> Path:
    """Draws plus their ``log_w1`` column; nu and ESS go in a JSON sidecar."""
    write_draws_csv(path, wd.base, {"log_w1": wd.log_w1})
    side = Path(str(path) + ".json")
    write_json(
        side,
        {
            "nu": wd.nu,
            "ess": ess(wd),
            "K": wd.K,
            "provenance": wd.base.provenance.value,
            "seed": wd.base.seed,
        },
    )
    return side


def read_weighted_csv(path) -> WeightedDraws:
    M, cols = read_matrix_csv(path)
    if not cols or cols[-1] != "log_w1":
        raise InputFormatError(f"{path}: last column must be log_w1")
    meta = read_json(str(path) + ".json")
    base = DrawMatrix(M[:, :-1], Provenance(meta["provenance"]), meta.get("seed"), cols[:-1])
    return WeightedDraws(base, M[:, -1], float(meta["nu"]))


def load_phi_table(path) -> tuple[np.ndarray, np.ndarray]:
    """Two-column (phi, mass) CSV; masses are renormalized by the caller."""
    M, _ = read_matrix_csv(path)
    if M.shape[1] != 2:
        raise InputFormatError(f"{path}: phi table needs two columns (phi, mass)")
    return M[:, 0], M[:, 1]


def _clean(obj):
    # JSON has no inf/nan; keep them legible as strings
    if isinstance(obj, float):
        if math.isfinite(obj):
            return obj
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, (np.floating,)):
        return _clean(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_json(obj))


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{path}: {exc}") from exc


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
