"""CSV/JSON persistence for tensors, matrices and tables.

Floats are written with ``repr`` so every value reads back bit-identically.
"""

from __future__ import annotations

import csv
import hashlib
import json
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "fmt",
    "write_csv",
    "read_csv",
    "write_json",
    "read_json",
    "write_matrix",
    "read_matrix",
    "save_tensor",
    "load_tensor",
    "sha256_file",
]


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "isoformat"):
        return obj.isoformat()
    return obj


def write_json(path: str | Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_json(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_matrix(
    path: str | Path,
    M: NDArray,
    row_labels: Sequence,
    col_labels: Sequence[str],
    index_name: str = "row",
) -> Path:
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (len(row_labels), len(col_labels)):
        raise ValueError("labels do not match the matrix shape")
    return write_csv(
        path, [index_name, *col_labels], ([lab, *row] for lab, row in zip(row_labels, M.tolist()))
    )


def read_matrix(path: str | Path) -> tuple[list[str], list[str], NDArray[np.float64]]:
    header, rows = read_csv(path)
    labels = [r[0] for r in rows]
    M = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
    return labels, header[1:], M.reshape(len(rows), len(header) - 1)


def save_tensor(directory: str | Path, t: NDArray, user_ids: Sequence[str], meta: dict | None = None) -> None:
    """Write ``tensor.csv`` (non-zero cells), ``users.csv`` and ``tensor.json``."""
    directory = Path(directory)
    t = np.asarray(t, dtype=np.float64)
    nz = np.nonzero(t)
    write_csv(
        directory / "tensor.csv",
        ["user_index", "day", "week", "value"],
        zip(nz[0].tolist(), nz[1].tolist(), nz[2].tolist(), t[nz].tolist()),
    )
    write_csv(directory / "users.csv", ["user_index", "user_id"], enumerate(user_ids))
    write_json(directory / "tensor.json", {"shape": list(t.shape), **(meta or {})})


def load_tensor(directory: str | Path) -> tuple[NDArray[np.float64], list[str], dict]:
    directory = Path(directory)
    meta = read_json(directory / "tensor.json")
    t = np.zeros(tuple(meta["shape"]))
    _, rows = read_csv(directory / "tensor.csv")
    for i, j, k, v in rows:
        t[int(i), int(j), int(k)] = float(v)
    _, users = read_csv(directory / "users.csv")
    return t, [u[1] for u in users], meta


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
