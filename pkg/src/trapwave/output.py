"""Atomic file output: CSV tables with ``#`` header comments, JSON summaries, field dumps."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np


def atomic_write(path, writer, mode="w"):
    """Call ``writer(fh)`` on a temporary file next to ``path`` and rename it into place.

    Nothing is left at ``path`` if ``writer`` raises.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode) as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_dump(path, dumper):
    """Like :func:`atomic_write` for functions that take a file path, ``dumper(tmp_path)``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        dumper(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "nan" if not np.isfinite(v) else f"{float(v):.12g}"
    return str(v)


def write_csv(path, columns, rows, comments=()):
    """Comma separated table; ``comments`` become leading ``#`` lines, then a ``#`` column line."""
    def w(fh):
        for c in comments:
            fh.write(f"# {c}\n")
        fh.write("# " + ",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(v) for v in r) + "\n")
    return atomic_write(path, w)


def read_csv(path):
    """Inverse of :func:`write_csv` for numeric tables: ``(columns, array)``."""
    lines = Path(path).read_text().splitlines()
    head = [ln for ln in lines if ln.startswith("#")]
    columns = head[-1][1:].strip().split(",") if head else []
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    data = np.array([[float(v) for v in ln.split(",")] for ln in body]) if body else np.zeros((0, len(columns)))
    return columns, data


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path, data):
    return atomic_write(path, lambda fh: json.dump(_jsonable(data), fh, indent=2, ensure_ascii=False))


def write_field(path, field, comments=()):
    """Node dump of a :class:`~trapwave.solver.DiscreteField` as ``x, y, re, im, abs`` rows."""
    return write_csv(path, ["x", "y", "re", "im", "abs"], field.rows(), comments)


def sweep_rows(result):
    """Columns and rows of a sweep table: k, N, M, Re/Im s_mn flattened, sigma_min, defect.

    S blocks smaller than the largest one are padded with ``nan``.
    """
    nmax = max((p.S.N for p in result.points if p.S is not None), default=0)
    cols = ["x", "N", "M"]
    for m in range(nmax):
        for n in range(nmax):
            cols += [f"re_s{m + 1}{n + 1}", f"im_s{m + 1}{n + 1}"]
    cols += ["sigma_min", "unitarity_defect"]
    rows = []
    for p in result.points:
        row = [p.x, p.N, p.M]
        S = p.S.S if p.S is not None else np.zeros((0, 0))
        for m in range(nmax):
            for n in range(nmax):
                if m < S.shape[0] and n < S.shape[1]:
                    row += [S[m, n].real, S[m, n].imag]
                else:
                    row += [np.nan, np.nan]
        row += [p.sigma_min, p.S.defect if p.S is not None else np.nan]
        rows.append(row)
    return cols, rows


def write_sweep(path, result, comments=()):
    cols, rows = sweep_rows(result)
    return write_csv(path, cols, rows, comments)
