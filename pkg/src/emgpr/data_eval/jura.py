"""Jura heavy-metal data loading.

Accepts either comma-separated files with a header row (as distributed
with the R ``gstat`` package, e.g. ``jura.pred.csv`` / ``jura.val.csv``) or
the GSLIB-format ``prediction.dat`` / ``validation.dat`` files. The first
set holds the 259 training sites, the second the 100 validation sites.
"""

import csv
import os
from pathlib import Path

import numpy as np

from ..exceptions import DataFormatError
from .dataset import Dataset

__all__ = ["load_table", "load_jura", "find_jura_files", "DEFAULT_TARGETS"]

DEFAULT_TARGETS = ("Cd", "Ni", "Zn")

_TRAIN_NAMES = ("prediction.dat", "prediction.csv", "jura.pred.csv", "jura_pred.csv", "juragrid_pred.csv",
                "train.csv", "jura_train.csv")
_TEST_NAMES = ("validation.dat", "validation.csv", "jura.val.csv", "jura_val.csv", "test.csv",
               "jura_test.csv")
_COORDS = ("Xloc", "Yloc")


def _read_rows(path):
    """Header names and (line number, string cells) data rows."""
    text = Path(path).read_text().splitlines()
    if not text:
        raise DataFormatError(f"{path}: empty file")
    first = text[0]
    if "," in first:
        reader = csv.reader(text)
        header = [h.strip().strip('"') for h in next(reader)]
        rows = [(i + 2, [c.strip().strip('"') for c in row]) for i, row in enumerate(reader) if any(row)]
        return header, rows
    # GSLIB: title line, column count, one name per line, then whitespace-separated data
    try:
        ncols = int(text[1].split()[0])
    except (IndexError, ValueError):
        raise DataFormatError(f"{path}: line 2: expected a column count (GSLIB format) or a CSV header")
    header = [text[2 + i].strip().split()[0] for i in range(ncols)]
    start = 2 + ncols
    rows = [(start + i + 1, line.split()) for i, line in enumerate(text[start:]) if line.strip()]
    return header, rows


def load_table(path, targets=DEFAULT_TARGETS):
    """Read one Jura file into a :class:`Dataset` with coordinate inputs."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Jura file not found: {path}")
    header, rows = _read_rows(path)
    lower = [h.lower() for h in header]
    if all(c.lower() in lower for c in _COORDS):
        coord_cols = [lower.index(c.lower()) for c in _COORDS]
    else:
        coord_cols = [0, 1]
    target_cols = []
    for t in targets:
        if t.lower() not in lower:
            raise DataFormatError(f"{path}: missing column {t!r}; columns are {header}")
        target_cols.append(lower.index(t.lower()))

    X, Y = [], []
    for lineno, cells in rows:
        if len(cells) != len(header):
            raise DataFormatError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(cells)}")
        values = []
        for col in coord_cols + target_cols:
            try:
                values.append(float(cells[col]))
            except ValueError:
                raise DataFormatError(
                    f"{path}: line {lineno}, column {header[col]!r}: non-numeric value {cells[col]!r}"
                ) from None
        X.append(values[:2])
        Y.append(values[2:])
    return Dataset(np.array(X), np.array(Y), list(targets), [header[c] for c in coord_cols])


def find_jura_files(path):
    """Locate the training and validation files inside a directory."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"Jura data directory not found: {path}")
    names = {p.name.lower(): p for p in path.iterdir()}
    train = next((names[n] for n in _TRAIN_NAMES if n in names), None)
    test = next((names[n] for n in _TEST_NAMES if n in names), None)
    if train is None or test is None:
        raise FileNotFoundError(
            f"{path}: expected a training file (one of {_TRAIN_NAMES}) and a validation file "
            f"(one of {_TEST_NAMES})"
        )
    return train, test


def load_jura(path, targets=DEFAULT_TARGETS):
    """Training (259 sites) and validation (100 sites) datasets.

    ``path`` is a directory holding both files, or a ``(train, test)``
    pair of file paths.
    """
    if isinstance(path, (str, os.PathLike)):
        train_path, test_path = find_jura_files(path)
    else:
        train_path, test_path = path
    return load_table(train_path, targets), load_table(test_path, targets)
