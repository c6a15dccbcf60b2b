"""Plain CSV exchange for numeric matrices.

Comma separated, decimal point, optional single header row (detected by a
non-numeric first line). Numbers are written with 17 significant digits so
doubles survive a round trip.
"""

import csv
import math
from pathlib import Path

import numpy as np


class CsvError(ValueError):
    pass


def _parse(cell):
    v = float(cell)
    if not math.isfinite(v):
        raise ValueError(cell)
    return v


def read_matrix(path):
    """Read a numeric CSV file.

    Returns
    -------
    X : ndarray, (n, p)
    header : list of str or None
    """
    path = Path(path)
    if not path.is_file():
        raise CsvError(f"{path}: no such file")
    with path.open(newline="") as fh:
        lines = [(i + 1, row) for i, row in enumerate(csv.reader(fh)) if any(c.strip() for c in row)]
    if not lines:
        return np.zeros((0, 0)), None
    header = None
    first = lines[0][1]
    try:
        [_parse(c) for c in first]
    except ValueError:
        header = [c.strip() for c in first]
        lines = lines[1:]
    width = len(header) if header is not None else len(first)
    rows = []
    for lineno, row in lines:
        if len(row) != width:
            raise CsvError(f"{path}: line {lineno}: expected {width} fields, found {len(row)}")
        vals = []
        for col, cell in enumerate(row, start=1):
            try:
                vals.append(_parse(cell.strip()))
            except ValueError:
                raise CsvError(f"{path}: line {lineno}, column {col}: not a finite number: {cell!r}") from None
        rows.append(vals)
    if not rows:
        return np.zeros((0, width)), header
    return np.array(rows, dtype=float), header


def format_number(v):
    return f"{float(v):.17g}"


def write_matrix(path, M, header=None):
    M = np.asarray(M, dtype=float)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in np.atleast_2d(M) if M.size else []:
            w.writerow([format_number(v) for v in row])


def write_rows(path, columns, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)
