"""Data matrices, per-variable standardization and CSV ingestion."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConstantColumn, DimensionMismatch, NonFiniteInput, ParseError

MIN_VARIANCE = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DataMatrix:
    """An ``n x m`` block of samples (rows) over named variables (columns)."""

    values: np.ndarray
    variable_names: tuple = field(default=())

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(1, -1)
        if values.ndim != 2:
            raise DimensionMismatch(f"expected a 2-D matrix, got shape {values.shape}")
        n, m = values.shape
        if n < 1 or m < 1:
            raise DimensionMismatch(f"data matrix must be non-empty, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise NonFiniteInput(f"non-finite entry at sample {bad[0]}, variable {bad[1]}")
        names = tuple(self.variable_names) or tuple(f"x{j + 1}" for j in range(m))
        if len(names) != m:
            raise DimensionMismatch(f"{len(names)} variable names for {m} columns")
        if len(set(names)) != m:
            raise ValueError("variable names must be unique")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "variable_names", tuple(str(s) for s in names))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def rows(self, index) -> "DataMatrix":
        return DataMatrix(self.values[index], self.variable_names)


@dataclass(frozen=True)
class Standardizer:
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        means = _frozen(self.means)
        stds = _frozen(self.stds)
        if means.shape != stds.shape or means.ndim != 1:
            raise DimensionMismatch("means and stds must be vectors of equal length")
        if np.any(stds <= 0):
            raise ValueError("standard deviations must be strictly positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    @property
    def m(self) -> int:
        return self.means.shape[0]


@dataclass(frozen=True)
class SampleBatch:
    """Standardized samples pooled for one reconstruction problem."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s.reshape(1, -1)
        if s.ndim != 2 or s.shape[0] < 1:
            raise DimensionMismatch(f"a batch needs at least one sample, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise NonFiniteInput("sample batch contains non-finite values")
        object.__setattr__(self, "samples", _frozen(s))

    @property
    def k(self) -> int:
        return self.samples.shape[0]

    @property
    def m(self) -> int:
        return self.samples.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)


def fit_standardizer(train: DataMatrix) -> Standardizer:
    """Per-column mean and sample standard deviation (divisor ``n - 1``).

    Raises
    ------
    ConstantColumn
        If any column has variance below ``1e-12``. A single-row matrix has no
        sample variance and fails on its first column.
    """
    x = train.values
    if x.shape[0] < 2:
        raise ConstantColumn(0, train.variable_names[0])
    means = x.mean(axis=0)
    var = x.var(axis=0, ddof=1)
    for j, v in enumerate(var):
        if not v >= MIN_VARIANCE:
            raise ConstantColumn(j, train.variable_names[j])
    return Standardizer(means, np.sqrt(var))


def _check_width(s: Standardizer, m: int):
    if m != s.m:
        raise DimensionMismatch(f"standardizer fitted on {s.m} variables, data has {m}")


def standardize(s: Standardizer, x: DataMatrix) -> DataMatrix:
    _check_width(s, x.m)
    return DataMatrix((x.values - s.means) / s.stds, x.variable_names)


def destandardize(s: Standardizer, x: DataMatrix) -> DataMatrix:
    _check_width(s, x.m)
    return DataMatrix(x.values * s.stds + s.means, x.variable_names)


def read_csv(path) -> DataMatrix:
    """Load a header-plus-rows CSV file.

    The first row holds variable names; every other row is one sample using
    ``.`` as the decimal separator. Errors carry the offending 1-based row and
    column.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8 ({exc.reason})", path=path) from None
    return parse_csv(text, source=path)


def parse_csv(text: str, source=None) -> DataMatrix:
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError("file is empty", path=source)
    header = [h.strip() for h in rows[0]]
    if any(not h for h in header):
        raise ParseError("blank variable name in header", path=source, row=1)
    if len(set(header)) != len(header):
        raise ParseError("duplicate variable names in header", path=source, row=1)
    if len(rows) == 1:
        raise ParseError("no data rows after the header", path=source)
    values = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise ParseError(
                f"expected {len(header)} fields, found {len(row)}", path=source, row=i + 2
            )
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"cannot parse {cell!r} as a number", path=source,
                                 row=i + 2, column=j + 1) from None
            if not math.isfinite(v):
                raise ParseError(f"non-finite value {cell!r}", path=source,
                                 row=i + 2, column=j + 1)
            values[i, j] = v
    return DataMatrix(values, tuple(header))


def format_csv(x: DataMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(x.variable_names)
    for row in x.values:
        writer.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def write_csv(x: DataMatrix, path) -> None:
    Path(path).write_text(format_csv(x), encoding="utf-8")


def as_batch(samples: np.ndarray | DataMatrix | Sequence) -> SampleBatch:
    if isinstance(samples, SampleBatch):
        return samples
    if isinstance(samples, DataMatrix):
        return SampleBatch(samples.values)
    return SampleBatch(np.asarray(samples, dtype=float))
