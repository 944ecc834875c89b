"""Delimited report tables written by the command-line tool, their readers,
and a plain-text bar rendering of contributions.

Floats are written with ``repr`` so every table reads back bit-for-bit.
"""

from __future__ import annotations

import csv
import io

import numpy as np

from .errors import ParseError

MONITOR_COLUMNS = ("sample_index", "t2", "spe", "t2_limit", "spe_limit", "flagged")
CONTRIBUTION_COLUMNS = ("index", "variable", "f", "contribution", "frequency", "active")
SUMMARY_COLUMNS = ("key", "value")


def _num(v) -> str:
    # +0.0 folds negative zero so equal reports print identically
    return repr(float(v) + 0.0)


def _write(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _read(text: str, header, source=None) -> list:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows or tuple(rows[0]) != tuple(header):
        raise ParseError(f"expected header {','.join(header)}", path=source, row=1)
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(r)}", path=source, row=i)
    return rows[1:]


def _field(conv, value, source, row, column):
    try:
        return conv(value)
    except ValueError:
        raise ParseError(f"bad value {value!r}", path=source, row=row, column=column) from None


def format_monitor(t2, spe, t2_limit, spe_limit, flagged) -> str:
    rows = [[i, _num(a), _num(b), _num(t2_limit), _num(spe_limit), int(f)]
            for i, (a, b, f) in enumerate(zip(t2, spe, flagged))]
    return _write(MONITOR_COLUMNS, rows)


def parse_monitor(text: str, source=None) -> dict:
    """Columns of a monitoring report as arrays keyed by column name."""
    rows = _read(text, MONITOR_COLUMNS, source)
    convs = (int, float, float, float, float, lambda s: bool(int(s)))
    cols = {c: [] for c in MONITOR_COLUMNS}
    for i, r in enumerate(rows, start=2):
        for j, (c, conv) in enumerate(zip(MONITOR_COLUMNS, convs)):
            cols[c].append(_field(conv, r[j], source, i, j + 1))
    return {c: np.array(v) for c, v in cols.items()}


def format_contributions(names, f, contributions, frequency, active) -> str:
    act = set(active)
    rows = [[j, name, _num(f[j]), _num(contributions[j]), _num(frequency[j]), int(j in act)]
            for j, name in enumerate(names)]
    return _write(CONTRIBUTION_COLUMNS, rows)


def parse_contributions(text: str, source=None) -> dict:
    rows = _read(text, CONTRIBUTION_COLUMNS, source)
    out = {"index": [], "variable": [], "f": [], "contribution": [], "frequency": [], "active": []}
    for i, r in enumerate(rows, start=2):
        out["index"].append(_field(int, r[0], source, i, 1))
        out["variable"].append(r[1])
        for j, key in ((2, "f"), (3, "contribution"), (4, "frequency")):
            out[key].append(_field(float, r[j], source, i, j + 1))
        out["active"].append(_field(lambda s: bool(int(s)), r[5], source, i, 6))
    return {k: (v if k == "variable" else np.array(v)) for k, v in out.items()}


def format_summary(items) -> str:
    """Key/value table; floats via ``repr``, sequences joined with ``;``."""
    rows = []
    for key, value in items:
        if isinstance(value, bool):
            value = int(value)
        elif isinstance(value, (float, np.floating)):
            value = _num(value)
        elif isinstance(value, (list, tuple)):
            value = ";".join(str(v) for v in value)
        rows.append([key, value])
    return _write(SUMMARY_COLUMNS, rows)


def parse_summary(text: str, source=None) -> dict:
    """Key/value table back into a dict of strings."""
    return {k: v for k, v in _read(text, SUMMARY_COLUMNS, source)}


def format_samples(sample_index, names, results, statistics, limit) -> str:
    """One fault vector per sample (per-sample isolation)."""
    header = ("sample_index", "lambda", "reconstructed_statistic", "within_limit", "converged",
              *names)
    rows = []
    for i, r, s in zip(sample_index, results, statistics):
        rows.append([int(i), _num(r.lam), _num(s), int(s <= limit), int(r.converged),
                     *(_num(v) for v in r.f)])
    return _write(header, rows)


def parse_samples(text: str, source=None) -> dict:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows or tuple(rows[0][:5]) != ("sample_index", "lambda", "reconstructed_statistic",
                                          "within_limit", "converged"):
        raise ParseError("not a per-sample fault table", path=source, row=1)
    names = rows[0][5:]
    out = {"variable_names": names, "sample_index": [], "lambda": [], "f": []}
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(rows[0]):
            raise ParseError(f"expected {len(rows[0])} fields, got {len(r)}", path=source, row=i)
        out["sample_index"].append(_field(int, r[0], source, i, 1))
        out["lambda"].append(_field(float, r[1], source, i, 2))
        out["f"].append([_field(float, v, source, i, j + 6) for j, v in enumerate(r[5:])])
    return {k: (v if k == "variable_names" else np.array(v)) for k, v in out.items()}


def render_bars(names, values, width: int = 40, marks=()) -> str:
    """Horizontal text bars scaled to the largest value; ``marks`` get a ``*``."""
    values = np.abs(np.asarray(values, dtype=float))
    top = float(values.max()) if values.size else 0.0
    pad = max((len(n) for n in names), default=0)
    marks = set(marks)
    lines = []
    for j, (name, v) in enumerate(zip(names, values)):
        n = int(round(width * v / top)) if top > 0 else 0
        lines.append(f"{name:>{pad}} {'*' if j in marks else ' '} |{'#' * n:<{width}}| {v:.4g}")
    return "\n".join(lines) + "\n"
