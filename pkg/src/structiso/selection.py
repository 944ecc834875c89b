"""Regularization grids, the lambda above which nothing is active, and
control-limit based selection of lambda along a path.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .datamodel import as_batch
from .errors import DimensionMismatch, ParseError
from .monitor import ControlLimits, StatisticMatrix
from .solver import AdmmConfig, IsolationResult, reconstruct, reconstruct_samples, solve_path
from .structure import (Clustered, GroupLasso, Lasso, PartialSupport, PenaltySpec,
                        SparseGroupLasso, SplitPenalty, check, split_penalty)


class GridSource(str, enum.Enum):
    INTERVAL = "interval"
    TRANSITION_SCAN = "transition_scan"
    USER = "user"


@dataclass(frozen=True)
class LambdaGrid:
    """Strictly descending, positive candidate weights."""

    candidates: tuple
    source: GridSource = GridSource.USER

    def __post_init__(self):
        c = tuple(float(x) for x in self.candidates)
        if not c:
            raise ValueError("a lambda grid needs at least one candidate")
        if not all(math.isfinite(x) and x > 0 for x in c):
            raise ValueError("lambda candidates must be finite and positive")
        if any(b >= a for a, b in zip(c, c[1:])):
            raise ValueError("lambda candidates must be strictly descending")
        object.__setattr__(self, "candidates", c)
        object.__setattr__(self, "source", GridSource(self.source))

    def __len__(self):
        return len(self.candidates)

    @classmethod
    def from_values(cls, values, source=GridSource.USER) -> "LambdaGrid":
        """Sort and de-duplicate arbitrary positive values into a grid."""
        return cls(tuple(sorted({float(v) for v in values}, reverse=True)), source)


def interval_bounds(m: int, n: int) -> tuple:
    """``[sqrt(ln m / n), pi sqrt(ln m / (2n))]`` (natural log)."""
    if m < 2 or n < 1:
        raise ValueError("need m >= 2 variables and n >= 1 samples")
    lo = math.sqrt(math.log(m) / n)
    return lo, math.pi * math.sqrt(math.log(m) / (2 * n))


def default_grid(m: int, n: int, points: int = 20, lam_max: float | None = None) -> LambdaGrid:
    """Geometric grid over the recommended interval, extended up to ``lam_max``.

    The extension keeps the interval's spacing and stops at the first point
    at or above ``1.01 * lam_max``, so the all-zero solution is always on the
    grid when ``lam_max`` is given.
    """
    if points < 2:
        raise ValueError("points must be at least 2")
    lo, hi = interval_bounds(m, n)
    ratio = (hi / lo) ** (1.0 / (points - 1))
    values = list(np.geomspace(lo, hi, points))
    if lam_max is not None and math.isfinite(lam_max) and lam_max > 0:
        top = 1.01 * lam_max
        while values[-1] < top:
            values.append(values[-1] * ratio)
    return LambdaGrid(tuple(values[::-1]), GridSource.INTERVAL)


def extension_grid(grid: LambdaGrid, points: int = 20, span: float = 1e-2) -> LambdaGrid:
    """Continue ``grid`` below its smallest value at its own spacing, down to
    ``span`` times that value."""
    c = grid.candidates
    if len(c) < 2:
        raise ValueError("need at least two candidates to read the spacing")
    ratio = c[-2] / c[-1]
    n = int(math.floor(math.log(1.0 / span) / math.log(ratio)))
    return LambdaGrid(tuple(c[-1] / ratio ** np.arange(1, n + 1)), grid.source)


def scan_grid(lam_max: float, points: int = 20, span: float = 1e-3) -> LambdaGrid:
    """Geometric grid from ``1.01 * lam_max`` (first transition) down to ``span`` of it."""
    if not (math.isfinite(lam_max) and lam_max > 0):
        raise ValueError("lam_max must be finite and positive")
    if points < 2 or not 0 < span < 1:
        raise ValueError("need points >= 2 and 0 < span < 1")
    top = 1.01 * lam_max
    return LambdaGrid(tuple(np.geomspace(top, top * span, points)), GridSource.TRANSITION_SCAN)


def _matrix(m_mat):
    return m_mat.m_mat if isinstance(m_mat, StatisticMatrix) else np.asarray(m_mat, dtype=float)


def _zero_after_prox(split: SplitPenalty, y: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Rows of ``y`` that the prox of ``lam * penalty`` maps to zero.

    The split groups are nested or disjoint, so the prox is the l1
    soft-threshold followed by the group shrinkages, smallest group first.
    """
    y = np.sign(y) * np.maximum(np.abs(y) - lam[:, None] * split.l1_weights, 0.0)
    y[:, list(split.fixed_zero)] = 0.0
    for v in np.argsort([len(g) for g in split.groups], kind="stable"):
        idx = list(split.groups[v])
        norm = np.linalg.norm(y[:, idx], axis=1)
        t = lam * split.group_weights[v]
        y[:, idx] *= np.maximum(1.0 - t / np.maximum(norm, 1e-300), 0.0)[:, None]
    return ~np.any(y, axis=1)


def _lambda_max_rows(g: np.ndarray, spec: PenaltySpec, m: int, rtol: float) -> np.ndarray:
    if isinstance(spec, Lasso):
        return np.max(np.abs(g), axis=1)
    if isinstance(spec, PartialSupport):
        free = list(spec.support.free)
        return np.max(np.abs(g[:, free]), axis=1) if free else np.zeros(len(g))
    if isinstance(spec, GroupLasso):
        return np.max([np.linalg.norm(g[:, list(b)], axis=1) / w
                       for b, w in zip(spec.partition.blocks, spec.block_weights)], axis=0)
    if isinstance(spec, Clustered) and spec.lam1 > 0:
        ratio = spec.lam2 / spec.lam1
        vals = [np.linalg.norm(g[:, list(b)], axis=1) for b in spec.partition.blocks]
        rest = list(spec.partition.complement)
        if rest:
            top = np.max(np.abs(g[:, rest]), axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                vals.append(np.where(top > 0, top / ratio, 0.0))
        return np.max(vals, axis=0)
    # no closed form: bisect on the prox, all rows at once
    split = split_penalty(spec.with_lambda(1.0), m)
    out = np.zeros(len(g))
    rows = np.flatnonzero(np.any(g[:, split.free] != 0, axis=1))
    if rows.size == 0:
        return out
    g = g[rows]
    hi = np.maximum(np.linalg.norm(g, axis=1), 1e-300)
    for _ in range(1100):
        grow = ~_zero_after_prox(split, g.copy(), hi)
        if not grow.any():
            break
        hi[grow] *= 2.0
    else:
        raise ValueError("zero is never optimal: an unpenalized coordinate carries signal")
    lo = np.zeros_like(hi)
    while np.any(hi - lo > rtol * hi):
        mid = 0.5 * (lo + hi)
        zero = _zero_after_prox(split, g.copy(), mid)
        hi = np.where(zero, mid, hi)
        lo = np.where(zero, lo, mid)
    out[rows] = hi
    return out


def lambda_max(batch, m_mat, spec: PenaltySpec, rtol: float = 1e-12, per_sample: bool = False):
    """Smallest lambda at which ``f = 0`` minimizes the reconstruction objective.

    Zero is optimal exactly when ``2 M xbar`` lies in ``lambda`` times the
    penalty's subdifferential at zero, i.e. when the penalty's prox maps it to
    zero. Families with a closed-form dual norm use it; the others bisect on
    the prox. Returns ``inf`` when an unpenalized coordinate carries signal.
    With ``per_sample`` every sample is its own batch and an array is returned.
    """
    batch = as_batch(batch)
    mat = _matrix(m_mat)
    if mat.shape != (batch.m, batch.m):
        raise DimensionMismatch(f"matrix of shape {mat.shape} for {batch.m}-variable samples")
    check(spec, batch.m)
    x = batch.samples if per_sample else batch.mean[None, :]
    g = 2 * x @ mat
    try:
        out = _lambda_max_rows(g, spec, batch.m, rtol)
    except ValueError:
        out = np.full(len(g), math.inf)
    return out if per_sample else float(out[0])


@dataclass(frozen=True)
class PathEntry:
    lam: float
    result: IsolationResult
    reconstructed_statistic: float
    within_limit: bool


@dataclass(frozen=True)
class Selection:
    """The chosen path entry and the whole path, largest lambda first.

    ``qualified`` is False when no candidate brought the reconstructed
    statistic under the limit; ``chosen`` is then the candidate with the
    smallest reconstructed statistic.
    """

    chosen: PathEntry
    path: tuple
    limit: float
    qualified: bool


def _limit_value(limit, m_mat) -> float:
    if isinstance(limit, ControlLimits):
        if not isinstance(m_mat, StatisticMatrix):
            raise TypeError("pass a StatisticMatrix to pick the matching control limit")
        return limit.for_kind(m_mat.kind)
    return float(limit)


def _choose(entries, limit):
    for e in entries:
        if e.within_limit:
            return Selection(e, tuple(entries), limit, True)
    best = min(entries, key=lambda e: e.reconstructed_statistic)
    return Selection(best, tuple(entries), limit, False)


def select_lambda(batch, m_mat, limit, spec: PenaltySpec, grid: LambdaGrid,
                  cfg: AdmmConfig = AdmmConfig()) -> Selection:
    """Largest grid weight whose reconstructed statistic falls under ``limit``.

    Parameters
    ----------
    batch : SampleBatch or array_like
        Standardized faulty samples; one fault vector is shared by all.
    m_mat : StatisticMatrix or ndarray
    limit : ControlLimits or float
        With :class:`ControlLimits` the limit matching ``m_mat.kind`` is used.
    spec : PenaltySpec
        Family and structure; its own weight is ignored.
    grid : LambdaGrid
    """
    batch = as_batch(batch)
    mat = _matrix(m_mat)
    lim = _limit_value(limit, m_mat)
    rows = solve_path(batch, mat, spec, grid.candidates, cfg)
    xbar = batch.mean
    entries = []
    for lam, (res,) in zip(grid.candidates, rows):
        d = xbar - res.f
        stat = max(float(d @ mat @ d), 0.0)
        entries.append(PathEntry(float(lam), res, stat, stat <= lim))
    return _choose(entries, lim)


def select_lambda_samples(batch, m_mat, limit, spec: PenaltySpec, grid: LambdaGrid,
                          cfg: AdmmConfig = AdmmConfig()) -> list:
    """:func:`select_lambda` applied to every sample as a batch of one.

    A sample's path stops at the first weight that brings it under the
    limit, so each returned path ends at its chosen entry (or runs through
    the whole grid when nothing qualifies).
    """
    batch = as_batch(batch)
    mat = _matrix(m_mat)
    lim = _limit_value(limit, m_mat)
    x = batch.samples

    def stop(lam, index, results):
        d = x[index] - np.array([r.f for r in results])
        return np.einsum("ij,jk,ik->i", d, mat, d) <= lim

    rows = solve_path(batch, mat, spec, grid.candidates, cfg, per_sample=True, stop=stop)
    out = []
    for i in range(batch.k):
        entries = []
        for lam, row in zip(grid.candidates, rows):
            if row[i] is None:
                break
            d = x[i] - row[i].f
            stat = max(float(d @ mat @ d), 0.0)
            entries.append(PathEntry(float(lam), row[i], stat, stat <= lim))
        out.append(_choose(entries, lim))
    return out


PATH_COLUMNS = ("lambda", "objective", "active_size", "reconstructed_statistic",
                "within_limit", "converged", "iterations")


def format_path(selection: Selection) -> str:
    """Delimited table with one record per candidate."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PATH_COLUMNS)
    for e in selection.path:
        r = e.result
        w.writerow([repr(float(e.lam)), repr(float(r.objective)), len(r.active_set),
                    repr(float(e.reconstructed_statistic)), int(e.within_limit), int(r.converged),
                    r.iterations])
    return buf.getvalue()


def parse_path(text: str) -> list:
    """Read a table written by :func:`format_path` back into dicts."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != PATH_COLUMNS:
        raise ParseError("not a lambda path table", row=1)
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(PATH_COLUMNS):
            raise ParseError(f"expected {len(PATH_COLUMNS)} fields, got {len(row)}", row=i)
        try:
            out.append({
                "lambda": float(row[0]), "objective": float(row[1]),
                "active_size": int(row[2]), "reconstructed_statistic": float(row[3]),
                "within_limit": bool(int(row[4])), "converged": bool(int(row[5])),
                "iterations": int(row[6]),
            })
        except ValueError as exc:
            raise ParseError(str(exc), row=i) from None
    return out


# ---------------------------------------------------------------------------
# isolation of a faulty batch

ALPHA_GRID = (0.25, 0.5, 0.75)
MIN_FRACTION = 0.5


class Mode(str, enum.Enum):
    AUTO = "auto"
    POOLED = "pooled"
    PER_SAMPLE = "per-sample"


@dataclass(frozen=True)
class Isolation:
    """Outcome of isolating one faulty batch.

    Pooled runs carry one result; per-sample runs carry each sample's chosen
    result, and a variable is active when it is active in at least
    ``min_fraction`` of them. ``contributions`` is ``|f|`` (pooled) or the
    mean of ``|f_i|`` over samples; ``frequency`` is the share of results in
    which each variable is active.
    """

    mode: Mode
    spec: PenaltySpec
    lam: float
    contributions: np.ndarray
    frequency: np.ndarray
    active_set: tuple
    results: tuple
    selections: tuple
    qualified: bool
    min_fraction: float = MIN_FRACTION

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.results)

    @property
    def f(self) -> np.ndarray:
        """The pooled fault vector, or the per-variable mean over samples."""
        if self.mode is Mode.POOLED:
            return self.results[0].f
        return np.mean([r.f for r in self.results], axis=0)


def mean_within_limit(batch, m_mat, limit) -> bool:
    """Whether the batch mean alone already satisfies the control limit."""
    batch = as_batch(batch)
    mat = _matrix(m_mat)
    xbar = batch.mean
    return float(xbar @ mat @ xbar) <= _limit_value(limit, m_mat)


def _statistic_rows(x, f, mat):
    d = np.atleast_2d(x) - np.atleast_2d(f)
    return np.einsum("ij,jk,ik->i", d, mat, d)


def _pooled(batch, mat, m_mat, lim, spec, lam, grid, cfg, points):
    if lam is not None:
        res = reconstruct(batch, mat, spec.with_lambda(lam), cfg)
        qualified = bool(_statistic_rows(batch.mean, res.f, mat)[0] <= lim)
        sels = ()
    else:
        default = grid is None
        if default:
            grid = default_grid(batch.m, batch.k, points, lambda_max(batch, mat, spec))
        sel = select_lambda(batch, m_mat, lim, spec, grid, cfg)
        if default and not sel.qualified:
            # nothing in the interval reaches the limit; keep going down
            more = select_lambda(batch, m_mat, lim, spec, extension_grid(grid), cfg)
            sel = _choose(sel.path + more.path, lim)
        res, qualified, sels = sel.chosen.result, sel.qualified, (sel,)
    active = np.zeros(batch.m)
    active[list(res.active_set)] = 1.0
    return Isolation(Mode.POOLED, spec.with_lambda(res.lam), res.lam, np.abs(res.f), active,
                     res.active_set, (res,), sels, qualified)


def _per_sample(batch, mat, m_mat, lim, spec, lam, grid, cfg, points, min_fraction):
    if lam is not None:
        results = tuple(reconstruct_samples(batch, mat, spec.with_lambda(lam), cfg))
        f = np.array([r.f for r in results])
        qualified = bool(np.all(_statistic_rows(batch.samples, f, mat) <= lim))
        sels = ()
    else:
        if grid is None:
            top = float(np.max(lambda_max(batch, mat, spec, per_sample=True)))
            if 0 < top < math.inf:
                grid = scan_grid(top, points)
            else:
                grid = default_grid(batch.m, batch.k, points)
        sels = tuple(select_lambda_samples(batch, m_mat, lim, spec, grid, cfg))
        results = tuple(s.chosen.result for s in sels)
        qualified = all(s.qualified for s in sels)
    act = np.zeros((len(results), batch.m))
    for i, r in enumerate(results):
        act[i, list(r.active_set)] = 1.0
    freq = act.mean(axis=0)
    active = tuple(int(i) for i in np.flatnonzero(freq >= min_fraction - 1e-12))
    contrib = np.mean([np.abs(r.f) for r in results], axis=0)
    chosen = float(np.median([r.lam for r in results]))
    return Isolation(Mode.PER_SAMPLE, spec.with_lambda(chosen), chosen, contrib, freq, active,
                     results, sels, qualified, min_fraction)


def isolate(batch, m_mat, limit, spec: PenaltySpec, lam: float | None = None,
            grid: LambdaGrid | None = None, mode=Mode.AUTO, cfg: AdmmConfig = AdmmConfig(),
            alphas=None, min_fraction: float = MIN_FRACTION, points: int = 20) -> Isolation:
    """Isolate the faulty variables of a batch of flagged samples.

    Parameters
    ----------
    batch : SampleBatch or array_like
        Standardized flagged samples.
    m_mat : StatisticMatrix or ndarray
    limit : ControlLimits or float
    spec : PenaltySpec
        Family and structure; its weight is replaced by ``lam`` or by the
        selected one.
    lam : float, optional
        Fixed weight. Without it the weight is selected against the limit,
        over ``grid`` or a default grid.
    mode : {"auto", "pooled", "per-sample"}
        ``auto`` pools the batch unless its mean is already within the limit,
        i.e. unless the fault does not shift the mean (a multiplicative fault
        on zero-mean variables, for instance); then every sample is isolated
        on its own and the active sets are aggregated.
    alphas : sequence of float, optional
        For a sparse group spec, try each mixing weight and keep the sparsest
        qualified outcome (ties go to the earlier alpha).
    min_fraction : float
        Per-sample aggregation: share of samples a variable must be active in.
    points : int
        Size of the default grids.
    """
    batch = as_batch(batch)
    mat = _matrix(m_mat)
    if mat.shape != (batch.m, batch.m):
        raise DimensionMismatch(f"matrix of shape {mat.shape} for {batch.m}-variable samples")
    if lam is not None and not (math.isfinite(lam) and lam >= 0):
        raise ValueError("lambda must be finite and non-negative")
    if not 0 < min_fraction <= 1:
        raise ValueError("min_fraction must lie in (0, 1]")
    lim = _limit_value(limit, m_mat)
    mode = Mode(mode)
    if mode is Mode.AUTO:
        mode = Mode.PER_SAMPLE if mean_within_limit(batch, mat, lim) else Mode.POOLED
    specs = [spec]
    if alphas is not None and isinstance(spec, SparseGroupLasso):
        specs = [replace(spec, alpha=float(a)) for a in alphas]
    best = None
    for sp in specs:
        if mode is Mode.POOLED:
            out = _pooled(batch, mat, m_mat, lim, sp, lam, grid, cfg, points)
        else:
            out = _per_sample(batch, mat, m_mat, lim, sp, lam, grid, cfg, points, min_fraction)
        if best is None or (out.qualified, -len(out.active_set)) > (best.qualified, -len(best.active_set)):
            best = out
    return best
