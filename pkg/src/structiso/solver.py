"""Sparse fault reconstruction by ADMM with scaled duals.

Solves

    min_f  (1/k) sum_i (x_i - f)' M (x_i - f) + penalty(f)

where the penalty is any family from :mod:`structiso.structure`. The l2 group
terms are split off into auxiliary vectors ``V_v`` (one per penalized group),
the elementwise l1 term into ``Z``; ``U_v`` and ``R`` are the scaled duals.

Several independent problems that share ``M`` and the penalty (for instance
every sample of a batch reconstructed on its own) are iterated together: all
iterates carry a leading problem axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .datamodel import SampleBatch, as_batch
from .errors import DimensionMismatch, NonFiniteIterate
from .monitor import StatisticMatrix
from .structure import PenaltySpec, SplitPenalty, penalty_value, split_penalty

_TINY = 1e-12


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 1.2
    epsilon: float = 1e-6
    max_iter: int = 5000

    def __post_init__(self):
        if not 1e-6 <= self.rho <= 1e6:
            raise ValueError(f"rho must lie in [1e-6, 1e6], got {self.rho}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be a positive integer")


@dataclass(frozen=True)
class IsolationResult:
    f: np.ndarray
    active_set: tuple
    objective: float
    iterations: int
    converged: bool
    primal_residual: float
    dual_residual: float
    relative_change: float
    lam: float = float("nan")

    @property
    def contributions(self) -> np.ndarray:
        return np.abs(self.f)


def activity_threshold(f) -> float:
    return 1e-6 * max(1.0, float(np.max(np.abs(f))) if np.size(f) else 1.0)


def active_set(f) -> tuple:
    f = np.asarray(f)
    return tuple(int(i) for i in np.flatnonzero(np.abs(f) > activity_threshold(f)))


# ---------------------------------------------------------------------------
# proximal maps


def prox_group(b, t, axis=-1):
    """Block soft-threshold: 0 if ``||b|| <= t`` else ``(1 - t/||b||) b``.

    ``t`` broadcasts against ``b`` with ``axis`` reduced.
    """
    b = np.asarray(b, dtype=float)
    norm = np.sqrt(np.sum(b * b, axis=axis, keepdims=True))
    t = np.expand_dims(np.asarray(t, dtype=float), axis) if np.ndim(t) else t
    # a zero norm with t > 0 drives the factor far below zero, hence to 0
    return np.maximum(1.0 - t / np.maximum(norm, 1e-300), 0.0) * b


def prox_elementwise(c, r):
    """Soft-threshold each element ``c_g`` by its own threshold ``r_g``."""
    c = np.asarray(c, dtype=float)
    return np.sign(c) * np.maximum(np.abs(c) - r, 0.0)


# ---------------------------------------------------------------------------
# ADMM state and updates


@dataclass
class QuadraticData:
    """Smooth part ``f' Q f - 2 q' f + c`` restricted to the free coordinates.

    ``q`` has one row per independent problem.
    """

    Q: np.ndarray
    q: np.ndarray
    c: np.ndarray


def _quadratic(samples: np.ndarray, m_mat: np.ndarray, free: np.ndarray, per_sample: bool):
    mx = samples @ m_mat
    quad = np.einsum("ij,ij->i", mx, samples)
    if per_sample:
        q, c = mx, quad
    else:
        q, c = mx.mean(axis=0, keepdims=True), np.array([quad.mean()])
    return QuadraticData(m_mat[np.ix_(free, free)], q[:, free], c)


@dataclass
class AdmmState:
    """Iterates of one or more problems sharing ``M``, the penalty and rho.

    Shapes: ``f, z, r`` are ``(p, n_free)``; ``v_groups`` and ``u_groups`` are
    ``(p, n_groups, n_free)`` and vanish outside each group's members.
    ``scale`` multiplies every penalty weight of problem ``i`` by ``scale[i]``,
    which is how one state carries a whole regularization path.
    """

    quad: QuadraticData
    split: SplitPenalty
    rho: float
    free: np.ndarray
    mask: np.ndarray
    thresholds: np.ndarray
    l1: np.ndarray
    factor: tuple
    f: np.ndarray
    v_groups: np.ndarray
    z: np.ndarray
    u_groups: np.ndarray
    r: np.ndarray
    scale: np.ndarray = None
    iteration: int = 0

    def __post_init__(self):
        if self.scale is None:
            self.scale = np.ones(self.f.shape[0])

    @property
    def system_matrix(self) -> np.ndarray:
        cover = self.mask.sum(axis=0)
        return 2 * self.quad.Q + self.rho * np.diag(1.0 + cover)


def init_state(quad: QuadraticData, split: SplitPenalty, rho: float, f0=None,
               scale=None) -> AdmmState:
    """Build the iterates and factor ``2Q + rho (I + sum_v I_Gv)`` once.

    The auxiliary variables start consistent with ``f0`` (``V_v = I_Gv f0``,
    ``Z = f0``, zero when ``f0`` is omitted) and the duals at zero.
    """
    free = split.free
    pos = {g: i for i, g in enumerate(free)}
    n_free = free.size
    groups = [[pos[g] for g in grp if g in pos] for grp in split.groups]
    mask = np.zeros((len(groups), n_free))
    for v, grp in enumerate(groups):
        mask[v, grp] = 1.0
    system = 2 * quad.Q + rho * np.diag(1.0 + mask.sum(axis=0))
    # smallest eigenvalue >= rho, so Cholesky cannot fail for PSD Q
    factor = cho_factor(system, lower=True, check_finite=False)
    p = quad.q.shape[0]
    if f0 is None:
        f = np.zeros((p, n_free))
    else:
        f = np.broadcast_to(np.asarray(f0, dtype=float), (p, n_free)).copy()
    return AdmmState(
        quad=quad, split=split, rho=float(rho), free=free, mask=mask,
        thresholds=np.asarray(split.group_weights, dtype=float), l1=split.l1_weights[free],
        factor=factor, f=f, v_groups=f[:, None, :] * mask, z=f.copy(),
        u_groups=np.zeros((p, len(groups), n_free)), r=np.zeros((p, n_free)),
        scale=np.ones(p) if scale is None else np.broadcast_to(np.asarray(scale, float), (p,)).copy(),
    )


def update_f(state: AdmmState) -> np.ndarray:
    """Closed-form f step: solve the cached system against ``2q + D``."""
    rho = state.rho
    d = rho * ((state.v_groups - state.u_groups).sum(axis=1) + state.z - state.r)
    rhs = 2 * state.quad.q + d
    state.f = cho_solve(state.factor, rhs.T, check_finite=False).T
    return state.f


def update_v(state: AdmmState) -> np.ndarray:
    b = state.f[:, None, :] * state.mask + state.u_groups
    state.v_groups = prox_group(b, np.outer(state.scale, state.thresholds) / state.rho)
    return state.v_groups


def update_z(state: AdmmState) -> np.ndarray:
    state.z = prox_elementwise(state.f + state.r, np.outer(state.scale, state.l1) / state.rho)
    return state.z


def update_duals(state: AdmmState):
    state.u_groups = state.u_groups + state.f[:, None, :] * state.mask - state.v_groups
    state.r = state.r + state.f - state.z
    return state.u_groups, state.r


def primal_residual(state: AdmmState) -> np.ndarray:
    gv = state.f[:, None, :] * state.mask - state.v_groups
    return np.sqrt(np.sum(gv * gv, axis=(1, 2)) + np.sum((state.f - state.z) ** 2, axis=1))


def _relative_change(new, old, norm=None):
    d = new - old
    diff = np.sqrt(np.einsum("ij,ij->i", d, d))
    norm = np.linalg.norm(new, axis=1) if norm is None else norm
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(norm > _TINY, diff / np.where(norm > _TINY, norm, 1.0), np.inf)
    # 0/0: the iterate sits at (and stays at) zero
    return np.where((norm <= _TINY) & (diff <= _TINY), 0.0, rel)


def _select(state: AdmmState, idx) -> AdmmState:
    q = state.quad
    return AdmmState(
        quad=QuadraticData(q.Q, q.q[idx], q.c[idx]), split=state.split, rho=state.rho,
        free=state.free, mask=state.mask, thresholds=state.thresholds, l1=state.l1,
        factor=state.factor, f=state.f[idx], v_groups=state.v_groups[idx], z=state.z[idx],
        u_groups=state.u_groups[idx], r=state.r[idx], scale=state.scale[idx],
    )


@dataclass
class _RunStats:
    iterations: np.ndarray
    converged: np.ndarray
    rel_change: np.ndarray
    primal: np.ndarray
    dual: np.ndarray


def zero_is_optimal(state: AdmmState) -> np.ndarray:
    """Per problem, whether ``f = 0`` already minimizes the objective.

    Zero is optimal iff the penalty's prox maps ``-grad(0) = 2q`` to zero.
    The split groups are nested or disjoint, so that prox is the l1
    soft-threshold followed by the group shrinkages, smallest group first.
    """
    y = prox_elementwise(2 * state.quad.q, state.scale[:, None] * state.l1)
    sizes = state.mask.sum(axis=1)
    for v in np.argsort(sizes, kind="stable"):
        members = state.mask[v] > 0
        t = state.scale * state.thresholds[v]
        y[:, members] = prox_group(y[:, members], t)
    return ~np.any(y, axis=1)


def run_admm(state: AdmmState, epsilon: float, max_iter: int, screen: bool = False) -> _RunStats:
    """Iterate until every problem passes the relative-change test.

    Converged problems are frozen and dropped from further updates. With
    ``screen``, problems for which :func:`zero_is_optimal` holds are set to
    zero up front and reported as converged after 0 iterations.
    """
    p = state.f.shape[0]
    stats = _RunStats(np.zeros(p, int), np.zeros(p, bool), np.full(p, np.inf),
                      np.full(p, np.nan), np.full(p, np.nan))
    active = np.arange(p)
    work = state
    if screen:
        zero = zero_is_optimal(state)
        if zero.any():
            state.f[zero] = 0.0
            state.z[zero] = 0.0
            state.v_groups[zero] = 0.0
            stats.converged[zero] = True
            stats.rel_change[zero] = stats.primal[zero] = stats.dual[zero] = 0.0
            active = np.flatnonzero(~zero)
            if active.size == 0:
                return stats
            work = _select(state, active)
    n_con = state.f.shape[1] + state.mask.sum()
    for it in range(1, max_iter + 1):
        f_old, v_old, z_old = work.f, work.v_groups, work.z
        update_f(work)
        if not np.isfinite(work.f).all():
            raise NonFiniteIterate(f"ADMM iterates became non-finite at iteration {it}")
        # one sweep of the V, Z and dual steps sharing I_Gv f
        fm = work.f[:, None, :] * work.mask
        work.v_groups = prox_group(fm + work.u_groups,
                                   work.scale[:, None] * work.thresholds / work.rho)
        update_z(work)
        gv = fm - work.v_groups
        fz = work.f - work.z
        work.u_groups = work.u_groups + gv
        work.r = work.r + fz
        primal = np.sqrt(np.einsum("ijk,ijk->i", gv, gv) + np.einsum("ij,ij->i", fz, fz))
        fsq = np.einsum("ij,ij->i", work.f, work.f)
        tol = epsilon * (np.sqrt(n_con) + np.sqrt(np.einsum("ijk,ijk->i", fm, fm) + fsq))
        rel = _relative_change(work.f, f_old, np.sqrt(fsq))
        done = (rel <= epsilon) & (primal <= tol)
        if done.any() or it == max_iter:
            finish = np.flatnonzero(done) if it < max_iter else np.arange(active.size)
            _write_back(state, work, active[finish], finish)
            idx = active[finish]
            stats.iterations[idx] = it
            stats.converged[idx] = done[finish]
            stats.rel_change[idx] = rel[finish]
            stats.primal[idx] = primal[finish]
            dz = work.z[finish] - z_old[finish]
            dv = (work.v_groups[finish] - v_old[finish]).sum(axis=1)
            stats.dual[idx] = work.rho * np.linalg.norm(dz + dv, axis=1)
            keep = np.flatnonzero(~done)
            if keep.size == 0 or it == max_iter:
                break
            active = active[keep]
            work = _select(work, keep)
    state.iteration = int(stats.iterations.max())
    return stats


def _write_back(state, work, dest, src):
    if state is work:
        return
    state.f[dest] = work.f[src]
    state.v_groups[dest] = work.v_groups[src]
    state.z[dest] = work.z[src]
    state.u_groups[dest] = work.u_groups[src]
    state.r[dest] = work.r[src]


def sparse_estimate(state: AdmmState) -> np.ndarray:
    """Fault vectors read off the exactly-sparse auxiliary variables.

    Coordinates carrying an l1 weight take ``Z``; group-only coordinates take
    their smallest penalized group's ``V``; unpenalized ones keep ``f``. Any
    group whose ``V`` is exactly zero zeroes its members. Known-zero
    coordinates are exactly zero.
    """
    p = state.f.shape[0]
    est = state.f.copy()
    has_l1 = state.l1 > 0
    est[:, has_l1] = state.z[:, has_l1]
    sizes = state.mask.sum(axis=1)
    for g in np.flatnonzero(~has_l1):
        owners = np.flatnonzero(state.mask[:, g])
        if owners.size:
            v = owners[np.argmin(sizes[owners])]
            est[:, g] = state.v_groups[:, v, g]
    zero_groups = np.all(state.v_groups == 0.0, axis=2)  # (p, n_groups)
    for v in range(state.mask.shape[0]):
        members = state.mask[v] > 0
        rows = zero_groups[:, v]
        if rows.any():
            est[np.ix_(rows, members)] = 0.0
    full = np.zeros((p, state.split.m))
    full[:, state.free] = est
    return full


def objective_value(samples: np.ndarray, m_mat: np.ndarray, spec: PenaltySpec, f) -> float:
    """``(1/k) sum_i (x_i - f)' M (x_i - f) + penalty(f)``."""
    d = np.asarray(samples, dtype=float) - np.asarray(f, dtype=float)
    fit = float(np.mean(np.einsum("ij,jk,ik->i", d, m_mat, d)))
    return fit + penalty_value(spec, f)


def _prepare(batch, m_mat, spec, per_sample):
    batch = as_batch(batch)
    mat = m_mat.m_mat if isinstance(m_mat, StatisticMatrix) else np.asarray(m_mat, dtype=float)
    if mat.shape != (batch.m, batch.m):
        raise DimensionMismatch(f"matrix of shape {mat.shape} for {batch.m}-variable samples")
    split = split_penalty(spec, batch.m)
    quad = _quadratic(batch.samples, mat, split.free, per_sample)
    return batch, mat, split, quad


def _results(batch, mat, spec, state, stats, per_sample):
    est = sparse_estimate(state)
    return [_result(est[i], stats, i, batch.samples[i:i + 1] if per_sample else batch.samples,
                    mat, spec) for i in range(est.shape[0])]


def reconstruct(batch, m_mat, spec: PenaltySpec, cfg: AdmmConfig = AdmmConfig(),
                f0=None) -> IsolationResult:
    """Reconstruct one fault vector shared by every sample of ``batch``.

    Parameters
    ----------
    batch : SampleBatch or array_like
        Standardized faulty samples (``k x m``).
    m_mat : StatisticMatrix or ndarray
        Quadratic form of the monitoring statistic.
    spec : PenaltySpec
        Penalty family with its structure and weight(s).
    cfg : AdmmConfig
    f0 : array_like, optional
        Starting point; defaults to the batch mean.

    Returns
    -------
    IsolationResult
        ``f`` is read from the sparse auxiliary variables (see
        :func:`sparse_estimate`) and is exactly zero, after 0 iterations, when
        zero is optimal; ``converged`` is False when ``max_iter`` was reached
        first.
    """
    batch, mat, split, quad = _prepare(batch, m_mat, spec, per_sample=False)
    start = batch.mean if f0 is None else np.asarray(f0, dtype=float)
    if start.shape != (batch.m,):
        raise DimensionMismatch("starting point has the wrong length")
    state = init_state(quad, split, cfg.rho, start[split.free])
    stats = run_admm(state, cfg.epsilon, cfg.max_iter, screen=True)
    return _results(batch, mat, spec, state, stats, per_sample=False)[0]


def reconstruct_samples(batch, m_mat, spec: PenaltySpec, cfg: AdmmConfig = AdmmConfig()) -> list:
    """Reconstruct each sample on its own (a batch of one per sample)."""
    batch, mat, split, quad = _prepare(batch, m_mat, spec, per_sample=True)
    state = init_state(quad, split, cfg.rho, batch.samples[:, split.free])
    stats = run_admm(state, cfg.epsilon, cfg.max_iter, screen=True)
    return _results(batch, mat, spec, state, stats, per_sample=True)



def _result(est, stats, n, samples, mat, spec):
    return IsolationResult(
        f=est, active_set=active_set(est), objective=float(objective_value(samples, mat, spec, est)),
        iterations=int(stats.iterations[n]), converged=bool(stats.converged[n]),
        primal_residual=float(stats.primal[n]), dual_residual=float(stats.dual[n]),
        relative_change=float(stats.rel_change[n]), lam=float(spec.lam),
    )


def solve_path(batch, m_mat, spec: PenaltySpec, lambdas, cfg: AdmmConfig = AdmmConfig(),
               per_sample: bool = False, stop=None) -> list:
    """Solve ``spec`` along a sequence of weights, largest first.

    Each weight is warm-started from the converged iterates (duals included)
    of the previous one. The first starts from the batch mean, or from each
    sample when ``per_sample``.

    Parameters
    ----------
    lambdas : array_like
        Non-negative weights, in any order.
    per_sample : bool
        Reconstruct every sample as a batch of one instead of one shared
        fault vector.
    stop : callable, optional
        ``stop(lam, index, results)`` is called after each weight with the
        problem indices still being solved and their results; problems for
        which it returns True are not solved at smaller weights.

    Returns
    -------
    list
        One list per weight, in the order given, holding a result per
        problem (one problem when pooled) or None once a problem was stopped.
    """
    lambdas = np.asarray(lambdas, dtype=float).ravel()
    if np.any(lambdas < 0) or not np.all(np.isfinite(lambdas)):
        raise ValueError("regularization weights must be finite and non-negative")
    unit = spec.with_lambda(1.0)
    batch, mat, split, quad = _prepare(batch, m_mat, unit, per_sample)
    k = quad.q.shape[0]
    start = batch.samples if per_sample else batch.mean[None, :]
    state = init_state(quad, split, cfg.rho, start[:, split.free])
    alive = np.arange(k)
    out = [[None] * k for _ in lambdas]
    for j in np.argsort(-lambdas, kind="stable"):
        lam = float(lambdas[j])
        spec_j = spec.with_lambda(lam)
        state.scale[:] = lam
        stats = run_admm(state, cfg.epsilon, cfg.max_iter, screen=True)
        est = sparse_estimate(state)
        rows = []
        for n, i in enumerate(alive):
            samples = batch.samples[i:i + 1] if per_sample else batch.samples
            rows.append(_result(est[n], stats, n, samples, mat, spec_j))
            out[j][i] = rows[-1]
        if stop is not None:
            keep = ~np.asarray(stop(lam, alive.copy(), rows), dtype=bool)
            if not keep.any():
                break
            if not keep.all():
                alive = alive[keep]
                state = _select(state, np.flatnonzero(keep))
    return out
