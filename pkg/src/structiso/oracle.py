"""Slow reference solver used to cross-check ADMM.

Accelerated proximal gradient (FISTA with backtracking and gradient-based
restart) on the same objective. Each family's proximal map is written out
directly from its definition rather than through
:func:`structiso.structure.split_penalty`, so the two solvers share nothing
but the problem statement.
"""

from __future__ import annotations

import numpy as np

from .datamodel import as_batch
from .errors import NotConverged
from .monitor import StatisticMatrix
from .structure import (Clustered, GroupLasso, Lasso, PartialSupport, PenaltySpec,
                        SparseGroupLasso, Tree, check, penalty_value)


def _soft(y, t):
    return np.sign(y) * np.maximum(np.abs(y) - t, 0.0)


def _shrink(y, t):
    n = np.linalg.norm(y)
    if n <= t:
        return np.zeros_like(y)
    return (1.0 - t / n) * y


def penalty_prox(spec: PenaltySpec, y, t: float = 1.0) -> np.ndarray:
    """``argmin_u  0.5 ||u - y||^2 + t * penalty(u)`` (known-zero coordinates pinned to 0)."""
    y = np.array(y, dtype=float)
    if isinstance(spec, Lasso):
        return _soft(y, t * spec.lam)
    if isinstance(spec, PartialSupport):
        out = _soft(y, t * spec.lam)
        out[list(spec.support.known_zero)] = 0.0
        return out
    if isinstance(spec, GroupLasso):
        out = y.copy()
        for w, b in zip(spec.block_weights, spec.partition.blocks):
            out[list(b)] = _shrink(y[list(b)], t * spec.lam * w)
        return out
    if isinstance(spec, SparseGroupLasso):
        # soft-threshold then block-shrink is the exact prox of l1 + l2
        out = _soft(y, t * spec.alpha * spec.lam)
        for w, b in zip(spec.block_weights, spec.partition.blocks):
            out[list(b)] = _shrink(out[list(b)], t * (1 - spec.alpha) * spec.lam * w)
        return out
    if isinstance(spec, Clustered):
        out = y.copy()
        for b in spec.partition.blocks:
            out[list(b)] = _shrink(y[list(b)], t * spec.lam1)
        rest = list(spec.partition.complement)
        out[rest] = _soft(y[rest], t * spec.lam2)
        return out
    if isinstance(spec, Tree):
        # nested groups: composing the group shrinkages from the leaves up
        # gives the exact prox of the whole tree norm
        out = y.copy()
        for v in spec.tree.postorder():
            w = spec.weights.omega[v]
            if w > 0:
                idx = list(spec.tree.nodes[v].group)
                out[idx] = _shrink(out[idx], t * spec.lam * w)
        return out
    raise TypeError(f"unknown penalty spec {type(spec).__name__}")


def oracle_solve(batch, m_mat, spec: PenaltySpec, tol: float = 1e-10, max_iter: int = 200_000,
                 f0=None) -> np.ndarray:
    """Minimize the reconstruction objective by accelerated proximal gradient.

    Stops when the gradient-mapping norm falls below ``tol * max(1, ||grad h(0)||)``
    and raises :class:`NotConverged` otherwise.
    """
    batch = as_batch(batch)
    mat = m_mat.m_mat if isinstance(m_mat, StatisticMatrix) else np.asarray(m_mat, dtype=float)
    check(spec, batch.m)
    xbar = batch.mean
    mx = mat @ xbar

    def smooth(f):
        return float(f @ mat @ f - 2 * f @ mx)

    def grad(f):
        return 2 * (mat @ f - mx)

    scale = max(1.0, 2 * float(np.linalg.norm(mx)))
    L = max(2 * float(np.linalg.eigvalsh(mat)[-1]), 1e-12)
    x = penalty_prox(spec, xbar if f0 is None else np.asarray(f0, dtype=float), 0.0)
    y, t_mom = x.copy(), 1.0
    for _ in range(max_iter):
        gy, hy = grad(y), smooth(y)
        while True:
            x_new = penalty_prox(spec, y - gy / L, 1.0 / L)
            d = x_new - y
            if smooth(x_new) <= hy + gy @ d + 0.5 * L * (d @ d) + 1e-15 * max(1.0, abs(hy)):
                break
            L *= 2.0
        if L * np.linalg.norm(d) <= tol * scale:
            return x_new
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t_mom * t_mom))
        if (y - x_new) @ (x_new - x) > 0:  # restart momentum when it points uphill
            t_next, y = 1.0, x_new.copy()
        else:
            y = x_new + ((t_mom - 1) / t_next) * (x_new - x)
        x, t_mom = x_new, t_next
    raise NotConverged(f"proximal gradient did not reach tol={tol} in {max_iter} iterations")


def oracle_objective(batch, m_mat, spec: PenaltySpec, f) -> float:
    batch = as_batch(batch)
    mat = m_mat.m_mat if isinstance(m_mat, StatisticMatrix) else np.asarray(m_mat, dtype=float)
    d = batch.samples - f
    return float(np.mean(np.einsum("ij,jk,ik->i", d, mat, d))) + penalty_value(spec, f)
