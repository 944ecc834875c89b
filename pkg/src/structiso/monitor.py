"""PCA monitoring model: T^2 / SPE quadratic forms, control limits, detection.

Both statistics are quadratic forms ``x' M x`` of a standardized sample, which
is what the reconstruction solver consumes.
"""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import DataMatrix, Standardizer, as_batch, fit_standardizer, standardize
from .errors import DegenerateCovariance, DimensionMismatch, ParseError

DEFAULT_VARIANCE_TARGET = 0.85
DEFAULT_SIGNIFICANCE = 0.01
_LIMIT_FLOOR = 1e-12


class StatisticKind(str, enum.Enum):
    T2 = "t2"
    SPE = "spe"


@dataclass(frozen=True)
class PcaModel:
    """Retained principal subspace.

    ``w`` whitens: scores ``w' x`` have unit variance on the training data.
    ``a`` carries the loadings scaled by the component standard deviations, so
    ``a @ w.T`` is the orthogonal projector onto the retained subspace.
    """

    w: np.ndarray
    a: np.ndarray
    l: int
    explained_variance_ratio: np.ndarray
    eigenvalues: np.ndarray

    @property
    def m(self) -> int:
        return self.w.shape[0]

    @property
    def components(self) -> np.ndarray:
        """Unit-norm eigenvectors of the retained components (``m x l``)."""
        return self.w * np.sqrt(self.eigenvalues[: self.l])

    def scores(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.w


@dataclass(frozen=True)
class StatisticMatrix:
    m_mat: np.ndarray
    kind: StatisticKind

    def __post_init__(self):
        mat = np.array(self.m_mat, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DimensionMismatch(f"statistic matrix must be square, got {mat.shape}")
        mat.setflags(write=False)
        object.__setattr__(self, "m_mat", mat)
        object.__setattr__(self, "kind", StatisticKind(self.kind))

    @property
    def m(self) -> int:
        return self.m_mat.shape[0]


@dataclass(frozen=True)
class ControlLimits:
    t2_limit: float
    spe_limit: float
    significance: float

    def __post_init__(self):
        if not (self.t2_limit > 0 and self.spe_limit > 0):
            raise ValueError("control limits must be strictly positive")
        if not 0 < self.significance < 1:
            raise ValueError("significance must lie in (0, 1)")

    def for_kind(self, kind) -> float:
        return self.t2_limit if StatisticKind(kind) is StatisticKind.T2 else self.spe_limit


@dataclass(frozen=True)
class Detection:
    t2: np.ndarray
    spe: np.ndarray
    t2_violation: np.ndarray
    spe_violation: np.ndarray

    @property
    def flagged(self) -> np.ndarray:
        return self.t2_violation | self.spe_violation


def _order_components(evals, evecs):
    """Sort eigenpairs by descending eigenvalue with deterministic ties and signs."""
    lead = np.empty(evecs.shape[1], dtype=int)
    for i in range(evecs.shape[1]):
        v = evecs[:, i]
        mag = np.abs(v)
        # lowest index among entries tied for the largest magnitude
        lead[i] = int(np.flatnonzero(mag >= mag.max() - 1e-12)[0])
        if v[lead[i]] < 0:
            evecs[:, i] = -v
    # eigenvalues within a relative 1e-10 of each other count as tied
    scale = max(float(np.max(np.abs(evals))), 1e-300)
    keys = np.round(evals / scale, 10)
    order = np.lexsort((lead, -keys))
    return evals[order], evecs[:, order]


def fit_pca(train: DataMatrix, variance_target: float = DEFAULT_VARIANCE_TARGET,
            n_components: int | None = None) -> PcaModel:
    """Fit a PCA subspace by eigendecomposition of the training covariance.

    Parameters
    ----------
    train : DataMatrix
        Standardized training samples.
    variance_target : float
        The retained count ``l`` is the smallest number of components whose
        cumulative explained variance reaches this fraction.
    n_components : int, optional
        Retain exactly this many components instead.
    """
    if not 0 < variance_target <= 1:
        raise ValueError("variance_target must lie in (0, 1]")
    x = train.values
    n, m = x.shape
    if n < 2:
        raise DegenerateCovariance("at least two samples are needed to estimate a covariance")
    if n <= m:
        warnings.warn(f"fitting PCA with n={n} samples for m={m} variables", stacklevel=2)
    cov = np.cov(x, rowvar=False, ddof=1).reshape(m, m)
    if not np.all(np.isfinite(cov)):
        raise DegenerateCovariance("covariance matrix has non-finite entries")
    evals, evecs = np.linalg.eigh((cov + cov.T) / 2)
    evals = np.clip(evals, 0.0, None)
    evals, evecs = _order_components(evals, evecs)
    total = evals.sum()
    if total <= 0:
        raise DegenerateCovariance("covariance matrix is zero")
    n_ratio = min(n - 1, m)
    ratio = evals[:n_ratio] / evals[:n_ratio].sum()
    cum = np.cumsum(evals) / total
    if n_components is None:
        l = int(np.flatnonzero(cum >= variance_target - 1e-10)[0]) + 1
    elif 1 <= n_components <= m:
        l = int(n_components)
    else:
        raise ValueError(f"n_components must lie in [1, {m}], got {n_components}")
    if evals[l - 1] <= 1e-12 * evals[0]:
        raise DegenerateCovariance("retained component has zero variance")
    p = evecs[:, :l]
    sd = np.sqrt(evals[:l])
    return PcaModel(w=p / sd, a=p * sd, l=l, explained_variance_ratio=ratio, eigenvalues=evals)


def _symmetrize(a):
    return (a + a.T) / 2


def t2_matrix(model: PcaModel) -> StatisticMatrix:
    return StatisticMatrix(_symmetrize(model.w @ model.w.T), StatisticKind.T2)


def spe_matrix(model: PcaModel) -> StatisticMatrix:
    r = np.eye(model.m) - model.a @ model.w.T
    return StatisticMatrix(_symmetrize(r.T @ r), StatisticKind.SPE)


def statistic(mat: StatisticMatrix, x) -> float | np.ndarray:
    """Quadratic form ``x' M x``; a 2-D ``x`` is evaluated row by row."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != mat.m:
        raise DimensionMismatch(f"sample has {x.shape[-1]} variables, matrix expects {mat.m}")
    if x.ndim == 1:
        return float(x @ mat.m_mat @ x)
    return np.einsum("ij,jk,ik->i", x, mat.m_mat, x)


def fit_limits(model: PcaModel, train: DataMatrix,
               significance: float = DEFAULT_SIGNIFICANCE) -> ControlLimits:
    """Empirical ``1 - significance`` quantiles of the training statistics."""
    if not 0 < significance < 1:
        raise ValueError("significance must lie in (0, 1)")
    x = train.values
    q = 1.0 - significance
    t2 = np.quantile(statistic(t2_matrix(model), x), q)
    spe = np.quantile(statistic(spe_matrix(model), x), q)
    # a full-rank model has identically zero SPE; keep the limit strictly positive
    return ControlLimits(max(float(t2), _LIMIT_FLOOR), max(float(spe), _LIMIT_FLOOR),
                         float(significance))


def detect(model: PcaModel, limits: ControlLimits, batch) -> Detection:
    x = as_batch(batch).samples
    if x.shape[1] != model.m:
        raise DimensionMismatch(f"batch has {x.shape[1]} variables, model expects {model.m}")
    t2 = statistic(t2_matrix(model), x)
    spe = statistic(spe_matrix(model), x)
    return Detection(t2, spe, t2 > limits.t2_limit, spe > limits.spe_limit)


@dataclass(frozen=True)
class MonitoringModel:
    """Everything needed to monitor new raw samples."""

    standardizer: Standardizer
    pca: PcaModel
    limits: ControlLimits
    variable_names: tuple

    @property
    def m(self) -> int:
        return self.pca.m

    def matrix(self, kind) -> StatisticMatrix:
        kind = StatisticKind(kind)
        return t2_matrix(self.pca) if kind is StatisticKind.T2 else spe_matrix(self.pca)

    def to_dict(self) -> dict:
        return {
            "format": "structiso-model",
            "version": 1,
            "variable_names": list(self.variable_names),
            "means": self.standardizer.means.tolist(),
            "stds": self.standardizer.stds.tolist(),
            "l": self.pca.l,
            "w": self.pca.w.tolist(),
            "a": self.pca.a.tolist(),
            "eigenvalues": self.pca.eigenvalues.tolist(),
            "explained_variance_ratio": self.pca.explained_variance_ratio.tolist(),
            "t2_limit": self.limits.t2_limit,
            "spe_limit": self.limits.spe_limit,
            "significance": self.limits.significance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MonitoringModel":
        try:
            if not isinstance(d, dict) or d.get("format") != "structiso-model":
                raise ParseError("not a structiso model document")
            l = int(d["l"])
            pca = PcaModel(
                w=np.array(d["w"], dtype=float).reshape(-1, l),
                a=np.array(d["a"], dtype=float).reshape(-1, l),
                l=l,
                explained_variance_ratio=np.array(d["explained_variance_ratio"], dtype=float),
                eigenvalues=np.array(d["eigenvalues"], dtype=float),
            )
            return cls(
                standardizer=Standardizer(np.array(d["means"]), np.array(d["stds"])),
                pca=pca,
                limits=ControlLimits(float(d["t2_limit"]), float(d["spe_limit"]),
                                     float(d["significance"])),
                variable_names=tuple(d["variable_names"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed model document: {exc}") from None

    def dumps(self) -> str:
        # json writes floats with repr(), which round-trips exactly
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MonitoringModel":
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, path=path, row=exc.lineno, column=exc.colno) from None
        try:
            return cls.from_dict(d)
        except ParseError as exc:
            raise ParseError(str(exc), path=path) from None


def fit_monitoring_model(train_raw: DataMatrix, variance_target=DEFAULT_VARIANCE_TARGET,
                         significance=DEFAULT_SIGNIFICANCE, n_components=None) -> MonitoringModel:
    """Standardize raw training data, fit PCA and the empirical limits."""
    scaler = fit_standardizer(train_raw)
    z = standardize(scaler, train_raw)
    pca = fit_pca(z, variance_target, n_components)
    limits = fit_limits(pca, z, significance)
    return MonitoringModel(scaler, pca, limits, train_raw.variable_names)

