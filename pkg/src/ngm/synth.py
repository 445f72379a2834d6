"""Gaussian graphical model harness.

Chain precision matrices, partial correlations, exact Gaussian sampling,
an inverse-covariance edge scorer and ROC / precision-recall scoring.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .data import Dataset, from_array
from .graph import DependencyGraph, Edge, UNDIRECTED


def chain_names(d: int) -> list[str]:
    return [f"x{i + 1}" for i in range(d)]


@dataclass(frozen=True)
class PrecisionMatrix:
    theta: np.ndarray

    def __post_init__(self):
        t = np.array(self.theta, dtype=float)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ValueError("precision matrix must be square")
        if np.max(np.abs(t - t.T)) > 1e-12:
            raise ValueError("precision matrix must be symmetric")
        if np.linalg.eigvalsh(t).min() <= 0:
            raise ValueError("precision matrix must be positive definite")
        t.flags.writeable = False
        object.__setattr__(self, "theta", t)

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.theta)


def chain_precision(d: int, rng: np.random.Generator, min_eig: float = 0.1) -> PrecisionMatrix:
    """Path-graph precision with off-diagonals from U{(-1,-0.5) u (0.5,1)}.

    The unit diagonal is raised just enough for the smallest eigenvalue to
    reach ``min_eig``.
    """
    if d < 2:
        raise ValueError("a chain needs at least 2 nodes")
    theta = np.eye(d)
    mag = rng.uniform(0.5, 1.0, size=d - 1)
    sign = np.where(rng.random(d - 1) < 0.5, -1.0, 1.0)
    for i, v in enumerate(mag * sign):
        theta[i, i + 1] = theta[i + 1, i] = v
    lo = np.linalg.eigvalsh(theta).min()
    if lo < min_eig:
        theta += (min_eig - lo) * np.eye(d)
    return PrecisionMatrix(theta)


def chain_graph(d: int, theta: np.ndarray | None = None) -> DependencyGraph:
    """Undirected chain ``x1 - x2 - ... - xd``, signed by partial correlation."""
    names = chain_names(d)
    rho = partial_correlation(theta) if theta is not None else None
    edges = []
    for i in range(d - 1):
        sign = None if rho is None else ("+" if rho[i, i + 1] > 0 else "-")
        edges.append(Edge(names[i], names[i + 1], UNDIRECTED, sign))
    return DependencyGraph(tuple(names), tuple(edges))


def partial_correlation(theta) -> np.ndarray:
    """``-theta_ij / sqrt(theta_ii theta_jj)`` off the diagonal, 0 on it."""
    t = theta.theta if isinstance(theta, PrecisionMatrix) else np.asarray(theta, dtype=float)
    d = np.sqrt(np.diag(t))
    rho = -t / np.outer(d, d)
    np.fill_diagonal(rho, 0.0)
    return rho


def sample_mvn_array(theta, m: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` draws from ``N(0, theta^-1)`` using the Cholesky factor of theta."""
    t = theta.theta if isinstance(theta, PrecisionMatrix) else np.asarray(theta, dtype=float)
    try:
        low = np.linalg.cholesky(t)
    except np.linalg.LinAlgError as exc:
        raise ValueError("precision matrix is not positive definite") from exc
    z = rng.standard_normal((t.shape[0], m))
    # theta = L L^T  =>  x = L^-T z has covariance theta^-1
    return scipy.linalg.solve_triangular(low.T, z, lower=False).T


def sample_mvn(theta, m: int, rng: np.random.Generator, names=None) -> Dataset:
    x = sample_mvn_array(theta, m, rng)
    return from_array(x, names or chain_names(x.shape[1]))


def recovery_oracle(x, ridge: float | None = None) -> np.ndarray:
    """Absolute partial correlations of the (ridged) sample precision.

    ``ridge=None`` uses ``1e-3 * trace(cov) / D``; ``ridge=0`` requires a
    non-singular sample covariance.
    """
    if isinstance(x, Dataset):
        x = np.column_stack([np.asarray(c, dtype=float) for c in x.columns])
    x = np.asarray(x, dtype=float)
    m, d = x.shape
    cov = np.cov(x, rowvar=False, bias=True).reshape(d, d)
    if ridge is None:
        ridge = 1e-3 * np.trace(cov) / d
    if ridge == 0 and (m <= d or np.linalg.matrix_rank(cov) < d):
        raise np.linalg.LinAlgError("sample covariance is singular; use a positive ridge")
    prec = np.linalg.inv(cov + ridge * np.eye(d))
    return np.abs(partial_correlation(prec))


@dataclass(frozen=True)
class RecoveryMetrics:
    aupr: float
    auc: float
    scores: np.ndarray
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    fpr: np.ndarray

    def to_json(self) -> dict:
        return {"aupr": self.aupr, "auc": self.auc}


def _pair_vectors(true_edges, scores):
    s = np.asarray(scores, dtype=float)
    d = s.shape[0]
    if isinstance(true_edges, np.ndarray) and true_edges.shape == (d, d):
        adj = true_edges != 0
    else:
        adj = np.zeros((d, d), dtype=bool)
        for i, j in true_edges:
            adj[i, j] = adj[j, i] = True
    iu = np.triu_indices(d, 1)
    return adj[iu].astype(int), s[iu]


def score_recovery(true_edges, scores) -> RecoveryMetrics:
    """ROC AUC and average precision from a threshold sweep over pair scores.

    ``true_edges`` is a symmetric 0/1 adjacency or a list of index pairs.
    Tied scores are swept together.
    """
    labels, s = _pair_vectors(true_edges, scores)
    pos = labels.sum()
    neg = len(labels) - pos
    if pos == 0 or neg == 0:
        raise ValueError("need both edges and non-edges to score recovery")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, l_sorted = s[order], labels[order]
    # last index of each run of equal scores
    cut = np.r_[np.flatnonzero(np.diff(s_sorted)), len(s_sorted) - 1]
    tp = np.cumsum(l_sorted)[cut]
    fp = (cut + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / pos
    fpr = fp / neg
    aupr = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    tpr_full = np.r_[0.0, recall]
    fpr_full = np.r_[0.0, fpr]
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    auc = float(trapezoid(tpr_full, fpr_full))
    return RecoveryMetrics(aupr, auc, s, s_sorted[cut], precision, recall, fpr)


def chain_edges(d: int) -> list[tuple[int, int]]:
    return [(i, i + 1) for i in range(d - 1)]


def dependency_curve(model, target: str, neighbor: str, grid, method: str = "gradient",
                     **kw) -> np.ndarray:
    """Prediction of ``target`` as ``neighbor`` sweeps ``grid`` (raw units).

    Every other feature is held at its marginal mean.  Returns an ``(n, 2)``
    array of ``(neighbor value, predicted target)``.
    """
    from .inference import InferenceQuery, gradient_map, message_passing

    others = {c.name: _marginal_mean(c) for c in model.schema
              if c.name not in (target, neighbor)}
    rows = []
    queries = [InferenceQuery(known={**others, neighbor: float(v)}, targets=(target,), **kw)
               for v in np.atleast_1d(grid)]
    run = gradient_map if method == "gradient" else message_passing
    results = run(model, queries)
    for v, res in zip(np.atleast_1d(grid), results):
        rows.append((float(v), float(res.assignment[target])))
    return np.array(rows).reshape(-1, 2)


def _marginal_mean(col):
    if col.is_numeric:
        return col.mean
    probs = np.asarray(col.marginal) if col.marginal is not None else None
    k = int(np.argmax(probs)) if probs is not None else 0
    return col.categories[k]


def linear_fit(curve: np.ndarray) -> tuple[float, float]:
    """Least-squares slope and R^2 of a dependency curve."""
    x, y = curve[:, 0], curve[:, 1]
    a = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ coef
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 0.0
    return float(coef[0]), r2
