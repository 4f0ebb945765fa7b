"""Hand-crafted cascade features with a ridge regression on log2(y + 1)."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cascade import CascadeViews, DatasetSplit
from .model import to_popularity
from .training import EvalReport, log2p, log_metrics

# fractions of t_obs at which the cumulative popularity is sampled
CUMULATIVE_FRACTIONS = (0.25, 0.5, 0.75)
FEATURE_NAMES = ("mean_interval", "observed_size",
                 *(f"cum_pop_{f:g}" for f in CUMULATIVE_FRACTIONS),
                 "leaf_count", "mean_degree", "mean_path_length", "max_path_length")
LAMBDA_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)


def cascade_features(v: CascadeViews) -> np.ndarray:
    """Feature row of one observed cascade, in ``FEATURE_NAMES`` order.

    Intervals are join time minus the parent's join time.  Path length is the
    number of edges from the root; both path statistics and the mean interval
    are taken over non-root nodes (0 for a lone root).  Degree counts edges
    in either direction.
    """
    n = v.observed_size
    par = np.asarray(v.parents, dtype=np.int64)
    times = np.asarray(v.times, dtype=np.float64)
    child = np.nonzero(par >= 0)[0]
    mean_interval = float(np.mean(times[child] - times[par[child]])) if child.size else 0.0
    cum = [float(np.sum(times <= f * v.t_obs)) for f in CUMULATIVE_FRACTIONS]
    out_deg = np.bincount(par[child], minlength=n)
    leaves = int(np.sum(out_deg == 0))
    mean_degree = 2.0 * child.size / n
    # walk up to the root; join-time ties can list a child before its parent
    depth = np.zeros(n, dtype=np.int64)
    for i in range(n):
        j = i
        while par[j] >= 0:
            j = par[j]
            depth[i] += 1
    mean_path = float(depth[child].mean()) if child.size else 0.0
    max_path = float(depth.max())
    return np.array([mean_interval, float(n), *cum, float(leaves), mean_degree, mean_path, max_path])


def feature_matrix(views: Sequence[CascadeViews]) -> np.ndarray:
    return np.vstack([cascade_features(v) for v in views])


@dataclass
class RidgeModel:
    weights: np.ndarray  # on the raw feature scale
    intercept: float
    lam: float
    mean: np.ndarray
    scale: np.ndarray

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights + self.intercept


def fit_ridge(X, y, lam: float, max_tries: int = 20) -> RidgeModel:
    """Ridge regression with an unpenalised intercept, solved by normal equations.

    Columns are standardised first (constant columns keep scale 1) so ``lam``
    acts uniformly; the returned weights are mapped back to the raw scale.
    A singular system raises ``lam`` tenfold (from at least 1e-8) with a
    warning until it solves.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ValueError(f"bad shapes X={X.shape} y={y.shape}")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    yc = y - y.mean()
    A = Z.T @ Z
    rhs = Z.T @ yc
    for _ in range(max_tries):
        M = A + lam * np.eye(A.shape[0])
        if np.linalg.cond(M) < 1e12:
            w = np.linalg.solve(M, rhs)
            break
        new = max(lam * 10.0, 1e-8)
        warnings.warn(f"ridge system singular at lambda={lam:g}; retrying with {new:g}", RuntimeWarning)
        lam = new
    else:
        raise np.linalg.LinAlgError("ridge system stayed singular")
    weights = w / scale
    return RidgeModel(weights, float(y.mean() - mean @ weights), float(lam), mean, scale)


def feature_baseline(split: DatasetSplit, lam: float | None = None,
                     grid: Sequence[float] = LAMBDA_GRID) -> tuple[EvalReport, RidgeModel]:
    """Fit on train, pick ``lam`` from ``grid`` by validation MSLE unless given,
    and report test metrics.  Predictions are clamped at 0 popularity."""
    if not split.train or not split.test:
        raise ValueError("baseline needs non-empty train and test sets")
    Xtr, ytr = feature_matrix(split.train), log2p([v.label for v in split.train])
    candidates = [lam] if lam is not None else list(grid)
    best = None
    for cand in candidates:
        model = fit_ridge(Xtr, ytr, cand)
        if lam is None and split.val:
            score = log_metrics([v.label for v in split.val], to_popularity(model.predict(feature_matrix(split.val))))["msle"]
        else:
            score = 0.0
        if best is None or score < best[0]:
            best = (score, model)
    model = best[1]
    o = model.predict(feature_matrix(split.test))
    report = EvalReport.from_predictions([v.cascade_id for v in split.test],
                                         [v.label for v in split.test], to_popularity(o),
                                         curves={"lambda": model.lam, "features": list(FEATURE_NAMES)})
    return report, model


def geometric_mean_report(split: DatasetSplit) -> EvalReport:
    """Constant predictor: the train mean of log2(y+1), mapped back to popularity."""
    c = float(np.mean(log2p([v.label for v in split.train])))
    test = split.test
    return EvalReport.from_predictions([v.cascade_id for v in test], [v.label for v in test],
                                       np.full(len(test), to_popularity(c)))
