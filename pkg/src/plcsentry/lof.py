"""Local Outlier Factor novelty detection on 2-D embeddings.

Fitted on benign embeddings only; queries are scored against the frozen
training set (novelty mode).  Exactly k neighbors are used, with
equal-distance ties broken by training-point insertion order so scores
are reproducible across runs.  A query that coincides exactly with a
training point skips that one zero-distance match, which makes its
score equal the training point's own self-score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# Cap for local reachability density when a neighborhood collapses onto
# duplicate points (zero reachability sum).
LRD_CAP = 1e12

CHUNK = 512


def _sorted_neighbors(train: np.ndarray, queries: np.ndarray, width: int,
                      exclude_self: bool) -> tuple[np.ndarray, np.ndarray]:
    """Stable-sorted nearest training neighbors for each query row.

    Returns (indices, distances) of shape (n_queries, width).  With
    exclude_self=True, queries are the training rows themselves and row
    i is removed from its own neighbor list.  Otherwise the first
    zero-distance match (if any) is skipped, per the coincidence rule.
    """
    n = len(train)
    take = width + 1
    if take > n:
        raise ValueError(f"need at least {take} training points, have {n}")
    t2 = (train ** 2).sum(axis=1)
    idx_out = np.empty((len(queries), width), dtype=np.int64)
    dist_out = np.empty((len(queries), width))
    for lo in range(0, len(queries), CHUNK):
        q = queries[lo:lo + CHUNK]
        d2 = np.maximum(
            (q ** 2).sum(axis=1)[:, None] - 2.0 * (q @ train.T) + t2[None, :],
            0.0,
        )
        if exclude_self:
            rows = np.arange(lo, lo + len(q))
            d2[np.arange(len(q)), rows] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")[:, :take]
        d = np.sqrt(np.take_along_axis(d2, order, axis=1))
        if exclude_self:
            idx_out[lo:lo + len(q)] = order[:, :width]
            dist_out[lo:lo + len(q)] = d[:, :width]
        else:
            skip = d[:, 0] == 0.0
            for r in range(len(q)):
                if skip[r]:
                    idx_out[lo + r] = order[r, 1:take]
                    dist_out[lo + r] = d[r, 1:take]
                else:
                    idx_out[lo + r] = order[r, :width]
                    dist_out[lo + r] = d[r, :width]
    return idx_out, dist_out


@dataclass
class NeighborTable:
    """Per-point neighbor lists up to a maximum k, shared across k values."""

    train: np.ndarray
    width: int
    self_idx: np.ndarray = field(init=False)
    self_dist: np.ndarray = field(init=False)

    def __post_init__(self):
        self.self_idx, self.self_dist = _sorted_neighbors(
            self.train, self.train, self.width, exclude_self=True)

    def kdist_lrd(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        kdist = self.self_dist[:, k - 1]
        reach = np.maximum(kdist[self.self_idx[:, :k]], self.self_dist[:, :k])
        rsum = reach.sum(axis=1)
        lrd = np.where(rsum > 0, k / np.where(rsum > 0, rsum, 1.0), LRD_CAP)
        return kdist, lrd


@dataclass
class LofModel:
    training_points: np.ndarray
    k: int
    kdist: np.ndarray
    lrd: np.ndarray
    threshold: float | None = None

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "threshold": self.threshold,
            "points": self.training_points.tolist(),
            "kdist": self.kdist.tolist(),
            "lrd": self.lrd.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LofModel":
        return cls(
            training_points=np.asarray(d["points"], float),
            k=d["k"],
            kdist=np.asarray(d["kdist"], float),
            lrd=np.asarray(d["lrd"], float),
            threshold=d.get("threshold"),
        )


def fit_lof(benign_embeddings, k: int) -> LofModel:
    """Cache k-distances and local reachability densities of the training set."""
    pts = np.asarray(benign_embeddings, dtype=float)
    if k < 1 or len(pts) <= k:
        raise ValueError(f"need more than k={k} training points, have {len(pts)}")
    table = NeighborTable(pts, k)
    kdist, lrd = table.kdist_lrd(k)
    return LofModel(training_points=pts, k=k, kdist=kdist, lrd=lrd)


def _score_from_table(kdist, lrd, nbr_idx, nbr_dist, k) -> np.ndarray:
    reach = np.maximum(kdist[nbr_idx[:, :k]], nbr_dist[:, :k])
    rsum = reach.sum(axis=1)
    lrd_q = np.where(rsum > 0, k / np.where(rsum > 0, rsum, 1.0), LRD_CAP)
    return lrd[nbr_idx[:, :k]].mean(axis=1) / lrd_q


def lof_scores(model: LofModel, points) -> np.ndarray:
    """Novelty scores against the frozen training set (1 = typical density)."""
    q = np.atleast_2d(np.asarray(points, dtype=float))
    nbr_idx, nbr_dist = _sorted_neighbors(
        model.training_points, q, model.k, exclude_self=False)
    return _score_from_table(model.kdist, model.lrd, nbr_idx, nbr_dist, model.k)


def lof_score(model: LofModel, point) -> float:
    return float(lof_scores(model, [point])[0])


def self_scores(model: LofModel) -> np.ndarray:
    """LOF of the training points against their own neighborhoods."""
    table = NeighborTable(model.training_points, model.k)
    kdist, lrd = table.kdist_lrd(model.k)
    return _score_from_table(kdist, lrd, table.self_idx, table.self_dist, model.k)


# Anomaly thresholds never drop below this floor; benign scores hover
# near 1 and a lower cut would flag typical traffic.
THRESHOLD_FLOOR = 1.1


def calibrate_threshold(model: LofModel, holdout_benign_embeddings,
                        quantile: float = 0.999) -> float:
    """Set the anomaly cut at a high benign-score quantile (floored)."""
    holdout = np.atleast_2d(np.asarray(holdout_benign_embeddings, float))
    if holdout.size == 0:
        raise ValueError("empty calibration holdout")
    scores = lof_scores(model, holdout)
    tau = max(float(np.quantile(scores, quantile)), THRESHOLD_FLOOR)
    model.threshold = tau
    return tau


def tune_k(train_benign, validation_points, validation_is_attack,
           k_range=range(5, 25), repeats: int = 20, seed: int = 0,
           quantile: float = 0.999, fit_fraction: float = 0.75,
           max_fit_points: int = 4000) -> tuple[int, dict]:
    """Sweep the neighborhood size and pick the lowest false-negative k.

    For each of `repeats` seeded resplits of the benign data, the model
    is fit on a (capped) training portion, the threshold calibrated on
    the held-out benign portion, and the labeled validation set scored.
    Selection: lowest mean FN count, then lowest mean FP, then smaller k.
    """
    benign = np.asarray(train_benign, dtype=float)
    val = np.asarray(validation_points, dtype=float)
    is_attack = np.asarray(validation_is_attack, dtype=bool)
    if is_attack.all() or not is_attack.any():
        raise ValueError("validation set must contain both classes")
    ks = sorted(k_range)
    kmax = ks[-1]
    fn = {k: [] for k in ks}
    fp = {k: [] for k in ks}
    for r in range(repeats):
        rng = np.random.default_rng(seed + r)
        perm = rng.permutation(len(benign))
        cut = int(len(benign) * fit_fraction)
        fit_idx, hold_idx = perm[:cut], perm[cut:]
        if len(fit_idx) > max_fit_points:
            fit_idx = fit_idx[:max_fit_points]
        fit_pts = benign[fit_idx]
        table = NeighborTable(fit_pts, kmax)
        hold_nbr = _sorted_neighbors(fit_pts, benign[hold_idx], kmax, False)
        val_nbr = _sorted_neighbors(fit_pts, val, kmax, False)
        for k in ks:
            kdist, lrd = table.kdist_lrd(k)
            hold_scores = _score_from_table(kdist, lrd, *hold_nbr, k)
            tau = max(float(np.quantile(hold_scores, quantile)), THRESHOLD_FLOOR)
            val_scores = _score_from_table(kdist, lrd, *val_nbr, k)
            flagged = val_scores > tau
            fn[k].append(int((~flagged & is_attack).sum()))
            fp[k].append(int((flagged & ~is_attack).sum()))
    summary = {
        k: {"mean_fn": float(np.mean(fn[k])), "mean_fp": float(np.mean(fp[k]))}
        for k in ks
    }
    best = min(ks, key=lambda k: (summary[k]["mean_fn"], summary[k]["mean_fp"], k))
    return best, summary
