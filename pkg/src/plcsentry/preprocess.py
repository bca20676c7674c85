"""Offline-fit, frozen data transforms feeding the two detection pipelines.

Pipeline I (anomaly detector): min-max normalization followed by a
2-component PCA projection.  Pipeline II (attack categorizer): the same
min-max bounds, a pairwise-correlation filter, then recursive feature
elimination driven by forest impurity importances.  All transforms are
fit once on static training data and never updated online.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import forest as forest_mod
from .telemetry import FEATURE_NAMES


@dataclass
class MinMaxBounds:
    mins: np.ndarray
    maxs: np.ndarray

    def to_dict(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxBounds":
        return cls(np.asarray(d["mins"], float), np.asarray(d["maxs"], float))


# Quantile pair used as the rescaling bounds.  Absolute extremes would
# let a handful of straggler rows (a scheduler stall, one giant gap)
# define the scale and compress every ordinary value into a sliver;
# trimming half a percent per side keeps the bounds on the bulk of the
# distribution.  Values outside the bounds clip onto [0, 1] like any
# out-of-range online value.
BOUND_QUANTILES = (0.005, 0.995)


def fit_minmax(dataset: np.ndarray,
               quantiles: tuple = BOUND_QUANTILES) -> MinMaxBounds:
    """Column-wise rescaling bounds of the training matrix."""
    data = np.asarray(dataset, dtype=float)
    if data.size == 0:
        raise ValueError("empty dataset")
    lo, hi = quantiles
    return MinMaxBounds(mins=np.quantile(data, lo, axis=0),
                        maxs=np.quantile(data, hi, axis=0))


def apply_minmax(v: np.ndarray, b: MinMaxBounds) -> np.ndarray:
    """Rescale onto [0,1]; out-of-range online values are clipped.

    Columns that were constant at fit time map to 0.
    """
    v = np.asarray(v, dtype=float)
    span = b.maxs - b.mins
    safe = np.where(span > 0, span, 1.0)
    out = np.clip((v - b.mins) / safe, 0.0, 1.0)
    if v.ndim == 1:
        out[span == 0] = 0.0
    else:
        out[:, span == 0] = 0.0
    return out


@dataclass
class PcaModel:
    mean_vector: np.ndarray
    components: np.ndarray  # (n_components, n_features), orthonormal rows
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray

    def to_dict(self) -> dict:
        return {
            "mean": self.mean_vector.tolist(),
            "components": self.components.tolist(),
            "ev": self.explained_variance.tolist(),
            "evr": self.explained_variance_ratio.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        return cls(
            np.asarray(d["mean"], float),
            np.asarray(d["components"], float),
            np.asarray(d["ev"], float),
            np.asarray(d["evr"], float),
        )


def fit_pca(dataset: np.ndarray, n_components: int = 2) -> PcaModel:
    """Eigendecomposition of the sample covariance, top components kept.

    Sign convention: the largest-magnitude loading of each component is
    positive, so serialized models are comparable across runs.
    """
    data = np.asarray(dataset, dtype=float)
    if data.ndim != 2 or data.shape[0] < max(3, n_components):
        raise ValueError(
            f"need at least {max(3, n_components)} rows, got {data.shape}"
        )
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / (data.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    comps = eigvecs[:, order].T[:n_components].copy()
    for i in range(n_components):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    total = eigvals.sum()
    evr = eigvals[:n_components] / total if total > 0 else np.zeros(n_components)
    return PcaModel(
        mean_vector=mean,
        components=comps,
        explained_variance=eigvals[:n_components],
        explained_variance_ratio=evr,
    )


def project(v: np.ndarray, m: PcaModel) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != m.mean_vector.shape[0]:
        raise ValueError(
            f"arity mismatch: {v.shape[-1]} != {m.mean_vector.shape[0]}"
        )
    return (v - m.mean_vector) @ m.components.T


def fit_correlation_filter(dataset: np.ndarray, threshold: float = 0.9,
                           feature_names=None) -> list:
    """Drop the later-indexed feature of any |r| > threshold pair.

    Features are scanned in fixed column order; a feature is dropped as
    soon as it correlates too strongly with any already-kept feature.
    Constant columns have undefined correlation and are kept.
    """
    data = np.asarray(dataset, dtype=float)
    names = list(feature_names) if feature_names is not None else list(FEATURE_NAMES)
    d = data.shape[1]
    std = data.std(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(data, rowvar=False)
    corr = np.nan_to_num(corr, nan=0.0)
    kept_idx: list[int] = []
    for j in range(d):
        if std[j] == 0:
            kept_idx.append(j)
            continue
        if any(abs(corr[j, i]) > threshold for i in kept_idx if std[i] > 0):
            continue
        kept_idx.append(j)
    return [names[j] for j in kept_idx]


@dataclass
class FeatureSelection:
    kept_after_correlation: list
    kept_after_rfe: list
    rfe_accuracy_trace: list  # (subset_size, validation_accuracy), shrinking

    def to_dict(self) -> dict:
        return {
            "corr_kept": self.kept_after_correlation,
            "rfe_kept": self.kept_after_rfe,
            "trace": self.rfe_accuracy_trace,
        }


def stratified_split(labels, train_fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Seeded per-class shuffle split; returns (train_idx, val_idx)."""
    labels = np.asarray(labels)
    train, val = [], []
    for cls in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        cut = max(1, int(round(len(idx) * train_fraction)))
        if cut >= len(idx):
            cut = len(idx) - 1 if len(idx) > 1 else len(idx)
        train.append(idx[:cut])
        val.append(idx[cut:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def run_rfe(dataset: np.ndarray, labels, feature_names,
            n_trees: int = 200, seed: int = 0,
            train_fraction: float = 0.75) -> FeatureSelection:
    """Recursive feature elimination over a stratified 75/25 split.

    Iteratively trains the forest on the current subset, drops the
    feature with the lowest mean-decrease-in-impurity importance, and
    repeats down to a single feature.  Returns the subset with the best
    validation accuracy (ties favor the smaller subset).
    """
    data = np.asarray(dataset, dtype=float)
    labels = list(labels)
    names = list(feature_names)
    if len(set(labels)) < 2:
        raise ValueError("RFE requires at least two classes")
    rng = np.random.default_rng(seed)
    tr, va = stratified_split(labels, train_fraction, rng)
    y_tr = [labels[i] for i in tr]
    y_va = [labels[i] for i in va]

    current = list(range(data.shape[1]))
    trace, candidates = [], []
    while current:
        cols = np.asarray(current)
        model = forest_mod.train_forest(
            data[np.ix_(tr, cols)], y_tr,
            [names[c] for c in current], n_trees=n_trees, seed=seed)
        pred = forest_mod.predict(model, data[np.ix_(va, cols)])
        acc = float(np.mean([p == t for p, t in zip(pred, y_va)]))
        trace.append((len(current), acc))
        candidates.append((acc, -len(current), list(current)))
        if len(current) == 1:
            break
        imp = forest_mod.feature_importances(model)
        current.pop(int(np.argmin(imp)))

    _, _, best = max(candidates)
    return FeatureSelection(
        kept_after_correlation=names,
        kept_after_rfe=[names[c] for c in sorted(best)],
        rfe_accuracy_trace=trace,
    )
