"""End-to-end model training.

Takes a benign capture plus a labeled capture (normal + attack rows) and
produces a full ModelBundle: shared min-max bounds, the 2-D projection
and tuned novelty detector for anomaly flagging, and the feature-selected
forest for attack categorization.  Also records the neighborhood-size
sweep and a four-configuration feature ablation so training runs are
auditable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import forest as forest_mod
from . import lof as lof_mod
from . import preprocess as pre
from .forest import NORMAL_LABEL
from .models import ModelBundle
from .telemetry import FEATURE_NAMES


@dataclass
class TrainReport:
    bundle: ModelBundle
    selection: pre.FeatureSelection
    k_chosen: int
    k_summary: dict
    ablation: list               # [{"config", "n_features", "accuracy"}, ...]
    holdout_macro_accuracy: float
    threshold: float
    seed: int
    notes: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "k": self.k_chosen,
            "threshold": self.threshold,
            "corr_kept": self.selection.kept_after_correlation,
            "rfe_kept": self.selection.kept_after_rfe,
            "holdout_macro_accuracy": self.holdout_macro_accuracy,
            "ablation": self.ablation,
        }


def macro_accuracy(predicted, truth) -> float:
    """Mean per-class recall (classes weighted equally)."""
    predicted = list(predicted)
    truth = list(truth)
    if len(predicted) != len(truth):
        raise ValueError("prediction/truth length mismatch")
    per_class = []
    for cls in sorted(set(truth)):
        hits = sum(1 for p, t in zip(predicted, truth) if t == cls and p == t)
        total = sum(1 for t in truth if t == cls)
        per_class.append(hits / total)
    return float(np.mean(per_class))


def _accuracy(predicted, truth) -> float:
    return float(np.mean([p == t for p, t in zip(predicted, truth)]))


def _ablation(norm_attacks, raw_attacks, labels, corr_cols, rfe_cols,
              n_trees: int, seed: int) -> list:
    """Validation accuracy of the forest under four input configurations."""
    rng = np.random.default_rng(seed)
    tr, va = pre.stratified_split(labels, 0.75, rng)
    y_tr = [labels[i] for i in tr]
    y_va = [labels[i] for i in va]
    configs = [
        ("raw", raw_attacks, list(range(raw_attacks.shape[1]))),
        ("normalized", norm_attacks, list(range(norm_attacks.shape[1]))),
        ("correlation", norm_attacks, corr_cols),
        ("rfe", norm_attacks, rfe_cols),
    ]
    rows = []
    for name, data, cols in configs:
        model = forest_mod.train_forest(
            data[np.ix_(tr, cols)], y_tr,
            [FEATURE_NAMES[c] for c in cols], n_trees=n_trees, seed=seed)
        pred = forest_mod.predict(model, data[np.ix_(va, cols)])
        rows.append({"config": name, "n_features": len(cols),
                     "accuracy": _accuracy(pred, y_va)})
    return rows


def train_models(benign_rows, labeled_rows, labels, baselines,
                 seed: int = 0, k: int | None = None, n_trees: int = 200,
                 tune_repeats: int = 20) -> TrainReport:
    """Fit every model stage from feature rows; deterministic per seed.

    benign_rows   feature matrix from a benign-only capture; fixes the
                  normalization bounds, the projection, and the novelty
                  detector's notion of normal.
    labeled_rows  feature matrix with per-row `labels` (normal + attack);
                  attack rows train the categorizer, and the whole set
                  validates the neighborhood-size sweep.
    baselines     per-peer packet-size histograms (stored in the bundle
                  so a live sensor can compute divergence features).
    k             fixed neighborhood size; None runs the seeded sweep.
    """
    benign = np.asarray(benign_rows, dtype=float)
    labeled = np.asarray(labeled_rows, dtype=float)
    labels = list(labels)
    if len(labels) != len(labeled):
        raise ValueError("labeled rows/labels length mismatch")

    minmax = pre.fit_minmax(benign)
    norm_benign = pre.apply_minmax(benign, minmax)
    pca = pre.fit_pca(norm_benign, n_components=2)
    benign_emb = pre.project(norm_benign, pca)

    labeled_emb = pre.project(pre.apply_minmax(labeled, minmax), pca)
    is_attack = np.asarray([l != NORMAL_LABEL for l in labels], dtype=bool)

    if k is None:
        k, k_summary = lof_mod.tune_k(
            benign_emb, labeled_emb, is_attack,
            repeats=tune_repeats, seed=seed)
    else:
        k_summary = {}

    # Final detector: fit on a seeded 75% of the benign embedding (size
    # capped), calibrate the cut on the held-out 25%.
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(benign_emb))
    cut = int(len(benign_emb) * 0.75)
    fit_idx = perm[:min(cut, 4000)]
    hold_idx = perm[cut:]
    lof = lof_mod.fit_lof(benign_emb[fit_idx], k=k)
    threshold = lof_mod.calibrate_threshold(lof, benign_emb[hold_idx])

    # Categorizer: feature selection and training use attack rows only.
    attack_rows = labeled[is_attack]
    attack_labels = [l for l in labels if l != NORMAL_LABEL]
    if len(set(attack_labels)) < 2:
        raise ValueError("need at least two attack classes to train")
    norm_attacks = pre.apply_minmax(attack_rows, minmax)

    corr_kept = pre.fit_correlation_filter(norm_attacks,
                                           feature_names=FEATURE_NAMES)
    corr_cols = [FEATURE_NAMES.index(n) for n in corr_kept]
    selection = pre.run_rfe(norm_attacks[:, corr_cols], attack_labels,
                            corr_kept, n_trees=n_trees, seed=seed)
    selection.kept_after_correlation = corr_kept
    rfe_cols = [FEATURE_NAMES.index(n) for n in selection.kept_after_rfe]

    ablation = _ablation(norm_attacks, attack_rows, attack_labels,
                         corr_cols, rfe_cols, n_trees, seed)

    # Holdout macro accuracy from a forest trained on the split only;
    # the shipped forest retrains on all attack rows.
    rng = np.random.default_rng(seed)
    tr, va = pre.stratified_split(attack_labels, 0.75, rng)
    split_model = forest_mod.train_forest(
        norm_attacks[np.ix_(tr, rfe_cols)], [attack_labels[i] for i in tr],
        selection.kept_after_rfe, n_trees=n_trees, seed=seed)
    pred = forest_mod.predict(split_model, norm_attacks[np.ix_(va, rfe_cols)])
    holdout_macro = macro_accuracy(pred, [attack_labels[i] for i in va])

    forest = forest_mod.train_forest(
        norm_attacks[:, rfe_cols], attack_labels,
        selection.kept_after_rfe, n_trees=n_trees, seed=seed)

    bundle = ModelBundle(minmax=minmax, pca=pca, baselines=dict(baselines),
                         corr_kept=corr_kept,
                         rfe_kept=selection.kept_after_rfe,
                         lof=lof, forest=forest)
    return TrainReport(bundle=bundle, selection=selection, k_chosen=k,
                       k_summary=k_summary, ablation=ablation,
                       holdout_macro_accuracy=holdout_macro,
                       threshold=threshold, seed=seed)
