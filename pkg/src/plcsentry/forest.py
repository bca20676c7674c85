"""Random-forest attack categorizer built on flat node tables.

200 bootstrap-trained decision trees with Gini split selection and
floor(sqrt(d)) candidate features per node, grown until pure or fewer
than two samples.  Trees are stored as flat arrays so models serialize
to JSON and train bit-identically for a given seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

ATTACK_LABELS = ["EX-1", "EX-2", "EX-3", "EX-4", "EX-6", "EX-7"]
NORMAL_LABEL = "Normal"


@dataclass
class Tree:
    feature: np.ndarray    # split feature per node, -1 for leaves
    threshold: np.ndarray  # split threshold per node (x <= t goes left)
    left: np.ndarray
    right: np.ndarray
    votes: np.ndarray      # (n_nodes, n_classes) class counts, leaves only

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "votes": self.votes.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["votes"], dtype=np.int64),
        )


@dataclass
class ForestModel:
    trees: list
    feature_names: list
    classes: list
    rng_seed: int

    def to_dict(self) -> dict:
        return {
            "seed": self.rng_seed,
            "feature_names": self.feature_names,
            "classes": self.classes,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            feature_names=list(d["feature_names"]),
            classes=list(d["classes"]),
            rng_seed=d["seed"],
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _gini(counts: np.ndarray, n: float) -> float:
    return 1.0 - float(((counts / n) ** 2).sum())


def _best_split(X, y, idx, feats, n_classes):
    """Best (feature, threshold, decrease) over candidate features.

    Ties keep the first candidate in feature draw order, then the lowest
    threshold, so training is deterministic.
    """
    y_node = y[idx]
    n = len(idx)
    parent_counts = np.bincount(y_node, minlength=n_classes).astype(float)
    parent_gini = _gini(parent_counts, n)
    best = None  # (decrease, feat, threshold)
    for f in feats:
        v = X[idx, f]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        ys = y_node[order]
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), ys] = 1.0
        left_counts = np.cumsum(onehot, axis=0)  # counts among first i+1
        cut = np.flatnonzero(vs[:-1] < vs[1:])   # split after position i
        if cut.size == 0:
            continue
        nl = (cut + 1).astype(float)
        nr = n - nl
        lc = left_counts[cut]
        rc = parent_counts - lc
        gini_l = 1.0 - ((lc / nl[:, None]) ** 2).sum(axis=1)
        gini_r = 1.0 - ((rc / nr[:, None]) ** 2).sum(axis=1)
        dec = parent_gini - (nl * gini_l + nr * gini_r) / n
        i = int(np.argmax(dec))
        thr = (vs[cut[i]] + vs[cut[i] + 1]) / 2.0
        if best is None or dec[i] > best[0] + 1e-15:
            best = (float(dec[i]), int(f), float(thr))
    return best


def _build_tree(X, y, n_classes, rng):
    n, d = X.shape
    mtry = max(1, int(np.floor(np.sqrt(d))))
    boot = rng.integers(0, n, size=n)
    feature, threshold, left, right, votes = [], [], [], [], []
    importances = np.zeros(d)

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        votes.append(np.zeros(n_classes, dtype=np.int64))
        return len(feature) - 1

    # Explicit stack, left-first depth order for reproducible node ids.
    root = new_node()
    stack = [(root, boot)]
    while stack:
        node, idx = stack.pop()
        counts = np.bincount(y[idx], minlength=n_classes)
        if len(idx) < 2 or (counts > 0).sum() <= 1:
            votes[node] = counts.astype(np.int64)
            continue
        feats = rng.choice(d, size=mtry, replace=False)
        best = _best_split(X, y, idx, feats, n_classes)
        if best is None:
            # Every sampled feature was constant in this node; fall back
            # to the remaining features rather than leafing a mixed node.
            rest = np.setdiff1d(np.arange(d), feats)
            best = _best_split(X, y, idx, rest, n_classes)
        if best is None:
            votes[node] = counts.astype(np.int64)
            continue
        dec, f, thr = best
        importances[f] += (len(idx) / n) * dec
        mask = X[idx, f] <= thr
        li, ri = new_node(), new_node()
        feature[node], threshold[node] = f, thr
        left[node], right[node] = li, ri
        stack.append((ri, idx[~mask]))
        stack.append((li, idx[mask]))

    tree = Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(votes, dtype=np.int64),
    )
    return tree, importances


def train_forest(rows, labels, feature_names, n_trees: int = 200,
                 seed: int = 0) -> ForestModel:
    """Train the bootstrap forest; deterministic given the seed."""
    X = np.asarray(rows, dtype=float)
    labels = list(labels)
    if X.size == 0:
        raise ValueError("empty training data")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValueError("training data must contain at least two classes")
    cindex = {c: i for i, c in enumerate(classes)}
    y = np.asarray([cindex[l] for l in labels], dtype=np.int64)

    seeds = np.random.SeedSequence(seed).spawn(n_trees)
    trees = []
    importances = np.zeros(X.shape[1])
    for ss in seeds:
        tree, imp = _build_tree(X, y, len(classes), np.random.default_rng(ss))
        trees.append(tree)
        importances += imp
    model = ForestModel(trees=trees, feature_names=list(feature_names),
                        classes=classes, rng_seed=seed)
    model._importances = importances / n_trees
    return model


def feature_importances(model: ForestModel) -> np.ndarray:
    """Mean decrease in Gini impurity per feature across all trees."""
    imp = getattr(model, "_importances", None)
    if imp is not None:
        return imp
    raise ValueError("importances only available on freshly trained models")


def _tree_votes(tree: Tree, X: np.ndarray) -> np.ndarray:
    """Leaf class index per row, ties to the lower class index."""
    node = np.zeros(len(X), dtype=np.int64)
    active = tree.feature[node] >= 0
    while active.any():
        f = tree.feature[node[active]]
        t = tree.threshold[node[active]]
        go_left = X[active, f] <= t
        nxt = np.where(go_left, tree.left[node[active]], tree.right[node[active]])
        node[active] = nxt
        active = tree.feature[node] >= 0
    return np.argmax(tree.votes[node], axis=1)


def predict_votes(model: ForestModel, rows) -> np.ndarray:
    """(n_rows, n_classes) per-class tree-vote counts."""
    X = np.atleast_2d(np.asarray(rows, dtype=float))
    if X.shape[1] != len(model.feature_names):
        raise ValueError(
            f"arity mismatch: {X.shape[1]} != {len(model.feature_names)}"
        )
    counts = np.zeros((len(X), len(model.classes)), dtype=np.int64)
    for tree in model.trees:
        cls = _tree_votes(tree, X)
        counts[np.arange(len(X)), cls] += 1
    return counts


def predict(model: ForestModel, rows) -> list:
    """Majority-vote labels; ties break to the lower-ordered class."""
    counts = predict_votes(model, rows)
    return [model.classes[i] for i in np.argmax(counts, axis=1)]


def classify(model: ForestModel, row) -> tuple[str, dict]:
    """Label one row and report per-class vote fractions."""
    counts = predict_votes(model, [row])[0]
    fractions = counts / counts.sum()
    label = model.classes[int(np.argmax(counts))]
    return label, {c: float(f) for c, f in zip(model.classes, fractions)}
