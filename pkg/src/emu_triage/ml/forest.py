"""Random forest: bootstrap-weighted Gini trees with per-node feature sampling."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import TrainedModel, check_fit_input, encode_targets
from .tree import BinnedMatrix, grow_tree


@dataclass
class RfParams:
    n_estimators: int = 100
    max_depth: int = 20
    rng_seed: int = 0
    features_per_split: str | int = "sqrt"
    bootstrap: bool = True


def features_per_split(rule, n_cols: int) -> int | None:
    if rule in (None, "all"):
        return None
    if rule == "sqrt":
        return max(1, int(math.sqrt(n_cols)))
    if rule == "log2":
        return max(1, int(math.log2(n_cols)))
    return max(1, min(int(rule), n_cols))


def _class_distribution(stats):
    w = stats.sum(axis=0)
    total = w.sum()
    return w / total if total > 0 else w


def fit_random_forest(X, y, params: RfParams = RfParams(), allow_single_class=False) -> TrainedModel:
    classes, ids = encode_targets(y, allow_single_class)
    X = check_fit_input(X, ids)
    n, d = X.shape
    binned = BinnedMatrix.from_dense(X)
    onehot = np.eye(len(classes))[ids]
    mf = features_per_split(params.features_per_split, d)

    trees = []
    for child in np.random.SeedSequence(params.rng_seed).spawn(params.n_estimators):
        rng = np.random.default_rng(child)
        if params.bootstrap:
            counts = np.bincount(rng.integers(0, n, size=n), minlength=n)
        else:
            counts = np.ones(n, dtype=np.int64)
        idx = np.flatnonzero(counts)
        stats = onehot[idx] * counts[idx, None]
        trees.append(grow_tree(binned, idx, stats, criterion="gini", max_depth=params.max_depth,
                               max_features=mf, rng=rng, leaf_fn=_class_distribution))
    return TrainedModel("rf", classes, d, asdict(params), trees=trees)


def forest_proba(model: TrainedModel, X) -> np.ndarray:
    """Mean of the trees' leaf class distributions."""
    proba = np.zeros((X.shape[0], model.n_classes))
    for t in model.trees:
        proba += t.predict_value(X)
    return proba / len(model.trees)


def feature_importances(model: TrainedModel) -> np.ndarray:
    """Weighted Gini decrease per feature, summed over trees."""
    imp = np.zeros(model.n_features)
    for t in model.trees:
        imp += t.importances(model.n_features)
    return imp
