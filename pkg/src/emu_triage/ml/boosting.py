"""Gradient-boosted trees with logistic (binary) or softmax (multiclass) loss.

Trees are fitted with second-order statistics, XGBoost style: split gain from
gradient/hessian sums with L2 leaf regularization, leaf value ``-G/(H+lambda)``
scaled by the learning rate. Multiclass boosting grows one tree per class per
round.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .model import TrainedModel, check_fit_input, encode_targets
from .tree import BinnedMatrix, grow_tree

_MIN_HESS = 1e-16


@dataclass
class GbtParams:
    learning_rate: float = 0.02
    max_depth: int = 10
    subsample: float = 0.8
    n_rounds: int = 100
    rng_seed: int = 0
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0
    min_split_gain: float = 0.0


def _initial_scores(ids, n_classes):
    prior = np.bincount(ids, minlength=n_classes) / len(ids)
    prior = np.clip(prior, 1e-12, None)
    if n_classes == 2:
        return np.array([np.log(prior[1] / prior[0])])
    return np.log(prior)


def _log_loss(F, ids):
    if F.shape[1] == 1:
        z = F[:, 0]
        # -log sigmoid(z) for y=1, -log(1-sigmoid(z)) for y=0
        return float(np.mean(np.logaddexp(0.0, np.where(ids == 1, -z, z))))
    return float(-np.mean(log_softmax(F, axis=1)[np.arange(len(ids)), ids]))


def fit_gbt(X, y, params: GbtParams = GbtParams(), binned: BinnedMatrix | None = None) -> TrainedModel:
    classes, ids = encode_targets(y)
    X = check_fit_input(X, ids)
    n, d = X.shape
    binned = BinnedMatrix.from_dense(X) if binned is None else binned
    k = len(classes)
    n_out = 1 if k == 2 else k
    base = _initial_scores(ids, k)
    F = np.tile(base, (n, 1))
    Y = np.eye(k)[ids] if n_out > 1 else ids[:, None].astype(np.float64)
    rng = np.random.default_rng(params.rng_seed)
    n_sub = max(1, int(round(params.subsample * n)))
    lam = params.reg_lambda

    def leaf(stats):
        return [-stats[:, 0].sum() / (stats[:, 1].sum() + lam)]

    trees = []
    losses = [_log_loss(F, ids)]
    for _ in range(params.n_rounds):
        if n_sub < n:
            idx = np.sort(rng.choice(n, size=n_sub, replace=False))
        else:
            idx = np.arange(n)
        P = expit(F) if n_out == 1 else softmax(F, axis=1)
        grad = P - Y
        hess = np.maximum(P * (1.0 - P), _MIN_HESS)
        deltas = np.empty_like(F)
        for c in range(n_out):
            stats = np.column_stack([grad[idx, c], hess[idx, c], np.ones(len(idx))])
            tree = grow_tree(binned, idx, stats, criterion="newton", max_depth=params.max_depth,
                             reg_lambda=lam, min_child_weight=params.min_child_weight,
                             min_split_gain=params.min_split_gain, leaf_fn=leaf)
            trees.append(tree)
            deltas[:, c] = tree.predict_value(X)[:, 0]
        F += params.learning_rate * deltas
        losses.append(_log_loss(F, ids))

    return TrainedModel("gbt", classes, d, asdict(params), trees=trees,
                        base_score=base, loss_history=losses)


def raw_scores(model: TrainedModel, X) -> np.ndarray:
    n_out = len(model.base_score)
    F = np.tile(model.base_score, (X.shape[0], 1))
    lr = model.params["learning_rate"]
    for i, t in enumerate(model.trees):
        F[:, i % n_out] += lr * t.predict_value(X)[:, 0]
    return F


def gbt_proba(model: TrainedModel, X) -> np.ndarray:
    F = raw_scores(model, X)
    if F.shape[1] == 1:
        p = expit(F[:, 0])
        return np.column_stack([1.0 - p, p])
    return softmax(F, axis=1)


def feature_importances(model: TrainedModel) -> np.ndarray:
    """Total split gain per feature over the whole ensemble."""
    imp = np.zeros(model.n_features)
    for t in model.trees:
        imp += t.importances(model.n_features)
    return imp
