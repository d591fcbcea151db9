"""Trained-model container, prediction dispatch and JSON persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import EmptyMatrix, SingleClass, WidthMismatch
from .tree import NewtonTree, Tree, as_dense

KINDS = ("rf", "gbt", "knn")


@dataclass
class TrainedModel:
    kind: str
    classes: list
    n_features: int
    params: dict
    trees: list = field(default_factory=list)
    # gbt: initial raw scores (one per output) and shrinkage
    base_score: np.ndarray | None = None
    # knn: training rows and their class ids
    train_X: np.ndarray | None = None
    train_y: np.ndarray | None = None
    # gbt: training log-loss after each round (index 0 = before any round)
    loss_history: list = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return len(self.classes)


def encode_targets(y, allow_single_class: bool = False):
    y = np.asarray(y)
    if y.ndim != 1 or y.size == 0:
        raise EmptyMatrix("labels must be a nonempty 1-d sequence")
    classes, ids = np.unique(y, return_inverse=True)
    if len(classes) < 2 and not allow_single_class:
        raise SingleClass(f"need at least 2 classes, got {classes.tolist()}")
    return classes.tolist(), ids.reshape(-1).astype(np.int64)


def check_fit_input(X, y):
    X = as_dense(X)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise EmptyMatrix(f"cannot fit on a matrix of shape {X.shape}")
    if X.shape[0] != len(y):
        raise WidthMismatch(f"{X.shape[0]} rows but {len(y)} labels")
    return X


def _check_width(model: TrainedModel, X) -> np.ndarray:
    X = as_dense(X)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise WidthMismatch(f"model expects {model.n_features} columns, got {X.shape}")
    return X


def predict_proba(model: TrainedModel, X) -> np.ndarray:
    """Per-class scores, rows summing to 1; columns follow ``model.classes``."""
    X = _check_width(model, X)
    if model.n_classes == 1:
        return np.ones((X.shape[0], 1))
    if model.kind == "rf":
        from .forest import forest_proba
        return forest_proba(model, X)
    if model.kind == "gbt":
        from .boosting import gbt_proba
        return gbt_proba(model, X)
    if model.kind == "knn":
        from .knn import knn_scores
        return knn_scores(model, X)
    raise ValueError(f"unknown model kind {model.kind!r}")


def predict(model: TrainedModel, X) -> np.ndarray:
    proba = predict_proba(model, X)
    return np.asarray(model.classes, dtype=object)[np.argmax(proba, axis=1)]


def fit(kind: str, X, y, params=None) -> TrainedModel:
    if kind == "rf":
        from .forest import RfParams, fit_random_forest
        return fit_random_forest(X, y, params or RfParams())
    if kind == "gbt":
        from .boosting import GbtParams, fit_gbt
        return fit_gbt(X, y, params or GbtParams())
    if kind == "knn":
        from .knn import KnnParams, fit_knn
        return fit_knn(X, y, params or KnnParams())
    raise ValueError(f"unknown model kind {kind!r}")


def _to_py(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


def model_to_dict(model: TrainedModel) -> dict:
    doc = {
        "format": "emu-triage-model/1",
        "kind": model.kind,
        "classes": [_to_py(c) for c in model.classes],
        "n_features": model.n_features,
        "params": model.params,
    }
    if model.trees:
        doc["trees"] = [t.to_dict() for t in model.trees]
    if model.base_score is not None:
        doc["base_score"] = model.base_score.tolist()
    if model.train_X is not None:
        X = model.train_X
        doc["train_rows"] = [[[int(c), _to_py(X[r, c])] for c in np.flatnonzero(X[r])] for r in range(len(X))]
        doc["train_y"] = model.train_y.tolist()
    if model.loss_history:
        doc["loss_history"] = list(model.loss_history)
    return doc


def model_from_dict(doc: dict) -> TrainedModel:
    tree_cls = NewtonTree if doc["kind"] == "gbt" else Tree
    train_X = train_y = None
    if "train_rows" in doc:
        train_X = np.zeros((len(doc["train_rows"]), doc["n_features"]))
        for r, pairs in enumerate(doc["train_rows"]):
            for c, v in pairs:
                train_X[r, c] = v
        train_y = np.asarray(doc["train_y"], dtype=np.int64)
    return TrainedModel(
        kind=doc["kind"],
        classes=list(doc["classes"]),
        n_features=doc["n_features"],
        params=doc["params"],
        trees=[tree_cls.from_dict(t) for t in doc.get("trees", [])],
        base_score=np.asarray(doc["base_score"]) if "base_score" in doc else None,
        train_X=train_X,
        train_y=train_y,
        loss_history=list(doc.get("loss_history", [])),
    )


def save_model(model: TrainedModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n")


def load_model(path) -> TrainedModel:
    return model_from_dict(json.loads(Path(path).read_text()))
