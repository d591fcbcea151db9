"""k-nearest-neighbour voting on raw count vectors (Euclidean distance)."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import TooFewNeighbors
from .model import TrainedModel, check_fit_input, encode_targets

WEIGHTINGS = ("uniform", "distance")


@dataclass
class KnnParams:
    n_neighbors: int = 5
    weighting: str = "distance"


def fit_knn(X, y, params: KnnParams = KnnParams()) -> TrainedModel:
    if params.weighting not in WEIGHTINGS:
        raise ValueError(f"weighting must be one of {WEIGHTINGS}")
    classes, ids = encode_targets(y)
    X = check_fit_input(X, ids)
    if X.shape[0] < params.n_neighbors:
        raise TooFewNeighbors(f"{X.shape[0]} training rows for k={params.n_neighbors}")
    return TrainedModel("knn", classes, X.shape[1], asdict(params), train_X=X.copy(), train_y=ids)


def neighbors(model: TrainedModel, X, k: int):
    """Indices and distances of the ``k`` nearest training rows; ties keep training order."""
    dist = cdist(X, model.train_X)
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return order, np.take_along_axis(dist, order, axis=1)


def vote_weights(dist: np.ndarray, weighting: str) -> np.ndarray:
    """Per-neighbour vote weights for one query.

    With distance weighting, any exact match (d == 0) takes the whole vote,
    shared equally among the exact matches; otherwise weights are ``1/d``.
    """
    if weighting == "uniform":
        return np.ones_like(dist)
    exact = dist == 0
    if exact.any():
        return exact.astype(np.float64)
    return 1.0 / dist


def knn_scores(model: TrainedModel, X) -> np.ndarray:
    k = model.params["n_neighbors"]
    if model.train_X.shape[0] < k:
        raise TooFewNeighbors(f"{model.train_X.shape[0]} training rows for k={k}")
    idx, dist = neighbors(model, X, k)
    scores = np.zeros((X.shape[0], model.n_classes))
    for r in range(X.shape[0]):
        w = vote_weights(dist[r], model.params["weighting"])
        np.add.at(scores[r], model.train_y[idx[r]], w)
    return scores / scores.sum(axis=1, keepdims=True)


def knn_predict(model: TrainedModel, X, params: KnnParams | None = None) -> np.ndarray:
    """Predict with optional per-call ``params`` overriding the fitted ones."""
    from .model import predict

    if params is not None:
        model = TrainedModel("knn", model.classes, model.n_features, asdict(params),
                             train_X=model.train_X, train_y=model.train_y)
    return predict(model, X)
