from .boosting import GbtParams, fit_gbt
from .forest import RfParams, fit_random_forest
from .knn import KnnParams, fit_knn, knn_predict
from .model import (
    TrainedModel,
    fit,
    load_model,
    model_from_dict,
    model_to_dict,
    predict,
    predict_proba,
    save_model,
)

__all__ = [
    "GbtParams",
    "KnnParams",
    "RfParams",
    "TrainedModel",
    "fit",
    "fit_gbt",
    "fit_knn",
    "fit_random_forest",
    "knn_predict",
    "load_model",
    "model_from_dict",
    "model_to_dict",
    "predict",
    "predict_proba",
    "save_model",
]
