"""Boruta all-relevant feature selection over boosted-tree gain importances.

Each iteration appends one shadow column per real column (a row permutation
of it), fits a boosted ensemble, and records a hit for every real feature
whose importance exceeds the ``perc``-th percentile of the shadow importances.
After ``max_iter`` iterations a two-sided binomial test on the hit counts,
Bonferroni-corrected over features, labels each feature confirmed, rejected
or tentative.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.stats import binomtest

from .errors import DecisionMismatch, EmptyMatrix, SingleClass, TooFewRows
from .features import FeatureVocabulary
from .ml.boosting import GbtParams, feature_importances, fit_gbt
from .ml.tree import BinnedMatrix, as_dense

CONFIRMED, REJECTED, TENTATIVE = "confirmed", "rejected", "tentative"


@dataclass
class BorutaParams:
    learning_rate: float = 0.05
    max_iter: int = 50
    max_depth: int = 5
    perc: int = 90
    alpha: float = 0.05
    rng_seed: int = 0
    n_rounds: int = 50
    subsample: float = 1.0
    # hessian floor per leaf; at p~0.5 this is about 20 rows
    min_child_weight: float = 5.0
    min_split_gain: float = 0.0

    def __post_init__(self):
        if not 0 < self.perc <= 100:
            raise ValueError("perc must be in (0, 100]")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if self.max_iter < 1 or self.max_depth < 1:
            raise ValueError("max_iter and max_depth must be positive")


@dataclass
class BorutaDecision:
    status: list[str]
    hit_counts: np.ndarray
    iterations_run: int
    thresholds: list[float] = field(default_factory=list)

    def indices(self, status: str) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.status) if s == status], dtype=np.int64)

    @property
    def confirmed(self) -> np.ndarray:
        return self.indices(CONFIRMED)

    @property
    def rejected(self) -> np.ndarray:
        return self.indices(REJECTED)

    @property
    def tentative(self) -> np.ndarray:
        return self.indices(TENTATIVE)

    def to_json(self, vocab: FeatureVocabulary | None = None) -> dict:
        features = []
        for i, (s, h) in enumerate(zip(self.status, self.hit_counts)):
            item = {"column": i, "status": s, "hits": int(h)}
            if vocab is not None:
                item["token"] = vocab.tokens[i].text
                item["kind"] = vocab.tokens[i].kind
            features.append(item)
        return {
            "iterations_run": self.iterations_run,
            "counts": {k: len(self.indices(k)) for k in (CONFIRMED, TENTATIVE, REJECTED)},
            "features": features,
        }

    @classmethod
    def from_json(cls, doc) -> "BorutaDecision":
        feats = sorted(doc["features"], key=lambda f: f["column"])
        return cls([f["status"] for f in feats], np.array([f["hits"] for f in feats]), doc["iterations_run"])


def _check_labels(labels, n_rows):
    y = np.asarray(labels)
    if len(y) != n_rows:
        raise EmptyMatrix(f"{len(y)} labels for {n_rows} rows")
    if len(np.unique(y)) < 2:
        raise SingleClass("Boruta needs at least two classes")
    return y


def shadow_expand(matrix, rng) -> np.ndarray:
    """Append one independently row-permuted copy of every column."""
    X = as_dense(matrix)
    if X.ndim != 2 or X.shape[1] < 1:
        raise EmptyMatrix("need at least one column")
    shadows = np.empty_like(X)
    for j in range(X.shape[1]):
        shadows[:, j] = X[rng.permutation(X.shape[0]), j]
    return np.hstack([X, shadows])


def _shadow_binned(binned: BinnedMatrix, rng) -> BinnedMatrix:
    """Binned view of ``shadow_expand``: permuting codes permutes values."""
    n, d = binned.shape
    codes = np.empty_like(binned.codes)
    for j in range(d):
        codes[:, j] = binned.codes[rng.permutation(n), j]
    return binned.with_columns(codes, list(binned.values))


def _gbt_params(params: BorutaParams, seed) -> GbtParams:
    return GbtParams(learning_rate=params.learning_rate, max_depth=params.max_depth,
                     subsample=params.subsample, n_rounds=params.n_rounds, rng_seed=seed,
                     min_child_weight=params.min_child_weight, min_split_gain=params.min_split_gain)


def importance(matrix, labels, params: BorutaParams = BorutaParams()) -> np.ndarray:
    """Total split gain per column of a boosted ensemble (``params`` depth/shrinkage)."""
    X = as_dense(matrix)
    y = _check_labels(labels, X.shape[0])
    model = fit_gbt(X, y, _gbt_params(params, params.rng_seed))
    return feature_importances(model)


def _decide(hits, n_iter, alpha):
    m = len(hits)
    status = []
    for h in hits:
        p = binomtest(int(h), n_iter, 0.5, alternative="two-sided").pvalue
        if p * m < alpha:
            status.append(CONFIRMED if h > n_iter / 2 else REJECTED)
        else:
            status.append(TENTATIVE)
    return status


def boruta(matrix, labels, params: BorutaParams = BorutaParams(), on_iteration=None) -> BorutaDecision:
    X = as_dense(matrix)
    n, d = X.shape
    if n < 10:
        raise TooFewRows(f"Boruta needs at least 10 rows, got {n}")
    if d < 1:
        raise EmptyMatrix("no columns to select from")
    y = _check_labels(labels, n)

    binned = BinnedMatrix.from_dense(X)
    seeds = np.random.SeedSequence(params.rng_seed).spawn(params.max_iter)
    hits = np.zeros(d, dtype=np.int64)
    thresholds = []
    for it, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        aug = _shadow_binned(binned, rng)
        X_aug = np.column_stack([X] + [aug.values[j][aug.codes[:, d + j]] for j in range(d)])
        model = fit_gbt(X_aug, y, _gbt_params(params, int(rng.integers(2**31))), binned=aug)
        imp = feature_importances(model)
        thr = float(np.percentile(imp[d:], params.perc))
        hits += imp[:d] > thr
        thresholds.append(thr)
        if on_iteration is not None:
            on_iteration(it, imp, thr)
    return BorutaDecision(_decide(hits, params.max_iter, params.alpha), hits, params.max_iter, thresholds)


def apply_selection(matrix, vocab: FeatureVocabulary, decision: BorutaDecision, keep_tentative: bool = False):
    """Keep confirmed (and optionally tentative) columns; returns ``(matrix', vocab')``."""
    n_cols = matrix.shape[1]
    if len(decision.status) != n_cols or len(vocab) != n_cols:
        raise DecisionMismatch(f"decision covers {len(decision.status)} columns, matrix has {n_cols}")
    keep = {CONFIRMED, TENTATIVE} if keep_tentative else {CONFIRMED}
    cols = [i for i, s in enumerate(decision.status) if s in keep]
    if not cols:
        warnings.warn("selection kept no columns; the result is an empty matrix", stacklevel=2)
    sub = sp.csr_matrix(matrix)[:, cols] if sp.issparse(matrix) else np.asarray(matrix)[:, cols]
    return sub, vocab.subset(cols)


def save_decision(decision: BorutaDecision, path, vocab=None, params: BorutaParams | None = None,
                  provenance: dict | None = None) -> None:
    doc = decision.to_json(vocab)
    if params is not None:
        doc["params"] = asdict(params)
    if provenance:
        doc["provenance"] = provenance
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")
