"""CART tree growing over exactly-binned features.

Every column is coded by the rank of its value among the column's distinct
values, so a per-node histogram over those codes enumerates exactly the
candidate thresholds of plain CART: midpoints between consecutive distinct
values present in the node. Two split criteria share the grower:

* ``gini``   classification; per-row stats are weighted one-hot class counts.
* ``newton`` second-order boosting; per-row stats are (gradient, hessian).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

_NO_CHILD = -1


def as_dense(X) -> np.ndarray:
    if sp.issparse(X):
        return X.toarray().astype(np.float64, copy=False)
    return np.asarray(X, dtype=np.float64)


class BinnedMatrix:
    """Column-wise rank codes of a dense matrix plus each column's distinct values.

    ``flat`` holds the codes shifted into one global bin space (column ``j``
    owns bins ``starts[j] .. starts[j] + n_bins[j] - 1``) so a single
    ``bincount`` builds every column's histogram at once.
    """

    def __init__(self, codes: np.ndarray, values: list[np.ndarray]):
        self.codes = codes
        self.values = values
        self.n_bins = np.array([len(v) for v in values], dtype=np.int64)
        self.starts = np.concatenate(([0], np.cumsum(self.n_bins)[:-1])).astype(np.int64)
        self.total_bins = int(self.n_bins.sum())
        self.owner = np.repeat(np.arange(len(values)), self.n_bins)
        self.flat = codes.astype(np.int64) + self.starts

    @classmethod
    def from_dense(cls, X) -> "BinnedMatrix":
        X = as_dense(X)
        n, d = X.shape
        codes = np.empty((n, d), dtype=np.int32)
        values = []
        for j in range(d):
            v, inv = np.unique(X[:, j], return_inverse=True)
            codes[:, j] = inv.reshape(-1)
            values.append(v)
        return cls(codes, values)

    @property
    def shape(self):
        return self.codes.shape

    def with_columns(self, codes: np.ndarray, values: list[np.ndarray]) -> "BinnedMatrix":
        return BinnedMatrix(np.hstack([self.codes, codes]), self.values + values)

    def nonconstant(self, idx, cols) -> np.ndarray:
        if len(cols) == 0 or len(idx) == 0:
            return cols[:0]
        block = self.codes[np.ix_(idx, cols)]
        return cols[block.min(axis=0) != block.max(axis=0)]

    def histogram(self, rows, stats, cols=None) -> np.ndarray:
        """``(total_bins, n_stats)`` sums of ``stats`` over ``rows``.

        With ``cols`` only those columns are filled; the rest stay zero.
        """
        flat = self.flat[rows] if cols is None else self.flat[np.ix_(rows, cols)]
        m = flat.shape[1]
        flat = flat.ravel()
        hist = np.empty((self.total_bins, stats.shape[1]))
        for c in range(stats.shape[1]):
            hist[:, c] = np.bincount(flat, weights=np.repeat(stats[:, c], m), minlength=self.total_bins)
        return hist


@dataclass
class Tree:
    """Flat array tree. Leaves have ``feature == -1``.

    ``gain`` is the per-node criterion improvement (Gini: weighted impurity
    decrease divided by node weight; Newton: structure-score gain) and
    ``weight`` the node's total sample weight (hessian sum for Newton trees).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    weight: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            n = node[active]
            go_left = X[active, self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def importances(self, n_features: int) -> np.ndarray:
        """Total criterion improvement attributed to each feature."""
        internal = self.feature >= 0
        contrib = self.gain * self.weight if self._weighted_gain else self.gain
        imp = np.zeros(n_features)
        np.add.at(imp, self.feature[internal], contrib[internal])
        return imp

    _weighted_gain = True

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "gain": self.gain.tolist(),
            "weight": self.weight.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64).reshape(len(d["feature"]), -1),
            np.asarray(d["gain"], dtype=np.float64),
            np.asarray(d["weight"], dtype=np.float64),
        )


class NewtonTree(Tree):
    _weighted_gain = False


@dataclass
class SplitCandidate:
    feature: int
    bin: int
    threshold: float
    gain: float


def _cumulative(binned: BinnedMatrix, hist):
    """Left-side sums (bins <= b within the column) and column totals per bin."""
    cum = np.cumsum(hist, axis=0)
    base = np.vstack([np.zeros((1, hist.shape[1])), cum])[binned.starts]
    left = cum - base[binned.owner]
    total = (cum[binned.starts + binned.n_bins - 1] - base)[binned.owner]
    return left, total


def _finish(binned: BinnedMatrix, occupied, score):
    if not np.isfinite(score).any():
        return None
    b = int(np.argmax(score))
    f = int(binned.owner[b])
    start = int(binned.starts[f])
    end = start + int(binned.n_bins[f])
    nxt = b + 1 + int(np.flatnonzero(occupied[b + 1:end])[0])
    vals = binned.values[f]
    thr = (vals[b - start] + vals[nxt - start]) / 2.0
    return SplitCandidate(f, b - start, float(thr), float(score[b]))


def gini_split_from_hist(binned: BinnedMatrix, hist) -> SplitCandidate | None:
    """Best Gini split given per-bin weighted class counts.

    Gain is ``gini(parent) - wL/W gini(L) - wR/W gini(R)``. Zero-gain splits
    are valid (an impure node may need them, e.g. XOR); ties go to the lowest
    column index, then the lowest threshold.
    """
    left, total = _cumulative(binned, hist)
    wl = left.sum(axis=1)
    wt = total.sum(axis=1)
    wr = wt - wl
    occupied = hist.sum(axis=1) > 0
    valid = occupied & (wr > 1e-12)
    with np.errstate(divide="ignore", invalid="ignore"):
        imp_l = wl - (left ** 2).sum(axis=1) / wl
        imp_r = wr - ((total - left) ** 2).sum(axis=1) / wr
        imp_p = wt - (total ** 2).sum(axis=1) / wt
        score = np.where(valid, (imp_p - imp_l - imp_r) / wt, -np.inf)
    return _finish(binned, occupied, score)


def newton_split_from_hist(binned: BinnedMatrix, hist, reg_lambda, min_child_weight,
                           min_split_gain=0.0) -> SplitCandidate | None:
    """Best second-order split given per-bin (gradient, hessian, count) sums.

    Gain is ``GL^2/(HL+l) + GR^2/(HR+l) - G^2/(H+l)``; only strictly positive
    gains with both children at or above ``min_child_weight`` hessian are valid.
    """
    left, total = _cumulative(binned, hist)
    gl, hl = left[:, 0], left[:, 1]
    gt, ht = total[:, 0], total[:, 1]
    gr, hr = gt - gl, ht - hl
    occupied = hist[:, 2] > 0
    valid = occupied & (total[:, 2] - left[:, 2] > 0) & (hl >= min_child_weight) & (hr >= min_child_weight)
    gain = gl ** 2 / (hl + reg_lambda) + gr ** 2 / (hr + reg_lambda) - gt ** 2 / (ht + reg_lambda)
    score = np.where(valid & (gain > max(min_split_gain, 1e-12)), gain, -np.inf)
    return _finish(binned, occupied, score)


def best_gini_split(binned: BinnedMatrix, idx, feats, class_weights) -> SplitCandidate | None:
    """Best Gini split over columns ``feats`` (``None`` = all) for node rows ``idx``."""
    return gini_split_from_hist(binned, binned.histogram(idx, class_weights, feats))


def grow_tree(binned: BinnedMatrix, idx, stats, *, criterion: str, max_depth: int,
              max_features: int | None = None, rng=None, min_samples_split: int = 2,
              reg_lambda: float = 1.0, min_child_weight: float = 1.0, min_split_gain: float = 0.0,
              leaf_fn=None):
    """Grow one tree depth-first, left subtree before right.

    ``stats`` holds one row per entry of ``idx``; for ``newton`` its columns
    are (gradient, hessian, 1). ``max_features`` columns are drawn without
    replacement per node from the columns not constant on that node; with
    ``None`` every column is a candidate and a child's histogram is derived
    from its parent's by subtraction. ``leaf_fn(stats_rows)`` gives the value
    stored at each node.
    """
    idx = np.asarray(idx, dtype=np.int64)
    gini = criterion == "gini"
    sampled = max_features is not None
    feature, threshold, left, right, value, gain, weight = [], [], [], [], [], [], []

    def new_node(rows_stats):
        feature.append(-1)
        threshold.append(0.0)
        left.append(_NO_CHILD)
        right.append(_NO_CHILD)
        value.append(leaf_fn(rows_stats))
        gain.append(0.0)
        weight.append(float(rows_stats.sum() if gini else rows_stats[:, 1].sum()))
        return len(feature) - 1

    def find_split(hist):
        if gini:
            return gini_split_from_hist(binned, hist)
        return newton_split_from_hist(binned, hist, reg_lambda, min_child_weight, min_split_gain)

    root = new_node(stats)
    cols0 = binned.nonconstant(idx, np.arange(binned.shape[1])) if sampled else None
    # (node, positions into idx, candidate columns, depth, histogram or None)
    stack = [(root, np.arange(len(idx)), cols0, 0, None)]
    while stack:
        node, pos, cols, depth, hist = stack.pop()
        if depth >= max_depth or len(pos) < min_samples_split:
            continue
        rows = idx[pos]
        node_stats = stats[pos]
        if gini and np.count_nonzero(node_stats.sum(axis=0) > 1e-12) <= 1:
            continue
        if sampled:
            cols = binned.nonconstant(rows, cols)
            if len(cols) == 0:
                continue
            feats = cols if max_features >= len(cols) else np.sort(
                rng.choice(cols, size=max_features, replace=False))
            hist = binned.histogram(rows, node_stats, feats)
        elif hist is None:
            hist = binned.histogram(rows, node_stats)
        split = find_split(hist)
        if split is None:
            continue
        go_left = binned.codes[rows, split.feature] <= split.bin
        lpos, rpos = pos[go_left], pos[~go_left]
        feature[node] = split.feature
        threshold[node] = split.threshold
        gain[node] = split.gain
        l_id = new_node(stats[lpos])
        r_id = new_node(stats[rpos])
        left[node], right[node] = l_id, r_id
        lhist = rhist = None
        if not sampled and depth + 1 < max_depth:
            if len(lpos) <= len(rpos):
                lhist = binned.histogram(idx[lpos], stats[lpos])
                rhist = hist - lhist
            else:
                rhist = binned.histogram(idx[rpos], stats[rpos])
                lhist = hist - rhist
        stack.append((r_id, rpos, cols, depth + 1, rhist))
        stack.append((l_id, lpos, cols, depth + 1, lhist))

    cls = Tree if gini else NewtonTree
    return cls(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=np.float64).reshape(len(feature), -1),
        np.asarray(gain, dtype=np.float64),
        np.asarray(weight, dtype=np.float64),
    )


def gini_impurity(class_weights: np.ndarray) -> float:
    w = class_weights.sum()
    if w <= 0:
        return 0.0
    p = class_weights / w
    return float(1.0 - (p ** 2).sum())
