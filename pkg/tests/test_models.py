import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from emu_triage.errors import SingleClass, TooFewNeighbors, WidthMismatch
from emu_triage.ml import (
    GbtParams,
    KnnParams,
    RfParams,
    fit,
    fit_gbt,
    fit_knn,
    fit_random_forest,
    knn_predict,
    load_model,
    predict,
    predict_proba,
    save_model,
)
from emu_triage.ml.tree import Tree

from oracles import KNN_TRAIN_X, KNN_TRAIN_Y, knn_hand_votes

XOR_X = np.array([[0.0, 0], [0, 1], [1, 0], [1, 1]])
XOR_Y = ["n", "y", "y", "n"]


def blobs(seed, n=60, d=6):
    rng = np.random.default_rng(seed)
    y = np.repeat(["b", "m"], n // 2)
    X = rng.poisson(1.0, (n, d)).astype(float)
    X[y == "m", 0] += 4
    return X, y


def test_rf_separable_and_xor():
    X = np.array([[0.0], [1.0], [5.0], [6.0]])
    assert list(predict(fit_random_forest(X, ["a", "a", "b", "b"]), X)) == ["a", "a", "b", "b"]
    model = fit_random_forest(XOR_X, XOR_Y, RfParams(n_estimators=5, bootstrap=False, features_per_split="all"))
    assert list(predict(model, XOR_X)) == XOR_Y


def test_rf_deterministic():
    X, y = blobs(0)
    a = predict_proba(fit_random_forest(X, y, RfParams(n_estimators=10, rng_seed=3)), X)
    b = predict_proba(fit_random_forest(X, y, RfParams(n_estimators=10, rng_seed=3)), X)
    assert np.array_equal(a, b)


def test_rf_proba_is_mean_of_leaves():
    X, y = blobs(1)
    model = fit_random_forest(X, y, RfParams(n_estimators=3))
    by_hand = sum(t.predict_value(X) for t in model.trees) / 3
    assert np.allclose(predict_proba(model, X), by_hand, atol=1e-12)


def test_single_class_rejected_unless_forced():
    X = np.ones((3, 2))
    with pytest.raises(SingleClass):
        fit_random_forest(X, ["a"] * 3)
    model = fit_random_forest(X, ["a"] * 3, allow_single_class=True)
    assert predict_proba(model, X).tolist() == [[1.0]] * 3


def test_gbt_separable():
    X = np.array([[0.0], [1.0], [5.0], [6.0]])
    model = fit_gbt(X, ["a", "a", "b", "b"], GbtParams(n_rounds=50, learning_rate=0.3, subsample=1.0,
                                                       min_child_weight=0.0))
    assert list(predict(model, X)) == ["a", "a", "b", "b"]
    assert all(b < a for a, b in zip(model.loss_history, model.loss_history[1:]))


@pytest.mark.parametrize("n_classes", [2, 3])
def test_gbt_loss_non_increasing_at_full_sample(n_classes):
    rng = np.random.default_rng(n_classes)
    X = rng.poisson(1.5, (80, 5)).astype(float)
    y = rng.integers(0, n_classes, 80)
    X[:, 0] += y
    model = fit_gbt(X, y, GbtParams(n_rounds=30, subsample=1.0, learning_rate=0.1))
    h = model.loss_history
    assert len(h) == 31
    assert all(b <= a + 1e-12 for a, b in zip(h, h[1:]))


def test_gbt_zero_learning_rate_predicts_prior():
    X, y = blobs(2, n=40)
    y = np.where(np.arange(40) < 10, "b", "m")
    model = fit_gbt(X, y, GbtParams(learning_rate=0.0, n_rounds=5))
    assert np.allclose(predict_proba(model, X), [[0.25, 0.75]] * 40)


def test_gbt_deterministic():
    X, y = blobs(3)
    p = GbtParams(n_rounds=10)
    assert np.array_equal(predict_proba(fit_gbt(X, y, p), X), predict_proba(fit_gbt(X, y, p), X))


@pytest.mark.parametrize("query", [3.0, 0.5, 5.5, 10.0, 1.0, 2.0])
@pytest.mark.parametrize("k", [1, 3, 5])
def test_knn_votes_match_hand_computation(query, k):
    model = fit_knn(KNN_TRAIN_X, KNN_TRAIN_Y, KnnParams(n_neighbors=k))
    assert np.allclose(predict_proba(model, [[query]])[0], knn_hand_votes(query, k), atol=1e-9, rtol=0)


def test_knn_hand_values():
    model = fit_knn(KNN_TRAIN_X, KNN_TRAIN_Y, KnnParams(n_neighbors=3))
    # neighbours of 3.0: x=2 (d 1, b), x=4 (d 1, b), x=1 (d 2, a)
    assert np.allclose(predict_proba(model, [[3.0]])[0], [0.2, 0.8], atol=1e-9)
    assert knn_predict(model, [[1.0]]).tolist() == ["a"]
    assert knn_predict(model, [[4.4]], KnnParams(n_neighbors=1)).tolist() == ["b"]
    uniform = KnnParams(n_neighbors=5, weighting="uniform")
    assert np.allclose(predict_proba(fit_knn(KNN_TRAIN_X, KNN_TRAIN_Y, uniform), [[3.0]])[0], [0.6, 0.4])


def test_knn_vote_tie_goes_to_lowest_class():
    model = fit_knn([[0.0], [2.0]], ["b", "a"], KnnParams(n_neighbors=2))
    assert knn_predict(model, [[1.0]]).tolist() == ["a"]


def test_knn_too_few_neighbors():
    with pytest.raises(TooFewNeighbors):
        fit_knn(KNN_TRAIN_X[:3], KNN_TRAIN_Y[:3])


def test_width_mismatch():
    model = fit("knn", KNN_TRAIN_X, KNN_TRAIN_Y)
    with pytest.raises(WidthMismatch):
        predict(model, np.zeros((1, 2)))


@pytest.mark.parametrize("kind", ["rf", "gbt", "knn"])
def test_proba_rows_sum_to_one_and_match_predict(kind):
    X, y = blobs(4)
    model = fit(kind, X, y, {"rf": RfParams(n_estimators=10), "gbt": GbtParams(n_rounds=10),
                             "knn": KnnParams()}[kind])
    rng = np.random.default_rng(9)
    Q = rng.poisson(2.0, (1000, X.shape[1])).astype(float)
    proba = predict_proba(model, Q)
    assert (proba >= 0).all() and np.allclose(proba.sum(axis=1), 1.0, atol=1e-9)
    assert (np.asarray(model.classes, dtype=object)[proba.argmax(axis=1)] == predict(model, Q)).all()
    assert set(predict(model, Q)) <= set(y)


@pytest.mark.parametrize("kind", ["rf", "gbt", "knn"])
def test_save_load_round_trip(kind, tmp_path):
    X, y = blobs(5)
    model = fit(kind, X, y, {"rf": RfParams(n_estimators=5), "gbt": GbtParams(n_rounds=5),
                             "knn": KnnParams()}[kind])
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert np.array_equal(predict_proba(back, X), predict_proba(model, X))
    if back.trees:
        assert isinstance(back.trees[0], Tree)


@given(st.permutations(range(6)))
def test_rf_column_permutation_keeps_accuracy(perm):
    X, y = blobs(6)
    perm = list(perm)
    p = RfParams(n_estimators=10, features_per_split="all", bootstrap=False)
    acc = (predict(fit_random_forest(X, y, p), X) == y).mean()
    acc_perm = (predict(fit_random_forest(X[:, perm], y, p), X[:, perm]) == y).mean()
    assert acc == acc_perm == 1.0


@given(st.randoms())
def test_knn_invariant_to_training_order(rnd):
    X, y = blobs(7)
    X = X + np.random.default_rng(0).random(X.shape)  # no exact distance ties
    order = list(range(len(y)))
    rnd.shuffle(order)
    Q = X[:10] + 0.5
    assert np.array_equal(predict(fit_knn(X, y), Q), predict(fit_knn(X[order], y[order]), Q))


def test_agrees_with_sklearn_on_separable_data():
    sk = pytest.importorskip("sklearn.ensemble")
    X, y = blobs(8, n=200)
    ref = sk.RandomForestClassifier(n_estimators=50, random_state=0).fit(X[::2], y[::2]).score(X[1::2], y[1::2])
    ours = (predict(fit_random_forest(X[::2], y[::2], RfParams(n_estimators=50)), X[1::2]) == y[1::2]).mean()
    assert abs(ours - ref) <= 0.05
