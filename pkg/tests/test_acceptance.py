"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines appear in
the output even without ``-s``.
"""

import csv
import filecmp
import hashlib
import subprocess
import sys
import time

import numpy as np
import pytest

from emu_triage import datagen
from emu_triage.cluster import cluster_families, kmeans, silhouette
from emu_triage.evaluation import (
    ExperimentConfig,
    balanced_draws,
    classification_report,
    run_binary_balanced,
    run_binary_full,
    run_multiclass,
)
from emu_triage.features import featurize_corpus
from emu_triage.ingest import ApiCallRecord, EmulationReport, load_corpus
from emu_triage.ml import GbtParams, KnnParams, RfParams, fit_gbt, fit_knn, predict_proba
from emu_triage.ml.tree import BinnedMatrix, best_gini_split
from emu_triage.pe_build import build_pe
from emu_triage.pe_static import imphash, parse_imports
from emu_triage.selection import BorutaParams, boruta
from emu_triage.unify import FeatureToken, featurize_report, unify_name

from conftest import DATA
from oracles import KNN_TRAIN_X, KNN_TRAIN_Y, brute_force_best_gini, knn_hand_votes


@pytest.fixture
def verdict(capsys):
    """``verdict(n, name, ok, seconds, limit, detail)`` prints the line and asserts."""

    def report(n, name, ok, seconds, limit=None, detail=""):
        in_time = limit is None or seconds < limit
        passed = bool(ok) and in_time
        bound = f" (limit {limit:g}s)" if limit is not None else ""
        line = f"criterion {n} {name}: {'PASS' if passed else 'FAIL'} in {seconds:.1f}s{bound} {detail}".rstrip()
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
        assert in_time, line

    return report


def test_1_unification_corpus(verdict):
    t = time.perf_counter()
    with open(DATA / "win32_names.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    wrong = [r["raw_name"] for r in rows if unify_name(r["raw_name"]) != FeatureToken(r["expected_token"], r["kind"])]
    chained = unify_name("LoadLibraryExW") == FeatureToken("LoadLibrary", "api")
    fused = featurize_report(EmulationReport("a" * 64, (ApiCallRecord("CreateFileA", (), 2),
                                                        ApiCallRecord("CreateFileW", (), 3))))
    ok = len(rows) == 200 and not wrong and chained and fused == {FeatureToken("CreateFile", "api"): 5}
    verdict(1, "unification", ok, time.perf_counter() - t, 1, f"{200 - len(wrong)}/200 names")


# digests precomputed with hashlib over the hand-written import strings shown
IMPHASH_CASES = [
    ("empty imports", [], False, "", "d41d8cd98f00b204e9800998ecf8427e"),
    ("named imports", [("KERNEL32.dll", ["ExitProcess", "CreateFileA"]), ("USER32.DLL", ["MessageBoxW"])], False,
     "kernel32.exitprocess,kernel32.createfilea,user32.messageboxw", "d16b698b4685b1e1c6503e8e19e6c02b"),
    ("ordinal import", [("CUSTOM.dll", [7, 42])], False, "custom.ord7,custom.ord42",
     "8003682d5270526408c6501878138bb6"),
    ("mixed", [("kernel32.dll", ["ExitProcess", "CreateFileA"]), ("MyLib.OCX", [7, "Foo"]), ("driver.sys", [3])],
     False, "kernel32.exitprocess,kernel32.createfilea,mylib.ord7,mylib.foo,driver.ord3",
     "c89f4158aa1b30ce653d1c78d5346ac5"),
    ("64-bit", [("KERNEL32.dll", ["ExitProcess", "CreateFileA"]), ("USER32.DLL", ["MessageBoxW"])], True,
     "kernel32.exitprocess,kernel32.createfilea,user32.messageboxw", "d16b698b4685b1e1c6503e8e19e6c02b"),
]


def test_2_imphash_bit_exact(verdict):
    t = time.perf_counter()
    bad = []
    for name, imports, is_64, text, digest in IMPHASH_CASES:
        table = parse_imports(build_pe(imports, is_64=is_64))
        if hashlib.md5(text.encode()).hexdigest() != digest or imphash(table) != digest:
            bad.append(name)
    verdict(2, "imphash", not bad, time.perf_counter() - t, 1, f"{5 - len(bad)}/5 PEs")


def boruta_fixture(seed):
    """400 rows: 5 informative sparse count columns then 95 noise columns."""
    rng = np.random.default_rng(seed)
    n = 400
    y = np.repeat([0, 1], n // 2)
    X = (rng.random((n, 100)) < 0.05) * rng.integers(1, 4, (n, 100)).astype(float)
    for j in range(5):
        X[:, j] = (rng.random(n) < np.where(y == 1, 0.6, 0.1)) * rng.integers(1, 4, n)
    return X, y


def test_3_boruta_recovery(verdict):
    t = time.perf_counter()
    details, ok = [], True
    for seed in range(3):
        X, y = boruta_fixture(seed)
        params = BorutaParams(rng_seed=seed)
        assert (params.learning_rate, params.max_iter) == (0.05, 50)
        d = boruta(X, y, params)
        confirmed = set(d.confirmed.tolist())
        noise_rejected = int((d.rejected >= 5).sum())
        ok &= {0, 1, 2, 3, 4} <= confirmed and noise_rejected >= 90
        details.append(f"seed {seed}: {len(confirmed & {0, 1, 2, 3, 4})}/5 confirmed, {noise_rejected}/95 rejected")
    verdict(3, "boruta", ok, time.perf_counter() - t, 120, "; ".join(details))


def test_4_classifier_oracles(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(0)
    gini_bad = 0
    for _ in range(300):
        n = int(rng.integers(2, 51))
        X = rng.integers(0, 6, (n, 4)).astype(float)
        y = rng.integers(0, 3, n)
        rows = np.sort(rng.choice(n, size=int(rng.integers(2, n + 1)), replace=False))
        expected = brute_force_best_gini(X[rows], y[rows], 3)
        s = best_gini_split(BinnedMatrix.from_dense(X), rows, None, np.eye(3)[y[rows]])
        if (expected is None) != (s is None) or (s is not None and abs(s.gain - expected[0]) > 1e-9):
            gini_bad += 1

    loss_bad = 0
    for seed in range(3):
        r = np.random.default_rng(seed)
        X = r.poisson(1.5, (120, 6)).astype(float)
        y = r.integers(0, 2 + seed % 2, 120)
        X[:, 0] += y
        h = fit_gbt(X, y, GbtParams(n_rounds=40, subsample=1.0, rng_seed=seed)).loss_history
        loss_bad += sum(b > a + 1e-12 for a, b in zip(h, h[1:]))

    knn_bad = 0
    for k in (1, 3, 5):
        model = fit_knn(KNN_TRAIN_X, KNN_TRAIN_Y, KnnParams(n_neighbors=k))
        for q in (0.5, 1.0, 3.0, 5.5, 10.0):
            knn_bad += not np.allclose(predict_proba(model, [[q]])[0], knn_hand_votes(q, k), atol=1e-9, rtol=0)
    ok = gini_bad == loss_bad == knn_bad == 0
    verdict(4, "classifier oracles", ok, time.perf_counter() - t, 30,
            f"gini mismatches {gini_bad}/300, loss increases {loss_bad}, knn mismatches {knn_bad}/15")


def test_5_metric_identities(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(0)
    micro_bad = 0
    for _ in range(100):
        n = int(rng.integers(1, 60))
        yt, yp = rng.integers(0, 4, n).tolist(), rng.integers(0, 4, n).tolist()
        rep = classification_report(yt, yp, [0, 1, 2, 3])
        micro_bad += rep["micro"].f1 != sum(a == b for a, b in zip(yt, yp)) / n
    rep = classification_report(list("BBMMM"), list("BMMMM"), ["B", "M"])
    b, m = rep["per_class"]["B"], rep["per_class"]["M"]
    hand = (abs(b.precision - 1.0) <= 1e-9 and abs(b.recall - 0.5) <= 1e-9 and abs(b.f1 - 2 / 3) <= 1e-9
            and abs(m.precision - 0.75) <= 1e-9 and abs(m.recall - 1.0) <= 1e-9 and abs(m.f1 - 6 / 7) <= 1e-9
            and rep["confusion"].tolist() == [[1, 1], [0, 3]])
    verdict(5, "metric identities", micro_bad == 0 and hand, time.perf_counter() - t, 1,
            f"benign F1 {b.f1:.3f}, malicious F1 {m.f1:.3f}")


def test_6_protocol_fidelity(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(0)
    labels = ["benign"] * 30 + ["malicious"] * 90
    X = rng.poisson(1.0, (120, 5)).astype(float)
    X[30:, 0] += 4
    cycles = {}
    cfg = ExperimentConfig(folds=10, repeats=3, rf=RfParams(n_estimators=5), gbt=GbtParams(n_rounds=5))
    run_binary_full(X, labels, cfg, on_cycle=lambda kind, *rest: cycles.update({kind: cycles.get(kind, 0) + 1}))
    full_ok = cycles == {"rf": 30, "gbt": 30, "knn": 30}

    bcfg = ExperimentConfig(protocol="binary_balanced", repeats=5, models=["knn"])
    arr = np.array(labels)
    draws_ok = all((arr[d] == "malicious").sum() == 30 and (arr[d] == "benign").sum() == 30
                   for d in balanced_draws(labels, bcfg))
    reports = run_binary_balanced(X, labels, bcfg)
    draws_ok &= reports["knn"].draws == [30] * 5
    verdict(6, "protocol fidelity", full_ok and draws_ok, time.perf_counter() - t, None,
            f"cycles {cycles}, balanced draws {reports['knn'].draws}")


def featurized(name, seed, tmp_path):
    out = tmp_path / f"{name}-{seed}"
    manifest = datagen.write_corpus(datagen.generate(datagen.preset(name, seed)), out)
    return featurize_corpus(load_corpus(manifest, out / datagen.REPORTS_DIR))[0]


def test_7_end_to_end_separability(verdict, tmp_path):
    t = time.perf_counter()
    easy = featurized("easy", 0, tmp_path)
    binary = run_binary_full(easy.matrix, easy.classes, ExperimentConfig(folds=10, repeats=1))
    worst_binary = min(r.per_class[c]["f1"]["mean"] for r in binary.values() for c in r.classes)

    mini = featurized("paper-mini", 0, tmp_path).with_imphash_columns()
    cfg = ExperimentConfig.for_protocol("multiclass", folds=10, repeats=1)
    multi = run_multiclass(mini.matrix, mini.families, cfg)["rf"]
    worst_family = min(e["f1"]["mean"] for e in multi.per_class.values())
    ok = worst_binary >= 0.99 and worst_family >= 0.95 and len(multi.classes) == 5
    verdict(7, "separability", ok, time.perf_counter() - t, 60,
            f"min binary F1 {worst_binary:.3f}, min family F1 {worst_family:.3f}")


PAIRS = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]])


def test_8_clustering_recovery(verdict, tmp_path):
    t = time.perf_counter()
    together = 0
    monotone = True
    for seed in range(100):
        ds = featurized("confusable", seed, tmp_path).with_imphash_columns()
        cfg = ExperimentConfig.for_protocol("multiclass", folds=5, repeats=1, family_threshold=60,
                                            sample_per_family=60, rng_seed=seed, rf=RfParams(n_estimators=30))
        rep = run_multiclass(ds.matrix, ds.families, cfg)["rf"]
        c = cluster_families(rep, 4, seed=seed)
        a = c.assignments
        together += a["Alpha"] == a["Alpha2"] and a["Bravo"] == a["Bravo2"]
        h = c.inertia_history
        monotone &= all(y <= x + 1e-12 for x, y in zip(h, h[1:]))
        for fixture in (PAIRS, np.random.default_rng(seed).random((30, 4))):
            for k in (1, 2, 3):
                h = kmeans(fixture, k, np.random.default_rng(seed)).inertia_history
                monotone &= all(y <= x + 1e-12 for x, y in zip(h, h[1:]))

    correct = silhouette(PAIRS, [0, 0, 1, 1])
    rng = np.random.default_rng(0)
    randoms = []
    while len(randoms) < 50:
        a = rng.integers(0, 2, 4)
        # skip single-cluster draws and the correct partition itself
        if len(set(a.tolist())) == 2 and not (a[0] == a[1] and a[2] == a[3]):
            randoms.append(silhouette(PAIRS, a))
    ok = together >= 90 and monotone and correct > max(randoms)
    verdict(8, "clustering", ok, time.perf_counter() - t, None,
            f"pairs co-clustered {together}/100, silhouette correct {correct:.3f} vs best random {max(randoms):.3f}")


def test_9_determinism(verdict, tmp_path):
    t = time.perf_counter()
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        subprocess.run([sys.executable, "-m", "emu_triage.cli", "run", "--preset", "paper-mini", "--seed", "42",
                        "--out", str(out)], check=True, capture_output=True)
        runs.append(out)
    a_files = sorted(p.relative_to(runs[0]) for p in runs[0].rglob("*") if p.is_file())
    b_files = sorted(p.relative_to(runs[1]) for p in runs[1].rglob("*") if p.is_file())
    differ = [str(p) for p in a_files if not filecmp.cmp(runs[0] / p, runs[1] / p, shallow=False)]
    ok = a_files == b_files and not differ and len(a_files) > 0
    verdict(9, "determinism", ok, time.perf_counter() - t, None,
            f"{len(a_files)} files compared, {len(differ)} differ")
