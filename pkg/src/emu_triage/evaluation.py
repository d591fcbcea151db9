"""Cross-validated experiment protocols and their metric reports.

Three protocols are provided:

* ``binary_full``      benign vs malicious on every row, k-fold x repeats.
* ``binary_balanced``  per repeat, all benign rows plus an equal-sized random
                       draw of malicious rows, then one k-fold pass.
* ``multiclass``       malware families with at least ``family_threshold``
                       rows; per repeat ``sample_per_family`` rows are drawn
                       from each, then one k-fold pass. Benign rows are excluded.

Metrics are computed per test fold and summarized as mean and population
standard deviation over all fold x repeat cycles.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    InsufficientMalicious,
    KTooLarge,
    LengthMismatch,
    NoEligibleFamilies,
    SingleClass,
)
from .ingest import BENIGN_FAMILY
from .ml import GbtParams, KnnParams, RfParams, fit, predict
from .ml.tree import as_dense

PROTOCOLS = ("binary_full", "binary_balanced", "multiclass")
BINARY_CLASSES = ["benign", "malicious"]
METRICS = ("precision", "recall", "f1")


@dataclass
class ExperimentConfig:
    protocol: str = "binary_full"
    folds: int = 10
    repeats: int = 3
    family_threshold: int = 100
    sample_per_family: int = 100
    rng_seed: int = 0
    models: list[str] = field(default_factory=lambda: ["rf", "gbt", "knn"])
    rf: RfParams = field(default_factory=RfParams)
    gbt: GbtParams = field(default_factory=GbtParams)
    knn: KnnParams = field(default_factory=KnnParams)
    jobs: int = 1

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        for name, cls in (("rf", RfParams), ("gbt", GbtParams), ("knn", KnnParams)):
            if isinstance(getattr(self, name), dict):
                setattr(self, name, cls(**getattr(self, name)))

    @classmethod
    def for_protocol(cls, protocol: str, **overrides) -> "ExperimentConfig":
        """Protocol defaults: 3 repeats for binary_full, 100 for the resampled ones, RF only for multiclass."""
        base = {"protocol": protocol}
        if protocol == "binary_full":
            base["repeats"] = 3
        elif protocol == "binary_balanced":
            base["repeats"] = 100
        else:
            base.update(repeats=100, models=["rf"])
        base.update(overrides)
        return cls(**base)

    def params_for(self, kind: str):
        return {"rf": self.rf, "gbt": self.gbt, "knn": self.knn}[kind]

    def to_dict(self) -> dict:
        """Result-shaping fields only; the worker count is left out."""
        d = asdict(self)
        d.pop("jobs")
        return d


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


def _f1(p, r):
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def stratified_kfold(labels, k: int, rng) -> list[np.ndarray]:
    """Split row indices into ``k`` disjoint test folds, stratified by label.

    Rows are shuffled within each class, classes are concatenated in sorted
    order and dealt round-robin, so per-fold class counts differ by at most one.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if k > n:
        raise KTooLarge(f"k={k} exceeds {n} rows")
    if k < 2:
        raise ValueError("k must be >= 2")
    counts = Counter(labels.tolist())
    small = sorted(str(c) for c, m in counts.items() if m < k)
    if small:
        warnings.warn(f"classes {small} have fewer than k={k} members; folds are best-effort", stacklevel=2)
    order = []
    for c in sorted(counts):
        members = np.flatnonzero(labels == c)
        order.append(members[rng.permutation(len(members))])
    order = np.concatenate(order)
    fold_of = np.arange(n) % k
    return [np.sort(order[fold_of == f]) for f in range(k)]


def confusion_matrix(y_true, y_pred, class_table) -> np.ndarray:
    y_true, y_pred = list(y_true), list(y_pred)
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"{len(y_true)} true labels vs {len(y_pred)} predictions")
    if not y_true:
        raise LengthMismatch("empty label vectors")
    lookup = {c: i for i, c in enumerate(class_table)}
    cm = np.zeros((len(class_table), len(class_table)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[lookup[t], lookup[p]] += 1
    return cm


def classification_report(y_true, y_pred, class_table) -> dict:
    """Per-class, micro and macro precision/recall/F1.

    Classes with no true rows get support 0, all-zero metrics and are listed
    under ``"absent"``; the macro average runs over the classes that are present.
    """
    cm = confusion_matrix(y_true, y_pred, class_table)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    per_class = {}
    absent = []
    for i, c in enumerate(class_table):
        p = tp[i] / predicted[i] if predicted[i] else 0.0
        r = tp[i] / support[i] if support[i] else 0.0
        if support[i] == 0:
            absent.append(c)
            p = r = 0.0
        per_class[c] = ClassMetrics(float(p), float(r), _f1(p, r), int(support[i]))
    present = [m for c, m in per_class.items() if c not in absent]
    n = int(support.sum())
    acc = float(tp.sum() / n)
    micro = ClassMetrics(acc, acc, acc, n)
    macro = ClassMetrics(
        float(np.mean([m.precision for m in present])),
        float(np.mean([m.recall for m in present])),
        float(np.mean([m.f1 for m in present])),
        n,
    )
    return {"per_class": per_class, "micro": micro, "macro": macro, "absent": absent, "confusion": cm}


@dataclass
class EvalReport:
    """Aggregated metrics of one model under one protocol.

    ``per_class`` maps class name to ``{"precision": {"mean", "std"}, ...,
    "support": total test rows}``; for multiclass runs it is ordered by mean F1,
    descending. ``confusion`` is summed over every cycle; ``confusion_mean`` is
    that sum divided by the number of repeats (one full pass over the data).
    """

    protocol: str
    model: str
    classes: list[str]
    per_class: dict
    micro: dict
    macro: dict
    confusion: np.ndarray
    confusion_mean: np.ndarray
    n_cycles: int
    repeats: int
    folds: int
    draws: list[int] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "model": self.model,
            "classes": self.classes,
            "per_class": self.per_class,
            "micro": self.micro,
            "macro": self.macro,
            "confusion": self.confusion.tolist(),
            "confusion_mean": self.confusion_mean.tolist(),
            "n_cycles": self.n_cycles,
            "repeats": self.repeats,
            "folds": self.folds,
            "draws": self.draws,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        return cls(d["protocol"], d["model"], d["classes"], d["per_class"], d["micro"], d["macro"],
                   np.asarray(d["confusion"]), np.asarray(d["confusion_mean"], dtype=np.float64),
                   d["n_cycles"], d["repeats"], d["folds"], d.get("draws", []), d.get("meta", {}))

    def family_order(self) -> list[str]:
        return list(self.per_class)


def _summary(values) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def _aggregate(protocol, model, class_table, fold_reports, repeats, folds, draws, sort_by_f1) -> EvalReport:
    per_class = {}
    for c in class_table:
        entry = {m: _summary([getattr(r["per_class"][c], m) for r in fold_reports]) for m in METRICS}
        entry["support"] = int(sum(r["per_class"][c].support for r in fold_reports))
        per_class[c] = entry
    if sort_by_f1:
        per_class = dict(sorted(per_class.items(), key=lambda kv: (-kv[1]["f1"]["mean"], kv[0])))
    micro = {m: _summary([getattr(r["micro"], m) for r in fold_reports]) for m in METRICS}
    macro = {m: _summary([getattr(r["macro"], m) for r in fold_reports]) for m in METRICS}
    confusion = sum(r["confusion"] for r in fold_reports)
    return EvalReport(protocol, model, list(class_table), per_class, micro, macro, confusion,
                      confusion / repeats, len(fold_reports), repeats, folds, draws)


def _derive_seed(master: int, *path: int) -> int:
    return int(np.random.SeedSequence([master, *path]).generate_state(1)[0])


def _cycle(args):
    kind, params, X_train, y_train, X_test = args
    if isinstance(params, KnnParams) and params.n_neighbors > len(y_train):
        # tiny folds: vote over every training row rather than fail the run
        params = KnnParams(len(y_train), params.weighting)
    model = fit(kind, X_train, y_train, params)
    return predict(model, X_test).tolist()


def _with_seed(params, seed):
    if hasattr(params, "rng_seed"):
        return type(params)(**{**asdict(params), "rng_seed": seed})
    return params


def _run_cycles(X, names, class_table, config: ExperimentConfig, datasets, on_cycle=None):
    """Cross-validate every model over ``datasets`` (one row-index array per repeat).

    Returns ``{model: [fold_report, ...]}`` in (repeat, fold) order.
    """
    names = np.asarray(names, dtype=object)
    tasks = []
    for rep, rows in enumerate(datasets):
        folds = stratified_kfold(names[rows], config.folds,
                                 np.random.default_rng(_derive_seed(config.rng_seed, rep, 0)))
        for f, test_pos in enumerate(folds):
            train_pos = np.setdiff1d(np.arange(len(rows)), test_pos)
            train, test = rows[train_pos], rows[test_pos]
            for kind in config.models:
                params = _with_seed(config.params_for(kind), _derive_seed(config.rng_seed, rep, f + 1))
                tasks.append((kind, rep, f, train, test, params))

    payloads = [(kind, params, X[train], names[train].tolist(), X[test])
                for kind, _rep, _f, train, test, params in tasks]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            preds = list(pool.map(_cycle, payloads))
    else:
        preds = [_cycle(p) for p in payloads]

    out = {kind: [] for kind in config.models}
    for (kind, rep, f, train, test, _params), y_pred in zip(tasks, preds):
        if on_cycle is not None:
            on_cycle(kind, rep, f, train, test)
        out[kind].append(classification_report(names[test].tolist(), y_pred, class_table))
    return out


def run_binary_full(matrix, labels, config: ExperimentConfig, on_cycle=None) -> dict[str, EvalReport]:
    """k-fold x repeats on every row; one ``EvalReport`` per configured model."""
    labels = list(labels)
    if len(set(labels)) < 2:
        raise SingleClass("binary evaluation needs both benign and malicious rows")
    X = as_dense(matrix)
    rows = np.arange(len(labels))
    results = _run_cycles(X, labels, BINARY_CLASSES, config, [rows] * config.repeats, on_cycle)
    return {kind: _aggregate("binary_full", kind, BINARY_CLASSES, reps, config.repeats, config.folds, [], False)
            for kind, reps in results.items()}


def balanced_draws(labels, config: ExperimentConfig) -> list[np.ndarray]:
    """Per repeat: every benign row plus ``n_benign`` malicious rows drawn without replacement."""
    labels = np.asarray(labels)
    benign = np.flatnonzero(labels == "benign")
    malicious = np.flatnonzero(labels == "malicious")
    if len(benign) == 0:
        raise SingleClass("no benign rows")
    if len(malicious) < len(benign):
        raise InsufficientMalicious(f"{len(malicious)} malicious rows for {len(benign)} benign")
    draws = []
    for rep in range(config.repeats):
        rng = np.random.default_rng(_derive_seed(config.rng_seed, rep, 10**6))
        picked = np.sort(rng.choice(malicious, size=len(benign), replace=False))
        draws.append(np.sort(np.concatenate([benign, picked])))
    return draws


def run_binary_balanced(matrix, labels, config: ExperimentConfig, on_cycle=None) -> dict[str, EvalReport]:
    labels = list(labels)
    X = as_dense(matrix)
    datasets = balanced_draws(labels, config)
    n_benign = labels.count("benign")
    results = _run_cycles(X, labels, BINARY_CLASSES, config, datasets, on_cycle)
    return {kind: _aggregate("binary_balanced", kind, BINARY_CLASSES, reps, config.repeats, config.folds,
                             [len(d) - n_benign for d in datasets], False)
            for kind, reps in results.items()}


def eligible_families(families, threshold: int) -> list[str]:
    counts = Counter(f for f in families if f != BENIGN_FAMILY)
    return sorted(f for f, n in counts.items() if n >= threshold)


def family_draws(families, config: ExperimentConfig) -> tuple[list[str], list[np.ndarray]]:
    families = np.asarray(families, dtype=object)
    eligible = eligible_families(families.tolist(), config.family_threshold)
    if len(eligible) < 2:
        raise NoEligibleFamilies(f"{len(eligible)} families reach the threshold of {config.family_threshold}")
    members = {f: np.flatnonzero(families == f) for f in eligible}
    per = config.sample_per_family
    if any(len(m) < per for m in members.values()):
        raise NoEligibleFamilies(f"sample_per_family={per} exceeds an eligible family's size")
    draws = []
    for rep in range(config.repeats):
        rng = np.random.default_rng(_derive_seed(config.rng_seed, rep, 10**6 + 1))
        picked = [rng.choice(members[f], size=per, replace=False) for f in eligible]
        draws.append(np.sort(np.concatenate(picked)))
    return eligible, draws


def run_multiclass(matrix, families, config: ExperimentConfig, on_cycle=None) -> dict[str, EvalReport]:
    """Family classification on balanced per-repeat draws of eligible families.

    ``matrix`` should already carry every feature the run is meant to see
    (the full vocabulary plus imphash indicator columns).
    """
    families = list(families)
    X = as_dense(matrix)
    eligible, datasets = family_draws(families, config)
    results = _run_cycles(X, families, eligible, config, datasets, on_cycle)
    reports = {}
    for kind, reps in results.items():
        rep = _aggregate("multiclass", kind, eligible, reps, config.repeats, config.folds, [], True)
        rep.meta["family_threshold"] = config.family_threshold
        rep.meta["sample_per_family"] = config.sample_per_family
        reports[kind] = rep
    return reports


def run_protocol(matrix, dataset_labels: dict, config: ExperimentConfig, on_cycle=None) -> dict[str, EvalReport]:
    """Dispatch on ``config.protocol``; ``dataset_labels`` has ``class`` and ``family`` lists."""
    if config.protocol == "binary_full":
        return run_binary_full(matrix, dataset_labels["class"], config, on_cycle)
    if config.protocol == "binary_balanced":
        return run_binary_balanced(matrix, dataset_labels["class"], config, on_cycle)
    return run_multiclass(matrix, dataset_labels["family"], config, on_cycle)


def write_reports(reports: dict[str, EvalReport], path, provenance: dict | None = None) -> None:
    doc = {"reports": {k: r.to_dict() for k, r in reports.items()}}
    if provenance:
        doc["provenance"] = provenance
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_reports(path) -> dict[str, EvalReport]:
    doc = json.loads(Path(path).read_text())
    return {k: EvalReport.from_dict(r) for k, r in doc["reports"].items()}


def confusion_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\predicted", *report.classes])
    for c, row in zip(report.classes, report.confusion.tolist()):
        w.writerow([c, *row])
    return buf.getvalue()


def format_report(report: EvalReport) -> str:
    """Plain-text table: one line per class, then micro and macro averages."""
    lines = [f"{report.protocol} / {report.model}: {report.n_cycles} cycles "
             f"({report.repeats} repeats x {report.folds} folds)",
             f"{'class':<24}{'precision':>18}{'recall':>18}{'f1':>18}{'support':>9}"]

    def cell(m):
        return f"{m['mean']:.3f} (σ {m['std']:.3f})".rjust(18)

    for c, e in report.per_class.items():
        lines.append(f"{c:<24}{cell(e['precision'])}{cell(e['recall'])}{cell(e['f1'])}{e['support']:>9}")
    for name, avg in (("micro average", report.micro), ("macro average", report.macro)):
        lines.append(f"{name:<24}{cell(avg['precision'])}{cell(avg['recall'])}{cell(avg['f1'])}")
    return "\n".join(lines)
