"""``emu-triage`` command line.

Every subcommand writes JSON (or CSV) and, on failure, prints a JSON error
object to stderr and exits with status 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__, datagen
from .cluster import cluster_families, sweep
from .errors import ConfigError, EmuTriageError
from .evaluation import (
    ExperimentConfig,
    confusion_csv,
    format_report,
    read_reports,
    run_protocol,
    write_reports,
)
from .features import featurize_corpus, load_dataset, save_dataset
from .ingest import corpus_stats, load_corpus
from .ml import GbtParams, KnnParams, RfParams, fit, save_model
from .pe_static import imphash_file
from .pipeline import PipelineConfig, canonical_json, provenance, run_pipeline, sha256_text, write_json
from .selection import BorutaParams, apply_selection, boruta, save_decision
from .unify import load_aliases

_PARAMS = {"rf": RfParams, "gbt": GbtParams, "knn": KnnParams}


def _read_json(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from exc


def _prov(args, config: dict) -> dict:
    return provenance(sha256_text(canonical_json(config)), args.seed)


def _emit(doc) -> None:
    print(json.dumps(doc, indent=1, sort_keys=True))


def _require_out(args) -> Path:
    if args.out is None:
        raise ConfigError("--out is required for this command")
    return Path(args.out)


def cmd_ingest(args):
    corpus = load_corpus(args.manifest, args.reports, strict=args.strict)
    doc = {"stats": corpus_stats(corpus), "failures": [asdict(f) for f in corpus.failures],
           "provenance": _prov(args, {"strict": args.strict})}
    if args.out:
        write_json(Path(args.out), doc)
    _emit(doc)


def cmd_imphash(args):
    rows = []
    for f in args.files:
        try:
            rows.append({"path": f, "imphash": imphash_file(f)})
        except (OSError, EmuTriageError) as exc:
            rows.append({"path": f, "imphash": None, "error": type(exc).__name__, "message": str(exc)})
    if args.out:
        write_json(Path(args.out), rows)
    _emit(rows)
    if args.strict and any(r["imphash"] is None for r in rows):
        return 1


def cmd_featurize(args):
    out = _require_out(args)
    aliases = load_aliases(args.aliases) if args.aliases else None
    corpus = load_corpus(args.manifest, args.reports, strict=args.strict)
    ds, skipped = featurize_corpus(corpus, aliases)
    ds.meta["skipped_tokens"] = skipped
    save_dataset(ds, out, _prov(args, {"strict": args.strict}))
    _emit({"rows": ds.matrix.shape[0], "columns": ds.matrix.shape[1], "failures": len(corpus.failures)})


def cmd_select(args):
    out = _require_out(args)
    params = BorutaParams(**{"rng_seed": args.seed, **_read_json(args.config)})
    ds = load_dataset(args.dataset)
    decision = boruta(ds.matrix, ds.classes, params)
    prov = _prov(args, asdict(params))
    out.mkdir(parents=True, exist_ok=True)
    save_decision(decision, out / "decision.json", ds.vocab, params, prov)
    ds.matrix, ds.vocab = apply_selection(ds.matrix, ds.vocab, decision, args.keep_tentative)
    save_dataset(ds, out / "dataset", prov)
    _emit(decision.to_json()["counts"])


def cmd_train(args):
    out = _require_out(args)
    cfg = _read_json(args.config)
    params = _PARAMS[args.model](**cfg)
    if hasattr(params, "rng_seed") and "rng_seed" not in cfg:
        params.rng_seed = args.seed
    ds = load_dataset(args.dataset)
    if args.target == "family":
        ds = ds.with_imphash_columns()
    y = ds.classes if args.target == "class" else ds.families
    model = fit(args.model, ds.matrix, y, params)
    save_model(model, out)
    _emit({"model": args.model, "classes": list(model.classes), "n_features": model.n_features})


def cmd_eval(args):
    out = _require_out(args)
    protocol = args.protocol.replace("-", "_")
    cfg = ExperimentConfig.for_protocol(protocol, **{"rng_seed": args.seed, **_read_json(args.config),
                                                      "jobs": args.jobs})
    ds = load_dataset(args.dataset)
    if protocol == "multiclass":
        ds = ds.with_imphash_columns()
    reports = run_protocol(ds.matrix, {"class": ds.classes, "family": ds.families}, cfg)
    exp = cfg.to_dict()
    write_reports(reports, out, {**_prov(args, exp), "experiment": exp})
    for model, rep in reports.items():
        out.with_name(f"{out.stem}_{model}_confusion.csv").write_text(confusion_csv(rep))
    _emit({m: {"macro_f1": r.macro["f1"]["mean"], "micro_f1": r.micro["f1"]["mean"]} for m, r in reports.items()})


def _k_range(text: str) -> range:
    lo, sep, hi = text.partition("..")
    if not sep:
        raise ConfigError(f"--sweep expects LO..HI, got {text!r}")
    return range(int(lo), int(hi) + 1)


def cmd_cluster(args):
    reports = read_reports(args.report)
    report = reports.get("rf") or next(iter(reports.values()))
    clustering = cluster_families(report, args.k, seed=args.seed, n_init=args.n_init)
    doc = {**clustering.to_dict(), "provenance": _prov(args, {"k": args.k, "n_init": args.n_init})}
    rows = sweep(report, _k_range(args.sweep), seed=args.seed, n_init=args.n_init) if args.sweep else None
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "groups.json", doc)
        if rows is not None:
            lines = ["k,n_groups,silhouette,inertia"]
            lines += [f"{r['k']},{r['n_groups']},{r['silhouette']},{r['inertia']}" for r in rows]
            (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    _emit(doc if rows is None else {**doc, "sweep": rows})


def cmd_datagen(args):
    out = _require_out(args)
    if (args.spec is None) == (args.preset is None):
        raise ConfigError("give exactly one of --spec or --preset")
    if args.preset:
        spec = datagen.preset(args.preset, args.seed)
    else:
        spec = datagen.SynthSpec.from_dict({"rng_seed": args.seed, **_read_json(args.spec)})
    samples = datagen.generate(spec)
    manifest = datagen.write_corpus(samples, out)
    _emit({"samples": len(samples), "manifest": str(manifest)})


def cmd_run(args):
    out = _require_out(args)
    overrides = {k: getattr(args, k) for k in ("seed", "jobs", "strict") if k in args.provided}
    overrides["preset"] = args.preset
    if args.config:
        cfg = PipelineConfig.from_file(args.config, **overrides)
    else:
        cfg = PipelineConfig.from_dict({}, **overrides)
    status = run_pipeline(cfg, out, force=args.force)
    _emit({"out": str(out), "stages": status})


def cmd_report(args):
    path = Path(args.path)
    files = sorted((path / "eval").glob("*.json")) if path.is_dir() else [path]
    files = [f for f in files if f.name != "stage.json"]
    if not files:
        raise ConfigError(f"no evaluation reports under {path}")
    for f in files:
        for rep in read_reports(f).values():
            print(format_report(rep))
            print()
    groups = path / "cluster" / "groups.json" if path.is_dir() else None
    if groups is not None and groups.is_file():
        doc = json.loads(groups.read_text())
        print(f"clusters (k={doc['k_requested']}, silhouette {doc['silhouette']}):")
        for i, g in enumerate(doc["groups"]):
            print(f"  {i}: {', '.join(g)}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (default 0)")
    p.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker processes (default 1)")
    p.add_argument("--strict", action="store_true", default=argparse.SUPPRESS,
                   help="abort on the first bad report or binary")
    p.add_argument("--force", action="store_true", default=argparse.SUPPRESS, help="re-run up-to-date stages")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="emu-triage", parents=[common],
                                     description="Malware triage from emulated API-call traces.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(fn=fn)
        return p

    p = add("ingest", cmd_ingest, "validate a manifest and its reports")
    p.add_argument("--manifest", required=True)
    p.add_argument("--reports", required=True)

    p = add("imphash", cmd_imphash, "import hashes of PE files")
    p.add_argument("files", nargs="+")

    p = add("featurize", cmd_featurize, "build the token-count matrix")
    p.add_argument("--manifest", required=True)
    p.add_argument("--reports", required=True)
    p.add_argument("--aliases")

    p = add("select", cmd_select, "Boruta feature selection on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config")
    p.add_argument("--keep-tentative", action="store_true")

    p = add("train", cmd_train, "fit one model on a whole dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", choices=sorted(_PARAMS), required=True)
    p.add_argument("--target", choices=["class", "family"], default="class")
    p.add_argument("--config")

    p = add("eval", cmd_eval, "cross-validated evaluation protocol")
    p.add_argument("--dataset", required=True)
    p.add_argument("--protocol", choices=["binary-full", "binary-balanced", "multiclass"], required=True)
    p.add_argument("--config")

    p = add("cluster", cmd_cluster, "k-means++ grouping of families from a multiclass report")
    p.add_argument("--report", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--sweep", help="k range for a silhouette sweep, e.g. 2..30")
    p.add_argument("--n-init", type=int, default=10)

    p = add("datagen", cmd_datagen, "generate a synthetic corpus")
    p.add_argument("--spec")
    p.add_argument("--preset", choices=datagen.PRESETS)

    p = add("run", cmd_run, "run the whole pipeline")
    p.add_argument("--config")
    p.add_argument("--preset", choices=datagen.PRESETS)

    p = add("report", cmd_report, "print evaluation tables from a run directory or report file")
    p.add_argument("path")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.provided = {n for n in ("seed", "jobs", "strict", "force", "out") if hasattr(args, n)}
    for name, default in (("seed", 0), ("jobs", 1), ("strict", False), ("force", False), ("out", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args) or 0
    except EmuTriageError as exc:
        err = {"error": exc.code, "message": str(exc), "command": args.command}
        if getattr(exc, "stage", None):
            err["stage"] = exc.stage
        print(json.dumps(err), file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": "IOError", "message": str(exc), "command": args.command}), file=sys.stderr)
        return 1
    except ValueError as exc:
        # parameter validation in the config dataclasses
        print(json.dumps({"error": "ConfigError", "message": str(exc), "command": args.command}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
