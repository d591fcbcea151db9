"""File-backed pipeline: datagen -> ingest -> featurize -> select -> eval -> cluster.

Every stage writes into its own directory under the run directory together
with a ``stage.json`` that records a fingerprint of its inputs and parameters.
A stage whose fingerprint is unchanged and whose outputs are present is
skipped. Outputs carry ``{tool, version, config_hash, seed}`` and no
timestamps, so equal configurations give byte-identical trees.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__, datagen
from .cluster import cluster_families, sweep
from .errors import ConfigError, EmuTriageError, NoEligibleFamilies
from .evaluation import ExperimentConfig, confusion_csv, read_reports, run_protocol, write_reports
from .features import featurize_corpus, load_dataset, save_dataset
from .ingest import corpus_stats, load_corpus
from .selection import BorutaParams, apply_selection, boruta, save_decision
from .unify import load_aliases

log = logging.getLogger(__name__)

TOOL = "emu-triage"
PROTOCOLS = ("binary_full", "binary_balanced", "multiclass")

# Lighter defaults for the built-in presets so a full run stays interactive.
PRESET_DEFAULTS = {
    "easy": {"protocols": ["binary_full", "binary_balanced"]},
    "paper-mini": {},
    "confusable": {"protocol_overrides": {"multiclass": {"family_threshold": 60, "sample_per_family": 60}},
                   "cluster_k": 4},
}


@dataclass
class PipelineConfig:
    manifest: str | None = None
    reports: str | None = None
    aliases: str | None = None
    preset: str | None = None
    seed: int = 0
    strict: bool = False
    select: bool = True
    boruta: dict = field(default_factory=dict)
    protocols: list[str] = field(default_factory=lambda: list(PROTOCOLS))
    eval: dict = field(default_factory=lambda: {"folds": 10, "repeats": 1})
    protocol_overrides: dict = field(default_factory=dict)
    cluster_k: int | None = None
    cluster_sweep: list[int] | None = None
    jobs: int = 1

    @classmethod
    def from_dict(cls, d: dict, **overrides) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = {**d, **{k: v for k, v in overrides.items() if v is not None}}
        preset = merged.get("preset")
        if preset is not None:
            if preset not in datagen.PRESETS:
                raise ConfigError(f"unknown preset {preset!r}")
            merged = {**PRESET_DEFAULTS[preset], **merged}
        return cls(**merged)

    @classmethod
    def from_file(cls, path, **overrides) -> "PipelineConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
        return cls.from_dict(doc, **overrides)

    def validate(self) -> None:
        if self.preset is None and (self.manifest is None or self.reports is None):
            raise ConfigError("either a preset or both manifest and reports are required")
        for name in ("manifest", "reports", "aliases"):
            value = getattr(self, name)
            if value is not None and self.preset is None and not Path(value).exists():
                raise ConfigError(f"{name} not found: {value}")
        if self.aliases is not None and not Path(self.aliases).exists():
            raise ConfigError(f"aliases not found: {self.aliases}")
        bad = set(self.protocols) - set(PROTOCOLS)
        if bad:
            raise ConfigError(f"unknown protocols {sorted(bad)}")

    def hashed_part(self) -> dict:
        """Everything that shapes results; paths and worker count are excluded."""
        d = asdict(self)
        for k in ("manifest", "reports", "aliases", "jobs"):
            d.pop(k)
        return d

    def config_hash(self) -> str:
        return sha256_text(canonical_json(self.hashed_part()))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def provenance(config_hash: str, seed: int) -> dict:
    return {"tool": TOOL, "version": __version__, "config_hash": config_hash, "seed": seed}


def hash_path(path: Path) -> str:
    """Content digest of a file, or of a directory tree (relative names + bytes)."""
    h = hashlib.sha256()
    path = Path(path)
    if path.is_file():
        h.update(path.read_bytes())
        return h.hexdigest()
    for p in sorted(q for q in path.rglob("*") if q.is_file()):
        h.update(p.relative_to(path).as_posix().encode() + b"\0")
        h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


class Stage:
    """One resumable step: runs ``fn(stage_dir)`` unless its fingerprint is current."""

    def __init__(self, root: Path, name: str, inputs: dict, params: dict, prov: dict):
        self.root = root
        self.name = name
        self.dir = root / name
        self.inputs = {k: hash_path(v) for k, v in sorted(inputs.items())}
        self.params = params
        self.prov = prov
        self.fingerprint = sha256_text(canonical_json({"inputs": self.inputs, "params": params}))

    def up_to_date(self) -> bool:
        man = self.dir / "stage.json"
        if not man.is_file():
            return False
        doc = json.loads(man.read_text())
        if doc.get("fingerprint") != self.fingerprint:
            return False
        return all((self.dir / rel).exists() and hash_path(self.dir / rel) == digest
                   for rel, digest in doc.get("outputs", {}).items())

    def run(self, fn, force: bool) -> str:
        if not force and self.up_to_date():
            return "up-to-date"
        self.dir.mkdir(parents=True, exist_ok=True)
        outputs = fn(self.dir)
        doc = {
            "stage": self.name,
            "fingerprint": self.fingerprint,
            "inputs": self.inputs,
            "params": self.params,
            "outputs": {rel: hash_path(self.dir / rel) for rel in sorted(outputs)},
            "provenance": self.prov,
        }
        write_json(self.dir / "stage.json", doc)
        return "ran"


def _protocol_config(cfg: PipelineConfig, protocol: str) -> ExperimentConfig:
    overrides = {**cfg.eval, **cfg.protocol_overrides.get(protocol, {})}
    overrides.setdefault("rng_seed", cfg.seed)
    overrides["jobs"] = cfg.jobs
    return ExperimentConfig.for_protocol(protocol, **overrides)


def _failed(stage: str, exc: EmuTriageError):
    exc.stage = stage
    return exc


def run_pipeline(cfg: PipelineConfig, out_dir, force: bool = False, on_stage=None) -> dict[str, str]:
    """Run every stage into ``out_dir``; returns ``{stage: "ran"|"up-to-date"|"skipped"}``.

    A failing stage raises its ``EmuTriageError`` with a ``stage`` attribute set.
    """
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = cfg.config_hash()
    prov = provenance(chash, cfg.seed)
    status = {}

    def step(name, inputs, params, fn):
        st = Stage(out, name, inputs, params, prov)
        try:
            status[name] = st.run(fn, force)
        except EmuTriageError as exc:
            raise _failed(name, exc) from None
        log.info("%s: %s", name, status[name])
        if on_stage is not None:
            on_stage(name, status[name])
        return st.dir

    if cfg.preset is not None:
        def do_datagen(d):
            datagen.write_corpus(datagen.generate(datagen.preset(cfg.preset, cfg.seed)), d)
            return ["manifest.csv", datagen.REPORTS_DIR, datagen.BINS_DIR]
        corpus = step("datagen", {}, {"preset": cfg.preset, "seed": cfg.seed}, do_datagen)
        manifest, reports = corpus / "manifest.csv", corpus / datagen.REPORTS_DIR
    else:
        status["datagen"] = "skipped"
        manifest, reports = Path(cfg.manifest), Path(cfg.reports)

    corpus_inputs = {"manifest": manifest, "reports": reports}
    bins = manifest.parent / datagen.BINS_DIR
    if bins.is_dir():
        corpus_inputs["bins"] = bins
    if cfg.aliases:
        corpus_inputs["aliases"] = Path(cfg.aliases)

    def load():
        return load_corpus(manifest, reports, strict=cfg.strict)

    def do_ingest(d):
        corpus = load()
        write_json(d / "corpus.json", {
            "stats": corpus_stats(corpus),
            "failures": [asdict(f) for f in corpus.failures],
            "provenance": prov,
        })
        return ["corpus.json"]
    step("ingest", corpus_inputs, {"strict": cfg.strict}, do_ingest)

    def do_featurize(d):
        aliases = load_aliases(cfg.aliases) if cfg.aliases else None
        ds, skipped = featurize_corpus(load(), aliases)
        ds.meta["skipped_tokens"] = skipped
        save_dataset(ds, d / "dataset", prov)
        return ["dataset"]
    feat_dir = step("featurize", corpus_inputs, {"strict": cfg.strict}, do_featurize)
    full = feat_dir / "dataset"

    binary_data = full
    if cfg.select:
        bparams = BorutaParams(**{"rng_seed": cfg.seed, **cfg.boruta})

        def do_select(d):
            ds = load_dataset(full)
            decision = boruta(ds.matrix, ds.classes, bparams)
            save_decision(decision, d / "decision.json", ds.vocab, bparams, prov)
            matrix, vocab = apply_selection(ds.matrix, ds.vocab, decision)
            ds.matrix, ds.vocab = matrix, vocab
            save_dataset(ds, d / "dataset", prov)
            return ["decision.json", "dataset"]
        sel_dir = step("select", {"dataset": full}, asdict(bparams), do_select)
        binary_data = sel_dir / "dataset"
    else:
        status["select"] = "skipped"

    eval_configs = {p: _protocol_config(cfg, p) for p in cfg.protocols}

    def do_eval(d):
        written = []
        for protocol, ecfg in eval_configs.items():
            if protocol == "multiclass":
                ds = load_dataset(full).with_imphash_columns()
            else:
                ds = load_dataset(binary_data)
            reports = run_protocol(ds.matrix, {"class": ds.classes, "family": ds.families}, ecfg)
            write_reports(reports, d / f"{protocol}.json", {**prov, "experiment": ecfg.to_dict()})
            written.append(f"{protocol}.json")
            for model, rep in reports.items():
                name = f"{protocol}_{model}_confusion.csv"
                (d / name).write_text(confusion_csv(rep))
                written.append(name)
        return written
    eval_params = {p: c.to_dict() for p, c in eval_configs.items()}
    eval_dir = step("eval", {"binary": binary_data, "full": full}, eval_params, do_eval)

    mc = eval_dir / "multiclass.json"
    if "multiclass" in cfg.protocols and mc.is_file():
        def do_cluster(d):
            report = read_reports(mc).get("rf") or next(iter(read_reports(mc).values()))
            n = len(report.classes)
            ks = cfg.cluster_sweep or [2, n]
            rows = sweep(report, range(ks[0], ks[1] + 1), seed=cfg.seed)
            k = cfg.cluster_k
            if k is None:
                scored = [r for r in rows if r["silhouette"] is not None]
                if not scored:
                    raise NoEligibleFamilies("no k in the sweep yields two or more groups")
                k = max(scored, key=lambda r: (round(r["silhouette"], 12), r["k"]))["k"]
            clustering = cluster_families(report, k, seed=cfg.seed)
            write_json(d / "groups.json", {**clustering.to_dict(), "provenance": prov})
            buf = io.StringIO()
            w = csv.DictWriter(buf, ["k", "n_groups", "silhouette", "inertia"], lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
            (d / "sweep.csv").write_text(buf.getvalue())
            return ["groups.json", "sweep.csv"]
        step("cluster", {"multiclass": mc},
             {"k": cfg.cluster_k, "sweep": cfg.cluster_sweep, "seed": cfg.seed}, do_cluster)
    else:
        status["cluster"] = "skipped"

    write_json(out / "run.json", {"config": cfg.hashed_part(), "provenance": prov})
    return status
