from __future__ import annotations

import json
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from emu_triage import datagen
from emu_triage.features import featurize_corpus
from emu_triage.ingest import load_corpus

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA = Path(__file__).parent / "data"
DIGEST_A = "a" * 64
DIGEST_B = "b" * 64
DIGEST_C = "c" * 64


def report_doc(sample_id=DIGEST_A, calls=(), exit_kind="graceful", duration_s=1.0):
    return {"sample_id": sample_id, "exit_kind": exit_kind, "duration_s": duration_s, "calls": list(calls)}


def write_report(root: Path, name: str, doc) -> None:
    root.mkdir(parents=True, exist_ok=True)
    (root / name).write_text(json.dumps(doc))


def write_manifest(path: Path, rows) -> Path:
    lines = ["sample_id,class,family,report_path,binary_path"]
    lines += [",".join(r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture(scope="session")
def preset_dataset(tmp_path_factory):
    """Featurized datasets of the shipped presets, built once per session."""
    cache = {}

    def build(name, seed=0):
        key = (name, seed)
        if key not in cache:
            out = tmp_path_factory.mktemp(f"{name}-{seed}")
            manifest = datagen.write_corpus(datagen.generate(datagen.preset(name, seed)), out)
            corpus = load_corpus(manifest, out / datagen.REPORTS_DIR)
            cache[key] = featurize_corpus(corpus)[0]
        return cache[key]

    return build
