import filecmp
import hashlib

import numpy as np
import pytest

from emu_triage import datagen
from emu_triage.datagen import BenignSpec, FamilySpec, SynthSpec, generate, preset, resolve_signatures, write_corpus
from emu_triage.errors import InvalidSpec
from emu_triage.evaluation import ExperimentConfig, run_multiclass
from emu_triage.features import featurize_corpus
from emu_triage.ingest import load_corpus
from emu_triage.ml import KnnParams, RfParams, fit_knn, predict
from emu_triage.pe_static import parse_imports
from emu_triage.unify import featurize_report


def two_families(rate=1.0, seed=0, **kw):
    fams = [FamilySpec("A", 30, ["CreateFile", "WriteFile", "mangled::Run"], rate, **kw),
            FamilySpec("B", 30, ["RegOpenKey", "LoadLibrary->ws2_32.dll", "GetProcAddress->virtualalloc"], rate)]
    return SynthSpec(fams, BenignSpec(10, datagen.BENIGN_TOKENS), datagen.NOISE_POOL, seed)


def test_same_seed_same_corpus(tmp_path):
    a = write_corpus(generate(preset("paper-mini", 3)), tmp_path / "a").parent
    b = write_corpus(generate(preset("paper-mini", 3)), tmp_path / "b").parent
    cmp = filecmp.dircmp(a, b)
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    assert all(not filecmp.dircmp(a / d, b / d).diff_files for d in ("reports", "bins"))
    assert filecmp.cmp(a / "manifest.csv", b / "manifest.csv", shallow=False)


def test_different_seed_differs():
    a = [s.sample_id for s in generate(two_families(seed=0))]
    b = [s.sample_id for s in generate(two_families(seed=1))]
    assert a != b


def test_tokens_come_from_signature_and_noise():
    spec = two_families()
    sigs = resolve_signatures(spec)
    allowed = {f: set(sigs[f]) | set(spec.noise_pool) for f in ("A", "B")}
    allowed["Benign"] = set(spec.benign.token_pool) | set(spec.noise_pool)
    for group in allowed.values():
        # an argument token also yields its bare API token
        group |= {t.split("->")[0] for t in group}
    for s in generate(spec):
        toks = {t.text for t in featurize_report(s.report)}
        assert toks <= allowed[s.family]
        if s.family != "Benign":
            assert set(sigs[s.family]) <= toks  # rate 1.0


def test_raw_spellings_are_varied():
    names = {c.api_name for s in generate(two_families()) for c in s.report.calls}
    assert {"CreateFileA", "CreateFileW"} & names
    assert any(n.startswith("?Run@@") or n.startswith("_Run@") for n in names)


def test_binaries_parse_and_sample_ids_are_hashes():
    for s in generate(two_families())[:15]:
        assert s.sample_id == hashlib.sha256(s.binary).hexdigest()
        assert parse_imports(s.binary).entries


def test_corrupt_rate_truncates():
    spec = two_families()
    spec.corrupt_binary_rate = 1.0
    assert all(len(s.binary) == 0x50 for s in generate(spec))


def test_disjoint_families_one_nn_perfect(tmp_path):
    manifest = write_corpus(generate(two_families()), tmp_path)
    ds, _ = featurize_corpus(load_corpus(manifest, tmp_path / datagen.REPORTS_DIR))
    X = ds.matrix.toarray()
    fams = np.array(ds.families)
    hits = 0
    for i in range(len(fams)):
        rest = np.arange(len(fams)) != i
        model = fit_knn(X[rest], fams[rest], KnnParams(n_neighbors=1))
        hits += predict(model, X[i:i + 1])[0] == fams[i]
    assert hits == len(fams)


def test_confused_signature_sharing():
    fams = [FamilySpec("A", 5, ["CreateFile", "WriteFile", "ReadFile", "DeleteFile", "MoveFile"]),
            FamilySpec("B", 5, ["RegOpenKey", "RegSetValue", "RegCloseKey", "Sleep", "socket"],
                       confuse_with="A", confuse_fraction=0.8)]
    sigs = resolve_signatures(SynthSpec(fams))
    assert sigs["B"] == ["CreateFile", "WriteFile", "ReadFile", "DeleteFile", "RegOpenKey"]


def test_confusable_pair_confuses_most(preset_dataset):
    worse = 0
    for seed in range(10):
        ds = preset_dataset("confusable", seed)
        cfg = ExperimentConfig.for_protocol("multiclass", folds=5, repeats=1, family_threshold=60,
                                            sample_per_family=60, rng_seed=seed,
                                            rf=RfParams(n_estimators=30))
        rep = run_multiclass(ds.matrix, ds.families, cfg)["rf"]
        C = rep.confusion.astype(float)
        idx = {c: i for i, c in enumerate(rep.classes)}
        for a, b in (("Alpha", "Alpha2"), ("Bravo", "Bravo2")):
            i, j = idx[a], idx[b]
            pair = C[i, j] + C[j, i]
            third = max(C[i, k] + C[k, i] for k in range(len(C)) if k not in (i, j))
            worse += pair <= third
    assert worse == 0


@pytest.mark.parametrize("mutate", [
    lambda s: s.families.append(FamilySpec("A", 3, ["Sleep"])),
    lambda s: s.families.append(FamilySpec("C", 3, ["CreateFileA"])),
    lambda s: s.families.append(FamilySpec("C", 3, ["Sleep"], confuse_with="Z")),
    lambda s: s.families.append(FamilySpec("C", 3, ["Sleep"], signature_rate=0.0)),
    lambda s: s.families.append(FamilySpec("Benign", 3, ["Sleep"])),
    lambda s: s.families.append(FamilySpec("C", 3, ["CreateFile->x.dll"])),
    lambda s: s.families.append(FamilySpec("C", 3, [])),
    lambda s: setattr(s, "corrupt_binary_rate", 2.0),
])
def test_invalid_specs(mutate):
    spec = two_families()
    mutate(spec)
    with pytest.raises(InvalidSpec):
        resolve_signatures(spec)


def test_from_dict():
    spec = SynthSpec.from_dict({"families": [{"name": "A", "n_samples": 2, "signature_tokens": ["Sleep"]}],
                                "benign": {"n_samples": 1, "token_pool": ["GetACP"]}, "rng_seed": 4})
    assert spec.rng_seed == 4 and spec.benign.n_samples == 1
    assert len(generate(spec)) == 3
    with pytest.raises(InvalidSpec):
        SynthSpec.from_dict({"families": [{"name": "A"}]})
    with pytest.raises(InvalidSpec):
        preset("nope")


@pytest.mark.parametrize("name, sizes", [("easy", {"Benign": 200, "Synth.Generic": 200}),
                                         ("paper-mini", {"Benign": 100, "Alpha": 100, "Echo": 100})])
def test_preset_sizes(name, sizes):
    counts = {}
    for s in generate(preset(name)):
        counts[s.family] = counts.get(s.family, 0) + 1
    assert all(counts[k] == v for k, v in sizes.items())
