# Generate the paper-mini corpus, featurize it, and run the binary and
# family protocols at reduced repeat counts.
#
#   python3 notebooks/02_synthetic_corpus.py

# %%
import tempfile
from pathlib import Path

from emu_triage import datagen
from emu_triage.evaluation import ExperimentConfig, format_report, run_binary_full, run_multiclass
from emu_triage.features import featurize_corpus, sparsity
from emu_triage.ingest import corpus_stats, load_corpus
from emu_triage.selection import BorutaParams, apply_selection, boruta

out = Path(tempfile.mkdtemp())
manifest = datagen.write_corpus(datagen.generate(datagen.preset("paper-mini", seed=0)), out)
corpus = load_corpus(manifest, out / datagen.REPORTS_DIR)
print(corpus_stats(corpus)["families"])

# %%
ds, _ = featurize_corpus(corpus)
print("matrix", ds.matrix.shape, "sparsity %.3f" % sparsity(ds.matrix))
print("imphash missing for", sum(h is None for h in ds.imphashes), "truncated binaries")

# %% Boruta on the binary task keeps the tokens that separate benign from malicious.
decision = boruta(ds.matrix, ds.classes, BorutaParams(max_iter=20))
print({k: len(decision.indices(k)) for k in ("confirmed", "tentative", "rejected")})
X, vocab = apply_selection(ds.matrix, ds.vocab, decision)
print([t.text for t in vocab.tokens][:10])

# %%
reports = run_binary_full(X, ds.classes, ExperimentConfig(folds=5, repeats=1))
for rep in reports.values():
    print(format_report(rep), end="\n\n")

# %% Families use every token plus one indicator column per import hash.
full = ds.with_imphash_columns()
cfg = ExperimentConfig.for_protocol("multiclass", folds=5, repeats=1)
print(format_report(run_multiclass(full.matrix, full.families, cfg)["rf"]))
