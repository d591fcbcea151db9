# Families that a classifier keeps confusing end up in the same k-means++
# group. The confusable preset plants two such pairs.
#
#   python3 notebooks/03_family_clustering.py

# %%
import tempfile
from pathlib import Path

from emu_triage import datagen
from emu_triage.cluster import cluster_families, family_points, sweep
from emu_triage.evaluation import ExperimentConfig, run_multiclass
from emu_triage.features import featurize_corpus
from emu_triage.ingest import load_corpus
from emu_triage.ml import RfParams

out = Path(tempfile.mkdtemp())
manifest = datagen.write_corpus(datagen.generate(datagen.preset("confusable", seed=1)), out)
ds = featurize_corpus(load_corpus(manifest, out / datagen.REPORTS_DIR))[0].with_imphash_columns()

cfg = ExperimentConfig.for_protocol("multiclass", folds=5, repeats=1, family_threshold=60,
                                    sample_per_family=60, rf=RfParams(n_estimators=50))
report = run_multiclass(ds.matrix, ds.families, cfg)["rf"]

# %% Each family is its row of the confusion matrix, as proportions.
names, points = family_points(report.confusion, report.classes)
for name, row in zip(names, points):
    print(f"{name:8}", " ".join(f"{v:.2f}" for v in row))

# %%
for row in sweep(report, range(2, len(names))):
    print(row)

clustering = cluster_families(report, k=4)
print(clustering.nonempty_groups, "silhouette %.3f" % clustering.silhouette)
