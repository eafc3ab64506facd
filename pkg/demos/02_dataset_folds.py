"""Multi-size sub-datasets and stratified k-fold splitting.

Run: python demos/02_dataset_folds.py
"""

import tempfile
from pathlib import Path

from mobilepipe import generate_subdatasets, ingest, stratified_kfold, write_fold_layout
from mobilepipe.synthetic import write_separable_dataset

work = Path(tempfile.mkdtemp(prefix="mobilepipe_demo_"))
write_separable_dataset(work / "raw", n_per_class=20, size=40, seed=1)

manifest = ingest(work / "raw")
print("classes:", manifest.classes)
print("counts:", manifest.class_counts)

# One resized copy of the dataset per candidate input size.
variants = generate_subdatasets(manifest, [16, 32], work / "out")
for v in variants:
    print(f"size variant {v.size}: {v.directory}")

# k=5 with a 10% validation carve-out gives the 70/10/20 proportions.
plan = stratified_kfold(manifest, k=5, val_fraction=0.1, seed=42)
for f in range(plan.k):
    train, val, test = plan.split(f)
    print(f"fold {f}: train {len(train)}  validation {len(val)}  test {len(test)}")

# Test sets across folds partition the data exactly once.
all_test = sorted(i for f in range(plan.k) for i in plan.split(f)[2])
assert all_test == list(range(len(manifest.items)))
print("union of test folds == dataset: ok")

# Materialize the fold tree: size_<s>/fold_<f>/{train,validation,test}/<class>/
write_fold_layout(variants[0], plan, manifest)
tree = sorted(p.relative_to(work / "out") for p in (work / "out").rglob("fold_0/*/*") if p.is_dir())
print("fold_0 leaf dirs:", *tree[:4], "...", sep="\n  ")
