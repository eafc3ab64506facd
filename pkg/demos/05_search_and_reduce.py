"""Cross-validated size/generator search, then the filters x neurons scan.

Run: python demos/05_search_and_reduce.py  (about a minute)
"""

import tempfile
from pathlib import Path

from mobilepipe import TrainConfig, ingest, preset, select_best, stratified_kfold
from mobilepipe.dataset import generate_subdatasets
from mobilepipe.engine import build_preset
from mobilepipe.search import cross_validate, emit_heatmap, reduce_parameters

work = Path(tempfile.mkdtemp(prefix="mobilepipe_demo_"))
from mobilepipe.synthetic import write_separable_dataset

write_separable_dataset(work / "raw", n_per_class=20, size=30, seed=2)
manifest = ingest(work / "raw")
variants = generate_subdatasets(manifest, [16, 24], work / "out")
plan = stratified_kfold(manifest, k=3, val_fraction=0.1, seed=0)
cfg = TrainConfig(batch_size=10, epochs=10, learning_rate=0.02, seed=0)

# Step 3: the grid. One row per (size, generator); the report format is
# mean(+- std) on a 0-100 scale.
results = []
for variant in variants:
    for gid in ("G1", "G2"):
        arch = build_preset("d1m1", variant.size, 3, 2, filters=4, hidden=8)
        r = cross_validate(variant, plan, preset(gid), arch, cfg, manifest, generator_id=gid)
        results.append(r)
        print(f"size={variant.size:>3} {gid}: {r.formatted()}")

best = select_best(results)
print(f"best: size={best.size} {best.generator} ({best.formatted()})")

# Step 3b: scan widths 1..N x 1..M, then pick the smallest model within
# 1 accuracy point of the grid maximum.
base = build_preset("d1m1", best.size, 3, 2, filters=4, hidden=8)
best_variant = next(v for v in variants if v.size == best.size)
grid = reduce_parameters(
    base, best_variant, plan, preset(best.generator), cfg, manifest,
    stride=(1, 2), tolerance=1.0,
)
f, m = grid.chosen
print(
    f"chosen cell: {f} filters x {m} neurons -> {grid.params[grid.chosen]} params "
    f"({100 * grid.params[grid.chosen] / max(grid.params.values()):.1f}% of grid max), "
    f"accuracy {grid.accuracy[grid.chosen]:.3f}"
)
files = emit_heatmap(grid, work / "heatmap", seed=0, config_hash="demo")
print("heatmap files:", *files.values(), sep="\n  ")
