"""Train the paper-style small CNN from scratch on separable data.

Run: python demos/04_train_a_cnn.py
"""

import tempfile
from pathlib import Path

from mobilepipe import TrainConfig, evaluate, ingest, param_count, preset, train
from mobilepipe.dataset import load_variant_images, generate_subdatasets, stratified_kfold
from mobilepipe.engine import build_preset
from mobilepipe.synthetic import write_separable_dataset

work = Path(tempfile.mkdtemp(prefix="mobilepipe_demo_"))
write_separable_dataset(work / "raw", n_per_class=30, size=30, seed=5)
manifest = ingest(work / "raw")
(variant,) = generate_subdatasets(manifest, [20], work / "out")
plan = stratified_kfold(manifest, k=5, val_fraction=0.1, seed=0)
images = load_variant_images(variant, manifest)

# d1m1: Conv(filters) -> MaxPool -> Flatten -> Dense(hidden) -> ReLU ->
# Dense(classes) -> Softmax. Width-scaled down for a quick demo.
arch = build_preset("d1m1", 20, 3, 2, filters=6, hidden=12)
print("architecture:", " -> ".join("/".join(map(str, l)) for l in arch.layers))
print("trainable parameters:", param_count(arch))

train_idx, val_idx, test_idx = plan.split(0)
cfg = TrainConfig(batch_size=10, epochs=12, learning_rate=0.02, seed=3)
model = train(
    arch,
    [images[i] for i in train_idx],
    [images[i] for i in val_idx],
    preset("G1"),
    None,
    cfg,
    manifest.classes,
)
for row in model.log[::3]:
    print(
        f"epoch {row['epoch']:>2}: loss {row['loss']:.4f} "
        f"train {row['train_acc']:.2f} val {row['val_acc']:.2f}"
    )
test_acc = evaluate(model, [images[i] for i in test_idx], preset("G1"))
print(f"fold-0 test accuracy: {test_acc:.3f}")
