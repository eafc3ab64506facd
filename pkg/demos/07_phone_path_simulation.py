"""The deployment gap: computer vs gallery vs real-time camera paths.

A model whose evidence sits near the top/bottom edges loses it to the
camera geometry (cover a 480x640 frame, crop 480x480), while gallery
inference only pays the quantization cost. Run:
python demos/07_phone_path_simulation.py  (about a minute)
"""

import tempfile
from pathlib import Path

from mobilepipe import FrameGeometry, ModelMetadata, TrainConfig, compare_paths, package, preset, train, unpackage
from mobilepipe.dataset import ingest, stratified_kfold
from mobilepipe.engine import build_preset
from mobilepipe.image_ops import load_image
from mobilepipe.synthetic import write_border_signal_dataset, write_center_signal_dataset

geom = FrameGeometry()
print(
    f"camera template: {geom.frame_width}x{geom.frame_height} frame, "
    f"{geom.crop_width}x{geom.crop_height} crop "
    f"((640-480)/2 = 80 rows ignored top and bottom)"
)


def run(writer, title):
    work = Path(tempfile.mkdtemp(prefix="mobilepipe_demo_"))
    writer(work / "raw", n_per_class=30, size=50, seed=4)
    manifest = ingest(work / "raw")
    plan = stratified_kfold(manifest, k=5, val_fraction=0.1, seed=0)
    images = [(load_image(Path(manifest.root) / rel), ci) for rel, ci in manifest.items]
    train_idx, val_idx, test_idx = plan.split(0)
    arch = build_preset("d1m1", 50, 3, 2, filters=4, hidden=8)
    model = train(
        arch,
        [images[i] for i in train_idx],
        [images[i] for i in val_idx],
        preset("G1"),
        None,
        TrainConfig(batch_size=10, epochs=15, learning_rate=0.01, seed=1),
        manifest.classes,
    )
    meta = ModelMetadata(
        name=title, version="v1", image_width=50, image_height=50,
        image_min=0.0, image_max=1.0, mean=(0.0,) * 3, std=(255.0,) * 3,
        num_classes=2, author="X",
    )
    deployable = unpackage(package(model, meta, quantize=True))
    test_set = [(manifest.items[i][0], images[i][0], images[i][1]) for i in test_idx]
    acc = compare_paths(model, deployable, test_set, geom).accuracies
    print(
        f"{title:<14} computer {acc['computer']:.2f}   "
        f"gallery {acc['gallery']:.2f}   realtime {acc['realtime']:.2f}"
    )


run(write_border_signal_dataset, "border signal")
run(write_center_signal_dataset, "center signal")
print("border evidence dies in the crop; centered evidence survives all paths")
