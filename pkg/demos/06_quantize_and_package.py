"""Uint8 weight quantization and the .mpipe container with metadata.

Run: python demos/06_quantize_and_package.py
"""

import tempfile
from pathlib import Path

import numpy as np

from mobilepipe import ModelMetadata, package, quantize_tensor, unpackage, verify_label_order
from mobilepipe.deploy import save_container
from mobilepipe.engine import ArchitectureSpec, build_preset, init_weights
from mobilepipe.image_ops import ImageBuffer

# Per-tensor affine quantization: scale + zero point chosen so zero is
# exact and every value round-trips within scale/2.
t = np.array([-1.0, -0.25, 0.0, 0.6, 1.0])
qt = quantize_tensor(t)
print(f"scale {qt.scale:.6f}  zero_point {qt.zero_point}  codes {qt.data.tolist()}")
print("dequantized:", np.round(qt.dequantize(np.float64), 4).tolist())
assert qt.dequantize(np.float64)[2] == 0.0

# A container carries metadata (the Table-of-metadata fields), the label
# order, the architecture and every weight tensor.
arch = build_preset("d1m1", 20, 3, 2, filters=4, hidden=8)
model = init_weights(arch, seed=0, labels=("CT_COVID", "CT_nonCOVID"))
meta = ModelMetadata(
    name="demo model",
    version="v1",
    image_width=20,
    image_height=20,
    image_min=0.0,
    image_max=1.0,
    mean=(0.0, 0.0, 0.0),
    std=(255.0, 255.0, 255.0),
    num_classes=2,
    author="X",
)
blob = package(model, meta, quantize=True)
print(f"quantized container: {len(blob)} bytes (float would be ~4x the payload)")

work = Path(tempfile.mkdtemp(prefix="mobilepipe_demo_"))
save_container(blob, work / "model.mpipe")
print("labels.txt:", (work / "labels.txt").read_text().split())

decoded = unpackage(blob)
print("metadata name:", decoded.metadata.name, "| labels:", decoded.labels)

# The label file's order must match the model's prediction order. Build a
# model that routes left-bright images to output 0 and right-bright to 1,
# then probe it: the permutation must be the identity.
route_arch = ArchitectureSpec(
    layers=(("flatten",), ("dense", 2), ("softmax",)),
    input_size=8, channels=1, num_classes=2, arch_id="router",
)
route = init_weights(route_arch, seed=1, labels=("left", "right"))
w = np.zeros((64, 2), dtype=np.float32)
mask = np.zeros((8, 8), dtype=np.float32)
mask[:, :4] = 1.0
w[:, 0] = mask.reshape(-1)       # left columns vote for output 0
w[:, 1] = (1.0 - mask).reshape(-1)
route.weights["dense1_weight"] = w
route_meta = ModelMetadata(
    name="router", version="v1", image_width=8, image_height=8,
    image_min=0.0, image_max=1.0, mean=(0.0,), std=(255.0,),
    num_classes=2, author="X",
)
routed = unpackage(package(route, route_meta, quantize=True))

left = np.zeros((8, 8, 1), dtype=np.float32)
left[:, :4] = 255.0
right = 255.0 - left
probes = [(ImageBuffer(left), "left"), (ImageBuffer(right), "right")]
check = verify_label_order(routed, probes)
print("label order check:", check["permutation"], "->", "ok" if check["ok"] else "mismatch")
