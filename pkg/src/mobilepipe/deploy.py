"""Deployable model container: metadata, labels, float or uint8 weights.

Quantization is weight-only per-tensor affine uint8 with float compute:
weights dequantize once at load and inference runs the float engine
("dequantize-then-execute"). The quantization range is nudged to include
zero so that zero dequantizes exactly and strictly-positive or
strictly-negative tensors still round-trip within scale/2. Rounding is
half-away-from-zero throughout; the container is little-endian.
"""

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine
from .errors import (
    InsufficientProbes,
    MetadataMismatch,
    NonFiniteInput,
    NotQuantized,
    ShapeMismatch,
)
from .engine import ArchitectureSpec, TrainedModel
from .image_ops import ImageBuffer, normalize, resize_bilinear

MAGIC = b"MPIPE001"
QUANT_EPS = 1e-8
DTYPE_FLOAT32 = 0
DTYPE_QUANT_U8 = 1


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round half away from zero (platform-independent, unlike banker's)."""
    return np.trunc(x + np.copysign(0.5, x))


@dataclass(frozen=True)
class QuantizedTensor:
    shape: tuple[int, ...]
    data: np.ndarray  # uint8, flat or shaped
    scale: float
    zero_point: int

    def dequantize(self, dtype=np.float32) -> np.ndarray:
        return (
            (self.data.astype(np.float64) - self.zero_point) * self.scale
        ).astype(dtype).reshape(self.shape)


def quantize_tensor(t: np.ndarray) -> QuantizedTensor:
    """Per-tensor affine uint8 quantization over [min(t, 0), max(t, 0)].

    scale = max(eps, range) / 255, zero_point = round(-rmin / scale),
    q = clamp(round(x / scale) + zero_point, 0, 255). Including zero in
    the range keeps zero exact and bounds |x - dequantize(q)| by scale/2
    for every finite tensor.
    """
    t = np.asarray(t)
    if not np.all(np.isfinite(t)):
        raise NonFiniteInput("cannot quantize non-finite values")
    rmin = min(float(t.min()), 0.0) if t.size else 0.0
    rmax = max(float(t.max()), 0.0) if t.size else 0.0
    scale = max(QUANT_EPS, (rmax - rmin)) / 255.0
    zero_point = int(np.clip(round_half_away(np.float64(-rmin / scale)), 0, 255))
    q = round_half_away(t.astype(np.float64) / scale) + zero_point
    q = np.clip(q, 0, 255).astype(np.uint8)
    return QuantizedTensor(
        shape=tuple(t.shape), data=q, scale=scale, zero_point=zero_point
    )


@dataclass(frozen=True)
class ModelMetadata:
    """The embedded descriptor a runtime needs to drive the model."""

    name: str
    version: str
    image_width: int
    image_height: int
    image_min: float
    image_max: float
    mean: tuple[float, ...]
    std: tuple[float, ...]
    num_classes: int
    author: str
    extras: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        doc = {
            "name": self.name,
            "version": self.version,
            "image width": self.image_width,
            "image height": self.image_height,
            "image min": self.image_min,
            "image max": self.image_max,
            "mean": list(self.mean),
            "std": list(self.std),
            "num_classes": self.num_classes,
            "author": self.author,
        }
        doc.update(self.extras)
        return doc

    @staticmethod
    def from_json(doc: dict) -> "ModelMetadata":
        known = {
            "name",
            "version",
            "image width",
            "image height",
            "image min",
            "image max",
            "mean",
            "std",
            "num_classes",
            "author",
            "architecture",
        }
        return ModelMetadata(
            name=doc["name"],
            version=doc["version"],
            image_width=doc["image width"],
            image_height=doc["image height"],
            image_min=doc["image min"],
            image_max=doc["image max"],
            mean=tuple(doc["mean"]),
            std=tuple(doc["std"]),
            num_classes=doc["num_classes"],
            author=doc["author"],
            extras={k: v for k, v in doc.items() if k not in known},
        )


@dataclass
class DeployableModel:
    metadata: ModelMetadata
    labels: tuple[str, ...]
    arch: ArchitectureSpec
    tensors: dict[str, np.ndarray | QuantizedTensor]

    @property
    def quantized(self) -> bool:
        return any(isinstance(t, QuantizedTensor) for t in self.tensors.values())

    def to_trained_model(self) -> TrainedModel:
        weights = {
            name: (t.dequantize() if isinstance(t, QuantizedTensor) else t.copy())
            for name, t in self.tensors.items()
        }
        return TrainedModel(arch=self.arch, weights=weights, labels=self.labels)


def _meta_json_bytes(meta: ModelMetadata, arch: ArchitectureSpec) -> bytes:
    doc = meta.to_json()
    doc["architecture"] = arch.to_json()
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def build_deployable(
    model: TrainedModel, meta: ModelMetadata, quantize: bool
) -> DeployableModel:
    """Validate metadata against the model and assemble the container object."""
    if meta.num_classes != model.arch.num_classes or meta.num_classes != len(model.labels):
        raise MetadataMismatch(
            f"metadata num_classes {meta.num_classes} vs architecture "
            f"{model.arch.num_classes} / labels {len(model.labels)}"
        )
    if meta.image_width != model.arch.input_size or meta.image_height != model.arch.input_size:
        raise MetadataMismatch(
            f"metadata size {meta.image_width}x{meta.image_height} vs "
            f"architecture input {model.arch.input_size}"
        )
    if any(s == 0 for s in meta.std):
        raise MetadataMismatch("metadata std entries must be nonzero")
    tensors: dict[str, np.ndarray | QuantizedTensor] = {}
    for name, w in model.weights.items():
        tensors[name] = quantize_tensor(w) if quantize else w.astype(np.float32)
    return DeployableModel(
        metadata=meta, labels=tuple(model.labels), arch=model.arch, tensors=tensors
    )


def encode(deployable: DeployableModel) -> bytes:
    """Container byte layout.

    magic(8) | meta_len(u32) | metadata JSON | label_count(u32) |
    length-prefixed labels | tensor_count(u32) | per tensor: name, dtype
    tag, shape, (scale f64 + zero_point u8 when quantized), payload.
    All integers little-endian; JSON canonical (sorted keys, compact).
    """
    buf = io.BytesIO()
    buf.write(MAGIC)
    meta_bytes = _meta_json_bytes(deployable.metadata, deployable.arch)
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(deployable.labels)))
    for label in deployable.labels:
        lb = label.encode("utf-8")
        buf.write(struct.pack("<I", len(lb)))
        buf.write(lb)
    buf.write(struct.pack("<I", len(deployable.tensors)))
    for name, t in deployable.tensors.items():
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        if isinstance(t, QuantizedTensor):
            buf.write(struct.pack("<B", DTYPE_QUANT_U8))
            buf.write(struct.pack("<I", len(t.shape)))
            buf.write(struct.pack(f"<{len(t.shape)}I", *t.shape))
            buf.write(struct.pack("<d", t.scale))
            buf.write(struct.pack("<B", t.zero_point))
            buf.write(np.ascontiguousarray(t.data, dtype=np.uint8).tobytes())
        else:
            buf.write(struct.pack("<B", DTYPE_FLOAT32))
            buf.write(struct.pack("<I", len(t.shape)))
            buf.write(struct.pack(f"<{len(t.shape)}I", *t.shape))
            buf.write(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return buf.getvalue()


def package(model: TrainedModel, meta: ModelMetadata, quantize: bool) -> bytes:
    """Serialize a trained model (optionally quantized) into container bytes."""
    return encode(build_deployable(model, meta, quantize))


def unpackage(blob: bytes) -> DeployableModel:
    if blob[:8] != MAGIC:
        raise MetadataMismatch(f"bad container magic {blob[:8]!r}")
    view = io.BytesIO(blob)
    view.seek(8)

    def read(fmt):
        size = struct.calcsize(fmt)
        vals = struct.unpack(fmt, view.read(size))
        return vals[0] if len(vals) == 1 else vals

    meta_len = read("<I")
    doc = json.loads(view.read(meta_len).decode("utf-8"))
    arch = ArchitectureSpec.from_json(doc["architecture"])
    meta = ModelMetadata.from_json(doc)
    labels = []
    for _ in range(read("<I")):
        labels.append(view.read(read("<I")).decode("utf-8"))
    tensors: dict[str, np.ndarray | QuantizedTensor] = {}
    for _ in range(read("<I")):
        name = view.read(read("<I")).decode("utf-8")
        tag = read("<B")
        ndim = read("<I")
        shape = tuple(
            struct.unpack(f"<{ndim}I", view.read(4 * ndim))
        ) if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        if tag == DTYPE_QUANT_U8:
            scale = read("<d")
            zero_point = read("<B")
            data = np.frombuffer(view.read(count), dtype=np.uint8).reshape(shape)
            tensors[name] = QuantizedTensor(shape, data, scale, zero_point)
        elif tag == DTYPE_FLOAT32:
            data = np.frombuffer(view.read(4 * count), dtype="<f4").reshape(shape)
            tensors[name] = data.astype(np.float32)
        else:
            raise MetadataMismatch(f"unknown tensor dtype tag {tag}")
    return DeployableModel(metadata=meta, labels=tuple(labels), arch=arch, tensors=tensors)


def save_container(blob: bytes, path) -> str:
    """Write the .mpipe container plus a labels.txt sidecar next to it."""
    path = Path(path)
    path.write_bytes(blob)
    labels = unpackage(blob).labels
    sidecar = path.parent / "labels.txt"
    sidecar.write_text("".join(f"{l}\n" for l in labels))
    return str(sidecar)


def export_metadata(meta: ModelMetadata, path) -> None:
    Path(path).write_text(json.dumps(meta.to_json(), indent=2, sort_keys=True))


def quantized_forward(deployable: DeployableModel, batch: np.ndarray) -> np.ndarray:
    """Dequantize each weight tensor once, then run the float forward path."""
    if not deployable.quantized:
        raise NotQuantized("container holds float tensors only")
    model = deployable.to_trained_model()
    s, c = model.arch.input_size, model.arch.channels
    if batch.ndim != 4 or batch.shape[1:] != (s, s, c):
        raise ShapeMismatch(f"batch {batch.shape} vs model input ({s}, {s}, {c})")
    return engine.forward(model, batch)


def deployable_forward(deployable: DeployableModel, batch: np.ndarray) -> np.ndarray:
    """Forward through whichever weights the container carries."""
    if deployable.quantized:
        return quantized_forward(deployable, batch)
    return engine.forward(deployable.to_trained_model(), batch)


def preprocess_for(meta: ModelMetadata, img: ImageBuffer) -> np.ndarray:
    resized = resize_bilinear(img, meta.image_width, meta.image_height)
    return normalize(resized, meta.mean, meta.std)


def verify_label_order(
    deployable: DeployableModel, probe_set: list[tuple[ImageBuffer, str]]
) -> dict:
    """Check that labels.txt order matches the model's prediction order.

    For each class, the most confidently classified probe must argmax to
    that class's label index. Returns {"ok", "permutation", "mismatches"}.
    """
    by_class: dict[str, list[ImageBuffer]] = {l: [] for l in deployable.labels}
    for img, cname in probe_set:
        if cname not in by_class:
            raise InsufficientProbes(f"probe class {cname!r} not in label list")
        by_class[cname].append(img)
    missing = [c for c, probes in by_class.items() if not probes]
    if missing:
        raise InsufficientProbes(f"no probes for classes: {missing}")
    permutation: dict[int, int] = {}
    for ci, cname in enumerate(deployable.labels):
        best_conf, best_arg = -1.0, -1
        for img in by_class[cname]:
            x = preprocess_for(deployable.metadata, img)[None, ...]
            probs = deployable_forward(deployable, x)[0]
            conf = float(probs.max())
            if conf > best_conf:
                best_conf, best_arg = conf, int(probs.argmax())
        permutation[ci] = best_arg
    mismatches = [
        {"label_index": i, "label": deployable.labels[i], "predicted_index": j}
        for i, j in permutation.items()
        if i != j
    ]
    return {"ok": not mismatches, "permutation": permutation, "mismatches": mismatches}
