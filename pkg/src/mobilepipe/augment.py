"""Training-stream augmentation: the four generator presets and their
transform primitives.

Geometric transforms use inverse mapping about the image center with
nearest-neighbor sampling; out-of-bounds samples clamp to the nearest
edge pixel, so an augmented image contains only values present in its
source. Shear intensity is interpreted as degrees.

Per-sample parameter draws happen in one fixed order (rotation angle,
shear, zoom x, zoom y, shift x, shift y, horizontal flip, vertical flip,
brightness), each drawn only when its range is enabled, so a seeded
generator reproduces a sample stream exactly.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np

from .errors import EmptyTrainingSet, MissingStats, UnknownPreset
from .image_ops import ImageBuffer

STD_FLOOR = 1e-6

PRESET_IDS = ("G1", "G2", "G3", "G4")


@dataclass(frozen=True)
class AugmentorSpec:
    """One train-generator configuration (a column of the preset table)."""

    rescale: float | None = None
    rotation_range: float = 0.0
    brightness_range: tuple[float, float] | None = None
    horizontal_flip: bool = False
    vertical_flip: bool = False
    fill_mode: str = "nearest"
    featurewise_center: bool = False
    featurewise_std_normalization: bool = False
    zoom_range: float = 0.0
    shear_range: float = 0.0
    width_shift_range: float = 0.0
    height_shift_range: float = 0.0

    @property
    def needs_stats(self) -> bool:
        return self.featurewise_center or self.featurewise_std_normalization

    @property
    def has_geometry(self) -> bool:
        return (
            self.rotation_range != 0.0
            or self.zoom_range != 0.0
            or self.shear_range != 0.0
            or self.width_shift_range != 0.0
            or self.height_shift_range != 0.0
        )

    def to_json(self) -> dict:
        d = asdict(self)
        if self.brightness_range is not None:
            d["brightness_range"] = list(self.brightness_range)
        return d

    @staticmethod
    def from_json(doc: dict) -> "AugmentorSpec":
        d = dict(doc)
        if d.get("brightness_range") is not None:
            d["brightness_range"] = tuple(d["brightness_range"])
        return AugmentorSpec(**d)


@dataclass(frozen=True)
class FeaturewiseStats:
    """Per-channel mean/std fitted on a training split only."""

    mean: tuple[float, ...]
    std: tuple[float, ...]


def preset(preset_id: str) -> AugmentorSpec:
    """Generator presets G1..G4.

    G1 rescales only; G2 adds rotation, brightness, both flips and
    nearest-edge fill; G3 adds featurewise center+std; G4 adds zoom,
    shear and both shifts.
    """
    if preset_id == "G1":
        return AugmentorSpec(rescale=1.0 / 255.0)
    if preset_id == "G2":
        return AugmentorSpec(
            rescale=1.0 / 255.0,
            rotation_range=40.0,
            brightness_range=(0.2, 1.0),
            horizontal_flip=True,
            vertical_flip=True,
        )
    if preset_id == "G3":
        return AugmentorSpec(
            rescale=1.0 / 255.0,
            rotation_range=40.0,
            brightness_range=(0.2, 1.0),
            horizontal_flip=True,
            vertical_flip=True,
            featurewise_center=True,
            featurewise_std_normalization=True,
        )
    if preset_id == "G4":
        return AugmentorSpec(
            rescale=1.0 / 255.0,
            rotation_range=40.0,
            brightness_range=(0.2, 1.0),
            horizontal_flip=True,
            vertical_flip=True,
            featurewise_center=True,
            featurewise_std_normalization=True,
            zoom_range=0.2,
            shear_range=0.2,
            width_shift_range=0.2,
            height_shift_range=0.2,
        )
    raise UnknownPreset(f"unknown generator preset {preset_id!r}")


def fit_stats(train_images: list[ImageBuffer]) -> FeaturewiseStats:
    """Per-channel mean and population std over all pixels of all images,
    std floored at 1e-6."""
    if not train_images:
        raise EmptyTrainingSet("cannot fit featurewise stats on an empty set")
    channels = train_images[0].channels
    total = np.zeros(channels, dtype=np.float64)
    total_sq = np.zeros(channels, dtype=np.float64)
    count = 0
    for img in train_images:
        if img.channels != channels:
            raise ValueError("mixed channel counts in training set")
        p = img.pixels.astype(np.float64).reshape(-1, channels)
        total += p.sum(axis=0)
        total_sq += (p * p).sum(axis=0)
        count += p.shape[0]
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), STD_FLOOR)
    return FeaturewiseStats(mean=tuple(mean.tolist()), std=tuple(std.tolist()))


def _compose_matrix(angle: float, shear: float, zoom: tuple[float, float]) -> np.ndarray:
    """Forward 2x2 matrix: zoom . shear . rotation (translation handled apart)."""
    a = math.radians(angle)
    s = math.radians(shear)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    sh = np.array([[1.0, -math.sin(s)], [0.0, math.cos(s)]])
    zm = np.array([[zoom[0], 0.0], [0.0, zoom[1]]])
    return zm @ sh @ rot


def affine_transform(
    img: ImageBuffer,
    angle: float = 0.0,
    shear: float = 0.0,
    zoom: tuple[float, float] = (1.0, 1.0),
    tx: float = 0.0,
    ty: float = 0.0,
) -> ImageBuffer:
    """Rotate/shear/zoom about the center then translate, by inverse mapping.

    Each output pixel p samples source coordinate
    A_inv @ (p - c - t) + c, rounded to the nearest pixel and clamped to
    the image rectangle (nearest-edge fill).
    """
    if zoom[0] <= 0 or zoom[1] <= 0:
        raise ValueError(f"zoom factors must be > 0, got {zoom}")
    h, w = img.height, img.width
    fwd = _compose_matrix(angle, shear, zoom)
    inv = np.linalg.inv(fwd)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    vx = xs - cx - tx
    vy = ys - cy - ty
    sx = inv[0, 0] * vx + inv[0, 1] * vy + cx
    sy = inv[1, 0] * vx + inv[1, 1] * vy + cy
    ix = np.clip(np.floor(sx + 0.5).astype(np.intp), 0, w - 1)
    iy = np.clip(np.floor(sy + 0.5).astype(np.intp), 0, h - 1)
    return ImageBuffer(img.pixels[iy, ix])


def flip_horizontal(img: ImageBuffer) -> ImageBuffer:
    return ImageBuffer(img.pixels[:, ::-1].copy())


def flip_vertical(img: ImageBuffer) -> ImageBuffer:
    return ImageBuffer(img.pixels[::-1].copy())


def apply(
    spec: AugmentorSpec,
    stats: FeaturewiseStats | None,
    img: ImageBuffer,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw one augmented training sample as a (h, w, c) float32 tensor.

    Application order: affine geometry, flips, brightness multiply
    (clamped to [0, 255]), featurewise center/std, rescale.
    """
    if spec.needs_stats and stats is None:
        raise MissingStats("spec enables featurewise normalization but stats absent")
    if spec.has_geometry:
        angle = rng.uniform(-spec.rotation_range, spec.rotation_range) if spec.rotation_range else 0.0
        shear = rng.uniform(-spec.shear_range, spec.shear_range) if spec.shear_range else 0.0
        if spec.zoom_range:
            zoom = (
                rng.uniform(1 - spec.zoom_range, 1 + spec.zoom_range),
                rng.uniform(1 - spec.zoom_range, 1 + spec.zoom_range),
            )
        else:
            zoom = (1.0, 1.0)
        tx = rng.uniform(-spec.width_shift_range, spec.width_shift_range) * img.width if spec.width_shift_range else 0.0
        ty = rng.uniform(-spec.height_shift_range, spec.height_shift_range) * img.height if spec.height_shift_range else 0.0
        img = affine_transform(img, angle=angle, shear=shear, zoom=zoom, tx=tx, ty=ty)
    if spec.horizontal_flip and rng.random() < 0.5:
        img = flip_horizontal(img)
    if spec.vertical_flip and rng.random() < 0.5:
        img = flip_vertical(img)
    x = img.pixels.astype(np.float32)
    if spec.brightness_range is not None:
        factor = rng.uniform(*spec.brightness_range)
        x = np.clip(x * np.float32(factor), 0.0, 255.0)
    x = _finalize(spec, stats, x)
    return x


def apply_eval(
    spec: AugmentorSpec, stats: FeaturewiseStats | None, img: ImageBuffer
) -> np.ndarray:
    """Deterministic evaluation transform: rescale plus featurewise when
    fitted, never any stochastic transform."""
    if spec.needs_stats and stats is None:
        raise MissingStats("spec enables featurewise normalization but stats absent")
    return _finalize(spec, stats, img.pixels.astype(np.float32))


def _finalize(spec: AugmentorSpec, stats: FeaturewiseStats | None, x: np.ndarray) -> np.ndarray:
    if spec.featurewise_center and stats is not None:
        x = x - np.asarray(stats.mean, dtype=np.float32)
    if spec.featurewise_std_normalization and stats is not None:
        x = x / np.asarray(stats.std, dtype=np.float32)
    if spec.rescale is not None:
        x = x * np.float32(spec.rescale)
    return x.astype(np.float32)


def eval_mean_std(spec: AugmentorSpec, stats: FeaturewiseStats | None, channels: int):
    """Collapse the evaluation transform into one (mean, std) pair so model
    metadata can describe preprocessing as (x - mean) / std."""
    mean = np.zeros(channels, dtype=np.float64)
    std = np.ones(channels, dtype=np.float64)
    if spec.featurewise_center and stats is not None:
        mean = np.asarray(stats.mean, dtype=np.float64)
    if spec.featurewise_std_normalization and stats is not None:
        std = np.asarray(stats.std, dtype=np.float64)
    if spec.rescale:
        std = std / spec.rescale
    return mean.tolist(), std.tolist()
