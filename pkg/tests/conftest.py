import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # tests import oracles directly

from mobilepipe.image_ops import ImageBuffer, save_image


def make_image(arr) -> ImageBuffer:
    return ImageBuffer(np.asarray(arr, dtype=np.float32))


def random_image(rng, h, w, c=3, lo=0.0, hi=255.0) -> ImageBuffer:
    return ImageBuffer(rng.uniform(lo, hi, size=(h, w, c)).astype(np.float32))


def write_class_tree(root: Path, per_class: dict[str, list[np.ndarray]]):
    """Write a class-per-folder PPM tree from {class: [(h,w,3) arrays]}."""
    for cname, arrays in per_class.items():
        d = root / cname
        d.mkdir(parents=True, exist_ok=True)
        for i, arr in enumerate(arrays):
            save_image(make_image(arr), d / f"img_{i:03d}.ppm")
    return root


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


@pytest.fixture
def tiny_dataset(tmp_path, rng):
    """Two classes x 10 constant-ish images, 16x16."""
    per_class = {
        "alpha": [rng.uniform(0, 100, (16, 16, 3)) for _ in range(10)],
        "beta": [rng.uniform(155, 255, (16, 16, 3)) for _ in range(10)],
    }
    return write_class_tree(tmp_path / "data", per_class)
