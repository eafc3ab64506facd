"""Synthetic class-per-folder datasets for demos and pipeline checks.

Three families, all written as P6 PPM trees:

- separable: class signal is which half (left/right) is bright. Easy for
  a tiny CNN, and horizontal flips invert the class, so augmented
  generators underperform the plain one - handy for exercising search.
- border-signal: the class lives in thin top/bottom edge bands that the
  real-time frame geometry crops away.
- center-signal: the class lives in a central block that survives the
  crop; all inference paths should agree.
"""

from pathlib import Path

import numpy as np

from .image_ops import ImageBuffer, save_image


def _write_tree(root, arrays_by_class) -> str:
    root = Path(root)
    for cname, arrays in arrays_by_class.items():
        d = root / cname
        d.mkdir(parents=True, exist_ok=True)
        for i, arr in enumerate(arrays):
            save_image(ImageBuffer(arr.astype(np.float32)), d / f"img_{i:03d}.ppm")
    return str(root)


def _base_noise(rng, size, lo=90.0, hi=130.0):
    return rng.uniform(lo, hi, size=(size, size, 3))


def write_separable_dataset(root, n_per_class=40, size=50, seed=7) -> str:
    """class_left: bright left half; class_right: bright right half."""
    rng = np.random.Generator(np.random.PCG64(seed))
    half = size // 2
    by_class = {"class_left": [], "class_right": []}
    for cname in by_class:
        for _ in range(n_per_class):
            img = _base_noise(rng, size, 20.0, 60.0)
            bright = rng.uniform(190.0, 235.0, size=(size, half, 3))
            if cname == "class_left":
                img[:, :half, :] = bright
            else:
                img[:, size - half :, :] = bright
            by_class[cname].append(img)
    return _write_tree(root, by_class)


def write_border_signal_dataset(root, n_per_class=40, size=50, seed=11) -> str:
    """Class evidence confined to top/bottom bands inside 12% of the edges;
    interiors are identically distributed across classes."""
    rng = np.random.Generator(np.random.PCG64(seed))
    band = max(1, size // 8 - 1)  # strictly inside the cropped 12.5% margin
    by_class = {"band_bright": [], "band_dark": []}
    for cname in by_class:
        for _ in range(n_per_class):
            img = _base_noise(rng, size)
            level = (208.0, 244.0) if cname == "band_bright" else (8.0, 40.0)
            img[:band, :, :] = rng.uniform(*level, size=(band, size, 3))
            img[size - band :, :, :] = rng.uniform(*level, size=(band, size, 3))
            by_class[cname].append(img)
    return _write_tree(root, by_class)


def write_center_signal_dataset(root, n_per_class=40, size=50, seed=13) -> str:
    """Class evidence in a central block (30%..70% both axes) that survives
    the cover + crop map; borders are identically distributed."""
    rng = np.random.Generator(np.random.PCG64(seed))
    lo, hi = int(size * 0.30), int(size * 0.70)
    by_class = {"core_bright": [], "core_dark": []}
    for cname in by_class:
        for _ in range(n_per_class):
            img = _base_noise(rng, size)
            level = (208.0, 244.0) if cname == "core_bright" else (8.0, 40.0)
            img[lo:hi, lo:hi, :] = rng.uniform(*level, size=(hi - lo, hi - lo, 3))
            by_class[cname].append(img)
    return _write_tree(root, by_class)
