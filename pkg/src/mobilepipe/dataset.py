"""Dataset ingestion, multi-size sub-dataset generation and stratified folds.

A dataset on disk is one folder per class. Class order is always
lexicographic and is the single source of truth for label indices, so the
same tree enumerated in any filesystem order yields identical labels.

Shuffling uses numpy's PCG64 generator seeded from the recorded seed;
the seed lives inside the FoldPlan so every split is reproducible across
machines.
"""

import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ClassSmallerThanK,
    EmptyClass,
    InvalidFraction,
    MixedChannels,
    TooFewClasses,
    UndecodableImage,
)
from .image_ops import (
    ImageBuffer,
    load_image,
    probe_channels,
    resize_bilinear,
    save_image,
)

IMAGE_SUFFIXES = (".ppm", ".pgm", ".png")


@dataclass(frozen=True)
class DatasetManifest:
    """Enumeration of a class-per-folder tree.

    items are (relative path, class index) sorted by (class, filename);
    channels is uniform across the dataset (checked at ingest).
    """

    root: str
    classes: tuple[str, ...]
    items: tuple[tuple[str, int], ...]
    channels: int = 3

    @property
    def class_counts(self) -> dict[str, int]:
        counts = {c: 0 for c in self.classes}
        for _, ci in self.items:
            counts[self.classes[ci]] += 1
        return counts

    def indices_of_class(self, ci: int) -> list[int]:
        return [i for i, (_, c) in enumerate(self.items) if c == ci]

    def to_json(self) -> dict:
        return {
            "root": self.root,
            "classes": list(self.classes),
            "items": [{"path": p, "class": c} for p, c in self.items],
            "counts": self.class_counts,
            "channels": self.channels,
        }

    @staticmethod
    def from_json(doc: dict) -> "DatasetManifest":
        return DatasetManifest(
            root=doc["root"],
            classes=tuple(doc["classes"]),
            items=tuple((it["path"], it["class"]) for it in doc["items"]),
            channels=doc.get("channels", 3),
        )


@dataclass(frozen=True)
class FoldPlan:
    """Stratified k-fold assignment: per fold, disjoint train/validation/test
    index lists into the manifest's items."""

    k: int
    seed: int
    val_fraction: float
    folds: tuple[dict, ...]  # each {"train": [...], "validation": [...], "test": [...]}

    def split(self, fold: int) -> tuple[list[int], list[int], list[int]]:
        f = self.folds[fold]
        return list(f["train"]), list(f["validation"]), list(f["test"])

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "val_fraction": self.val_fraction,
            "folds": [
                {s: list(f[s]) for s in ("train", "validation", "test")}
                for f in self.folds
            ],
        }

    @staticmethod
    def from_json(doc: dict) -> "FoldPlan":
        return FoldPlan(
            k=doc["k"],
            seed=doc["seed"],
            val_fraction=doc["val_fraction"],
            folds=tuple(doc["folds"]),
        )


@dataclass(frozen=True)
class SizeVariant:
    """One square-resized copy of the dataset (size x size) on disk."""

    size: int
    directory: str


def ingest(root) -> DatasetManifest:
    """Scan a class-per-folder tree into a manifest.

    Every candidate file's header is probed; a file that fails to parse
    raises UndecodableImage with its path.
    """
    root = Path(root)
    if not root.is_dir():
        raise TooFewClasses(f"dataset root {root} is not a directory")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if len(class_dirs) < 2:
        raise TooFewClasses(f"need >= 2 class folders under {root}, found {len(class_dirs)}")
    classes = tuple(d.name for d in class_dirs)
    items: list[tuple[str, int]] = []
    channels = None
    for ci, d in enumerate(class_dirs):
        files = sorted(
            f for f in d.iterdir() if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES
        )
        if not files:
            raise EmptyClass(f"class folder {d} has no decodable images")
        for f in files:
            try:
                with open(f, "rb") as fh:
                    head = fh.read(64)
                c = probe_channels(head)
            except Exception as e:
                raise UndecodableImage(str(f), str(e)) from e
            if channels is None:
                channels = c
            elif c != channels:
                raise MixedChannels(
                    f"{f} has {c} channels but the dataset started with {channels}"
                )
            items.append((str(f.relative_to(root)), ci))
    return DatasetManifest(
        root=str(root), classes=classes, items=tuple(items), channels=channels or 3
    )


def generate_subdatasets(
    manifest: DatasetManifest, sizes: list[int], out_root
) -> list[SizeVariant]:
    """Write size_<s>/<class>/<filename> trees, resizing every image to s x s."""
    for s in sizes:
        if s < 8:
            raise ValueError(f"sub-dataset size must be >= 8, got {s}")
    out_root = Path(out_root)
    variants = []
    for s in sizes:
        vdir = out_root / f"size_{s}"
        for rel, ci in manifest.items:
            src = Path(manifest.root) / rel
            img = load_image(src)
            resized = resize_bilinear(img, s, s)
            dst = vdir / manifest.classes[ci] / Path(rel).name
            dst.parent.mkdir(parents=True, exist_ok=True)
            save_image(resized, dst)
        variants.append(SizeVariant(size=s, directory=str(vdir)))
    return variants


def stratified_kfold(
    manifest: DatasetManifest,
    k: int,
    val_fraction: float,
    seed: int,
    groups: dict[int, str] | None = None,
) -> FoldPlan:
    """Stratified k-fold with a validation carve-out.

    Per class: shuffle once with the seed, cut into k near-equal test
    chunks (sizes floor(n/k) or ceil(n/k)); fold f tests on chunk f,
    draws floor(val_fraction * n) validation items from the remainder and
    trains on the rest. k=5 with val_fraction=0.1 gives 70/10/20.

    groups optionally maps item index -> source key; items sharing a key
    are kept inside the same test chunk (leakage guard). Grouped splits
    keep chunk counts only approximately balanced.
    """
    if k < 2:
        raise InvalidFraction(f"k must be >= 2, got {k}")
    if not (0 <= val_fraction < 1 - 1 / k):
        raise InvalidFraction(
            f"val_fraction must be in [0, 1 - 1/k), got {val_fraction}"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    folds = [
        {"train": [], "validation": [], "test": []} for _ in range(k)
    ]
    for ci, cname in enumerate(manifest.classes):
        idx = np.array(manifest.indices_of_class(ci), dtype=np.intp)
        if groups is None:
            if len(idx) < k:
                raise ClassSmallerThanK(
                    f"class {cname} has {len(idx)} items, fewer than k={k}"
                )
            shuffled = idx[rng.permutation(len(idx))]
            chunks = np.array_split(shuffled, k)
        else:
            keys = sorted({groups.get(int(i), str(int(i))) for i in idx})
            if len(keys) < k:
                raise ClassSmallerThanK(
                    f"class {cname} has {len(keys)} groups, fewer than k={k}"
                )
            order = rng.permutation(len(keys))
            key_chunks = np.array_split(np.array(keys, dtype=object)[order], k)
            by_key: dict[str, list[int]] = {}
            for i in idx:
                by_key.setdefault(groups.get(int(i), str(int(i))), []).append(int(i))
            chunks = [
                np.array([i for key in kc for i in by_key[key]], dtype=np.intp)
                for kc in key_chunks
            ]
        n_val = int(val_fraction * len(idx))
        for f in range(k):
            test = chunks[f]
            rest = np.concatenate([chunks[g] for g in range(k) if g != f])
            n_val_f = min(n_val, len(rest))
            folds[f]["test"].extend(int(i) for i in test)
            folds[f]["validation"].extend(int(i) for i in rest[:n_val_f])
            folds[f]["train"].extend(int(i) for i in rest[n_val_f:])
    for f in folds:
        for split in f.values():
            split.sort()
    return FoldPlan(k=k, seed=seed, val_fraction=val_fraction, folds=tuple(folds))


def write_fold_layout(variant: SizeVariant, plan: FoldPlan, manifest: DatasetManifest) -> str:
    """Materialize size_<s>/fold_<f>/{train,validation,test}/<class>/ trees.

    Every leaf class directory exists even when its split is empty, and
    re-running produces the identical tree.
    """
    vdir = Path(variant.directory)
    for f in range(plan.k):
        for split_name in ("train", "validation", "test"):
            for cname in manifest.classes:
                (vdir / f"fold_{f}" / split_name / cname).mkdir(
                    parents=True, exist_ok=True
                )
        for split_name, indices in zip(
            ("train", "validation", "test"), plan.split(f)
        ):
            for i in indices:
                rel, ci = manifest.items[i]
                name = Path(rel).name
                src = vdir / manifest.classes[ci] / name
                dst = vdir / f"fold_{f}" / split_name / manifest.classes[ci] / name
                shutil.copyfile(src, dst)
    return str(vdir)


def load_variant_images(
    variant: SizeVariant, manifest: DatasetManifest
) -> list[tuple[ImageBuffer, int]]:
    """Decode every image of a size variant in manifest item order."""
    vdir = Path(variant.directory)
    out = []
    for rel, ci in manifest.items:
        out.append((load_image(vdir / manifest.classes[ci] / Path(rel).name), ci))
    return out


def save_manifest(manifest: DatasetManifest, path, extra: dict | None = None) -> None:
    doc = manifest.to_json()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_manifest(path) -> DatasetManifest:
    return DatasetManifest.from_json(json.loads(Path(path).read_text()))


def save_fold_plan(plan: FoldPlan, path, extra: dict | None = None) -> None:
    doc = plan.to_json()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_fold_plan(path) -> FoldPlan:
    return FoldPlan.from_json(json.loads(Path(path).read_text()))
