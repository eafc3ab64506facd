import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mobilepipe.dataset import (
    DatasetManifest,
    generate_subdatasets,
    ingest,
    load_fold_plan,
    load_manifest,
    save_fold_plan,
    save_manifest,
    stratified_kfold,
    write_fold_layout,
)
from mobilepipe.errors import (
    ClassSmallerThanK,
    EmptyClass,
    InvalidFraction,
    TooFewClasses,
    UndecodableImage,
)
from mobilepipe.image_ops import load_image

from conftest import write_class_tree


def fake_manifest(counts: dict[str, int]) -> DatasetManifest:
    classes = tuple(sorted(counts))
    items = []
    for ci, cname in enumerate(classes):
        for i in range(counts[cname]):
            items.append((f"{cname}/img_{i:03d}.ppm", ci))
    return DatasetManifest(root="/nonexistent", classes=classes, items=tuple(items))


class TestIngest:
    def test_enumerates_classes_and_items(self, tiny_dataset):
        m = ingest(tiny_dataset)
        assert m.classes == ("alpha", "beta")
        assert len(m.items) == 20
        assert m.class_counts == {"alpha": 10, "beta": 10}

    def test_single_class_rejected(self, tmp_path, rng):
        write_class_tree(tmp_path / "one", {"only": [rng.uniform(0, 255, (4, 4, 3))]})
        with pytest.raises(TooFewClasses):
            ingest(tmp_path / "one")

    def test_empty_class_rejected(self, tmp_path, rng):
        root = write_class_tree(
            tmp_path / "d", {"a": [rng.uniform(0, 255, (4, 4, 3))]}
        )
        (root / "b").mkdir()
        with pytest.raises(EmptyClass):
            ingest(root)

    def test_undecodable_flagged_with_path(self, tmp_path, rng):
        root = write_class_tree(
            tmp_path / "d",
            {"a": [rng.uniform(0, 255, (4, 4, 3))], "b": [rng.uniform(0, 255, (4, 4, 3))]},
        )
        bad = root / "b" / "broken.ppm"
        bad.write_bytes(b"NOTANIMAGE")
        with pytest.raises(UndecodableImage) as exc:
            ingest(root)
        assert "broken.ppm" in str(exc.value)

    def test_leaves_style_counts(self, tmp_path, rng):
        counts = {
            "Ash": 24,
            "Beech": 28,
            "Hornbeam": 30,
            "Mountainoak": 20,
            "Sycamoremaple": 20,
        }
        tree = {
            name: [rng.uniform(0, 255, (6, 6, 3)) for _ in range(n)]
            for name, n in counts.items()
        }
        m = ingest(write_class_tree(tmp_path / "leaves", tree))
        assert len(m.classes) == 5
        assert len(m.items) == 122

    def test_label_indices_stable_under_enumeration_order(self, tmp_path, rng):
        # write classes in reverse name order; indices must be lexicographic
        root = tmp_path / "d"
        for cname in ("zeta", "alpha", "мid"):
            write_class_tree(root, {cname: [rng.uniform(0, 255, (4, 4, 3))] * 2})
        m = ingest(root)
        assert m.classes == tuple(sorted(m.classes))
        assert m.items == tuple(sorted(m.items, key=lambda it: (it[1], it[0])))


class TestStratifiedKFold:
    def test_balanced_two_class(self):
        m = fake_manifest({"a": 10, "b": 10})
        plan = stratified_kfold(m, k=5, val_fraction=0.1, seed=3)
        for f in range(5):
            train, val, test = plan.split(f)
            assert len(test) == 4 and len(val) == 2 and len(train) == 14
            for split in (train, val, test):
                per_class = [sum(1 for i in split if m.items[i][1] == c) for c in (0, 1)]
                assert per_class[0] == per_class[1]

    def test_val_fraction_zero_gives_80_20(self):
        m = fake_manifest({"a": 20, "b": 20})
        plan = stratified_kfold(m, k=5, val_fraction=0.0, seed=1)
        train, val, test = plan.split(0)
        assert (len(train), len(val), len(test)) == (32, 0, 8)

    def test_same_seed_identical(self):
        m = fake_manifest({"a": 13, "b": 17, "c": 11})
        p1 = stratified_kfold(m, 4, 0.1, seed=42)
        p2 = stratified_kfold(m, 4, 0.1, seed=42)
        assert p1 == p2
        p3 = stratified_kfold(m, 4, 0.1, seed=43)
        assert p1 != p3

    def test_class_smaller_than_k(self):
        with pytest.raises(ClassSmallerThanK):
            stratified_kfold(fake_manifest({"a": 3, "b": 10}), 5, 0.1, 0)

    def test_invalid_fraction(self):
        m = fake_manifest({"a": 10, "b": 10})
        with pytest.raises(InvalidFraction):
            stratified_kfold(m, 5, 0.9, 0)
        with pytest.raises(InvalidFraction):
            stratified_kfold(m, 5, -0.1, 0)

    @settings(max_examples=120, deadline=None)
    @given(
        counts=st.lists(st.integers(10, 80), min_size=2, max_size=6),
        k=st.integers(2, 8),
        seed=st.integers(0, 2**31),
        vf=st.floats(0.0, 0.2),
    )
    def test_partition_and_balance_properties(self, counts, k, seed, vf):
        m = fake_manifest({f"c{i:02d}": n for i, n in enumerate(counts)})
        plan = stratified_kfold(m, k, vf, seed)
        all_items = set(range(len(m.items)))
        seen_tests = []
        for f in range(k):
            train, val, test = plan.split(f)
            assert set(train) | set(val) | set(test) == all_items
            assert not (set(train) & set(val))
            assert not (set(train) & set(test))
            assert not (set(val) & set(test))
            seen_tests.extend(test)
            for ci, n in enumerate(counts):
                n_test = sum(1 for i in test if m.items[i][1] == ci)
                assert abs(n_test - n / k) < 1
        assert sorted(seen_tests) == sorted(all_items)

    def test_grouped_items_stay_together(self):
        m = fake_manifest({"a": 20, "b": 20})
        # items 2i and 2i+1 derive from the same source image
        groups = {i: f"{m.items[i][1]}_src{i // 2}" for i in range(len(m.items))}
        plan = stratified_kfold(m, 5, 0.0, seed=9, groups=groups)
        for f in range(5):
            _, _, test = plan.split(f)
            test_set = set(test)
            for i in test:
                partner = i + 1 if i % 2 == 0 else i - 1
                assert partner in test_set


class TestSubdatasetsAndLayout:
    def test_variant_count_and_dims(self, tiny_dataset, tmp_path):
        m = ingest(tiny_dataset)
        variants = generate_subdatasets(m, [8, 12], tmp_path / "out")
        assert [v.size for v in variants] == [8, 12]
        img = load_image(Path(variants[0].directory) / "alpha" / "img_000.ppm")
        assert (img.width, img.height) == (8, 8)

    def test_identity_size_copies_pixels(self, tiny_dataset, tmp_path):
        m = ingest(tiny_dataset)
        (variant,) = generate_subdatasets(m, [16], tmp_path / "out")
        src = load_image(Path(tiny_dataset) / "alpha" / "img_000.ppm")
        dst = load_image(Path(variant.directory) / "alpha" / "img_000.ppm")
        np.testing.assert_array_equal(src.pixels, dst.pixels)

    def test_fold_layout_tree(self, tiny_dataset, tmp_path):
        m = ingest(tiny_dataset)
        (variant,) = generate_subdatasets(m, [8], tmp_path / "out")
        plan = stratified_kfold(m, 5, 0.1, seed=0)
        write_fold_layout(variant, plan, m)
        base = Path(variant.directory)
        leaf_dirs = [
            p
            for f in range(5)
            for split in ("train", "validation", "test")
            for p in [(base / f"fold_{f}" / split / c) for c in m.classes]
        ]
        assert len(leaf_dirs) == 30
        assert all(d.is_dir() for d in leaf_dirs)
        n_test = sum(
            1 for f in range(5) for _ in (base / f"fold_{f}" / "test").rglob("*.ppm")
        )
        assert n_test == len(m.items)  # test sets partition the data

    def test_layout_idempotent(self, tiny_dataset, tmp_path):
        m = ingest(tiny_dataset)
        (variant,) = generate_subdatasets(m, [8], tmp_path / "out")
        plan = stratified_kfold(m, 2, 0.1, seed=0)

        def listing():
            return sorted(
                str(p.relative_to(variant.directory))
                for p in Path(variant.directory).rglob("*")
            )

        write_fold_layout(variant, plan, m)
        first = listing()
        write_fold_layout(variant, plan, m)
        assert listing() == first

    def test_empty_validation_dirs_exist(self, tiny_dataset, tmp_path):
        m = ingest(tiny_dataset)
        (variant,) = generate_subdatasets(m, [8], tmp_path / "out")
        plan = stratified_kfold(m, 5, 0.0, seed=0)
        write_fold_layout(variant, plan, m)
        vdir = Path(variant.directory) / "fold_0" / "validation" / "alpha"
        assert vdir.is_dir() and not list(vdir.iterdir())


class TestJsonRoundTrip:
    def test_manifest(self, tiny_dataset, tmp_path):
        m = ingest(tiny_dataset)
        save_manifest(m, tmp_path / "m.json", extra={"seed": 5})
        again = load_manifest(tmp_path / "m.json")
        assert again == m
        assert json.loads((tmp_path / "m.json").read_text())["seed"] == 5

    def test_fold_plan(self, tmp_path):
        m = fake_manifest({"a": 10, "b": 10})
        plan = stratified_kfold(m, 3, 0.1, seed=7)
        save_fold_plan(plan, tmp_path / "p.json")
        assert load_fold_plan(tmp_path / "p.json") == plan
