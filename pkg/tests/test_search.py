import numpy as np
import pytest

from mobilepipe.augment import preset
from mobilepipe.dataset import (
    generate_subdatasets,
    ingest,
    stratified_kfold,
)
from mobilepipe.engine import TrainConfig, build_preset, param_count
from mobilepipe.errors import EmptyResults, NonReducibleArchitecture
from mobilepipe.search import (
    CVResult,
    audit_selection,
    choose_cell,
    cross_validate,
    emit_heatmap,
    format_cv,
    read_matrix_csv,
    read_results_csv,
    reduce_parameters,
    run_grid,
    select_best,
    write_results_csv,
)

from conftest import write_class_tree


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    """Small separable dataset prepared at size 12."""
    rng = np.random.Generator(np.random.PCG64(77))
    root = tmp_path_factory.mktemp("sepdata")
    per_class = {"left": [], "right": []}
    size = 12
    for cname in per_class:
        for _ in range(10):
            arr = rng.uniform(10, 60, (size, size, 3))
            cols = slice(0, 6) if cname == "left" else slice(6, 12)
            arr[:, cols, :] = rng.uniform(180, 240, (size, 6, 3))
            per_class[cname].append(arr)
    data_root = write_class_tree(root / "raw", per_class)
    manifest = ingest(data_root)
    (variant,) = generate_subdatasets(manifest, [12], root / "out")
    plan = stratified_kfold(manifest, k=2, val_fraction=0.1, seed=5)
    return manifest, variant, plan


def fast_cfg(seed=0, epochs=8):
    return TrainConfig(batch_size=5, epochs=epochs, learning_rate=0.05, seed=seed)


def mkresult(size, mean_pct, gen="G1", arch="d1m1"):
    return CVResult(
        size=size,
        generator=gen,
        arch_id=arch,
        fold_accuracies=(mean_pct / 100.0,) * 2,
    )


class TestFormatting:
    def test_all_perfect(self):
        r = CVResult(50, "G1", "d1m1", (1.0, 1.0))
        assert r.formatted() == "100.00(+- 0.00)"

    def test_two_fold_arithmetic(self):
        r = CVResult(50, "G1", "d1m1", (0.9, 1.0))
        assert r.mean == pytest.approx(0.95)
        assert r.std == pytest.approx(0.05)
        assert r.formatted() == "95.00(+- 5.00)"

    def test_paper_table_style(self):
        assert format_cv(0.6582, 0.0463) == "65.82(+- 4.63)"
        assert format_cv(0.9654, 0.0187) == "96.54(+- 1.87)"


class TestSelectBest:
    def test_dataset1_style_table(self):
        results = [
            mkresult(50, 95.88),
            mkresult(100, 95.77),
            mkresult(200, 96.54),
            mkresult(300, 59.80),
        ]
        assert select_best(results).size == 200

    def test_tie_breaks_to_smaller_size(self):
        results = [mkresult(200, 96.0), mkresult(100, 96.0)]
        assert select_best(results).size == 100

    def test_tie_breaks_to_lower_generator(self):
        results = [mkresult(100, 96.0, gen="G3"), mkresult(100, 96.0, gen="G2")]
        assert select_best(results).generator == "G2"

    def test_single_entry(self):
        only = mkresult(50, 80.0)
        assert select_best([only]) is only

    def test_empty(self):
        with pytest.raises(EmptyResults):
            select_best([])


class TestCrossValidate:
    def test_separable_data_scores_high(self, prepared):
        manifest, variant, plan = prepared
        arch = build_preset("d1m1", 12, 3, 2, filters=4, hidden=8)
        result = cross_validate(
            variant, plan, preset("G1"), arch, fast_cfg(), manifest, generator_id="G1"
        )
        assert len(result.fold_accuracies) == 2
        assert result.mean >= 0.9

    def test_deterministic_across_calls(self, prepared):
        manifest, variant, plan = prepared
        arch = build_preset("d1m1", 12, 3, 2, filters=2, hidden=4)
        a = cross_validate(variant, plan, preset("G1"), arch, fast_cfg(), manifest, "G1")
        b = cross_validate(variant, plan, preset("G1"), arch, fast_cfg(), manifest, "G1")
        assert a == b


class TestResultsCsv:
    def test_roundtrip_and_header(self, tmp_path):
        results = [mkresult(100, 95.0), mkresult(50, 90.0)]
        path = tmp_path / "results.csv"
        write_results_csv(results, path, seed=9, config_hash="cafe01")
        text = path.read_text()
        assert text.startswith("# seed=9 config=cafe01\n")
        again = read_results_csv(path)
        assert sorted(again, key=lambda r: r.size) == sorted(
            results, key=lambda r: r.size
        )
        assert "95.00(+- 0.00)" in text


class TestChooseCell:
    def test_min_params_within_tolerance(self):
        acc = {(1, 1): 0.90, (2, 1): 0.995, (4, 1): 1.0}
        params = {(1, 1): 10, (2, 1): 20, (4, 1): 40}
        assert choose_cell(acc, params, tolerance=1.0) == (2, 1)

    def test_huge_tolerance_selects_global_minimum(self):
        acc = {(1, 1): 0.10, (2, 2): 1.0}
        params = {(1, 1): 10, (2, 2): 99}
        assert choose_cell(acc, params, tolerance=100.0) == (1, 1)

    def test_tie_breaks_in_scan_order(self):
        acc = {(1, 2): 1.0, (2, 1): 1.0}
        params = {(1, 2): 7, (2, 1): 7}
        assert choose_cell(acc, params, tolerance=1.0) == (1, 2)


class TestReduce:
    def test_grid_and_audit(self, prepared, tmp_path):
        manifest, variant, plan = prepared
        base = build_preset("d1m1", 12, 3, 2, filters=4, hidden=6)
        grid = reduce_parameters(
            base,
            variant,
            plan,
            preset("G1"),
            fast_cfg(),
            manifest,
            stride=(1, 2),
            tolerance=2.0,
        )
        assert grid.filters_axis == (1, 2, 3, 4)
        assert grid.neurons_axis == (1, 3, 5)
        assert len(grid.accuracy) == 12
        # param monotonicity along each axis
        for m in grid.neurons_axis:
            col = [grid.params[(f, m)] for f in grid.filters_axis]
            assert col == sorted(col) and len(set(col)) == len(col)
        for f in grid.filters_axis:
            row = [grid.params[(f, m)] for m in grid.neurons_axis]
            assert row == sorted(row) and len(set(row)) == len(row)
        files = emit_heatmap(grid, tmp_path, seed=3, config_hash="beef02")
        assert audit_selection(files["heatmap_csv"], files["params_csv"]) == grid.chosen
        cells, tol = read_matrix_csv(files["heatmap_csv"])
        assert tol == 2.0
        assert cells == {k: pytest.approx(v) for k, v in grid.accuracy.items()}
        svg = (tmp_path / "heatmap.svg").read_text()
        assert svg.startswith("<svg") and "config=beef02" in svg

    def test_param_counts_match_engine(self, prepared):
        manifest, variant, plan = prepared
        base = build_preset("d1m1", 12, 3, 2, filters=2, hidden=4)
        grid = reduce_parameters(
            base, variant, plan, preset("G1"), fast_cfg(epochs=1), manifest,
            max_filters=2, max_neurons=2,
        )
        from mobilepipe.engine import arch_with_widths

        for (f, m), p in grid.params.items():
            assert p == param_count(arch_with_widths(base, f, m))

    def test_non_reducible(self, prepared):
        manifest, variant, plan = prepared
        base = build_preset("d2m2", 12, 3, 2)
        with pytest.raises(NonReducibleArchitecture):
            reduce_parameters(
                base, variant, plan, preset("G1"), fast_cfg(epochs=1), manifest
            )


class TestRunGrid:
    def test_row_count_and_order_invariance(self, prepared):
        manifest, variant, plan = prepared
        specs = {g: preset(g) for g in ("G1", "G2")}

        def builder(size):
            return [
                build_preset("d1m1", size, 3, 2, filters=2, hidden=4),
                build_preset("d2m1", size, 3, 2, filters=2, hidden=4),
            ]

        results = run_grid([variant], plan, specs, builder, fast_cfg(epochs=2), manifest)
        assert len(results) == 1 * 2 * 2
        keys = [(r.size, r.generator, r.arch_id) for r in results]
        assert len(set(keys)) == 4

    def test_parallel_equals_sequential(self, prepared):
        manifest, variant, plan = prepared
        specs = {"G1": preset("G1")}

        def builder(size):
            return [build_preset("d1m1", size, 3, 2, filters=2, hidden=4)]

        seq = run_grid([variant], plan, specs, builder, fast_cfg(epochs=2), manifest, jobs=1)
        par = run_grid([variant], plan, specs, builder, fast_cfg(epochs=2), manifest, jobs=2)
        assert seq == par
