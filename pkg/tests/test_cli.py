import json
import subprocess
import sys
from pathlib import Path

import pytest

from mobilepipe.cli import main
from mobilepipe.config import RunConfig
from mobilepipe.synthetic import write_separable_dataset


@pytest.fixture(scope="module")
def sep_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("sep") / "dataset"
    write_separable_dataset(root, n_per_class=10, size=16, seed=3)
    return root


def base_config(sep_root, out_dir, **overrides) -> Path:
    cfg = RunConfig(
        dataset_root=str(sep_root),
        out_dir=str(out_dir),
        sizes=[12],
        k=2,
        val_fraction=0.1,
        seed=11,
        generators=["G1"],
        archs=["d1m1"],
        arch_overrides={"d1m1": {"filters": 2, "hidden": 4}},
        batch_size=5,
        epochs=6,
        learning_rate=0.05,
        probe_per_class=3,
    )
    cfg.reduction.max_filters = 2
    cfg.reduction.max_neurons = 4
    cfg.reduction.neuron_stride = 2
    for k, v in overrides.items():
        setattr(cfg, k, v)
    path = out_dir / "config.json"
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(path)
    return path


@pytest.fixture(scope="module")
def run_dir(sep_root, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg_path = base_config(sep_root, out)
    for cmd in ("prepare", "search", "reduce", "package", "simulate", "report"):
        assert main([cmd, "--config", str(cfg_path)]) == 0, cmd
    return out


class TestPipelineStages:
    def test_prepare_outputs(self, run_dir):
        assert (run_dir / "manifest.json").exists()
        assert (run_dir / "fold_plan.json").exists()
        assert (run_dir / "data" / "size_12" / "class_left").is_dir()
        assert (run_dir / "data" / "size_12" / "fold_1" / "test" / "class_right").is_dir()

    def test_search_outputs(self, run_dir):
        text = (run_dir / "results.csv").read_text()
        assert text.startswith("# seed=11 config=")
        rows = [l for l in text.splitlines() if l and not l.startswith("#")]
        assert len(rows) == 1 + 1  # header + one config
        best = json.loads((run_dir / "best_config.json").read_text())
        assert best["size"] == 12 and best["generator"] == "G1"

    def test_reduce_outputs(self, run_dir):
        rdir = run_dir / "reduced"
        assert (rdir / "heatmap.csv").exists()
        assert (rdir / "params.csv").exists()
        assert (rdir / "heatmap.svg").exists()
        assert (rdir / "model.mpipe").exists()
        assert (rdir / "training_log.csv").read_text().startswith("epoch,loss")
        chosen = json.loads((rdir / "chosen.json").read_text())
        assert not chosen["skipped"] and chosen["filters"] >= 1

    def test_package_outputs(self, run_dir):
        pdir = run_dir / "package"
        assert (pdir / "model_float.mpipe").exists()
        assert (pdir / "model_quant.mpipe").exists()
        labels = (pdir / "labels.txt").read_text().splitlines()
        assert labels == ["class_left", "class_right"]
        meta = json.loads((pdir / "metadata.json").read_text())
        assert meta["image width"] == 12 and meta["num_classes"] == 2
        check = json.loads((pdir / "label_check.json").read_text())
        assert check["ok"]

    def test_simulate_outputs(self, run_dir):
        doc = json.loads((run_dir / "simulate" / "gap_report.json").read_text())
        assert set(doc["accuracies"]) == {"computer", "gallery", "realtime"}
        csv_text = (run_dir / "simulate" / "gap_report.csv").read_text()
        assert "computer_pred" in csv_text

    def test_report_collates(self, run_dir):
        doc = json.loads((run_dir / "run_report.json").read_text())
        assert "best" in doc and "gap" in doc and "reduction" in doc

    def test_artifacts_embed_seed_and_config_hash(self, run_dir):
        from mobilepipe.deploy import unpackage

        manifest_doc = json.loads((run_dir / "manifest.json").read_text())
        assert manifest_doc["seed"] == 11 and "config" in manifest_doc
        for csv_name in ("results.csv", "reduced/heatmap.csv", "simulate/gap_report.csv"):
            assert (run_dir / csv_name).read_text().startswith("# seed=11 config=")
        container = unpackage((run_dir / "package" / "model_quant.mpipe").read_bytes())
        assert container.metadata.extras["seed"] == 11
        assert "config" in container.metadata.extras

    def test_prepare_rerun_identical_tree(self, sep_root, tmp_path):
        out = tmp_path / "run"
        cfg_path = base_config(sep_root, out)

        def snapshot():
            files = sorted(
                p for p in (out / "data").rglob("*") if p.is_file()
            )
            return [(str(p.relative_to(out)), p.read_bytes()) for p in files]

        assert main(["prepare", "--config", str(cfg_path)]) == 0
        first = snapshot()
        assert main(["prepare", "--config", str(cfg_path)]) == 0
        assert snapshot() == first


class TestExitCodes:
    def test_missing_root_exits_2(self, tmp_path):
        rc = main(
            ["prepare", "--dataset-root", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]
        )
        assert rc == 2

    def test_search_without_prepare_exits_2(self, tmp_path):
        rc = main(["search", "--dataset-root", str(tmp_path), "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_bad_config_value_exits_2(self, sep_root, tmp_path):
        rc = main(
            ["prepare", "--dataset-root", str(sep_root), "--out", str(tmp_path / "o"),
             "--sizes", "4"]  # below minimum size
        )
        assert rc == 2

    def test_search_failure_exits_3_with_partial_results(self, sep_root, tmp_path):
        out = tmp_path / "run"
        cfg_path = base_config(sep_root, out, sizes=[10, 12], epochs=2)
        assert main(["prepare", "--config", str(cfg_path)]) == 0
        # corrupt the second size variant: the first variant's cells finish
        victim = next((out / "data" / "size_12" / "class_left").glob("*.ppm"))
        victim.write_bytes(b"P6\n2 2\n255\n\x00")  # truncated raster
        assert main(["search", "--config", str(cfg_path)]) == 3
        rows = [
            l
            for l in (out / "results.csv").read_text().splitlines()
            if l and not l.startswith("#")
        ][1:]
        assert len(rows) == 1 and rows[0].startswith("10,")

    def test_non_reducible_arch_exits_4(self, sep_root, tmp_path):
        out = tmp_path / "run"
        cfg_path = base_config(
            sep_root, out, archs=["d2m2"], arch_overrides={}, epochs=2
        )
        assert main(["prepare", "--config", str(cfg_path)]) == 0
        assert main(["search", "--config", str(cfg_path)]) == 0
        assert main(["reduce", "--config", str(cfg_path)]) == 4

    def test_deploy_gate_exits_6(self, sep_root, tmp_path):
        # border-signal data at tiny scale: gallery fine, but force the
        # gate by demanding more than perfection
        out = tmp_path / "run"
        cfg_path = base_config(sep_root, out, deploy_threshold=1.01)
        for cmd in ("prepare", "search", "reduce", "package"):
            assert main([cmd, "--config", str(cfg_path)]) == 0
        assert main(["simulate", "--config", str(cfg_path)]) == 6

    def test_threshold_zero_always_passes(self, sep_root, tmp_path):
        out = tmp_path / "run"
        cfg_path = base_config(sep_root, out, deploy_threshold=0.0)
        for cmd in ("prepare", "search", "reduce", "package", "simulate"):
            assert main([cmd, "--config", str(cfg_path)]) == 0


class TestSkipLogic:
    def test_skip_generators_searches_g1_only(self, sep_root, tmp_path):
        out = tmp_path / "run"
        cfg_path = base_config(
            sep_root, out, generators=["G1", "G2", "G3", "G4"], skip_generators=True
        )
        assert main(["prepare", "--config", str(cfg_path)]) == 0
        assert main(["search", "--config", str(cfg_path)]) == 0
        rows = [
            l
            for l in (out / "results.csv").read_text().splitlines()
            if l and not l.startswith("#")
        ][1:]
        assert len(rows) == 1 and ",G1," in rows[0]

    def test_skip_reduction_keeps_base_widths(self, sep_root, tmp_path):
        out = tmp_path / "run"
        cfg_path = base_config(sep_root, out, skip_reduction=True)
        for cmd in ("prepare", "search", "reduce"):
            assert main([cmd, "--config", str(cfg_path)]) == 0
        chosen = json.loads((out / "reduced" / "chosen.json").read_text())
        assert chosen["skipped"]
        assert not (out / "reduced" / "heatmap.csv").exists()

    def test_quantize_off_packages_float_only(self, sep_root, tmp_path):
        out = tmp_path / "run"
        cfg_path = base_config(sep_root, out, quantize=False)
        for cmd in ("prepare", "search", "reduce", "package", "simulate"):
            assert main([cmd, "--config", str(cfg_path)]) == 0
        assert (out / "package" / "model_float.mpipe").exists()
        assert not (out / "package" / "model_quant.mpipe").exists()
        from mobilepipe.deploy import unpackage

        d = unpackage((out / "package" / "model_float.mpipe").read_bytes())
        assert not d.quantized

    def test_flag_overrides_config(self, sep_root, tmp_path):
        out = tmp_path / "run"
        cfg_path = base_config(sep_root, out)
        assert main(["prepare", "--config", str(cfg_path), "--sizes", "10"]) == 0
        assert (out / "data" / "size_10").is_dir()
        assert not (out / "data" / "size_12").exists()


class TestGrayscaleDataset:
    def test_single_channel_pipeline(self, tmp_path):
        import numpy as np

        from mobilepipe.image_ops import ImageBuffer, save_image

        rng = np.random.Generator(np.random.PCG64(8))
        root = tmp_path / "gray"
        for cname, lo, hi in (("dim", 0, 90), ("lit", 160, 255)):
            d = root / cname
            d.mkdir(parents=True)
            for i in range(8):
                arr = rng.uniform(lo, hi, (14, 14, 1)).astype(np.float32)
                save_image(ImageBuffer(arr), d / f"g{i}.ppm")  # 1-channel -> P5
        out = tmp_path / "run"
        cfg_path = base_config(root, out, sizes=[10], k=2)
        for cmd in ("prepare", "search", "reduce", "package", "simulate"):
            assert main([cmd, "--config", str(cfg_path)]) == 0, cmd
        meta = json.loads((out / "package" / "metadata.json").read_text())
        assert meta["mean"] == [0.0] and meta["std"] == [255.0]

    def test_mixed_channels_rejected(self, tmp_path, rng):
        from mobilepipe.dataset import ingest
        from mobilepipe.errors import MixedChannels
        from mobilepipe.image_ops import ImageBuffer, save_image

        root = tmp_path / "mixed"
        (root / "a").mkdir(parents=True)
        (root / "b").mkdir(parents=True)
        save_image(ImageBuffer(rng.uniform(0, 255, (8, 8, 3)).astype("float32")), root / "a" / "x.ppm")
        save_image(ImageBuffer(rng.uniform(0, 255, (8, 8, 1)).astype("float32")), root / "b" / "y.ppm")
        with pytest.raises(MixedChannels):
            ingest(root)


class TestEnvDefault:
    def test_mobilepipe_out_env(self, sep_root, tmp_path, monkeypatch):
        monkeypatch.setenv("MOBILEPIPE_OUT", str(tmp_path / "envout"))
        cfg = RunConfig(dataset_root=str(sep_root))
        assert cfg.out_dir == str(tmp_path / "envout")


class TestConsoleEntry:
    def test_module_invocation(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "mobilepipe", "prepare", "--dataset-root",
             str(tmp_path / "missing"), "--out", str(tmp_path / "o")],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 2
        assert "prepare" in proc.stderr or "error" in proc.stderr.lower()

    def test_help_lists_subcommands(self):
        proc = subprocess.run(
            [sys.executable, "-m", "mobilepipe", "--help"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        for sub in ("prepare", "search", "reduce", "package", "simulate", "report"):
            assert sub in proc.stdout
