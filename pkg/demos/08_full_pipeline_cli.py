"""The whole pipeline through the CLI, stage by stage.

Equivalent shell usage:
    mobilepipe prepare  --config run.json
    mobilepipe search   --config run.json
    mobilepipe reduce   --config run.json
    mobilepipe package  --config run.json
    mobilepipe simulate --config run.json --deploy-threshold 0.8
    mobilepipe report   --config run.json

Run: python demos/08_full_pipeline_cli.py  (2-3 minutes)
"""

import json
import tempfile
from pathlib import Path

from mobilepipe.cli import main
from mobilepipe.config import RunConfig
from mobilepipe.synthetic import write_separable_dataset

work = Path(tempfile.mkdtemp(prefix="mobilepipe_demo_"))
write_separable_dataset(work / "dataset", n_per_class=20, size=40, seed=6)

cfg = RunConfig(
    dataset_root=str(work / "dataset"),
    out_dir=str(work / "run"),
    sizes=[24, 32],
    k=3,
    seed=7,
    generators=["G1", "G2"],
    archs=["d1m1"],
    arch_overrides={"d1m1": {"filters": 4, "hidden": 8}},
    epochs=10,
    deploy_threshold=0.8,
)
cfg.reduction.max_filters = 4
cfg.reduction.max_neurons = 8
cfg.reduction.neuron_stride = 2
cfg_path = work / "run.json"
cfg.save(cfg_path)

for stage in ("prepare", "search", "reduce", "package", "simulate", "report"):
    print(f"\n$ mobilepipe {stage} --config {cfg_path.name}")
    rc = main([stage, "--config", str(cfg_path)])
    assert rc == 0, f"{stage} exited {rc}"

out = Path(cfg.out_dir)
report = json.loads((out / "run_report.json").read_text())
print("\nartifacts:")
for p in sorted(out.rglob("*")):
    if p.is_file() and p.suffix in (".csv", ".json", ".mpipe", ".svg", ".txt"):
        print("  ", p.relative_to(out))
print("\ngap summary:", report["gap"]["accuracies"])
