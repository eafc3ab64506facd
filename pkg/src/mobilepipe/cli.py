"""Pipeline orchestrator: prepare | search | reduce | package | simulate | report.

Each subcommand reads only the declared outputs of earlier stages under
the run's output directory, so stages are re-entrant and individually
rerunnable. Exit codes: 0 ok, 2 input/configuration, 3 search, 4 reduce,
5 package, 6 deploy gate (gallery accuracy below --deploy-threshold).
"""

import argparse
import json
import sys
import time
from pathlib import Path

from . import augment, dataset, deploy, devicesim, engine, search
from .config import RunConfig
from .errors import MobilePipeError, NonReducibleArchitecture
from .image_ops import load_image

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SEARCH = 3
EXIT_REDUCE = 4
EXIT_PACKAGE = 5
EXIT_GATE = 6


# ---------------------------------------------------------------------------
# config plumbing


def _parse_int_list(text):
    return [int(x) for x in text.split(",") if x]


def _parse_str_list(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def build_config(args) -> RunConfig:
    """defaults < config file < CLI flags."""
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "dataset_root", None):
        cfg.dataset_root = args.dataset_root
    if args.out:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.sizes:
        cfg.sizes = _parse_int_list(args.sizes)
    if args.generators:
        cfg.generators = _parse_str_list(args.generators)
    if args.archs:
        cfg.archs = _parse_str_list(args.archs)
    if args.quantize is not None:
        cfg.quantize = args.quantize
    if args.skip_reduction:
        cfg.skip_reduction = True
    if args.skip_generators:
        cfg.skip_generators = True
    if args.skip_augmentation:
        cfg.skip_augmentation = True
    if args.deploy_threshold is not None:
        cfg.deploy_threshold = args.deploy_threshold
    cfg.validate()
    return cfg


def _out(cfg: RunConfig) -> Path:
    p = Path(cfg.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _arch_builder(cfg: RunConfig, num_classes: int, channels: int):
    def build(size: int):
        archs = []
        for arch_id in cfg.archs:
            overrides = cfg.arch_overrides.get(arch_id, {})
            archs.append(
                engine.build_preset(arch_id, size, channels, num_classes, **overrides)
            )
        return archs

    return build


def _load_stage(path: Path, stage: str):
    if not path.exists():
        raise MobilePipeError(
            f"missing {path.name}; run the {stage} stage first ({path})"
        )
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_prepare(cfg: RunConfig) -> int:
    """Steps 1-2: ingest, size variants, stratified folds, fold layout."""
    t0 = time.perf_counter()
    out = _out(cfg)
    manifest = dataset.ingest(cfg.dataset_root)
    variants = dataset.generate_subdatasets(manifest, cfg.sizes, out / "data")
    plan = dataset.stratified_kfold(manifest, cfg.k, cfg.val_fraction, cfg.seed)
    for variant in variants:
        dataset.write_fold_layout(variant, plan, manifest)
    stamp = {"seed": cfg.seed, "config": cfg.config_hash}
    dataset.save_manifest(manifest, out / "manifest.json", extra=stamp)
    dataset.save_fold_plan(plan, out / "fold_plan.json", extra=stamp)
    cfg.save(out / "run_config.json")
    print(
        f"prepared {len(manifest.items)} items / {len(manifest.classes)} classes "
        f"at sizes {cfg.sizes} in {time.perf_counter() - t0:.1f}s -> {out}"
    )
    return EXIT_OK


def _variants(cfg: RunConfig) -> list[dataset.SizeVariant]:
    return [
        dataset.SizeVariant(size=s, directory=str(Path(cfg.out_dir) / "data" / f"size_{s}"))
        for s in cfg.sizes
    ]


def cmd_search(cfg: RunConfig) -> int:
    """Step 3: the (size x generator x architecture) cross-validation grid."""
    t0 = time.perf_counter()
    out = _out(cfg)
    manifest = dataset.load_manifest(_load_stage(out / "manifest.json", "prepare"))
    plan = dataset.load_fold_plan(out / "fold_plan.json")
    gen_ids = cfg.effective_generators()
    specs = {g: augment.preset(g) for g in gen_ids}
    collected: list[search.CVResult] = []

    def on_result(r):
        collected.append(r)
        print(f"  {r.size:>4} {r.generator} {r.arch_id}: {r.formatted()}")

    try:
        results = search.run_grid(
            _variants(cfg),
            plan,
            specs,
            _arch_builder(cfg, len(manifest.classes), manifest.channels),
            cfg.train_config(),
            manifest,
            jobs=cfg.jobs,
            on_result=on_result,
        )
    except MobilePipeError as e:
        if collected:
            search.write_results_csv(collected, out / "results.csv", cfg.seed, cfg.config_hash)
        print(
            f"search failed ({len(collected)} partial results retained): {e}",
            file=sys.stderr,
        )
        return EXIT_SEARCH
    search.write_results_csv(results, out / "results.csv", cfg.seed, cfg.config_hash)
    best = search.select_best(results)
    (out / "best_config.json").write_text(
        json.dumps(
            {
                "size": best.size,
                "generator": best.generator,
                "arch": best.arch_id,
                "mean": best.mean,
                "std": best.std,
                "formatted": best.formatted(),
                "seed": cfg.seed,
                "config": cfg.config_hash,
            },
            indent=2,
            sort_keys=True,
        )
    )
    print(
        f"searched {len(results)} configs in {time.perf_counter() - t0:.1f}s; "
        f"best: size={best.size} {best.generator} {best.arch_id} {best.formatted()}"
    )
    return EXIT_OK


def _best(out: Path) -> dict:
    return json.loads(_load_stage(out / "best_config.json", "search").read_text())


def _final_model_metadata(cfg, manifest, arch, spec, stats):
    mean, std = augment.eval_mean_std(spec, stats, arch.channels)
    return deploy.ModelMetadata(
        name=f"{Path(cfg.dataset_root).name} model",
        version="v1",
        image_width=arch.input_size,
        image_height=arch.input_size,
        image_min=0.0,
        image_max=1.0,
        mean=tuple(mean),
        std=tuple(std),
        num_classes=len(manifest.classes),
        author="mobilepipe",
        extras={"seed": cfg.seed, "config": cfg.config_hash},
    )


def cmd_reduce(cfg: RunConfig) -> int:
    """Step 3b: width scan of the best architecture, then train the final
    model at the chosen widths (or at full widths with --skip-reduction)."""
    t0 = time.perf_counter()
    out = _out(cfg)
    manifest = dataset.load_manifest(_load_stage(out / "manifest.json", "prepare"))
    plan = dataset.load_fold_plan(out / "fold_plan.json")
    best = _best(out)
    spec = augment.preset(best["generator"])
    overrides = cfg.arch_overrides.get(best["arch"], {})
    base = engine.build_preset(
        best["arch"], best["size"], manifest.channels, len(manifest.classes), **overrides
    )
    variant = dataset.SizeVariant(
        size=best["size"], directory=str(out / "data" / f"size_{best['size']}")
    )
    images = dataset.load_variant_images(variant, manifest)
    rdir = out / "reduced"
    rdir.mkdir(parents=True, exist_ok=True)

    if cfg.skip_reduction:
        final_arch = base
        chosen = {"skipped": True, "filters": None, "neurons": None}
    else:
        try:
            grid = search.reduce_parameters(
                base,
                variant,
                plan,
                spec,
                cfg.train_config(),
                manifest,
                stride=(cfg.reduction.filter_stride, cfg.reduction.neuron_stride),
                tolerance=cfg.reduction.tolerance,
                max_filters=cfg.reduction.max_filters,
                max_neurons=cfg.reduction.max_neurons,
                use_cv=cfg.reduction.cv,
                jobs=cfg.jobs,
                images=images,
            )
        except NonReducibleArchitecture as e:
            print(f"reduce failed: {e}", file=sys.stderr)
            return EXIT_REDUCE
        search.emit_heatmap(grid, rdir, seed=cfg.seed, config_hash=cfg.config_hash)
        f, m = grid.chosen
        final_arch = engine.arch_with_widths(base, f, m)
        chosen = {
            "skipped": False,
            "filters": f,
            "neurons": m,
            "accuracy": grid.accuracy[grid.chosen],
            "param_count": grid.params[grid.chosen],
            "grid_max_accuracy": max(grid.accuracy.values()),
            "grid_max_params": max(grid.params.values()),
            "tolerance": grid.tolerance,
        }

    # final model: fold 0's train/validation split. After a scan this
    # reuses the chosen cell's seed, so the shipped model is exactly the
    # one whose accuracy the grid reports.
    if cfg.skip_reduction:
        final_seed = engine.derive_seed(cfg.seed, (search._KEY_FINAL,))
    else:
        f, m = grid.chosen
        final_seed = engine.derive_seed(cfg.seed, (search._KEY_REDUCE, f, m, 0))
    model, test_acc, stats = search.train_fold(
        images, plan, 0, spec, final_arch, cfg.train_config(final_seed), manifest.classes
    )
    meta = _final_model_metadata(cfg, manifest, final_arch, spec, stats)
    blob = deploy.package(model, meta, quantize=False)
    deploy.save_container(blob, rdir / "model.mpipe")
    engine.write_training_log(model, rdir / "training_log.csv")
    chosen.update(
        {
            "generator": best["generator"],
            "arch": best["arch"],
            "size": best["size"],
            "fold0_test_accuracy": test_acc,
            "final_param_count": engine.param_count(final_arch),
            "seed": cfg.seed,
            "config": cfg.config_hash,
        }
    )
    (rdir / "chosen.json").write_text(json.dumps(chosen, indent=2, sort_keys=True))
    print(
        f"reduce done in {time.perf_counter() - t0:.1f}s: "
        f"{'skipped, ' if cfg.skip_reduction else ''}final params "
        f"{chosen['final_param_count']}, fold-0 test acc {test_acc:.3f}"
    )
    return EXIT_OK


def cmd_package(cfg: RunConfig) -> int:
    """Steps 4-5: float and (optionally) quantized containers + labels and
    metadata sidecars, with a label-order probe check."""
    t0 = time.perf_counter()
    out = _out(cfg)
    manifest = dataset.load_manifest(_load_stage(out / "manifest.json", "prepare"))
    plan = dataset.load_fold_plan(out / "fold_plan.json")
    blob = _load_stage(out / "reduced" / "model.mpipe", "reduce").read_bytes()
    deployable = deploy.unpackage(blob)
    model = deployable.to_trained_model()
    pdir = out / "package"
    pdir.mkdir(parents=True, exist_ok=True)
    try:
        float_blob = deploy.package(model, deployable.metadata, quantize=False)
        deploy.save_container(float_blob, pdir / "model_float.mpipe")
        if cfg.quantize:
            quant_blob = deploy.package(model, deployable.metadata, quantize=True)
            (pdir / "model_quant.mpipe").write_bytes(quant_blob)
        deploy.export_metadata(deployable.metadata, pdir / "metadata.json")
    except MobilePipeError as e:
        print(f"package failed: {e}", file=sys.stderr)
        return EXIT_PACKAGE
    probes = _probe_items(cfg, manifest, plan)
    check = deploy.verify_label_order(
        deployable, [(img, manifest.classes[truth]) for _, img, truth in probes]
    )
    (pdir / "label_check.json").write_text(json.dumps(check, indent=2, sort_keys=True))
    if not check["ok"]:
        print(f"label order check failed: {check['mismatches']}", file=sys.stderr)
        return EXIT_PACKAGE
    print(
        f"packaged float{' + quantized' if cfg.quantize else ''} containers "
        f"in {time.perf_counter() - t0:.1f}s -> {pdir}"
    )
    return EXIT_OK


def _probe_items(cfg: RunConfig, manifest, plan):
    """Held-out probe set: fold-0 test items at original size, capped
    per class."""
    _, _, test_idx = plan.split(0)
    taken: dict[int, int] = {}
    items = []
    for i in test_idx:
        rel, ci = manifest.items[i]
        if taken.get(ci, 0) >= cfg.probe_per_class:
            continue
        taken[ci] = taken.get(ci, 0) + 1
        items.append((rel, load_image(Path(manifest.root) / rel), ci))
    return items


def cmd_simulate(cfg: RunConfig) -> int:
    """Step 7: run computer/gallery/realtime paths over the probe set and
    gate deployment on the gallery accuracy."""
    t0 = time.perf_counter()
    out = _out(cfg)
    manifest = dataset.load_manifest(_load_stage(out / "manifest.json", "prepare"))
    plan = dataset.load_fold_plan(out / "fold_plan.json")
    pdir = out / "package"
    float_blob = _load_stage(pdir / "model_float.mpipe", "package").read_bytes()
    model = deploy.unpackage(float_blob).to_trained_model()
    quant_path = pdir / "model_quant.mpipe"
    if quant_path.exists():
        deployable = deploy.unpackage(quant_path.read_bytes())
        allow_float = False
    else:
        deployable = deploy.unpackage(float_blob)
        allow_float = True  # quantization disabled for this run
    probes = _probe_items(cfg, manifest, plan)
    try:
        report = devicesim.compare_paths(
            model,
            deployable,
            probes,
            devicesim.FrameGeometry(),
            allow_float_gallery=allow_float,
            jobs=cfg.jobs,
        )
    except MobilePipeError as e:
        print(f"simulate failed: {e}", file=sys.stderr)
        return EXIT_PACKAGE
    devicesim.write_gap_report(report, out / "simulate", seed=cfg.seed, config_hash=cfg.config_hash)
    acc = report.accuracies
    print(
        f"simulated {len(report.rows)} probes in {time.perf_counter() - t0:.1f}s: "
        f"computer={acc['computer']:.3f} gallery={acc['gallery']:.3f} "
        f"realtime={acc['realtime']:.3f}"
    )
    if acc["gallery"] < cfg.deploy_threshold:
        print(
            f"gallery accuracy {acc['gallery']:.3f} below deploy threshold "
            f"{cfg.deploy_threshold:.3f}: not deployable",
            file=sys.stderr,
        )
        return EXIT_GATE
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    """Collate the stage outputs into run_report.json and a console summary."""
    out = _out(cfg)
    doc = {"seed": cfg.seed, "config": cfg.config_hash}
    results_path = out / "results.csv"
    if results_path.exists():
        results = search.read_results_csv(results_path)
        doc["search"] = [
            {
                "size": r.size,
                "generator": r.generator,
                "arch": r.arch_id,
                "formatted": r.formatted(),
            }
            for r in results
        ]
    for name, rel in (
        ("best", "best_config.json"),
        ("reduction", "reduced/chosen.json"),
        ("label_check", "package/label_check.json"),
        ("gap", "simulate/gap_report.json"),
    ):
        p = out / rel
        if p.exists():
            doc[name] = json.loads(p.read_text())
    if len(doc) == 2:
        print(f"no stage outputs found under {out}", file=sys.stderr)
        return EXIT_INPUT
    (out / "run_report.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    for key in ("best", "reduction", "gap"):
        if key in doc:
            print(f"{key}: {json.dumps(doc[key], sort_keys=True)}")
    print(f"report -> {out / 'run_report.json'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mobilepipe",
        description="Image-classification pipeline: folder of labeled images "
        "to a size-reduced, quantized, metadata-bearing model plus phone-path "
        "accuracy simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("prepare", cmd_prepare),
        ("search", cmd_search),
        ("reduce", cmd_reduce),
        ("package", cmd_package),
        ("simulate", cmd_simulate),
        ("report", cmd_report),
    ):
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0] if fn.__doc__ else None)
        p.set_defaults(fn=fn)
        p.add_argument("--config", help="run-config JSON file")
        p.add_argument("--dataset-root", help="class-per-folder dataset root")
        p.add_argument("--out", help="output directory (default $MOBILEPIPE_OUT)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=None, help="parallel workers")
        p.add_argument("--sizes", help="comma list, e.g. 30,50,100")
        p.add_argument("--generators", help="comma list from G1,G2,G3,G4")
        p.add_argument("--archs", help="comma list from d1m1,d2m1,d2m2,d3m2")
        p.add_argument(
            "--quantize",
            action=argparse.BooleanOptionalAction,
            default=None,
            help="emit a quantized container (default on)",
        )
        p.add_argument("--skip-reduction", action="store_true")
        p.add_argument("--skip-generators", action="store_true")
        p.add_argument("--skip-augmentation", action="store_true")
        p.add_argument("--deploy-threshold", type=float, default=None)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args)
    except (MobilePipeError, ValueError, OSError, json.JSONDecodeError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.fn(cfg)
    except MobilePipeError as e:
        print(f"{args.command} error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        print(f"{args.command} io error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
