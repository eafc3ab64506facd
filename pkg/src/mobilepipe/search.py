"""Cross-validated grid evaluation and the filters x neurons width scan.

Every grid cell trains with a seed derived only from the global seed and
the cell's coordinates, so results are invariant to evaluation order and
to how many workers ran the grid. Reports are written sorted by config
key with fixed float formatting, making reruns byte-identical.
"""

import csv
import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import engine
from .augment import AugmentorSpec, fit_stats
from .dataset import DatasetManifest, FoldPlan, SizeVariant, load_variant_images
from .engine import ArchitectureSpec, TrainConfig, TrainedModel, derive_seed
from .errors import EmptyResults, MobilePipeError

# spawn-key namespaces for grid-cell seed derivation
_KEY_CV, _KEY_REDUCE, _KEY_FINAL = 10, 11, 12


def _stable_id(text: str) -> int:
    """Stable non-negative int for a config-key string (for spawn keys)."""
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


@dataclass(frozen=True)
class CVResult:
    """Mean +- population std of per-fold test accuracies for one config."""

    size: int
    generator: str
    arch_id: str
    fold_accuracies: tuple[float, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_accuracies))  # population: divide by k

    def formatted(self) -> str:
        return format_cv(self.mean, self.std)


def format_cv(mean: float, std: float) -> str:
    """Accuracy on a 0-100 scale in the report style 'MM.mm(+- SS.ss)'."""
    return f"{mean * 100:.2f}(+- {std * 100:.2f})"


def train_fold(
    images: list,
    plan: FoldPlan,
    fold: int,
    spec: AugmentorSpec,
    arch: ArchitectureSpec,
    cfg: TrainConfig,
    labels: tuple[str, ...],
) -> tuple[TrainedModel, float, object]:
    """Train on one fold's train/validation split, return (model, test
    accuracy, featurewise stats or None)."""
    train_idx, val_idx, test_idx = plan.split(fold)
    train_items = [images[i] for i in train_idx]
    val_items = [images[i] for i in val_idx]
    test_items = [images[i] for i in test_idx]
    stats = fit_stats([img for img, _ in train_items]) if spec.needs_stats else None
    model = engine.train(arch, train_items, val_items, spec, stats, cfg, labels)
    acc = engine.evaluate(model, test_items, spec, stats)
    return model, acc, stats


def cross_validate(
    variant: SizeVariant,
    plan: FoldPlan,
    spec: AugmentorSpec,
    arch: ArchitectureSpec,
    cfg: TrainConfig,
    manifest: DatasetManifest,
    generator_id: str = "",
    images: list | None = None,
) -> CVResult:
    """Train k models (one per fold) and report mean +- std test accuracy.

    Each fold's seed derives from (global seed, size, generator, arch,
    fold), nothing else.
    """
    if images is None:
        images = load_variant_images(variant, manifest)
    accs = []
    for fold in range(plan.k):
        fold_cfg = TrainConfig(
            batch_size=cfg.batch_size,
            epochs=cfg.epochs,
            learning_rate=cfg.learning_rate,
            seed=derive_seed(
                cfg.seed,
                (_KEY_CV, variant.size, _stable_id(generator_id), _stable_id(arch.arch_id), fold),
            ),
        )
        try:
            _, acc, _ = train_fold(images, plan, fold, spec, arch, fold_cfg, manifest.classes)
        except MobilePipeError as e:
            e.args = (f"[size={variant.size} gen={generator_id} arch={arch.arch_id} fold={fold}] {e}",)
            raise
        accs.append(acc)
    return CVResult(
        size=variant.size,
        generator=generator_id,
        arch_id=arch.arch_id,
        fold_accuracies=tuple(accs),
    )


def select_best(results: list[CVResult]) -> CVResult:
    """Highest mean accuracy; ties break toward the smaller image size,
    then the lower generator index, then earlier position in the list."""
    if not results:
        raise EmptyResults("no cross-validation results to select from")
    return min(
        enumerate(results),
        key=lambda kv: (-kv[1].mean, kv[1].size, kv[1].generator, kv[0]),
    )[1]


@dataclass(frozen=True)
class ReductionGrid:
    """Width-scan outcome: (filters, neurons) -> (accuracy, param_count)."""

    filters_axis: tuple[int, ...]
    neurons_axis: tuple[int, ...]
    accuracy: dict[tuple[int, int], float]
    params: dict[tuple[int, int], int]
    tolerance: float
    chosen: tuple[int, int]


def choose_cell(
    accuracy: dict[tuple[int, int], float],
    params: dict[tuple[int, int], int],
    tolerance: float,
) -> tuple[int, int]:
    """Minimum param_count among cells within `tolerance` accuracy points
    (0-100 scale) of the grid maximum; ties break in scan order."""
    best_acc = max(accuracy.values())
    eligible = [
        cell
        for cell in sorted(accuracy)
        if accuracy[cell] * 100.0 >= best_acc * 100.0 - tolerance
    ]
    return min(eligible, key=lambda cell: (params[cell], cell))


def _reduce_cell(args):
    (images, plan, spec, base, cfg, labels, f, m, use_cv) = args
    arch = engine.arch_with_widths(base, f, m)
    folds = range(plan.k) if use_cv else (0,)
    accs = []
    for fold in folds:
        cell_cfg = TrainConfig(
            batch_size=cfg.batch_size,
            epochs=cfg.epochs,
            learning_rate=cfg.learning_rate,
            seed=derive_seed(cfg.seed, (_KEY_REDUCE, f, m, fold)),
        )
        _, acc, _ = train_fold(images, plan, fold, spec, arch, cell_cfg, labels)
        accs.append(acc)
    return (f, m), float(np.mean(accs)), engine.param_count(arch)


def reduce_parameters(
    base: ArchitectureSpec,
    variant: SizeVariant,
    plan: FoldPlan,
    spec: AugmentorSpec,
    cfg: TrainConfig,
    manifest: DatasetManifest,
    stride: tuple[int, int] = (1, 1),
    tolerance: float = 1.0,
    max_filters: int | None = None,
    max_neurons: int | None = None,
    use_cv: bool = False,
    jobs: int = 1,
    images: list | None = None,
) -> ReductionGrid:
    """Scan widths {1..N} x {1..M} of the reducible conv/dense slots.

    By default each cell trains a single fold (fold 0); use_cv runs the
    full k-fold per cell. Cell seeds derive from (seed, filters, neurons,
    fold) only, so the grid is order- and parallelism-invariant.
    """
    base_f, base_m = engine.reducible_slots(base)
    n = max_filters if max_filters is not None else base_f
    m = max_neurons if max_neurons is not None else base_m
    filters_axis = tuple(range(1, n + 1, stride[0]))
    neurons_axis = tuple(range(1, m + 1, stride[1]))
    if images is None:
        images = load_variant_images(variant, manifest)
    tasks = [
        (images, plan, spec, base, cfg, manifest.classes, f, mm, use_cv)
        for f in filters_axis
        for mm in neurons_axis
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outcomes = list(ex.map(_reduce_cell, tasks))
    else:
        outcomes = [_reduce_cell(t) for t in tasks]
    accuracy = {cell: acc for cell, acc, _ in outcomes}
    params = {cell: p for cell, _, p in outcomes}
    chosen = choose_cell(accuracy, params, tolerance)
    return ReductionGrid(
        filters_axis=filters_axis,
        neurons_axis=neurons_axis,
        accuracy=accuracy,
        params=params,
        tolerance=tolerance,
        chosen=chosen,
    )


def _grid_task(args):
    variant, plan, spec, arch, cfg, manifest, gen_id, images = args
    return cross_validate(
        variant, plan, spec, arch, cfg, manifest, generator_id=gen_id, images=images
    )


def run_grid(
    variants: list[SizeVariant],
    plan: FoldPlan,
    specs: dict[str, AugmentorSpec],
    arch_builder,
    cfg: TrainConfig,
    manifest: DatasetManifest,
    jobs: int = 1,
    on_result=None,
) -> list[CVResult]:
    """Evaluate the full (size x generator x architecture) grid.

    arch_builder(size) returns the per-size architecture list. Cells are
    independent jobs executed up to `jobs` at a time; the returned list
    is always in deterministic scan order regardless of worker count.
    Sequential runs load variants lazily and report each finished cell
    through on_result, so a failure mid-grid leaves the completed cells
    with the caller.
    """

    def variant_tasks(variant):
        images = load_variant_images(variant, manifest)
        return [
            (variant, plan, spec, arch, cfg, manifest, gen_id, images)
            for gen_id, spec in specs.items()
            for arch in arch_builder(variant.size)
        ]

    if jobs > 1:
        tasks = [t for variant in variants for t in variant_tasks(variant)]
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_grid_task, tasks))
        if on_result is not None:
            for r in results:
                on_result(r)
        return results
    results = []
    for variant in variants:
        for t in variant_tasks(variant):
            r = _grid_task(t)
            results.append(r)
            if on_result is not None:
                on_result(r)
    return results


# ---------------------------------------------------------------------------
# report files


def _header_comment(seed: int, config_hash: str, tolerance: float | None = None) -> str:
    line = f"# seed={seed} config={config_hash}"
    if tolerance is not None:
        line += f" tolerance={tolerance:.2f}"
    return line + "\n"


def write_results_csv(
    results: list[CVResult], path, seed: int, config_hash: str
) -> None:
    """results.csv: one row per config, sorted by (size, generator, arch)."""
    rows = sorted(results, key=lambda r: (r.size, r.generator, r.arch_id))
    k = len(rows[0].fold_accuracies) if rows else 0
    with open(path, "w", newline="") as f:
        f.write(_header_comment(seed, config_hash))
        w = csv.writer(f)
        w.writerow(
            ["size", "generator", "arch"]
            + [f"fold_{i}" for i in range(k)]
            + ["mean", "std", "formatted"]
        )
        for r in rows:
            w.writerow(
                [r.size, r.generator, r.arch_id]
                + [f"{a:.6f}" for a in r.fold_accuracies]
                + [f"{r.mean:.6f}", f"{r.std:.6f}", r.formatted()]
            )


def read_results_csv(path) -> list[CVResult]:
    results = []
    with open(path) as f:
        rows = [r for r in csv.reader(f) if r and not r[0].startswith("#")]
    header = rows[0]
    folds = [i for i, h in enumerate(header) if h.startswith("fold_")]
    for row in rows[1:]:
        results.append(
            CVResult(
                size=int(row[0]),
                generator=row[1],
                arch_id=row[2],
                fold_accuracies=tuple(float(row[i]) for i in folds),
            )
        )
    return results


def emit_heatmap(grid: ReductionGrid, out_dir, seed: int = 0, config_hash: str = "") -> dict:
    """Write heatmap.csv, params.csv (same shape) and heatmap.svg.

    CSV rows are layer-1 filters, columns are layer-2 neurons; the SVG
    colors cells by accuracy.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    head = _header_comment(seed, config_hash, grid.tolerance)

    def write_matrix(path, value, fmt):
        with open(path, "w", newline="") as f:
            f.write(head)
            w = csv.writer(f)
            w.writerow(["filters\\neurons"] + [str(m) for m in grid.neurons_axis])
            for fi in grid.filters_axis:
                w.writerow([str(fi)] + [fmt(value[(fi, m)]) for m in grid.neurons_axis])

    heatmap_csv = out / "heatmap.csv"
    params_csv = out / "params.csv"
    write_matrix(heatmap_csv, grid.accuracy, lambda v: f"{v:.6f}")
    write_matrix(params_csv, grid.params, str)
    svg = _heatmap_svg(grid, seed, config_hash)
    (out / "heatmap.svg").write_text(svg)
    return {
        "heatmap_csv": str(heatmap_csv),
        "params_csv": str(params_csv),
        "heatmap_svg": str(out / "heatmap.svg"),
    }


def read_matrix_csv(path) -> tuple[dict[tuple[int, int], float], float | None]:
    """Reload a heatmap/params matrix; returns (cells, tolerance from header)."""
    tolerance = None
    with open(path) as f:
        raw = f.read().splitlines()
    rows = []
    for line in raw:
        if line.startswith("#"):
            for token in line[1:].split():
                if token.startswith("tolerance="):
                    tolerance = float(token.split("=", 1)[1])
            continue
        rows.append(next(csv.reader([line])))
    neurons = [int(x) for x in rows[0][1:]]
    cells: dict[tuple[int, int], float] = {}
    for row in rows[1:]:
        fi = int(row[0])
        for m, v in zip(neurons, row[1:]):
            cells[(fi, m)] = float(v)
    return cells, tolerance


def audit_selection(heatmap_csv, params_csv) -> tuple[int, int]:
    """Re-derive the chosen cell from the emitted CSVs alone."""
    accuracy, tolerance = read_matrix_csv(heatmap_csv)
    params, _ = read_matrix_csv(params_csv)
    if tolerance is None:
        raise EmptyResults(f"{heatmap_csv} lacks the tolerance header")
    return choose_cell(accuracy, {c: int(p) for c, p in params.items()}, tolerance)


def _color(v: float) -> str:
    """Dark-blue -> teal -> yellow ramp over v in [0, 1]."""
    stops = [(0.0, (34, 17, 87)), (0.5, (32, 144, 140)), (1.0, (250, 231, 85))]
    v = min(max(v, 0.0), 1.0)
    for (v0, c0), (v1, c1) in zip(stops, stops[1:]):
        if v <= v1:
            t = 0.0 if v1 == v0 else (v - v0) / (v1 - v0)
            r, g, b = (round(a + t * (b_ - a)) for a, b_ in zip(c0, c1))
            return f"#{r:02x}{g:02x}{b:02x}"
    return "#fae755"


def _heatmap_svg(grid: ReductionGrid, seed: int, config_hash: str) -> str:
    cell, margin = 28, 60
    w = margin + cell * len(grid.neurons_axis) + 10
    h = margin + cell * len(grid.filters_axis) + 10
    vals = list(grid.accuracy.values())
    lo, hi = min(vals), max(vals)
    span = (hi - lo) or 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
        f"<!-- seed={seed} config={config_hash} -->",
        f'<text x="{margin}" y="14" font-size="11">accuracy heatmap '
        f"(rows: layer-1 filters, cols: layer-2 neurons)</text>",
    ]
    for yi, fi in enumerate(grid.filters_axis):
        parts.append(
            f'<text x="4" y="{margin + yi * cell + 18}" font-size="10">{fi}</text>'
        )
        for xi, m in enumerate(grid.neurons_axis):
            if yi == 0:
                parts.append(
                    f'<text x="{margin + xi * cell + 4}" y="{margin - 6}" font-size="10">{m}</text>'
                )
            v = grid.accuracy[(fi, m)]
            fill = _color((v - lo) / span)
            stroke = ' stroke="#ff0000" stroke-width="2"' if (fi, m) == grid.chosen else ""
            parts.append(
                f'<rect x="{margin + xi * cell}" y="{margin + yi * cell}" '
                f'width="{cell - 2}" height="{cell - 2}" fill="{fill}"{stroke}>'
                f"<title>filters={fi} neurons={m} acc={v:.4f}</title></rect>"
            )
    parts.append("</svg>")
    return "\n".join(parts)
