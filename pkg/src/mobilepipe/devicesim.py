"""Simulation of the two phone inference paths against the computer baseline.

computer: resize -> normalize -> float model.
gallery:  resize -> normalize -> quantized model (stored-image path).
realtime: scale-to-cover a portrait camera frame, center-crop the square
          view region, then resize -> normalize -> float model.

The real-time geometry is where accuracy can drop with no model change:
covering a 480x640 frame with a square image and cropping 480x480 throws
away 12.5% bands of the source on every side.
"""

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine
from .deploy import DeployableModel, ModelMetadata, quantized_forward, preprocess_for
from .engine import TrainedModel
from .errors import LabelOrderMismatch, NotQuantized
from .image_ops import ImageBuffer, center_crop, normalize, resize_bilinear


@dataclass(frozen=True)
class FrameGeometry:
    """Camera frame dimensions and the square region the app classifies."""

    frame_width: int = 480
    frame_height: int = 640
    crop_width: int = 480
    crop_height: int = 480

    def __post_init__(self):
        if self.crop_width > self.frame_width or self.crop_height > self.frame_height:
            raise ValueError("crop cannot exceed frame dimensions")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def frame_view(img: ImageBuffer, geom: FrameGeometry) -> ImageBuffer:
    """What the camera template classifies: scale-to-cover the frame,
    keep the centered frame window, then center-crop the view square."""
    scale = max(geom.frame_width / img.width, geom.frame_height / img.height)
    sw = max(geom.frame_width, _round_half_up(img.width * scale))
    sh = max(geom.frame_height, _round_half_up(img.height * scale))
    covered = resize_bilinear(img, sw, sh)
    framed = center_crop(covered, geom.frame_width, geom.frame_height)
    return center_crop(framed, geom.crop_width, geom.crop_height)


def computer_path(model: TrainedModel, img: ImageBuffer, meta: ModelMetadata) -> int:
    """Baseline: direct resize + normalize into the float model."""
    x = preprocess_for(meta, img)
    probs = engine.forward(model, x[None, ...])[0]
    return int(probs.argmax())


def gallery_path(
    deployable: DeployableModel, img: ImageBuffer, allow_float: bool = False
) -> int:
    """Stored-image path: same preprocessing, quantized weights."""
    if not deployable.quantized and not allow_float:
        raise NotQuantized("gallery path requires a quantized container")
    x = preprocess_for(deployable.metadata, img)[None, ...]
    if deployable.quantized:
        probs = quantized_forward(deployable, x)[0]
    else:
        probs = engine.forward(deployable.to_trained_model(), x)[0]
    return int(probs.argmax())


def realtime_path(
    model: TrainedModel,
    img: ImageBuffer,
    geom: FrameGeometry,
    meta: ModelMetadata,
) -> int:
    """Camera path: frame geometry first, then the unquantized model."""
    view = frame_view(img, geom)
    resized = resize_bilinear(view, meta.image_width, meta.image_height)
    x = normalize(resized, meta.mean, meta.std)
    probs = engine.forward(model, x[None, ...])[0]
    return int(probs.argmax())


@dataclass
class GapReport:
    """Per-path accuracies and per-item predictions for one model/test set."""

    model_id: str
    test_set_id: str
    accuracies: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)  # (item, truth, computer, gallery, realtime)

    def to_json(self) -> dict:
        return {
            "model": self.model_id,
            "test_set": self.test_set_id,
            "accuracies": dict(self.accuracies),
            "items": len(self.rows),
        }


def _compare_chunk(args):
    model, deployable, geom, allow_float, chunk = args
    meta = deployable.metadata
    rows = []
    for item_id, img, truth in chunk:
        c = computer_path(model, img, meta)
        g = gallery_path(deployable, img, allow_float=allow_float)
        r = realtime_path(model, img, geom, meta)
        rows.append((item_id, truth, c, g, r))
    return rows


def compare_paths(
    model: TrainedModel,
    deployable: DeployableModel,
    test_set: list[tuple[str, ImageBuffer, int]],
    geom: FrameGeometry,
    allow_float_gallery: bool = False,
    jobs: int = 1,
) -> GapReport:
    """Run all three paths per item; items are (id, image, truth index).

    Items are independent; with jobs > 1 they evaluate in a worker pool,
    and the report is identical for any worker count (rows keep the
    test-set order).
    """
    if tuple(model.labels) != tuple(deployable.labels):
        raise LabelOrderMismatch(
            f"model labels {model.labels} vs container labels {deployable.labels}"
        )
    if jobs > 1 and len(test_set) > 1:
        step = (len(test_set) + jobs - 1) // jobs
        chunks = [test_set[i : i + step] for i in range(0, len(test_set), step)]
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(
                ex.map(
                    _compare_chunk,
                    [(model, deployable, geom, allow_float_gallery, c) for c in chunks],
                )
            )
        rows = [row for part in parts for row in part]
    else:
        rows = _compare_chunk((model, deployable, geom, allow_float_gallery, test_set))
    n = len(rows) or 1
    report = GapReport(
        model_id=deployable.metadata.name,
        test_set_id=f"{len(rows)} items",
        accuracies={
            "computer": sum(1 for r in rows if r[2] == r[1]) / n,
            "gallery": sum(1 for r in rows if r[3] == r[1]) / n,
            "realtime": sum(1 for r in rows if r[4] == r[1]) / n,
        },
        rows=rows,
    )
    return report


def write_gap_report(report: GapReport, out_dir, seed: int = 0, config_hash: str = "") -> dict:
    """gap_report.csv (per item) and gap_report.json (summary)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "gap_report.csv"
    with open(csv_path, "w", newline="") as f:
        f.write(f"# seed={seed} config={config_hash}\n")
        w = csv.writer(f)
        w.writerow(["item", "truth", "computer_pred", "gallery_pred", "realtime_pred"])
        for row in report.rows:
            w.writerow(row)
    doc = report.to_json()
    doc.update({"seed": seed, "config": config_hash})
    json_path = out / "gap_report.json"
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return {"csv": str(csv_path), "json": str(json_path)}


def recompute_accuracies(csv_path) -> dict:
    """Recover the summary accuracies from the per-item CSV (audit path)."""
    with open(csv_path) as f:
        rows = [r for r in csv.reader(f) if r and not r[0].startswith("#")]
    body = rows[1:]
    n = len(body) or 1
    cols = {"computer": 2, "gallery": 3, "realtime": 4}
    return {
        name: sum(1 for r in body if int(r[i]) == int(r[1])) / n
        for name, i in cols.items()
    }
