"""Run configuration: one JSON document drives every pipeline stage.

CLI flags override config-file fields, which override the defaults
below. The canonical JSON form (sorted keys, compact separators) is
hashed into a 12-hex config id that every emitted artifact embeds next
to the seed.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .engine import TrainConfig

SIZE_MIN, SIZE_MAX = 8, 1024


@dataclass
class ReductionSettings:
    max_filters: int | None = None  # None: take N from the best architecture
    max_neurons: int | None = None
    filter_stride: int = 1
    neuron_stride: int = 1
    tolerance: float = 1.0  # accuracy points (0-100 scale)
    cv: bool = False  # full k-fold per cell instead of fold 0 only


@dataclass
class RunConfig:
    dataset_root: str = ""
    out_dir: str = ""
    sizes: list[int] = field(default_factory=lambda: [50, 100, 200, 300])
    k: int = 5
    val_fraction: float = 0.1
    seed: int = 0
    generators: list[str] = field(default_factory=lambda: ["G1", "G2", "G3", "G4"])
    archs: list[str] = field(default_factory=lambda: ["d1m1"])
    arch_overrides: dict = field(default_factory=dict)
    batch_size: int = 10
    epochs: int = 50
    learning_rate: float = 0.01
    reduction: ReductionSettings = field(default_factory=ReductionSettings)
    quantize: bool = True
    skip_augmentation: bool = False
    skip_reduction: bool = False
    skip_generators: bool = False
    deploy_threshold: float = 0.0
    probe_per_class: int = 5
    jobs: int = 1

    def __post_init__(self):
        if not self.out_dir:
            self.out_dir = os.environ.get("MOBILEPIPE_OUT", "mobilepipe_out")

    def validate(self) -> None:
        from .augment import PRESET_IDS
        from .engine import ARCH_PRESETS

        for s in self.sizes:
            if not (SIZE_MIN <= s <= SIZE_MAX):
                raise ValueError(f"size {s} outside [{SIZE_MIN}, {SIZE_MAX}]")
        for g in self.generators:
            if g not in PRESET_IDS:
                raise ValueError(f"unknown generator {g!r}")
        for a in self.archs:
            if a not in ARCH_PRESETS:
                raise ValueError(f"unknown architecture preset {a!r}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def effective_generators(self) -> list[str]:
        """Fig-7-style skip logic: digital-image datasets search G1 only."""
        if self.skip_generators or self.skip_augmentation:
            return ["G1"]
        return list(self.generators)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            seed=self.seed if seed is None else seed,
        )

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["reduction"] = asdict(self.reduction)
        return doc

    def canonical_json(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:12]

    @staticmethod
    def from_json(doc: dict) -> "RunConfig":
        doc = dict(doc)
        red = doc.pop("reduction", {})
        cfg = RunConfig(**doc)
        cfg.reduction = ReductionSettings(**red)
        return cfg

    @staticmethod
    def load(path) -> "RunConfig":
        return RunConfig.from_json(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))
