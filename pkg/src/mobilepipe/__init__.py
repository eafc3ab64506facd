"""mobilepipe: from a folder of labeled images to a size-reduced, quantized,
metadata-bearing classifier, plus simulation of the two phone inference
paths (gallery and real-time camera) to measure deployment accuracy gaps.
"""

from .image_ops import (
    ImageBuffer,
    ImageFormat,
    center_crop,
    decode_image,
    encode_ppm,
    load_image,
    normalize,
    resize_bilinear,
    save_image,
)
from .dataset import (
    DatasetManifest,
    FoldPlan,
    SizeVariant,
    generate_subdatasets,
    ingest,
    stratified_kfold,
    write_fold_layout,
)
from .augment import (
    AugmentorSpec,
    FeaturewiseStats,
    affine_transform,
    apply,
    apply_eval,
    fit_stats,
    preset,
)
from .engine import (
    ArchitectureSpec,
    TrainConfig,
    TrainedModel,
    backward,
    evaluate,
    forward,
    init_weights,
    param_count,
    train,
)
from .search import (
    CVResult,
    ReductionGrid,
    cross_validate,
    emit_heatmap,
    reduce_parameters,
    select_best,
)
from .deploy import (
    DeployableModel,
    ModelMetadata,
    QuantizedTensor,
    package,
    quantize_tensor,
    quantized_forward,
    unpackage,
    verify_label_order,
)
from .devicesim import (
    FrameGeometry,
    GapReport,
    compare_paths,
    computer_path,
    gallery_path,
    realtime_path,
)
from .config import RunConfig

__version__ = "0.1.0"
