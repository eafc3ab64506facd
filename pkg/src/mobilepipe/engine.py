"""Minimal CNN training and inference engine.

Layer vocabulary: Conv2D (3x3 kernels, stride 1, valid padding),
MaxPool2D (2x2, stride 2), Flatten, Dense, ReLU, Softmax. Tensors are
NHWC numpy arrays; the engine is dtype-following, so float64 inputs and
weights run the identical code path at float64 (used by gradient
checks) while production runs float32.

Training is plain SGD on mean categorical cross-entropy, single-threaded
and bitwise deterministic in its seed. All randomness flows through
numpy PCG64 generators keyed by SeedSequence spawn keys, so per-item
augmentation streams are reproducible regardless of batch composition.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import AugmentorSpec, FeaturewiseStats, apply, apply_eval
from .errors import EmptySplit, InvalidArchitecture, NanLoss, ShapeMismatch
from .image_ops import ImageBuffer

Tensor = np.ndarray

CONV, POOL, FLATTEN, DENSE, RELU, SOFTMAX = (
    "conv",
    "pool",
    "flatten",
    "dense",
    "relu",
    "softmax",
)

# Spawn-key namespaces for SeedSequence-derived generators.
_KEY_ORDER, _KEY_INIT, _KEY_AUG = 0, 1, 2


def derive_seed(seed: int, key: tuple[int, ...]) -> int:
    """Stable 64-bit seed derived from a base seed and an integer key path."""
    ss = np.random.SeedSequence(seed, spawn_key=key)
    return int(ss.generate_state(1, np.uint64)[0])


def _rng(seed: int, key: tuple[int, ...]) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class ArchitectureSpec:
    """Ordered layer sequence plus input geometry.

    layers entries: ("conv", filters) | ("pool",) | ("flatten",) |
    ("dense", units) | ("relu",) | ("softmax",).
    """

    layers: tuple[tuple, ...]
    input_size: int
    channels: int
    num_classes: int
    arch_id: str = ""

    def __post_init__(self):
        self.output_shapes()  # raises on an inconsistent chain

    def output_shapes(self) -> list[tuple[int, ...]]:
        """Shape after each layer, starting from (s, s, c)."""
        shape: tuple[int, ...] = (self.input_size, self.input_size, self.channels)
        shapes = []
        for spec in self.layers:
            kind = spec[0]
            if kind == CONV:
                if len(shape) != 3:
                    raise InvalidArchitecture("conv requires a spatial input")
                h, w, _ = shape
                if h < 3 or w < 3:
                    raise InvalidArchitecture(f"conv input {h}x{w} smaller than kernel")
                shape = (h - 2, w - 2, spec[1])
            elif kind == POOL:
                if len(shape) != 3:
                    raise InvalidArchitecture("pool requires a spatial input")
                h, w, c = shape
                if h < 2 or w < 2:
                    raise InvalidArchitecture(f"pool input {h}x{w} smaller than window")
                shape = (h // 2, w // 2, c)
            elif kind == FLATTEN:
                shape = (int(np.prod(shape)),)
            elif kind == DENSE:
                if len(shape) != 1:
                    raise InvalidArchitecture("dense requires a flat input")
                shape = (spec[1],)
            elif kind in (RELU, SOFTMAX):
                pass
            else:
                raise InvalidArchitecture(f"unknown layer kind {kind!r}")
            shapes.append(shape)
        return shapes

    def validate_terminal(self) -> None:
        """Classifier contract: final Dense(num_classes) followed by Softmax."""
        if not self.layers or self.layers[-1][0] != SOFTMAX:
            raise InvalidArchitecture("architecture must end with softmax")
        dense = [l for l in self.layers if l[0] == DENSE]
        if not dense or dense[-1][1] != self.num_classes:
            raise InvalidArchitecture(
                f"final dense must have {self.num_classes} units"
            )

    def to_json(self) -> dict:
        return {
            "arch_id": self.arch_id,
            "input_size": self.input_size,
            "channels": self.channels,
            "num_classes": self.num_classes,
            "layers": [list(l) for l in self.layers],
        }

    @staticmethod
    def from_json(doc: dict) -> "ArchitectureSpec":
        return ArchitectureSpec(
            layers=tuple(tuple(l) for l in doc["layers"]),
            input_size=doc["input_size"],
            channels=doc["channels"],
            num_classes=doc["num_classes"],
            arch_id=doc.get("arch_id", ""),
        )


@dataclass
class TrainConfig:
    batch_size: int = 10
    epochs: int = 50
    learning_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        # lr = 0 is allowed: it makes training a (testable) no-op
        if self.batch_size < 1 or self.epochs < 1 or self.learning_rate < 0:
            raise ValueError("batch_size/epochs must be >= 1 and learning_rate >= 0")


@dataclass
class TrainedModel:
    arch: ArchitectureSpec
    weights: dict[str, np.ndarray]
    labels: tuple[str, ...]
    log: list[dict] = field(default_factory=list)

    @property
    def input_size(self) -> int:
        return self.arch.input_size


# ---------------------------------------------------------------------------
# architecture presets (transcribed layer tables, widths overridable where
# the parameter-reduction search scans them)


def d1m1(input_size, channels, num_classes, filters=30, hidden=50) -> ArchitectureSpec:
    return ArchitectureSpec(
        layers=(
            (CONV, filters),
            (POOL,),
            (FLATTEN,),
            (DENSE, hidden),
            (RELU,),
            (DENSE, num_classes),
            (SOFTMAX,),
        ),
        input_size=input_size,
        channels=channels,
        num_classes=num_classes,
        arch_id="d1m1",
    )


def d2m1(input_size, channels, num_classes, filters=32, hidden=128) -> ArchitectureSpec:
    # same shape as d1m1, wider defaults
    arch = d1m1(input_size, channels, num_classes, filters=filters, hidden=hidden)
    return replace(arch, arch_id="d2m1")


def d2m2(input_size, channels, num_classes) -> ArchitectureSpec:
    # The published table ends at Dense(128) -> ReLU -> Softmax; a
    # class-sized Dense is appended so the classifier contract holds.
    return ArchitectureSpec(
        layers=(
            (CONV, 32),
            (POOL,),
            (CONV, 64),
            (POOL,),
            (FLATTEN,),
            (DENSE, 256),
            (RELU,),
            (DENSE, 128),
            (RELU,),
            (DENSE, num_classes),
            (SOFTMAX,),
        ),
        input_size=input_size,
        channels=channels,
        num_classes=num_classes,
        arch_id="d2m2",
    )


def d3m2(input_size, channels, num_classes) -> ArchitectureSpec:
    return ArchitectureSpec(
        layers=(
            (CONV, 32),
            (POOL,),
            (CONV, 32),
            (POOL,),
            (CONV, 32),
            (POOL,),
            (CONV, 64),
            (POOL,),
            (FLATTEN,),
            (DENSE, 128),
            (RELU,),
            (DENSE, 50),
            (RELU,),
            (DENSE, 20),
            (RELU,),
            (DENSE, num_classes),
            (SOFTMAX,),
        ),
        input_size=input_size,
        channels=channels,
        num_classes=num_classes,
        arch_id="d3m2",
    )


ARCH_PRESETS = {"d1m1": d1m1, "d2m1": d2m1, "d2m2": d2m2, "d3m2": d3m2}


def build_preset(arch_id, input_size, channels, num_classes, **overrides) -> ArchitectureSpec:
    if arch_id not in ARCH_PRESETS:
        raise InvalidArchitecture(f"unknown architecture preset {arch_id!r}")
    return ARCH_PRESETS[arch_id](input_size, channels, num_classes, **overrides)


def reducible_slots(arch: ArchitectureSpec) -> tuple[int, int]:
    """(filters, hidden units) of a single-conv, single-hidden-dense net."""
    convs = [l for l in arch.layers if l[0] == CONV]
    denses = [l for l in arch.layers if l[0] == DENSE]
    from .errors import NonReducibleArchitecture

    if len(convs) != 1 or len(denses) != 2:
        raise NonReducibleArchitecture(
            f"{arch.arch_id or 'architecture'} needs exactly one conv and one "
            f"hidden dense to scan (got {len(convs)} conv, {len(denses)} dense)"
        )
    return convs[0][1], denses[0][1]


def arch_with_widths(arch: ArchitectureSpec, filters: int, hidden: int) -> ArchitectureSpec:
    """Rebuild a reducible architecture with the scanned widths."""
    reducible_slots(arch)
    layers = []
    conv_done = dense_done = False
    for l in arch.layers:
        if l[0] == CONV and not conv_done:
            layers.append((CONV, filters))
            conv_done = True
        elif l[0] == DENSE and not dense_done:
            layers.append((DENSE, hidden))
            dense_done = True
        else:
            layers.append(l)
    return ArchitectureSpec(
        layers=tuple(layers),
        input_size=arch.input_size,
        channels=arch.channels,
        num_classes=arch.num_classes,
        arch_id=arch.arch_id,
    )


# ---------------------------------------------------------------------------
# weights


def weight_shapes(arch: ArchitectureSpec) -> dict[str, tuple[int, ...]]:
    """Weight-tensor shapes keyed layer-by-layer (insertion order = layer order)."""
    shapes: dict[str, tuple[int, ...]] = {}
    shape = (arch.input_size, arch.input_size, arch.channels)
    for i, spec in enumerate(arch.layers):
        kind = spec[0]
        if kind == CONV:
            c_in = shape[2]
            shapes[f"conv{i}_kernel"] = (3, 3, c_in, spec[1])
            shapes[f"conv{i}_bias"] = (spec[1],)
            shape = (shape[0] - 2, shape[1] - 2, spec[1])
        elif kind == POOL:
            shape = (shape[0] // 2, shape[1] // 2, shape[2])
        elif kind == FLATTEN:
            shape = (int(np.prod(shape)),)
        elif kind == DENSE:
            shapes[f"dense{i}_weight"] = (shape[0], spec[1])
            shapes[f"dense{i}_bias"] = (spec[1],)
            shape = (spec[1],)
    return shapes


def param_count(arch: ArchitectureSpec) -> int:
    """Trainable parameter count: conv f*(9*c_in)+f, dense in*out+out."""
    return sum(int(np.prod(s)) for s in weight_shapes(arch).values())


def init_weights(arch: ArchitectureSpec, seed: int, labels=(), dtype=np.float32) -> TrainedModel:
    """Glorot-uniform kernels, U(-L, L) with L = sqrt(6 / (fan_in + fan_out));
    biases zero. Bitwise deterministic in the seed."""
    arch.validate_terminal()
    rng = _rng(seed, (_KEY_INIT,))
    weights: dict[str, np.ndarray] = {}
    for name, shape in weight_shapes(arch).items():
        if name.endswith("_bias"):
            weights[name] = np.zeros(shape, dtype=dtype)
            continue
        if name.startswith("conv"):
            kh, kw, c_in, f = shape
            fan_in, fan_out = kh * kw * c_in, kh * kw * f
        else:
            fan_in, fan_out = shape
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    if labels and len(labels) != arch.num_classes:
        raise InvalidArchitecture("label count must equal num_classes")
    return TrainedModel(arch=arch, weights=weights, labels=tuple(labels))


# ---------------------------------------------------------------------------
# forward / backward


def _conv_forward(x, kernel, bias):
    _, h, w, _ = x.shape
    oh, ow = h - 2, w - 2
    out = np.tile(bias, (x.shape[0], oh, ow, 1)).astype(x.dtype)
    for di in range(3):
        for dj in range(3):
            out += x[:, di : di + oh, dj : dj + ow, :] @ kernel[di, dj]
    return out


def _conv_backward(x, kernel, dout):
    _, h, w, _ = x.shape
    oh, ow = h - 2, w - 2
    dk = np.empty_like(kernel)
    dx = np.zeros_like(x)
    c, f = kernel.shape[2], kernel.shape[3]
    dflat = dout.reshape(-1, f)
    for di in range(3):
        for dj in range(3):
            patch = x[:, di : di + oh, dj : dj + ow, :]
            dk[di, dj] = patch.reshape(-1, c).T @ dflat
            dx[:, di : di + oh, dj : dj + ow, :] += dout @ kernel[di, dj].T
    db = dout.sum(axis=(0, 1, 2))
    return dk, db, dx


def _pool_forward(x):
    b, h, w, c = x.shape
    oh, ow = h // 2, w // 2
    win = (
        x[:, : 2 * oh, : 2 * ow, :]
        .reshape(b, oh, 2, ow, 2, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(b, oh, ow, 4, c)
    )
    idx = win.argmax(axis=3)  # first occurrence wins ties, window row-major
    out = np.take_along_axis(win, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return out, idx


def _pool_backward(x_shape, idx, dout, dtype):
    b, h, w, c = x_shape
    oh, ow = h // 2, w // 2
    dwin = np.zeros((b, oh, ow, 4, c), dtype=dtype)
    np.put_along_axis(dwin, idx[:, :, :, None, :], dout[:, :, :, None, :], axis=3)
    dx = np.zeros(x_shape, dtype=dtype)
    dx[:, : 2 * oh, : 2 * ow, :] = (
        dwin.reshape(b, oh, ow, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, 2 * oh, 2 * ow, c)
    )
    return dx


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax, log-sum-exp stabilized."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, onehot: Tensor) -> tuple[float, Tensor]:
    """Mean cross-entropy over the batch and its gradient w.r.t. logits.

    Loss is evaluated in logit space (logsumexp(z) - z_true) so it is
    exactly the function whose analytic gradient is (softmax - onehot)/B.
    """
    zmax = logits.max(axis=-1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=-1))
    loss = float(np.mean(lse - (logits * onehot).sum(axis=-1)))
    grad = (softmax(logits) - onehot) / logits.shape[0]
    return loss, grad


def _check_batch(model: TrainedModel, batch: Tensor) -> None:
    s, c = model.arch.input_size, model.arch.channels
    if batch.ndim != 4 or batch.shape[1:] != (s, s, c):
        raise ShapeMismatch(
            f"batch shape {batch.shape} does not match (B, {s}, {s}, {c})"
        )


def _forward_full(model: TrainedModel, batch: Tensor):
    """Returns (probabilities, logits, caches) for backward."""
    _check_batch(model, batch)
    x = batch
    caches = []
    logits = None
    for i, spec in enumerate(model.arch.layers):
        kind = spec[0]
        if kind == CONV:
            k, b = model.weights[f"conv{i}_kernel"], model.weights[f"conv{i}_bias"]
            caches.append((kind, x))
            x = _conv_forward(x, k, b)
        elif kind == POOL:
            out, idx = _pool_forward(x)
            caches.append((kind, x.shape, idx))
            x = out
        elif kind == FLATTEN:
            caches.append((kind, x.shape))
            x = x.reshape(x.shape[0], -1)
        elif kind == DENSE:
            w = model.weights[f"dense{i}_weight"]
            caches.append((kind, x))
            x = x @ w + model.weights[f"dense{i}_bias"]
        elif kind == RELU:
            caches.append((kind, x))
            x = np.maximum(x, 0)
        elif kind == SOFTMAX:
            caches.append((kind,))
            logits = x
            x = softmax(x)
    return x, logits, caches


def forward(model: TrainedModel, batch: Tensor) -> Tensor:
    """Class probabilities, shape (B, num_classes); rows sum to 1."""
    probs, _, _ = _forward_full(model, batch)
    return probs


def forward_logits(model: TrainedModel, batch: Tensor) -> Tensor:
    _, logits, _ = _forward_full(model, batch)
    return logits


def loss_value(model: TrainedModel, batch: Tensor, onehot: Tensor) -> float:
    """Mean categorical cross-entropy of the batch (the quantity SGD descends)."""
    logits = forward_logits(model, batch)
    loss, _ = softmax_cross_entropy(logits, onehot)
    return loss


def backward(model: TrainedModel, batch: Tensor, onehot: Tensor) -> dict[str, np.ndarray]:
    """Gradient of mean cross-entropy w.r.t. every weight tensor."""
    probs, logits, caches = _forward_full(model, batch)
    if onehot.shape != probs.shape:
        raise ShapeMismatch(f"labels {onehot.shape} vs probabilities {probs.shape}")
    _, g = softmax_cross_entropy(logits, onehot)
    return _backward_from(model, caches, g)


# ---------------------------------------------------------------------------
# training & evaluation


def _one_hot(labels, num_classes, dtype=np.float32):
    y = np.zeros((len(labels), num_classes), dtype=dtype)
    y[np.arange(len(labels)), labels] = 1
    return y


def _eval_tensors(items, spec, stats):
    xs = np.stack([apply_eval(spec, stats, img) for img, _ in items])
    ys = np.array([label for _, label in items], dtype=np.intp)
    return xs, ys


def train(
    arch: ArchitectureSpec,
    train_items: list[tuple[ImageBuffer, int]],
    val_items: list[tuple[ImageBuffer, int]],
    spec: AugmentorSpec,
    stats: FeaturewiseStats | None,
    cfg: TrainConfig,
    labels: tuple[str, ...],
) -> TrainedModel:
    """SGD training: w <- w - lr * g per batch.

    Each epoch permutes the training items (order stream), augments every
    item exactly once (per-item stream keyed by (epoch, item index)) and
    walks ceil(n / batch_size) batches. Identical seed and data give
    bitwise-identical weights.
    """
    if not train_items:
        raise EmptySplit("training split is empty")
    model = init_weights(arch, derive_seed(cfg.seed, (_KEY_INIT,)), labels=labels)
    order_rng = _rng(cfg.seed, (_KEY_ORDER,))
    n = len(train_items)
    val = _eval_tensors(val_items, spec, stats) if val_items else None
    lr = np.float32(cfg.learning_rate)
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(n)
        epoch_loss = 0.0
        correct = 0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            batch_idx = order[start : start + cfg.batch_size]
            xs = np.stack(
                [
                    apply(
                        spec,
                        stats,
                        train_items[int(i)][0],
                        _rng(cfg.seed, (_KEY_AUG, epoch, int(i))),
                    )
                    for i in batch_idx
                ]
            )
            ys = _one_hot([train_items[int(i)][1] for i in batch_idx], arch.num_classes)
            probs, logits, caches = _forward_full(model, xs)
            loss, g = softmax_cross_entropy(logits, ys)
            if not math.isfinite(loss):
                raise NanLoss(epoch, bi)
            epoch_loss += loss * len(batch_idx)
            correct += int((probs.argmax(axis=1) == ys.argmax(axis=1)).sum())
            grads = _backward_from(model, caches, g)
            for name, grad in grads.items():
                model.weights[name] -= lr * grad.astype(model.weights[name].dtype)
        row = {
            "epoch": epoch,
            "loss": epoch_loss / n,
            "train_acc": correct / n,
            "val_acc": float("nan"),
        }
        if val is not None:
            row["val_acc"] = _accuracy(model, *val)
        model.log.append(row)
    return model


def _backward_from(model, caches, g):
    """Backward pass reusing the forward caches (avoids a second forward)."""
    grads: dict[str, np.ndarray] = {}
    for i in range(len(model.arch.layers) - 1, -1, -1):
        cache = caches[i]
        kind = cache[0]
        if kind == SOFTMAX:
            continue
        if kind == CONV:
            x = cache[1]
            dk, db, g = _conv_backward(x, model.weights[f"conv{i}_kernel"], g)
            grads[f"conv{i}_kernel"] = dk
            grads[f"conv{i}_bias"] = db
        elif kind == POOL:
            _, x_shape, idx = cache
            g = _pool_backward(x_shape, idx, g, g.dtype)
        elif kind == FLATTEN:
            g = g.reshape(cache[1])
        elif kind == DENSE:
            x = cache[1]
            grads[f"dense{i}_weight"] = x.T @ g
            grads[f"dense{i}_bias"] = g.sum(axis=0)
            g = g @ model.weights[f"dense{i}_weight"].T
        elif kind == RELU:
            g = g * (cache[1] > 0)
    return grads


def _accuracy(model, xs, ys) -> float:
    correct = 0
    for start in range(0, len(xs), 64):
        probs = forward(model, xs[start : start + 64])
        correct += int((probs.argmax(axis=1) == ys[start : start + 64]).sum())
    return correct / len(xs)


def evaluate(
    model: TrainedModel,
    items: list[tuple[ImageBuffer, int]],
    spec: AugmentorSpec,
    stats: FeaturewiseStats | None = None,
) -> float:
    """Top-1 accuracy over a split via the deterministic evaluation
    transform; argmax ties resolve to the lowest class index."""
    if not items:
        raise EmptySplit("evaluation split is empty")
    xs, ys = _eval_tensors(items, spec, stats)
    return _accuracy(model, xs, ys)


def write_training_log(model: TrainedModel, path) -> None:
    with open(path, "w") as f:
        f.write("epoch,loss,train_acc,val_acc\n")
        for row in model.log:
            f.write(
                f"{row['epoch']},{row['loss']:.6f},{row['train_acc']:.6f},{row['val_acc']:.6f}\n"
            )
