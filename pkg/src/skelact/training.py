"""Training loop, optimizer, schedule, evaluation and gradient verification.

Everything runs in double precision with explicit seeding: data order,
initialization and updates are all drawn from one `numpy` generator, so a
run is bit-reproducible given (seed, config, dataset).
"""

from __future__ import annotations

import io
import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .datasets import Dataset
from .kernels import MaternParams
from .model import (
    LOSS_TERMS,
    DistillRef,
    EncoderSpec,
    BlockParams,
    FrameworkParams,
    LossSettings,
    ModelParams,
    build_losses,
    framework_forward,
    init_model,
    softmax,
)
from .skeleton import SkeletonGraph, chain_graph, make_graph
from .validation import check_positive

METRIC_COLUMNS = (
    "epoch", "l_cls", "hsic", "l_ce", "l_d", "total",
    "train_acc", "test_acc", "lr", "wall_clock",
)


@dataclass(frozen=True)
class TrainConfig:
    """All hyperparameters of one training run."""

    epochs: int = 120
    warmup_epochs: int = 5
    base_lr: float = 0.1
    lr_decay: float = 0.1
    decay_every: int = 50
    momentum: float = 0.9
    batch_size: int = 128
    temperature: float = 1.0
    delta: float = 1.0
    hsic_sign: int = -1
    hsic_weight: float = 1.0
    use_hsic: bool = True
    use_distill: bool = True
    use_aux: bool = True
    matern_order: float = 1.5
    matern_amplitude: float = 1.0
    matern_length_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be non-negative")
        if self.epochs > 0 and self.warmup_epochs >= self.epochs:
            raise ValueError("warmup_epochs must be smaller than epochs")
        check_positive(self.base_lr, "base_lr")
        check_positive(self.lr_decay, "lr_decay")
        if self.decay_every < 1:
            raise ValueError("decay_every must be at least 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        check_positive(self.delta, "delta")
        # delegate the remaining checks to the dedicated dataclasses
        self.loss_settings()

    def matern_params(self) -> MaternParams:
        return MaternParams(
            order=self.matern_order,
            amplitude=self.matern_amplitude,
            length_scale=self.matern_length_scale,
        )

    def loss_settings(self) -> LossSettings:
        return LossSettings(
            matern=self.matern_params(),
            hsic_sign=self.hsic_sign,
            hsic_weight=self.hsic_weight,
            temperature=self.temperature,
            use_hsic=self.use_hsic,
            use_distill=self.use_distill,
        )


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Linear warm-up to base_lr, then staircase decay every `decay_every` epochs."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    if epoch < config.warmup_epochs:
        return config.base_lr * (epoch + 1) / config.warmup_epochs
    return config.base_lr * config.lr_decay ** ((epoch - config.warmup_epochs) // config.decay_every)


def sgd_nesterov_step(params, grads, velocity, lr: float, momentum: float):
    """One Nesterov-momentum update on dicts of parameter arrays.

    v <- mu v - lr g;  p <- p + mu v - lr g  (lookahead form).
    Returns (new_params, new_velocity).
    """
    new_params, new_velocity = {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        v = velocity.get(name)
        v = np.zeros_like(p) if v is None else v
        v_new = momentum * v - lr * g
        new_params[name] = p + momentum * v_new - lr * g
        new_velocity[name] = v_new
    return new_params, new_velocity


# Gradients ---------------------------------------------------------------


def _distill_reference(fw: FrameworkParams, x) -> DistillRef | None:
    if fw.aux is None:
        return None
    fwd = framework_forward(x, fw)
    return DistillRef(y_tilde=ad.val(fwd.y_tilde), aux_logits=ad.val(fwd.aux_logits))


def compute_gradients(fw: FrameworkParams, x, labels, config: TrainConfig,
                      include=None, distill_ref: DistillRef | None = None):
    """Gradient of the (possibly restricted) total loss for every parameter.

    Returns a dict keyed like `FrameworkParams.named_arrays`; parameters
    the restricted loss does not touch get exact zero gradients.
    """
    lifted, tensors = fw.lift()
    fwd = framework_forward(x, lifted, distill_ref)
    graph = build_losses(fwd, labels, config.loss_settings(), fw.num_classes, include)
    total = float(graph.total.value)
    if not np.isfinite(total):
        raise FloatingPointError(f"loss is non-finite ({total})")
    graph.total.backward()
    return {
        name: (t.grad if t.grad is not None else np.zeros_like(t.value))
        for name, t in tensors.items()
    }


def loss_value(fw: FrameworkParams, x, labels, config: TrainConfig,
               include=None, distill_ref: DistillRef | None = None) -> float:
    """Scalar loss with parameters treated as constants (no tape kept)."""
    fwd = framework_forward(x, fw, distill_ref)
    graph = build_losses(fwd, labels, config.loss_settings(), fw.num_classes, include)
    return float(graph.total.value)


@dataclass(frozen=True)
class GradientReport:
    """Analytic-vs-finite-difference comparison of every parameter array."""

    errors: dict[str, float]
    max_error: float
    threshold: float
    step: float
    passed: bool


def gradient_check(fw: FrameworkParams, x, labels, config: TrainConfig,
                   step: float = 1e-5, threshold: float = 1e-4,
                   include=None, zero_floor: float = 1e-7) -> GradientReport:
    """Compare analytic gradients with central finite differences.

    The distillation teacher is frozen at the reference parameters for
    both sides of the comparison, matching the stop-gradient semantics of
    the implemented loss.  Coordinate pairs whose analytic and numeric
    magnitudes both fall below `zero_floor` count as exact matches (the
    finite-difference noise floor dominates there).
    """
    x = np.asarray(x, dtype=np.float64)
    ref = _distill_reference(fw, x)
    analytic = compute_gradients(fw, x, labels, config, include, ref)
    arrays = dict(fw.named_arrays())
    errors: dict[str, float] = {}
    for name, arr in arrays.items():
        worst = 0.0
        flat = arr.ravel()
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            f_plus = loss_value(fw.replace_arrays(arrays), x, labels, config, include, ref)
            flat[i] = original - step
            f_minus = loss_value(fw.replace_arrays(arrays), x, labels, config, include, ref)
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic[name].ravel()[i])
            scale = max(abs(a), abs(numeric))
            if scale > zero_floor:
                worst = max(worst, abs(a - numeric) / scale)
        errors[name] = worst
    max_error = max(errors.values()) if errors else 0.0
    return GradientReport(
        errors=errors, max_error=max_error, threshold=threshold,
        step=step, passed=max_error <= threshold,
    )


# Training loop -------------------------------------------------------------


@dataclass(frozen=True)
class MetricsRecord:
    """Per-epoch training diagnostics."""

    epoch: int
    l_cls: float
    hsic: float
    l_ce: float
    l_d: float
    total: float
    train_acc: float
    test_acc: float
    lr: float
    wall_clock: float


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite; carries the last good state."""

    def __init__(self, epoch: int, params: FrameworkParams, metrics: list[MetricsRecord]):
        super().__init__(f"training diverged (non-finite loss) during epoch {epoch}")
        self.epoch = epoch
        self.params = params
        self.metrics = metrics


def shallower(spec: EncoderSpec) -> EncoderSpec:
    """The same encoder family one block shallower (floor: one block)."""
    if spec.num_blocks == 1:
        return spec
    return replace(spec, num_blocks=spec.num_blocks - 1,
                   hidden_channels=spec.hidden_channels[:-1])


def init_framework(graph: SkeletonGraph, num_classes: int, in_channels: int,
                   config: TrainConfig, base_spec: EncoderSpec | None = None,
                   aux_spec: EncoderSpec | None = None,
                   rng: np.random.Generator | None = None) -> FrameworkParams:
    """Seeded base+auxiliary parameter initialization."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    base_spec = base_spec or EncoderSpec(delta=config.delta)
    aux_spec = aux_spec or shallower(base_spec)
    base = init_model(base_spec, graph.adjacency, in_channels, num_classes, "base", rng,
                      augmented=config.use_aux)
    aux = None
    if config.use_aux:
        aux = init_model(aux_spec, graph.adjacency, in_channels, num_classes, "auxiliary", rng)
    return FrameworkParams(base=base, aux=aux, num_classes=num_classes)


def fit(train: Dataset, config: TrainConfig, *, graph: SkeletonGraph | None = None,
        test: Dataset | None = None, base_spec: EncoderSpec | None = None,
        aux_spec: EncoderSpec | None = None) -> tuple[FrameworkParams, list[MetricsRecord]]:
    """Train the framework; returns the parameters and per-epoch metrics.

    Performs exactly epochs * ceil(n / batch_size) optimizer steps, with a
    seeded shuffle per epoch and the last partial batch kept.  A
    non-finite loss aborts with TrainingDiverged carrying the most recent
    parameters that produced a finite loss.
    """
    if len(train) == 0:
        raise ValueError("training dataset is empty")
    if train.num_classes < 2:
        raise ValueError("training needs at least two classes")
    x = train.stack()
    y = train.labels()
    n = x.shape[0]
    graph = graph or chain_graph(x.shape[2])
    if graph.num_joints != x.shape[2]:
        raise ValueError(f"graph has {graph.num_joints} joints but data has {x.shape[2]}")

    rng = np.random.default_rng(config.seed)
    fw = init_framework(graph, train.num_classes, x.shape[3], config, base_spec, aux_spec, rng)
    settings = config.loss_settings()
    velocity: dict[str, np.ndarray] = {}
    metrics: list[MetricsRecord] = []
    last_good = fw
    test_xy = (test.stack(), test.labels()) if test is not None and len(test) else None
    start_time = time.perf_counter()

    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        perm = rng.permutation(n)
        sums = np.zeros(5)  # l_cls, hsic, l_ce, l_d, total
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            bx, by = x[idx], y[idx]
            lifted, tensors = fw.lift()
            fwd = framework_forward(bx, lifted)
            # HSIC is undefined on a single sample; a trailing singleton
            # batch contributes the remaining terms only
            include = None if len(idx) > 1 else set(LOSS_TERMS) - {"hsic"}
            graph_losses = build_losses(fwd, by, settings, fw.num_classes, include)
            bd = graph_losses.breakdown()
            if not np.isfinite(bd.total):
                raise TrainingDiverged(epoch, last_good, metrics)
            last_good = fw
            graph_losses.total.backward()
            grads = {
                name: (t.grad if t.grad is not None else np.zeros_like(t.value))
                for name, t in tensors.items()
            }
            params = dict(fw.named_arrays())
            params, velocity = sgd_nesterov_step(params, grads, velocity, lr, config.momentum)
            fw = fw.replace_arrays(params)
            weight = len(idx)
            sums += weight * np.array([bd.l_cls, bd.hsic_term, bd.l_ce_aux, bd.l_d, bd.total])
            correct += int((ad.val(fwd.base_logits).argmax(axis=1) == by).sum())
        means = sums / n
        test_acc = float("nan")
        if test_xy is not None:
            test_acc = _accuracy(fw, *test_xy)
        metrics.append(MetricsRecord(
            epoch=epoch, l_cls=means[0], hsic=means[1], l_ce=means[2], l_d=means[3],
            total=means[4], train_acc=correct / n, test_acc=test_acc, lr=lr,
            wall_clock=time.perf_counter() - start_time,
        ))
    return fw, metrics


# Evaluation ----------------------------------------------------------------


def predict_scores(fw: FrameworkParams, x, batch_size: int = 256) -> np.ndarray:
    """Softmax class scores of the base classifier for a (n,T,N,C) array."""
    x = np.asarray(x, dtype=np.float64)
    chunks = []
    for start in range(0, x.shape[0], batch_size):
        fwd = framework_forward(x[start:start + batch_size], fw)
        chunks.append(softmax(ad.val(fwd.base_logits)))
    return np.concatenate(chunks, axis=0)


def _accuracy(fw: FrameworkParams, x: np.ndarray, y: np.ndarray) -> float:
    return float((predict_scores(fw, x).argmax(axis=1) == y).mean())


@dataclass(frozen=True)
class EvalReport:
    """Top-1 accuracy, per-class accuracy and the full score table."""

    accuracy: float
    per_class_accuracy: np.ndarray
    scores: np.ndarray
    predictions: np.ndarray


def evaluate(fw: FrameworkParams, dataset: Dataset) -> EvalReport:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    x, y = dataset.stack(), dataset.labels()
    scores = predict_scores(fw, x)
    predictions = scores.argmax(axis=1)
    per_class = np.full(dataset.num_classes, np.nan)
    for c in range(dataset.num_classes):
        mask = y == c
        if mask.any():
            per_class[c] = float((predictions[mask] == c).mean())
    return EvalReport(
        accuracy=float((predictions == y).mean()),
        per_class_accuracy=per_class,
        scores=scores,
        predictions=predictions,
    )


# Metrics CSV ---------------------------------------------------------------


def metrics_to_csv(records: list[MetricsRecord]) -> str:
    out = io.StringIO()
    out.write(",".join(METRIC_COLUMNS) + "\n")
    for rec in records:
        values = [rec.epoch, rec.l_cls, rec.hsic, rec.l_ce, rec.l_d, rec.total,
                  rec.train_acc, rec.test_acc, rec.lr, rec.wall_clock]
        out.write(",".join(str(v) if isinstance(v, int) else repr(float(v)) for v in values))
        out.write("\n")
    return out.getvalue()


def write_metrics_csv(records: list[MetricsRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(metrics_to_csv(records))


# Checkpoints ----------------------------------------------------------------

_CKPT_MAGIC = "skelact-checkpoint v1"


def save_checkpoint(fw: FrameworkParams, path, *, graph: SkeletonGraph,
                    config: TrainConfig, epoch: int, preprocess: dict | None = None) -> None:
    """Text container: JSON header, then named flat parameter arrays in
    declaration order, then the static adjacency."""
    meta = {
        "seed": config.seed,
        "epoch": epoch,
        "num_classes": fw.num_classes,
        "base_spec": asdict(fw.base.spec),
        "aux_spec": asdict(fw.aux.spec) if fw.aux is not None else None,
        "config": asdict(config),
        "parents": list(graph.parents),
        "edges": sorted(graph.edges),
        "preprocess": preprocess or {},
    }
    lines = [_CKPT_MAGIC, json.dumps(meta, sort_keys=True)]
    entries = fw.named_arrays() + [("graph.adjacency", graph.adjacency)]
    for name, arr in entries:
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"array {name} {arr.ndim} {dims}".rstrip())
        lines.append(" ".join(repr(float(v)) for v in arr.ravel()))
    lines.append("end")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[FrameworkParams, SkeletonGraph, dict]:
    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines or lines[0] != _CKPT_MAGIC:
        raise ValueError(f"not a skelact checkpoint (missing {_CKPT_MAGIC!r} header)")
    meta = json.loads(lines[1])
    arrays: dict[str, np.ndarray] = {}
    pos = 2
    while pos < len(lines):
        line = lines[pos]
        if line == "end":
            break
        fields = line.split()
        if fields[0] != "array":
            raise ValueError(f"malformed checkpoint near line {pos + 1}: {line[:40]!r}")
        name, ndim = fields[1], int(fields[2])
        shape = tuple(int(d) for d in fields[3:3 + ndim])
        values = np.array([float(v) for v in lines[pos + 1].split()])
        arrays[name] = values.reshape(shape)
        pos += 2
    else:
        raise ValueError("truncated checkpoint: missing 'end' marker")

    graph = make_graph(
        [tuple(e) for e in meta["edges"]], meta["parents"]
    )
    base_spec = _spec_from_dict(meta["base_spec"])
    fw = FrameworkParams(
        base=_model_from_arrays(base_spec, arrays, "base", graph.adjacency,
                                meta["num_classes"]),
        aux=None,
        num_classes=meta["num_classes"],
    )
    if meta["aux_spec"] is not None:
        aux_spec = _spec_from_dict(meta["aux_spec"])
        fw.aux = _model_from_arrays(aux_spec, arrays, "aux", graph.adjacency,
                                    meta["num_classes"])
    return fw, graph, meta


def _spec_from_dict(d: dict) -> EncoderSpec:
    d = dict(d)
    d["hidden_channels"] = tuple(d["hidden_channels"])
    return EncoderSpec(**d)


def _model_from_arrays(spec: EncoderSpec, arrays: dict, prefix: str,
                       adjacency: np.ndarray, num_classes: int) -> ModelParams:
    blocks = [
        BlockParams(
            conv_w=arrays[f"{prefix}.blocks.{i}.conv_w"],
            phi_weights=arrays[f"{prefix}.blocks.{i}.phi_weights"],
            phi_bias=arrays[f"{prefix}.blocks.{i}.phi_bias"],
            channel_scale=arrays[f"{prefix}.blocks.{i}.channel_scale"],
        )
        for i in range(spec.num_blocks)
    ]
    return ModelParams(
        spec=spec,
        adjacency=adjacency,
        blocks=blocks,
        classifier_w=arrays[f"{prefix}.classifier_w"],
        classifier_b=arrays[f"{prefix}.classifier_b"],
        role="base" if prefix == "base" else "auxiliary",
    )
