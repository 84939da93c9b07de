"""Base/auxiliary encoders, feature augmentation and the training objective.

The base model stacks dependency-refined graph-convolution blocks, pools
over time and joints, and classifies the augmented feature z_hat =
concat(z, y_tilde), where y_tilde is the auxiliary model's class
distribution.  The total objective is

    total = l_cls + sign * weight * HSIC(z_hat, y) + l_ce_aux + l_d

with l_cls / l_ce_aux cross-entropies of the base / auxiliary classifier,
HSIC computed with a Matern kernel on z_hat against the label delta
kernel, and l_d a temperature-scaled KL distillation term.  Within l_d
the auxiliary side is treated as a constant (teacher), so that loss only
trains the base model; the auxiliary model is trained by l_ce_aux and by
gradients flowing through y_tilde in the live z_hat.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .kernels import MaternParams, hsic, kernel_matrix, label_kernel
from .refinement import (
    ACTIVATIONS,
    dependency_values,
    pairwise_correlation,
    propagation_stack,
    refined_stack,
    spatial_conv,
)
from .validation import as_float_array, check_labels, check_positive, check_symmetric

ROLES = ("base", "auxiliary")
_BLOCK_FIELDS = ("conv_w", "phi_weights", "phi_bias", "channel_scale")
_HEAD_FIELDS = ("classifier_w", "classifier_b")
LOSS_TERMS = ("cls", "hsic", "ce", "distill")


@dataclass(frozen=True)
class EncoderSpec:
    """Architecture of one encoder."""

    num_blocks: int = 2
    hidden_channels: tuple[int, ...] = (16, 32)
    temporal_pool: str = "mean"
    delta: float = 1.0
    use_refinement: bool = True
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_channels", tuple(int(c) for c in self.hidden_channels))
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be at least 1")
        if len(self.hidden_channels) != self.num_blocks:
            raise ValueError(
                f"hidden_channels must list {self.num_blocks} sizes; got {self.hidden_channels}"
            )
        if any(c < 1 for c in self.hidden_channels):
            raise ValueError("hidden channel sizes must be positive")
        if self.temporal_pool not in ("mean", "max"):
            raise ValueError(f"temporal_pool must be 'mean' or 'max'; got {self.temporal_pool!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        check_positive(self.delta, "delta")

    @property
    def feature_dim(self) -> int:
        return self.hidden_channels[-1]


@dataclass
class BlockParams:
    """One graph-convolution block: feature weights plus the dependency map."""

    conv_w: object
    phi_weights: object
    phi_bias: object
    channel_scale: object


@dataclass
class ModelParams:
    """All parameters of one encoder+classifier, plus its static graph."""

    spec: EncoderSpec
    adjacency: np.ndarray
    blocks: list[BlockParams]
    classifier_w: object
    classifier_b: object
    role: str = "base"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}; got {self.role!r}")
        self.adjacency = check_symmetric(self.adjacency, "adjacency")


@dataclass
class FrameworkParams:
    """The trained artifact: base model plus optional auxiliary model."""

    base: ModelParams
    aux: ModelParams | None
    num_classes: int

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Flat (name, array) view of every trainable parameter, in declaration order."""
        out = []
        for prefix, model in self._models():
            for i, block in enumerate(model.blocks):
                for name in _BLOCK_FIELDS:
                    out.append((f"{prefix}.blocks.{i}.{name}", ad.val(getattr(block, name))))
            for name in _HEAD_FIELDS:
                out.append((f"{prefix}.{name}", ad.val(getattr(model, name))))
        return out

    def replace_arrays(self, mapping: dict[str, np.ndarray]) -> "FrameworkParams":
        """A copy with parameter arrays substituted from `mapping`."""
        models = {}
        for prefix, model in self._models():
            blocks = [
                BlockParams(**{
                    name: mapping[f"{prefix}.blocks.{i}.{name}"]
                    for name in _BLOCK_FIELDS
                })
                for i in range(len(model.blocks))
            ]
            models[prefix] = replace(
                model,
                blocks=blocks,
                classifier_w=mapping[f"{prefix}.classifier_w"],
                classifier_b=mapping[f"{prefix}.classifier_b"],
            )
        return FrameworkParams(
            base=models["base"], aux=models.get("aux"), num_classes=self.num_classes
        )

    def lift(self) -> tuple["FrameworkParams", dict[str, ad.Tensor]]:
        """A copy whose parameter leaves are gradient-accumulating tensors."""
        tensors = {name: ad.parameter(arr) for name, arr in self.named_arrays()}
        return self.replace_arrays(tensors), tensors

    def _models(self):
        yield "base", self.base
        if self.aux is not None:
            yield "aux", self.aux


def init_model(
    spec: EncoderSpec,
    adjacency: np.ndarray,
    in_channels: int,
    num_classes: int,
    role: str,
    rng: np.random.Generator,
    augmented: bool | None = None,
) -> ModelParams:
    """Seeded initialization: uniform fan-in scaling for matrices, zero
    biases, small uniform refinement scales.

    `augmented` sizes the classifier head for concat(z, y_tilde) input;
    it defaults to True for the base role (which consumes z_hat).
    """
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if augmented is None:
        augmented = role == "base"

    def fan_in_uniform(rows, cols):
        bound = 1.0 / np.sqrt(rows)
        return rng.uniform(-bound, bound, size=(rows, cols))

    blocks = []
    c_in = in_channels
    for c_out in spec.hidden_channels:
        blocks.append(
            BlockParams(
                conv_w=fan_in_uniform(c_in, c_out),
                phi_weights=fan_in_uniform(c_in, c_out),
                phi_bias=np.zeros(c_out),
                channel_scale=rng.uniform(-0.1, 0.1, size=c_out),
            )
        )
        c_in = c_out
    head_in = spec.feature_dim + (num_classes if augmented else 0)
    return ModelParams(
        spec=spec,
        adjacency=np.asarray(adjacency, dtype=np.float64),
        blocks=blocks,
        classifier_w=fan_in_uniform(head_in, num_classes),
        classifier_b=np.zeros(num_classes),
        role=role,
    )


# Forward passes -----------------------------------------------------------


def encode_batch(x, params: ModelParams):
    """Encode a (B,T,N,C) batch into (B, feature_dim) pooled features."""
    spec = params.spec
    h = ad.lift(x)
    adjacency = params.adjacency
    n = adjacency.shape[0]
    if h.ndim != 4:
        raise ValueError(f"expected a (B,T,N,C) batch; got shape {h.shape}")
    if h.shape[2] != n:
        raise ValueError(f"batch has {h.shape[2]} joints but the graph has {n}")
    for block in params.blocks:
        c_out = ad.val(block.conv_w).shape[1]
        if spec.use_refinement:
            v = ad.reduce_mean(h, axis=1)
            corr = pairwise_correlation(v, spec.delta)
            r = dependency_values(corr, block.phi_weights, block.phi_bias)
            a_c = refined_stack(adjacency, r, block.channel_scale)
        else:
            a_c = ad.lift(np.ascontiguousarray(
                np.broadcast_to(adjacency[None, :, :, None], (h.shape[0], n, n, c_out))
            ))
        stack = propagation_stack(a_c, adjacency)
        h = spatial_conv(stack, h, block.conv_w, activation=spec.activation)
    if spec.temporal_pool == "mean":
        pooled = ad.reduce_mean(h, axis=1)
    else:
        pooled = ad.reduce_max(h, axis=1)
    return ad.reduce_mean(pooled, axis=1)


def classify(features, params: ModelParams):
    """Linear classification head on pooled (or augmented) features."""
    f = ad.lift(features)
    w = ad.lift(params.classifier_w)
    b = ad.lift(params.classifier_b)
    return ad.add(ad.matmul(f, w), ad.reshape(b, (1, b.shape[0])))


def softmax(logits):
    out = ad.exp(ad.log_softmax(ad.lift(logits), axis=-1))
    return out if ad.is_tensor(logits) else out.value


@dataclass(frozen=True)
class DistillRef:
    """Frozen auxiliary outputs used as the constant side of distillation."""

    y_tilde: np.ndarray
    aux_logits: np.ndarray


@dataclass
class ForwardResult:
    """All quantities of one framework forward pass (tensors or arrays)."""

    z: object
    z_tilde: object
    y_tilde: object
    z_hat: object
    base_logits: object
    aux_logits: object
    base_logits_distill: object
    aux_logits_frozen: object


def framework_forward(x, fw: FrameworkParams, distill_ref: DistillRef | None = None) -> ForwardResult:
    """Forward pass of base and auxiliary models on a (B,T,N,C) batch.

    `distill_ref`, when given, replaces the internally detached auxiliary
    outputs inside the distillation path; the gradient-check harness uses
    this to hold the teacher fixed across finite-difference evaluations.
    """
    xt = ad.lift(x)
    z = encode_batch(xt, fw.base)
    if fw.aux is None:
        logits = classify(z, fw.base)
        return ForwardResult(z, None, None, z, logits, None, logits, None)
    z_tilde = encode_batch(xt, fw.aux)
    aux_logits = classify(z_tilde, fw.aux)
    y_tilde = ad.exp(ad.log_softmax(aux_logits, axis=-1))
    z_hat = ad.concat([z, y_tilde], axis=1)
    base_logits = classify(z_hat, fw.base)
    if distill_ref is None:
        y_frozen, aux_frozen = y_tilde.detach(), aux_logits.detach()
    else:
        y_frozen, aux_frozen = ad.lift(distill_ref.y_tilde), ad.lift(distill_ref.aux_logits)
    base_logits_distill = classify(ad.concat([z, y_frozen], axis=1), fw.base)
    return ForwardResult(
        z, z_tilde, y_tilde, z_hat, base_logits, aux_logits, base_logits_distill, aux_frozen
    )


@dataclass(frozen=True)
class FeatureBundle:
    """Per-batch features: base z, auxiliary z_tilde / y_tilde, augmented z_hat."""

    z: np.ndarray
    z_tilde: np.ndarray | None
    y_tilde: np.ndarray | None
    z_hat: np.ndarray

    def __post_init__(self):
        if self.y_tilde is not None:
            y = as_float_array(self.y_tilde, "y_tilde")
            if y.min() < 0.0 or np.max(np.abs(y.sum(axis=-1) - 1.0)) > 1e-8:
                raise ValueError("y_tilde rows must be probability vectors")
            if self.z_hat.shape[-1] != self.z.shape[-1] + y.shape[-1]:
                raise ValueError("z_hat must concatenate z with y_tilde")


def feature_bundle(x, fw: FrameworkParams) -> FeatureBundle:
    """Array-valued features of a (B,T,N,C) batch."""
    fwd = framework_forward(x, fw)
    unwrap = lambda t: None if t is None else ad.val(t)
    return FeatureBundle(
        z=unwrap(fwd.z), z_tilde=unwrap(fwd.z_tilde),
        y_tilde=unwrap(fwd.y_tilde), z_hat=unwrap(fwd.z_hat),
    )


def base_encode(seq, params: ModelParams) -> np.ndarray:
    """Pooled feature vector of a single sequence."""
    data = getattr(seq, "data", seq)
    data = as_float_array(data, "sequence")
    z = encode_batch(data[None], params).value[0]
    if not np.all(np.isfinite(z)):
        raise ValueError("encoder produced non-finite features")
    return z


def aux_predict(seq, params: ModelParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(z_tilde, y_tilde, aux_logits) for a single sequence."""
    z_tilde = base_encode(seq, params)
    logits = classify(z_tilde[None], params).value[0]
    return z_tilde, softmax(logits[None])[0], logits


def augment(z, y_tilde) -> np.ndarray:
    """Augmented feature z_hat = concat(z, y_tilde)."""
    z = as_float_array(z, "z")
    y = as_float_array(y_tilde, "y_tilde")
    if z.ndim != 1 or y.ndim != 1:
        raise ValueError("augment expects single vectors; use the batch forward otherwise")
    if y.size < 2:
        raise ValueError("y_tilde must cover at least two classes")
    if y.min() < 0.0 or abs(y.sum() - 1.0) > 1e-8:
        raise ValueError("y_tilde must be a probability vector")
    return np.concatenate([z, y])


# Loss terms ---------------------------------------------------------------


def classification_loss(logits, labels):
    """Mean cross-entropy (negative log-probability of the true class)."""
    graph_mode = ad.is_tensor(logits)
    lt = ad.lift(logits)
    if lt.ndim != 2:
        raise ValueError(f"logits must be (batch, classes); got shape {lt.shape}")
    n, k = lt.shape
    labels = check_labels(labels, n_samples=n, num_classes=k)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    picked = ad.reduce_sum(ad.mul(ad.log_softmax(lt, axis=-1), ad.lift(onehot)), axis=1)
    out = ad.neg(ad.reduce_mean(picked))
    return out if graph_mode else float(out.value)


def distillation_loss(base_logits, aux_logits, temperature: float):
    """KL divergence between temperature-softened class distributions.

    Both logit sets are divided by the temperature before the softmax;
    the result is non-negative and zero iff the softened distributions
    coincide.  Callers decide which side carries gradients.
    """
    temperature = check_positive(temperature, "temperature")
    graph_mode = ad.is_tensor(base_logits) or ad.is_tensor(aux_logits)
    p_logits = ad.lift(base_logits)
    q_logits = ad.lift(aux_logits)
    if p_logits.shape != q_logits.shape:
        raise ValueError(
            f"logit shapes differ: {p_logits.shape} vs {q_logits.shape}"
        )
    lp = ad.log_softmax(ad.mul(p_logits, 1.0 / temperature), axis=-1)
    lq = ad.log_softmax(ad.mul(q_logits, 1.0 / temperature), axis=-1)
    per_sample = ad.reduce_sum(ad.mul(ad.exp(lp), ad.sub(lp, lq)), axis=-1)
    out = ad.reduce_mean(per_sample)
    return out if graph_mode else float(out.value)


def hsic_objective(z_hat, labels, matern: MaternParams, sign: int = -1,
                   weight: float = 1.0, num_classes: int | None = None):
    """Signed, weighted HSIC between batch features and their labels."""
    if sign not in (-1, 1):
        raise ValueError(f"sign must be +1 or -1; got {sign}")
    graph_mode = ad.is_tensor(z_hat)
    zt = ad.lift(z_hat)
    if zt.ndim != 2:
        raise ValueError(f"z_hat must be (batch, features); got shape {zt.shape}")
    if zt.shape[0] < 2:
        raise ValueError("HSIC objective needs a batch of at least two samples")
    labels = check_labels(labels, n_samples=zt.shape[0], num_classes=num_classes)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    k_y = label_kernel(labels, num_classes)
    value = ad.mul(hsic(kernel_matrix(zt, matern), k_y), float(sign) * float(weight))
    return value if graph_mode else float(value.value)


@dataclass(frozen=True)
class LossSettings:
    """Weights, flags and kernel hyperparameters of the total objective."""

    matern: MaternParams = MaternParams()
    hsic_sign: int = -1
    hsic_weight: float = 1.0
    temperature: float = 1.0
    use_hsic: bool = True
    use_distill: bool = True

    def __post_init__(self):
        if self.hsic_sign not in (-1, 1):
            raise ValueError(f"hsic_sign must be +1 or -1; got {self.hsic_sign}")
        check_positive(self.temperature, "temperature")
        if self.hsic_weight < 0.0:
            raise ValueError("hsic_weight must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar values of every loss term of one batch."""

    l_cls: float
    hsic_term: float
    l_ce_aux: float
    l_d: float
    total: float
    hsic_sign: int
    hsic_weight: float


@dataclass
class LossGraph:
    """Loss terms as tape nodes, for backpropagation."""

    l_cls: ad.Tensor
    hsic_term: ad.Tensor
    l_ce_aux: ad.Tensor
    l_d: ad.Tensor
    total: ad.Tensor
    settings: LossSettings

    def breakdown(self) -> LossBreakdown:
        return LossBreakdown(
            l_cls=float(self.l_cls.value),
            hsic_term=float(self.hsic_term.value),
            l_ce_aux=float(self.l_ce_aux.value),
            l_d=float(self.l_d.value),
            total=float(self.total.value),
            hsic_sign=self.settings.hsic_sign,
            hsic_weight=self.settings.hsic_weight,
        )


def build_losses(fwd: ForwardResult, labels, settings: LossSettings,
                 num_classes: int, include=None) -> LossGraph:
    """Assemble the total objective from a forward pass.

    `include` restricts which terms enter the total (used by the
    per-term gradient checks); disabled or excluded terms contribute an
    exact zero.
    """
    active = set(LOSS_TERMS) if include is None else set(include)
    unknown = active - set(LOSS_TERMS)
    if unknown:
        raise ValueError(f"unknown loss terms {sorted(unknown)}; valid: {LOSS_TERMS}")
    zero = ad.lift(0.0)
    has_aux = fwd.aux_logits is not None

    l_cls = classification_loss(fwd.base_logits, labels) if "cls" in active else zero
    hsic_term = zero
    if "hsic" in active and settings.use_hsic:
        k_y = label_kernel(check_labels(labels, num_classes=num_classes), num_classes)
        hsic_term = hsic(kernel_matrix(fwd.z_hat, settings.matern), k_y)
    l_ce = (
        classification_loss(fwd.aux_logits, labels)
        if "ce" in active and has_aux
        else zero
    )
    l_d = (
        distillation_loss(fwd.base_logits_distill, fwd.aux_logits_frozen, settings.temperature)
        if "distill" in active and settings.use_distill and has_aux
        else zero
    )
    signed_hsic = ad.mul(hsic_term, float(settings.hsic_sign) * settings.hsic_weight)
    total = ad.add(ad.add(ad.add(l_cls, signed_hsic), l_ce), l_d)
    return LossGraph(
        l_cls=ad.lift(l_cls), hsic_term=ad.lift(hsic_term), l_ce_aux=ad.lift(l_ce),
        l_d=ad.lift(l_d), total=ad.lift(total), settings=settings,
    )


def total_loss(fwd: ForwardResult, labels, settings: LossSettings,
               num_classes: int) -> LossBreakdown:
    """Scalar breakdown of the full objective on one batch."""
    return build_losses(fwd, labels, settings, num_classes).breakdown()
