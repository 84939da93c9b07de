"""Pairwise joint-dependency modelling and dependency-refined graph convolution.

Dependencies between joints i and j are measured by the elementwise
Gaussian correlation exp(-(v_i - v_j)^2 / (2 delta^2)) of their feature
vectors, mapped through a learned affine map into one dependency value
per output channel.  The static bone adjacency A is then refined per
channel, A_c = A + w_c * R[.,.,c], and propagated with the symmetric
degree scaling of the *static* A + I (refined entries can be negative, so
degrees are never taken from A_c).

The `*_values` helpers operate on batched autodiff tensors and are shared
with the model forward pass; the public functions wrap them for single
samples with plain arrays in and out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .skeleton import degree_scaling
from .validation import as_float_array, check_positive, check_symmetric

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class DependencyParams:
    """The affine dependency map (phi) and per-channel refinement scales."""

    phi_weights: np.ndarray
    phi_bias: np.ndarray
    channel_scale: np.ndarray

    def __post_init__(self):
        w = as_float_array(self.phi_weights, "phi_weights")
        b = as_float_array(self.phi_bias, "phi_bias")
        s = as_float_array(self.channel_scale, "channel_scale")
        if w.ndim != 2:
            raise ValueError(f"phi_weights must be (C, C'); got shape {w.shape}")
        if b.shape != (w.shape[1],) or s.shape != (w.shape[1],):
            raise ValueError("phi_bias and channel_scale must have one entry per output channel")
        object.__setattr__(self, "phi_weights", w)
        object.__setattr__(self, "phi_bias", b)
        object.__setattr__(self, "channel_scale", s)


@dataclass(frozen=True)
class DependencyTensor:
    """Pairwise joint dependencies, one value per output channel."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = as_float_array(self.values, "dependency values")
        if v.ndim != 3 or v.shape[0] != v.shape[1]:
            raise ValueError(f"dependency values must be (N, N, C'); got shape {v.shape}")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class RefinedAdjacency:
    """Per-channel refined adjacency A_c together with the static part A."""

    values: np.ndarray = field(repr=False)
    static_part: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = as_float_array(self.values, "refined adjacency")
        a = check_symmetric(self.static_part, "static adjacency")
        if v.ndim != 3 or v.shape[:2] != a.shape:
            raise ValueError(
                f"refined adjacency {v.shape} does not match static part {a.shape}"
            )
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "static_part", a)


# Batched cores (tensor in, tensor out) -----------------------------------


def pairwise_correlation(v, delta: float):
    """Gaussian correlation for all joint pairs: (B,N,C) -> (B,N,N,C)."""
    delta = check_positive(delta, "delta")
    v = ad.lift(v)
    b, n, c = v.shape
    vi = ad.reshape(v, (b, n, 1, c))
    vj = ad.reshape(v, (b, 1, n, c))
    diff = ad.sub(vi, vj)
    return ad.exp(ad.mul(ad.mul(diff, diff), -1.0 / (2.0 * delta * delta)))


def dependency_values(corr, phi_weights, phi_bias):
    """Affine map of correlations to per-channel dependencies: (B,N,N,C) -> (B,N,N,C')."""
    corr = ad.lift(corr)
    phi_weights = ad.lift(phi_weights)
    b, n, _, c = corr.shape
    c_out = phi_weights.shape[1]
    flat = ad.reshape(corr, (b * n * n, c))
    r = ad.reshape(ad.matmul(flat, phi_weights), (b, n, n, c_out))
    return ad.add(r, ad.reshape(ad.lift(phi_bias), (1, 1, 1, c_out)))


def refined_stack(adjacency: np.ndarray, r, channel_scale):
    """A_c = A + w_c * R per channel: (B,N,N,C') from static (N,N)."""
    r = ad.lift(r)
    c_out = r.shape[-1]
    scale = ad.reshape(ad.lift(channel_scale), (1, 1, 1, c_out))
    n = adjacency.shape[0]
    a = ad.lift(adjacency.reshape(1, n, n, 1))
    return ad.add(a, ad.mul(scale, r))


def propagation_stack(a_c, adjacency: np.ndarray):
    """Degree-scaled propagation operator (A_c + I) / sqrt(d_i d_j).

    Degrees come from the static A + I so the operator stays well defined
    for negative refined entries and reduces bit-for-bit to the plain
    normalized adjacency when the refinement scale is zero.
    """
    a_c = ad.lift(a_c)
    n = adjacency.shape[0]
    eye = np.eye(n).reshape(1, n, n, 1)
    scaling = degree_scaling(adjacency).reshape(1, n, n, 1)
    return ad.mul(ad.add(a_c, ad.lift(eye)), ad.lift(scaling))


def spatial_conv(stack, x, w, activation: str = "relu"):
    """Channelwise graph propagation of transformed features.

    stack: (B,N,N,C') propagation operator, x: (B,T,N,C) features,
    w: (C,C') weights -> (B,T,N,C').
    """
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")
    x = ad.lift(x)
    w = ad.lift(w)
    b, t, n, c = x.shape
    c_out = w.shape[1]
    y = ad.reshape(ad.matmul(ad.reshape(x, (b * t * n, c)), w), (b, t, n, c_out))
    out = ad.channel_mix(stack, y)
    return ad.relu(out) if activation == "relu" else out


# Public single-sample operations -----------------------------------------


def gaussian_correlation(v_i, v_j, delta: float) -> np.ndarray:
    """Elementwise exp(-(v_i - v_j)^2 / (2 delta^2)).

    Values lie in (0, 1] and hit 1 exactly where the components coincide.
    """
    delta = check_positive(delta, "delta")
    graph_mode = ad.is_tensor(v_i) or ad.is_tensor(v_j)
    vi, vj = ad.lift(v_i), ad.lift(v_j)
    if vi.shape != vj.shape:
        raise ValueError(f"feature vectors differ in shape: {vi.shape} vs {vj.shape}")
    diff = ad.sub(vi, vj)
    out = ad.exp(ad.mul(ad.mul(diff, diff), -1.0 / (2.0 * delta * delta)))
    return out if graph_mode else out.value


def joint_features(seq) -> np.ndarray:
    """Per-joint feature vectors: the temporal mean of a (T,N,C) sequence."""
    data = getattr(seq, "data", seq)
    graph_mode = ad.is_tensor(data)
    t = ad.lift(data)
    if t.ndim != 3:
        raise ValueError(f"expected a (frames, joints, channels) sequence; got shape {t.shape}")
    if t.shape[0] < 1:
        raise ValueError("sequence has no frames")
    out = ad.reduce_mean(t, axis=0)
    return out if graph_mode else out.value


def dependency_tensor(features, delta: float, params: DependencyParams) -> DependencyTensor:
    """Dependencies r_ij = phi(correlation(v_i, v_j)) for all joint pairs."""
    feats = as_float_array(features, "features")
    if feats.ndim != 2:
        raise ValueError(f"features must be (N, C); got shape {feats.shape}")
    if feats.shape[1] != params.phi_weights.shape[0]:
        raise ValueError(
            f"features have {feats.shape[1]} channels but phi expects "
            f"{params.phi_weights.shape[0]}"
        )
    corr = pairwise_correlation(feats[None], delta)
    values = dependency_values(corr, params.phi_weights, params.phi_bias).value[0]
    return DependencyTensor(values=values)


def refine_adjacency(a, r: DependencyTensor, params: DependencyParams) -> RefinedAdjacency:
    """Per-channel refined adjacency A_c = A + w_c * R."""
    a = check_symmetric(a, "adjacency")
    if r.values.shape[0] != a.shape[0]:
        raise ValueError(
            f"adjacency has {a.shape[0]} joints but dependencies have {r.values.shape[0]}"
        )
    if r.values.shape[2] != params.channel_scale.shape[0]:
        raise ValueError("channel_scale length does not match dependency channels")
    values = refined_stack(a, r.values[None], params.channel_scale).value[0]
    return RefinedAdjacency(values=values, static_part=a)


def refined_graph_conv(x, refined: RefinedAdjacency, w, activation: str = "relu") -> np.ndarray:
    """Graph convolution with a per-channel refined adjacency on one sequence.

    x: (T,N,C), w: (C,C') with C' matching the refined channel count.
    """
    graph_mode = ad.is_tensor(x) or ad.is_tensor(w)
    xt, wt = ad.lift(x), ad.lift(w)
    if xt.ndim != 3:
        raise ValueError(f"x must be (T, N, C); got shape {xt.shape}")
    if xt.shape[1] != refined.static_part.shape[0]:
        raise ValueError("joint count mismatch between x and the refined adjacency")
    if wt.shape != (xt.shape[2], refined.values.shape[2]):
        raise ValueError(
            f"weights must be ({xt.shape[2]}, {refined.values.shape[2]}); got {wt.shape}"
        )
    stack = propagation_stack(ad.lift(refined.values[None]), refined.static_part)
    t, n, c = xt.shape
    out = spatial_conv(stack, ad.reshape(xt, (1, t, n, c)), wt, activation)
    out = ad.reshape(out, (t, n, wt.shape[1]))
    if graph_mode:
        return out
    if not np.all(np.isfinite(out.value)):
        raise ValueError("graph convolution produced non-finite values")
    return out.value


def graph_conv(x, a, w, activation: str = "relu") -> np.ndarray:
    """Plain graph convolution sigma(D^{-1/2} (A+I) D^{-1/2} X W).

    Routed through the same per-channel contraction as the refined
    variant, so a refinement scale of zero reproduces this exactly.
    """
    a = check_symmetric(a, "adjacency")
    graph_mode = ad.is_tensor(x) or ad.is_tensor(w)
    xt, wt = ad.lift(x), ad.lift(w)
    if xt.ndim != 3:
        raise ValueError(f"x must be (T, N, C); got shape {xt.shape}")
    t, n, c = xt.shape
    c_out = wt.shape[1]
    stack = np.ascontiguousarray(
        np.broadcast_to(a[None, :, :, None], (1, n, n, c_out))
    )
    prop = propagation_stack(ad.lift(stack), a)
    out = spatial_conv(prop, ad.reshape(xt, (1, t, n, c)), wt, activation)
    out = ad.reshape(out, (t, n, c_out))
    return out if graph_mode else out.value
