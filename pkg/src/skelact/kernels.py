"""Matern kernels, Gram matrices, kernel centering and the HSIC estimator.

The Matern family is implemented in its closed forms:

    order 1/2:  k(r) = a * exp(-r/l)
    order 3/2:  k(r) = a * (1 + sqrt(3) r / l) * exp(-sqrt(3) r / l)
    order 5/2:  k(r) = a * (1 + sqrt(5) r / l + 5 r^2 / (3 l^2)) * exp(-sqrt(5) r / l)

with r the Euclidean distance between samples, amplitude a > 0 and length
scale l > 0.  The dependence statistic is the biased estimator

    HSIC(z, y) = tr(K_z H K_y H) / (n - 1)^2,   H = I - (1/n) 1 1^T.

All functions accept plain arrays and return arrays; `kernel_matrix`,
`center` and `hsic` also accept autodiff tensors and then stay on the
tape, which is how the training objective differentiates through them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .validation import check_positive, check_labels, check_square

CLOSED_FORM_ORDERS = (0.5, 1.5, 2.5)


@dataclass(frozen=True)
class MaternParams:
    """Matern kernel hyperparameters; only closed-form orders are supported."""

    order: float = 1.5
    amplitude: float = 1.0
    length_scale: float = 1.0

    def __post_init__(self):
        if float(self.order) not in CLOSED_FORM_ORDERS:
            raise ValueError(
                f"unsupported Matern order {self.order!r}; choose from {CLOSED_FORM_ORDERS}"
            )
        object.__setattr__(self, "order", float(self.order))
        object.__setattr__(self, "amplitude", check_positive(self.amplitude, "amplitude"))
        object.__setattr__(self, "length_scale", check_positive(self.length_scale, "length_scale"))


def matern_kernel(u, w, params: MaternParams) -> float:
    """Scalar kernel value between two feature vectors."""
    u = np.asarray(u, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if u.shape != w.shape or u.ndim != 1:
        raise ValueError(f"inputs must be equal-length vectors; got {u.shape} and {w.shape}")
    diff = u - w
    sq = float(diff @ diff)
    k, _ = ad._matern_values(np.array(sq), params.order, params.amplitude, params.length_scale)
    return float(k)


def _as_sample_matrix(samples) -> np.ndarray:
    if isinstance(samples, ad.Tensor):
        return samples.value
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def kernel_matrix(samples, params: MaternParams):
    """Pairwise Gram matrix of the given samples (n, d) -> (n, n).

    Symmetric with diagonal exactly equal to the amplitude; positive
    semidefinite up to numerical tolerance.
    """
    arr = _as_sample_matrix(samples)
    if arr.ndim != 2:
        raise ValueError(f"samples must form a (n, d) matrix; got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError("need at least one sample")
    if not isinstance(samples, ad.Tensor) and not np.all(np.isfinite(arr)):
        raise ValueError("samples contain non-finite values")
    gram = ad.matern_gram(ad.lift(samples) if isinstance(samples, ad.Tensor) else ad.lift(arr),
                          params.order, params.amplitude, params.length_scale)
    return gram if isinstance(samples, ad.Tensor) else gram.value


def centering_matrix(n: int) -> np.ndarray:
    """H = I - (1/n) 1 1^T."""
    if n < 1:
        raise ValueError("n must be positive")
    return np.eye(n) - np.full((n, n), 1.0 / n)


def center(k):
    """Double-center a Gram matrix: H K H.

    Row and column sums of the result vanish; the map is idempotent.
    """
    if isinstance(k, ad.Tensor):
        h = ad.lift(centering_matrix(k.shape[0]))
        return ad.matmul(ad.matmul(h, k), h)
    k = check_square(k, "kernel matrix")
    h = centering_matrix(k.shape[0])
    return h @ k @ h


def hsic(k_z, k_y):
    """Biased HSIC estimator tr(K_z H K_y H) / (n-1)^2 from two Gram matrices.

    Requires n >= 2 (the normalization degenerates at n = 1).  For PSD
    inputs the value is non-negative up to roundoff.
    """
    if isinstance(k_y, ad.Tensor):
        raise ValueError("k_y must be a plain array (gradients flow through k_z only)")
    k_y = check_square(k_y, "k_y")
    n = k_z.shape[0]
    if n != k_y.shape[0]:
        raise ValueError(f"kernel matrices disagree on sample count: {n} != {k_y.shape[0]}")
    if n < 2:
        raise ValueError("HSIC needs at least two samples")
    scale = 1.0 / float((n - 1) ** 2)
    # tr(K_z H K_y H) = tr(K_z (H K_y H)) = sum(K_z * (H K_y H)^T) by
    # associativity of the product chain.
    centered_y_t = np.ascontiguousarray(center(k_y).T)
    if isinstance(k_z, ad.Tensor):
        if k_z.ndim != 2 or k_z.shape[0] != k_z.shape[1]:
            raise ValueError(f"k_z must be square; got shape {k_z.shape}")
        return ad.mul(ad.reduce_sum(ad.mul(k_z, ad.lift(centered_y_t))), scale)
    k_z = check_square(k_z, "k_z")
    return float(np.sum(k_z * centered_y_t) * scale)


def label_kernel(labels, num_classes: int) -> np.ndarray:
    """Delta kernel on class labels: 1 where labels match, else 0.

    Equivalent to a linear kernel on one-hot encodings, hence PSD.
    """
    labels = check_labels(labels, num_classes=num_classes)
    return (labels[:, None] == labels[None, :]).astype(np.float64)


def hsic_permutation_test(
    z_samples,
    labels,
    params: MaternParams,
    num_permutations: int = 200,
    seed: int = 0,
) -> tuple[float, float]:
    """Permutation test of feature/label dependence.

    Returns (observed HSIC, p-value), where the p-value is the fraction of
    sampled label permutations whose HSIC is at least the observed value.
    Permuted values within roundoff (1e-12 * amplitude) of the observed
    one count as ties, so degenerate inputs where every permutation is
    analytically equal yield p = 1 instead of coin-flipping on residue.
    """
    z = _as_sample_matrix(z_samples)
    labels = check_labels(labels, n_samples=z.shape[0])
    n = z.shape[0]
    if n < 5:
        raise ValueError(f"permutation test needs at least 5 samples; got {n}")
    if num_permutations < 100:
        raise ValueError(f"need at least 100 permutations; got {num_permutations}")
    if np.unique(labels).size < 2:
        raise ValueError("labels are degenerate (single class)")

    num_classes = int(labels.max()) + 1
    k_z = kernel_matrix(z, params)
    k_y = label_kernel(labels, num_classes)
    observed = hsic(k_z, k_y)

    rng = np.random.default_rng(seed)
    tie_tol = 1e-12 * params.amplitude
    hits = 0
    for _ in range(num_permutations):
        perm = rng.permutation(n)
        if hsic(k_z, k_y[np.ix_(perm, perm)]) >= observed - tie_tol:
            hits += 1
    return observed, hits / num_permutations
