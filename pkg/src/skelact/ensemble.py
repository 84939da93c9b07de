"""Multi-stream training orchestration and softmax-score fusion.

A stream is one (modality, kernel width) combination trained end to end;
fusion is the unweighted arithmetic mean of the streams' softmax scores,
with streams consumed in sorted id order so the result never depends on
argument order.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .datasets import Dataset, apply_modality, center_dataset
from .model import FrameworkParams
from .skeleton import SkeletonGraph, chain_graph
from .training import MetricsRecord, TrainConfig, evaluate, fit
from .validation import check_labels, check_positive

MODALITIES = ("joint", "bone")


@dataclass(frozen=True)
class StreamSpec:
    """One ensemble member: input modality plus Gaussian kernel width."""

    modality: str = "joint"
    delta: float = 1.0
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}; got {self.modality!r}")
        check_positive(self.delta, "delta")

    @property
    def stream_id(self) -> str:
        return f"{self.modality}-d{self.delta:g}"


@dataclass(frozen=True)
class StreamPrediction:
    """Per-sample softmax scores of one stream on a fixed evaluation split."""

    stream_id: str
    scores: np.ndarray
    labels: np.ndarray
    sample_ids: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 2:
            raise ValueError(f"scores must be (samples, classes); got shape {scores.shape}")
        if np.max(np.abs(scores.sum(axis=1) - 1.0)) > 1e-8 or scores.min() < 0.0:
            raise ValueError("score rows must be probability vectors")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", check_labels(self.labels, n_samples=scores.shape[0]))
        object.__setattr__(
            self, "sample_ids", np.asarray(self.sample_ids, dtype=np.int64)
        )
        if self.sample_ids.shape != (scores.shape[0],):
            raise ValueError("sample_ids must align with score rows")


def default_streams(small_delta: float = 1.0, large_delta: float = 9.0) -> list[StreamSpec]:
    """The four-stream ensemble: {joint, bone} x {small, large kernel width}."""
    return [
        StreamSpec(modality=m, delta=d)
        for m in MODALITIES
        for d in (small_delta, large_delta)
    ]


def run_stream(train: Dataset, test: Dataset, spec: StreamSpec, config: TrainConfig,
               *, graph: SkeletonGraph | None = None, center: bool = True,
               ) -> tuple[FrameworkParams, StreamPrediction, list[MetricsRecord]]:
    """Train one stream and score the test split.

    Bone inputs are derived with the parent-difference transform before
    (optional) centering; an all-zero derived stream is flagged because
    it carries no signal.
    """
    graph = graph or chain_graph(train.sequences[0].num_joints)
    cfg = replace(config, delta=spec.delta, **spec.overrides)
    train_m = apply_modality(train, graph, spec.modality)
    test_m = apply_modality(test, graph, spec.modality)
    if spec.modality == "bone" and all(
        not seq.data.any() for seq in train_m.sequences
    ):
        warnings.warn(
            f"stream {spec.stream_id}: bone inputs are identically zero "
            "(constant pose?); the stream carries no signal",
            RuntimeWarning,
            stacklevel=2,
        )
    if center:
        train_m = center_dataset(train_m, graph)
        test_m = center_dataset(test_m, graph)
    fw, metrics = fit(train_m, cfg, graph=graph, test=test_m)
    report = evaluate(fw, test_m)
    prediction = StreamPrediction(
        stream_id=spec.stream_id,
        scores=report.scores,
        labels=test_m.labels(),
        sample_ids=np.arange(len(test_m)),
    )
    return fw, prediction, metrics


def ensemble_average(predictions: list[StreamPrediction]) -> tuple[np.ndarray, np.ndarray]:
    """Unweighted mean of stream scores plus fused top-1 labels.

    Streams are averaged in sorted stream-id order (permutation-invariant
    by construction); argmax ties break toward the lowest class index.
    """
    if not predictions:
        raise ValueError("need at least one stream prediction")
    ordered = sorted(predictions, key=lambda p: p.stream_id)
    first = ordered[0]
    for p in ordered[1:]:
        if p.scores.shape != first.scores.shape:
            raise ValueError(
                f"stream {p.stream_id} has shape {p.scores.shape}, "
                f"expected {first.scores.shape}"
            )
        if not np.array_equal(p.sample_ids, first.sample_ids):
            raise ValueError(f"stream {p.stream_id} covers different samples")
        if not np.array_equal(p.labels, first.labels):
            raise ValueError(f"stream {p.stream_id} disagrees on true labels")
    stacked = np.stack([p.scores for p in ordered])
    fused = stacked.sum(axis=0) / len(ordered)
    return fused, fused.argmax(axis=1)


# Prediction files -----------------------------------------------------------


def predictions_to_csv(pred: StreamPrediction) -> str:
    k = pred.scores.shape[1]
    out = io.StringIO()
    header = ["sample_id"] + [f"score_{c}" for c in range(k)] + ["label", "stream_id"]
    out.write(",".join(header) + "\n")
    for sid, row, label in zip(pred.sample_ids, pred.scores, pred.labels):
        cells = [str(int(sid))] + [repr(float(v)) for v in row] + [str(int(label)), pred.stream_id]
        out.write(",".join(cells) + "\n")
    return out.getvalue()


def save_predictions(pred: StreamPrediction, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(predictions_to_csv(pred))


def load_predictions(path) -> StreamPrediction:
    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines or not lines[0].startswith("sample_id,score_0"):
        raise ValueError(f"{path}: not a stream prediction CSV")
    k = len(lines[0].split(",")) - 3
    ids, scores, labels, stream_ids = [], [], [], []
    for line in lines[1:]:
        cells = line.split(",")
        ids.append(int(cells[0]))
        scores.append([float(v) for v in cells[1:1 + k]])
        labels.append(int(cells[1 + k]))
        stream_ids.append(cells[2 + k])
    if len(set(stream_ids)) > 1:
        raise ValueError(f"{path}: mixed stream ids {sorted(set(stream_ids))}")
    return StreamPrediction(
        stream_id=stream_ids[0] if stream_ids else "unknown",
        scores=np.array(scores, dtype=np.float64),
        labels=np.array(labels, dtype=np.int64),
        sample_ids=np.array(ids, dtype=np.int64),
    )
