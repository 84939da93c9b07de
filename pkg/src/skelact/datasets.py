"""Motion sequences, datasets, modality derivation, file parsing and synthesis.

The on-disk dataset format is line-oriented text:

    skelact-dataset v1
    <num_sequences> <num_classes> <split_tag>
    <T> <N> <C> <label> <num_classes>      # one header per sequence; label -1 if absent
    <N*C floats, joint-major>               # one line per frame, T lines
    ...

NTU-style ``.skeleton`` text is parsed per body track: line 1 is the frame
count; each frame starts with a body-count line; each body contributes an
info line (only the leading body id is used), a joint-count line, and one
line per joint whose first three fields are x y z.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

from .skeleton import ROOT, SkeletonGraph
from .validation import as_float_array

SPLIT_TAGS = ("train", "test")


@dataclass(frozen=True)
class MotionSequence:
    """A T x N x C coordinate tensor with an optional class label."""

    data: np.ndarray = field(repr=False)
    label: int | None = None

    def __post_init__(self):
        arr = as_float_array(self.data, "sequence data")
        if arr.ndim != 3:
            raise ValueError(f"sequence data must be (frames, joints, channels); got {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"sequence data has an empty dimension: {arr.shape}")
        object.__setattr__(self, "data", arr)
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_joints(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class Dataset:
    """An ordered, labelled collection of motion sequences."""

    sequences: tuple[MotionSequence, ...]
    num_classes: int
    split_tag: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if self.split_tag not in SPLIT_TAGS:
            raise ValueError(f"split_tag must be one of {SPLIT_TAGS}; got {self.split_tag!r}")
        for i, seq in enumerate(self.sequences):
            if seq.label is None:
                raise ValueError(f"sequence {i} is unlabelled")
            if not (0 <= seq.label < self.num_classes):
                raise ValueError(
                    f"sequence {i} label {seq.label} outside [0, {self.num_classes})"
                )

    def __len__(self) -> int:
        return len(self.sequences)

    def labels(self) -> np.ndarray:
        return np.array([seq.label for seq in self.sequences], dtype=np.int64)

    def stack(self) -> np.ndarray:
        """All sequences as one (n, T, N, C) array; shapes must agree."""
        if not self.sequences:
            raise ValueError("dataset is empty")
        shapes = {seq.data.shape for seq in self.sequences}
        if len(shapes) != 1:
            raise ValueError(
                f"sequences have mixed shapes {sorted(shapes)}; resample to a common "
                "frame count before stacking"
            )
        return np.stack([seq.data for seq in self.sequences])


# Modality derivation ----------------------------------------------------


def to_bone_stream(seq: MotionSequence, graph: SkeletonGraph) -> MotionSequence:
    """Parent-relative difference vectors; root joints become zero vectors."""
    if seq.num_joints != graph.num_joints:
        raise ValueError(
            f"sequence has {seq.num_joints} joints but graph has {graph.num_joints}"
        )
    out = np.zeros_like(seq.data)
    for j, p in enumerate(graph.parents):
        if p != ROOT:
            out[:, j, :] = seq.data[:, j, :] - seq.data[:, p, :]
    return MotionSequence(data=out, label=seq.label)


def center_on_root(seq: MotionSequence, graph: SkeletonGraph) -> MotionSequence:
    """Subtract the first frame's root-joint position from every coordinate.

    Removes global translation without touching bone lengths; no scaling.
    """
    if seq.num_joints != graph.num_joints:
        raise ValueError(
            f"sequence has {seq.num_joints} joints but graph has {graph.num_joints}"
        )
    return MotionSequence(data=seq.data - seq.data[0, graph.root, :], label=seq.label)


def apply_modality(dataset: Dataset, graph: SkeletonGraph, modality: str) -> Dataset:
    if modality == "joint":
        return dataset
    if modality == "bone":
        bones = tuple(to_bone_stream(seq, graph) for seq in dataset.sequences)
        return replace(dataset, sequences=bones)
    raise ValueError(f"unknown modality {modality!r}; expected 'joint' or 'bone'")


def center_dataset(dataset: Dataset, graph: SkeletonGraph) -> Dataset:
    centered = tuple(center_on_root(seq, graph) for seq in dataset.sequences)
    return replace(dataset, sequences=centered)


# Synthetic data ---------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for the synthetic motion generator."""

    num_classes: int
    num_joints: int
    frames: int
    samples_per_class: int
    channels: int = 3
    noise: float = 0.1

    def __post_init__(self):
        for name in ("num_classes", "num_joints", "frames", "samples_per_class", "channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive; got {getattr(self, name)}")
        if self.noise < 0.0:
            raise ValueError(f"noise must be non-negative; got {self.noise}")


def _class_template(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """One class's deterministic trajectory: rest pose + static offsets +
    per-joint-group phased sinusoids with an integer cycle count."""
    t_idx = np.arange(spec.frames)
    # compact rest pose keeps coordinates O(1) so the default learning rate
    # is stable at desk scale
    pose = np.zeros((spec.num_joints, spec.channels))
    pose[:, 0] = np.arange(spec.num_joints) / spec.num_joints

    offsets = 0.5 * rng.standard_normal((spec.num_joints, spec.channels))
    group_phases = 2.0 * np.pi * rng.random(3)
    phases = group_phases[np.arange(spec.num_joints) % 3]
    amps = 0.3 + 0.4 * rng.random(spec.num_joints)
    dirs = rng.standard_normal((spec.num_joints, spec.channels))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    freq = int(rng.integers(1, 3))

    # integer cycles over T frames, so the temporal mean of the motion term
    # vanishes and the mean pose separates classes exactly at zero noise
    wave = np.sin(2.0 * np.pi * freq * t_idx[:, None] / spec.frames + phases[None, :])
    motion = wave[:, :, None] * (amps[:, None] * dirs)[None, :, :]
    return (pose + offsets)[None, :, :] + motion


def _synthesize(spec: SynthSpec, templates, noise_rng, split_tag: str) -> Dataset:
    sequences = []
    for c, template in enumerate(templates):
        for _ in range(spec.samples_per_class):
            data = template + spec.noise * noise_rng.standard_normal(template.shape)
            sequences.append(MotionSequence(data=data, label=c))
    return Dataset(sequences=tuple(sequences), num_classes=spec.num_classes, split_tag=split_tag)


def generate_synthetic(spec: SynthSpec, seed: int) -> Dataset:
    """Seeded synthetic dataset with one parametric template per class."""
    children = np.random.SeedSequence(seed).spawn(spec.num_classes + 1)
    templates = [
        _class_template(spec, np.random.default_rng(children[c]))
        for c in range(spec.num_classes)
    ]
    return _synthesize(spec, templates, np.random.default_rng(children[-1]), "train")


def generate_synthetic_split(spec: SynthSpec, test_samples_per_class: int,
                             seed: int) -> tuple[Dataset, Dataset]:
    """Train/test datasets drawn around the same class templates.

    The train split is bit-identical to `generate_synthetic(spec, seed)`;
    the test split reuses the templates with a fresh noise stream.
    """
    if test_samples_per_class < 1:
        raise ValueError("test_samples_per_class must be positive")
    children = np.random.SeedSequence(seed).spawn(spec.num_classes + 2)
    templates = [
        _class_template(spec, np.random.default_rng(children[c]))
        for c in range(spec.num_classes)
    ]
    train = _synthesize(spec, templates, np.random.default_rng(children[-2]), "train")
    test_spec = replace(spec, samples_per_class=test_samples_per_class)
    test = _synthesize(test_spec, templates, np.random.default_rng(children[-1]), "test")
    return train, test


# NTU-style .skeleton parsing ---------------------------------------------


class SkeletonParseError(ValueError):
    """Malformed skeleton text; carries the 1-based offending line number."""

    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class _LineReader:
    def __init__(self, text: str):
        self._lines = text.splitlines()
        self._pos = 0

    @property
    def line_number(self) -> int:
        return self._pos

    def next(self, expected: str) -> tuple[int, str]:
        while self._pos < len(self._lines):
            self._pos += 1
            line = self._lines[self._pos - 1].strip()
            if line:
                return self._pos, line
        raise SkeletonParseError(self._pos + 1, f"unexpected end of input; expected {expected}")

    def read_int(self, what: str) -> int:
        number, line = self.next(what)
        try:
            value = int(line.split()[0])
        except ValueError:
            raise SkeletonParseError(number, f"expected {what}, got {line.split()[0]!r}") from None
        if value < 0:
            raise SkeletonParseError(number, f"{what} must be non-negative, got {value}")
        return value


def parse_skeleton_file(text: str | bytes, missing: str = "drop") -> list[MotionSequence]:
    """Parse NTU-style ``.skeleton`` text into one sequence per body track.

    `missing` controls frames where a tracked body is absent: ``drop``
    (default) keeps only observed frames, ``zero`` emits zero-filled rows.
    Every malformed input raises SkeletonParseError with a line number.
    """
    if missing not in ("drop", "zero"):
        raise ValueError(f"missing must be 'drop' or 'zero'; got {missing!r}")
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    reader = _LineReader(text)
    if not text.strip():
        return []

    frame_count = reader.read_int("frame count")
    tracks: dict[str, dict[int, np.ndarray]] = {}
    joint_counts: dict[str, int] = {}
    order: list[str] = []

    for frame in range(frame_count):
        body_count = reader.read_int("body count")
        for _ in range(body_count):
            _, info = reader.next("body info line")
            body_id = info.split()[0]
            count_line_no = reader.line_number + 1
            joint_count = reader.read_int("joint count")
            if joint_count == 0:
                raise SkeletonParseError(count_line_no, "joint count must be positive")
            if body_id in joint_counts and joint_counts[body_id] != joint_count:
                raise SkeletonParseError(
                    count_line_no,
                    f"joint count mismatch for body {body_id}: "
                    f"{joint_count} != {joint_counts[body_id]}",
                )
            coords = np.zeros((joint_count, 3))
            for j in range(joint_count):
                number, line = reader.next("joint coordinates")
                fields = line.split()
                if len(fields) < 3:
                    raise SkeletonParseError(number, f"expected at least 3 fields, got {len(fields)}")
                try:
                    coords[j] = [float(v) for v in fields[:3]]
                except ValueError as err:
                    raise SkeletonParseError(number, f"non-numeric token: {err}") from None
                if not np.all(np.isfinite(coords[j])):
                    raise SkeletonParseError(number, "non-finite coordinate")
            if body_id not in tracks:
                tracks[body_id] = {}
                joint_counts[body_id] = joint_count
                order.append(body_id)
            tracks[body_id][frame] = coords

    sequences = []
    for body_id in order:
        present = tracks[body_id]
        n = joint_counts[body_id]
        if missing == "drop":
            data = np.stack([present[f] for f in sorted(present)])
        else:
            data = np.zeros((frame_count, n, 3))
            for f, coords in present.items():
                data[f] = coords
        sequences.append(MotionSequence(data=data))
    return sequences


def load_skeleton_file(path, missing: str = "drop") -> list[MotionSequence]:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_skeleton_file(handle.read(), missing=missing)


# Dataset (de)serialization ----------------------------------------------

_MAGIC = "skelact-dataset v1"


def dumps_dataset(dataset: Dataset) -> str:
    out = io.StringIO()
    out.write(_MAGIC + "\n")
    out.write(f"{len(dataset.sequences)} {dataset.num_classes} {dataset.split_tag}\n")
    for seq in dataset.sequences:
        label = -1 if seq.label is None else seq.label
        out.write(f"{seq.frames} {seq.num_joints} {seq.channels} {label} {dataset.num_classes}\n")
        for frame in seq.data:
            out.write(" ".join(repr(float(v)) for v in frame.ravel()) + "\n")
    return out.getvalue()


def loads_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise ValueError(f"not a skelact dataset file (missing {_MAGIC!r} header)")
    header = lines[1].split()
    if len(header) != 3:
        raise ValueError("malformed dataset header; expected '<count> <classes> <split>'")
    count, num_classes, split_tag = int(header[0]), int(header[1]), header[2]
    pos = 2
    sequences = []
    for s in range(count):
        if pos >= len(lines):
            raise ValueError(f"truncated dataset file: missing header for sequence {s}")
        t, n, c, label, _ = (int(v) for v in lines[pos].split())
        pos += 1
        if pos + t > len(lines):
            raise ValueError(f"truncated dataset file: sequence {s} needs {t} frame rows")
        data = np.array(
            [[float(v) for v in lines[pos + i].split()] for i in range(t)]
        ).reshape(t, n, c)
        pos += t
        sequences.append(MotionSequence(data=data, label=None if label < 0 else label))
    return Dataset(sequences=tuple(sequences), num_classes=num_classes, split_tag=split_tag)


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(dumps_dataset(dataset))


def load_dataset(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as handle:
        return loads_dataset(handle.read())
