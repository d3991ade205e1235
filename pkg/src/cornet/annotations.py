"""Dense multi-label temporal annotations and co-occurrence ground truth.

Annotations are stored as run-length intervals ``(start, end, class_id)``
with ``end`` exclusive; the per-frame label sets are derived on demand.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class ClassVocabulary:
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if any(not isinstance(lab, str) or not lab for lab in self.labels):
            raise AnnotationError("vocabulary labels must be non-empty strings")
        if len(set(self.labels)) != len(self.labels):
            dupes = sorted({lab for lab in self.labels if self.labels.count(lab) > 1})
            raise AnnotationError(f"duplicate vocabulary labels: {dupes}")

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(list(self.labels), ensure_ascii=False) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path) -> ClassVocabulary:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise AnnotationError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        if not isinstance(data, list):
            raise AnnotationError(f"{path}: vocabulary must be a JSON array of strings")
        return cls(tuple(data))


@dataclass(frozen=True)
class AnnotationSequence:
    video_id: str
    num_frames: int
    intervals: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "intervals", tuple(tuple(int(v) for v in iv) for iv in self.intervals))
        if self.num_frames < 0:
            raise AnnotationError(f"{self.video_id}: negative frame count {self.num_frames}")
        for iv in self.intervals:
            if len(iv) != 3:
                raise AnnotationError(f"{self.video_id}: interval {iv} must be [start, end, class_id]")
            start, end, cls = iv
            if not 0 <= start < end <= self.num_frames:
                raise AnnotationError(
                    f"{self.video_id}: interval {list(iv)} outside 0 <= start < end <= {self.num_frames}")
            if cls < 0:
                raise AnnotationError(f"{self.video_id}: negative class id in interval {list(iv)}")

    def validate(self, vocab: ClassVocabulary) -> None:
        for iv in self.intervals:
            if iv[2] >= len(vocab):
                raise AnnotationError(
                    f"{self.video_id}: class id {iv[2]} in interval {list(iv)} "
                    f"out of range for {len(vocab)} classes")

    def label_sets(self) -> list[frozenset[int]]:
        """The set of active class ids at every frame."""
        sets: list[set[int]] = [set() for _ in range(self.num_frames)]
        for start, end, cls in self.intervals:
            for t in range(start, end):
                sets[t].add(cls)
        return [frozenset(s) for s in sets]

    def to_json(self) -> dict:
        return {"id": self.video_id, "num_frames": self.num_frames,
                "intervals": [list(iv) for iv in self.intervals]}


@dataclass(frozen=True)
class CoOccurrenceMatrix:
    """Pairwise co-occurrence intensities; ``ground_truth`` marks counted matrices."""

    values: np.ndarray
    ground_truth: bool = True

    def __add__(self, other: CoOccurrenceMatrix) -> CoOccurrenceMatrix:
        return CoOccurrenceMatrix(self.values + other.values, self.ground_truth and other.ground_truth)

    def to_csv(self, path, vocab: ClassVocabulary) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(vocab.labels)
            for row in self.values:
                if self.ground_truth:
                    writer.writerow([int(v) for v in row])
                else:
                    writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> tuple[CoOccurrenceMatrix, ClassVocabulary]:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        vocab = ClassVocabulary(tuple(rows[0]))
        values = np.array([[float(v) for v in row] for row in rows[1:]], dtype=np.float64)
        is_int = bool(np.all(values == np.round(values)))
        return cls(values.reshape(len(vocab), len(vocab)), is_int), vocab


def to_dense_targets(seq: AnnotationSequence, vocab: ClassVocabulary) -> np.ndarray:
    """T x N binary indicator of which classes cover which frames."""
    seq.validate(vocab)
    y = np.zeros((seq.num_frames, len(vocab)), dtype=np.float64)
    for start, end, cls in seq.intervals:
        y[start:end, cls] = 1.0
    return y


def cooccurrence_counts(targets: np.ndarray) -> np.ndarray:
    """Sum over frames of the outer product of each frame's label indicator."""
    y = np.asarray(targets, dtype=np.float64)
    return y.T @ y


def build_cooccurrence(seq: AnnotationSequence, vocab: ClassVocabulary) -> CoOccurrenceMatrix:
    return CoOccurrenceMatrix(cooccurrence_counts(to_dense_targets(seq, vocab)), ground_truth=True)


def corpus_cooccurrence(seqs: Iterable[AnnotationSequence], vocab: ClassVocabulary) -> CoOccurrenceMatrix:
    total = CoOccurrenceMatrix(np.zeros((len(vocab), len(vocab))))
    for seq in seqs:
        total = total + build_cooccurrence(seq, vocab)
    return total


# ---------------------------------------------------------------------------
# file formats


def save_annotations(seqs: Sequence[AnnotationSequence], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in seqs:
            fh.write(json.dumps(seq.to_json(), ensure_ascii=False) + "\n")


def read_annotation_lines(path) -> list[AnnotationSequence]:
    seqs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                seq = AnnotationSequence(str(rec["id"]), int(rec["num_frames"]),
                                         tuple(tuple(iv) for iv in rec["intervals"]))
            except AnnotationError as exc:
                raise AnnotationError(f"{path}: line {lineno}: {exc}") from None
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise AnnotationError(f"{path}: line {lineno}: malformed record ({exc})") from None
            seqs.append(seq)
    return seqs


def load_annotations(path, vocab_path) -> tuple[list[AnnotationSequence], ClassVocabulary]:
    """Load a JSON Lines annotation file and its vocabulary, validating both."""
    vocab = ClassVocabulary.load(vocab_path)
    seqs = read_annotation_lines(path)
    for seq in seqs:
        seq.validate(vocab)
    return seqs, vocab


# ---------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class DatasetStats:
    labels_per_frame: float
    classes_per_video: float
    class_frame_counts: np.ndarray
    frames: int


def dataset_stats(seqs: Sequence[AnnotationSequence], vocab: ClassVocabulary) -> DatasetStats:
    if not seqs:
        raise AnnotationError("dataset_stats needs at least one sequence")
    counts = np.zeros(len(vocab))
    labels = 0.0
    frames = 0
    classes = []
    for seq in seqs:
        y = to_dense_targets(seq, vocab)
        counts += y.sum(axis=0)
        labels += y.sum()
        frames += seq.num_frames
        classes.append(int((y.sum(axis=0) > 0).sum()))
    return DatasetStats(
        labels_per_frame=labels / frames if frames else 0.0,
        classes_per_video=float(np.mean(classes)),
        class_frame_counts=counts,
        frames=frames,
    )
