"""Fixed label embeddings (the semantic space fed to the SCOR branch)."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .annotations import ClassVocabulary


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class SemanticSpace:
    matrix: np.ndarray  # N x D_e, row i embeds vocabulary label i
    provenance: str = "file"

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[1] < 1:
            raise EmbeddingError(f"semantic space must be a 2-D matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise EmbeddingError("semantic space contains non-finite values")
        zero = np.flatnonzero(~m.any(axis=1))
        if zero.size:
            raise EmbeddingError(f"all-zero embedding rows: {zero.tolist()}")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def normalized(self) -> SemanticSpace:
        norms = np.linalg.norm(self.matrix, axis=1, keepdims=True)
        return SemanticSpace(self.matrix / norms, self.provenance)

    def save(self, path, vocab: ClassVocabulary) -> None:
        if len(vocab) != self.matrix.shape[0]:
            raise EmbeddingError(f"{len(vocab)} labels but {self.matrix.shape[0]} embedding rows")
        payload = {lab: [float(v) for v in row] for lab, row in zip(vocab.labels, self.matrix)}
        Path(path).write_text(json.dumps(payload, ensure_ascii=False) + "\n", encoding="utf-8")


def load_semantic_space(path, vocab: ClassVocabulary, normalize: bool = False) -> SemanticSpace:
    """Read a ``{label: [floats]}`` JSON file and align rows to ``vocab``.

    Raises EmbeddingError for missing labels, ragged widths or
    non-finite values. Extra labels in the file are ignored.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise EmbeddingError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise EmbeddingError(f"{path}: expected a JSON object mapping label -> vector")
    missing = [lab for lab in vocab.labels if lab not in data]
    if missing:
        raise EmbeddingError(f"{path}: no embedding for label(s) {missing}")
    widths = {len(data[lab]) for lab in vocab.labels}
    if len(widths) != 1:
        raise EmbeddingError(f"{path}: inconsistent embedding widths {sorted(widths)}")
    try:
        rows = np.array([data[lab] for lab in vocab.labels], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise EmbeddingError(f"{path}: non-numeric embedding value ({exc})") from None
    bad = [lab for lab, row in zip(vocab.labels, rows) if not np.all(np.isfinite(row))]
    if bad:
        raise EmbeddingError(f"{path}: non-finite value in embedding of {bad}")
    space = SemanticSpace(rows, provenance="file")
    return space.normalized() if normalize else space


def synthetic_semantic_space(vocab: ClassVocabulary, dim: int, seed: int,
                             affinity: Iterable[tuple[int, int]] | None = None,
                             affinity_strength: float = 1.0) -> SemanticSpace:
    """Seeded Gaussian label embeddings.

    Each affinity pair ``(i, j)`` adds one shared random direction to both
    rows, which raises their expected cosine similarity above that of
    unrelated labels.
    """
    if dim < 2:
        raise EmbeddingError(f"embedding width must be >= 2, got {dim}")
    rng = np.random.default_rng(seed)
    n = len(vocab)
    m = rng.standard_normal((n, dim))
    for i, j in affinity or ():
        if not (0 <= i < n and 0 <= j < n):
            raise EmbeddingError(f"affinity pair ({i}, {j}) out of range for {n} labels")
        shared = affinity_strength * rng.standard_normal(dim)
        m[i] += shared
        m[j] += shared
    return SemanticSpace(m, provenance="synthetic")


def cosine_matrix(m: np.ndarray) -> np.ndarray:
    unit = m / np.linalg.norm(m, axis=1, keepdims=True)
    return unit @ unit.T
