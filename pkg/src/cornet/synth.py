"""Synthetic multi-label corpora with planted co-occurrence structure.

Every class places a few random segments per video. For each planted pair
``(i, j, p)`` every placed class-``i`` segment is accompanied, with
probability ``p``, by an overlapping class-``j`` segment. Frame features
are the sum of the active classes' prototypes plus Gaussian noise.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .annotations import AnnotationSequence, ClassVocabulary, read_annotation_lines, save_annotations, to_dense_targets
from .embeddings import SemanticSpace, load_semantic_space, synthetic_semantic_space


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 8
    d_in: int = 16
    n_train: int = 40
    n_val: int = 10
    frames: int = 64
    pairs: tuple[tuple[int, int, float], ...] = ((0, 1, 0.8), (2, 3, 0.8), (4, 5, 0.8), (6, 7, 0.8))
    p_base: float = 0.3
    seg_min: int = 6
    seg_max: int = 20
    noise: float = 1.0
    proto_scale: float = 1.0
    embed_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple((int(i), int(j), float(p)) for i, j, p in self.pairs))
        if self.n_classes < 1 or self.d_in < 1 or self.frames < 1:
            raise SpecError("n_classes, d_in and frames must be >= 1")
        if self.n_train < 0 or self.n_val < 0:
            raise SpecError("split sizes must be non-negative")
        if not 0.0 <= self.p_base <= 1.0:
            raise SpecError(f"p_base must be a probability, got {self.p_base}")
        if not 1 <= self.seg_min <= self.seg_max <= self.frames:
            raise SpecError(f"need 1 <= seg_min <= seg_max <= frames, got "
                            f"{self.seg_min}, {self.seg_max}, {self.frames}")
        for i, j, p in self.pairs:
            if i == j:
                raise SpecError(f"planted pair ({i}, {j}) must join two different classes")
            if not (0 <= i < self.n_classes and 0 <= j < self.n_classes):
                raise SpecError(f"planted pair ({i}, {j}) out of range for {self.n_classes} classes")
            if not 0.0 <= p <= 1.0:
                raise SpecError(f"planted pair ({i}, {j}) probability {p} outside [0, 1]")
        if self.noise < 0 or self.embed_dim < 2:
            raise SpecError("noise must be >= 0 and embed_dim >= 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pairs"] = [list(p) for p in self.pairs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SynthSpec:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"unknown synth spec fields: {sorted(unknown)}")
        d = dict(d)
        if "pairs" in d:
            d["pairs"] = tuple(tuple(p) for p in d["pairs"])
        return cls(**d)


def load_spec(path) -> SynthSpec:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise SpecError(f"{path}: spec must be a JSON object")
    try:
        return SynthSpec.from_dict(data)
    except TypeError as exc:
        raise SpecError(f"{path}: {exc}") from None


@dataclass
class Video:
    annotation: AnnotationSequence
    features: np.ndarray  # T x D_in

    @property
    def video_id(self) -> str:
        return self.annotation.video_id


@dataclass
class Corpus:
    vocab: ClassVocabulary
    space: SemanticSpace
    splits: dict[str, list[Video]] = field(default_factory=dict)

    @property
    def train(self) -> list[Video]:
        return self.splits.get("train", [])

    @property
    def val(self) -> list[Video]:
        return self.splits.get("val", [])

    def videos(self) -> list[Video]:
        return [v for split in self.splits.values() for v in split]


def class_prototypes(spec: SynthSpec) -> np.ndarray:
    """Unit-norm random directions scaled by ``proto_scale``, one per class."""
    rng = np.random.default_rng([spec.seed, 0])
    p = rng.standard_normal((spec.n_classes, spec.d_in))
    return spec.proto_scale * p / np.linalg.norm(p, axis=1, keepdims=True)


def _video_intervals(spec: SynthSpec, rng: np.random.Generator) -> list[tuple[int, int, int]]:
    slots = max(1, spec.frames // spec.seg_max)
    intervals = []
    partners: dict[int, list[tuple[int, float]]] = {}
    for i, j, p in spec.pairs:
        partners.setdefault(i, []).append((j, p))
    for c in range(spec.n_classes):
        for _ in range(slots):
            if rng.random() >= spec.p_base:
                continue
            length = int(rng.integers(spec.seg_min, spec.seg_max + 1))
            start = int(rng.integers(0, spec.frames - length + 1))
            intervals.append((start, start + length, c))
            for j, p in partners.get(c, ()):
                if rng.random() >= p:
                    continue
                # start drawn so the two segments always overlap
                len_j = int(rng.integers(spec.seg_min, spec.seg_max + 1))
                s = int(rng.integers(start - len_j // 2, start + length // 2 + 1))
                s = min(max(s, 0), spec.frames - len_j)
                intervals.append((s, s + len_j, j))
    return sorted(intervals)


def generate_video(spec: SynthSpec, video_id: str, rng: np.random.Generator,
                   prototypes: np.ndarray, vocab: ClassVocabulary) -> Video:
    ann = AnnotationSequence(video_id, spec.frames, tuple(_video_intervals(spec, rng)))
    y = to_dense_targets(ann, vocab)
    feats = y @ prototypes + spec.noise * rng.standard_normal((spec.frames, spec.d_in))
    # stored on disk as float32; keep the in-memory copy identical to a reload
    return Video(ann, feats.astype(np.float32).astype(np.float64))


def generate_dataset(spec: SynthSpec) -> Corpus:
    vocab = ClassVocabulary(tuple(f"action_{c:02d}" for c in range(spec.n_classes)))
    prototypes = class_prototypes(spec)
    splits = {}
    for split_idx, (split, count) in enumerate((("train", spec.n_train), ("val", spec.n_val))):
        videos = []
        for k in range(count):
            rng = np.random.default_rng([spec.seed, split_idx + 1, k])
            videos.append(generate_video(spec, f"{split}_{k:04d}", rng, prototypes, vocab))
        splits[split] = videos
    space = synthetic_semantic_space(vocab, spec.embed_dim, seed=spec.seed + 7919,
                                     affinity=[(i, j) for i, j, _ in spec.pairs])
    return Corpus(vocab, space, splits)


# ---------------------------------------------------------------------------
# on-disk layout


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_features(path, features: np.ndarray) -> list[Path]:
    """Raw little-endian float32 T x D plus a ``{"t", "d"}`` JSON sidecar."""
    path = Path(path)
    arr = np.ascontiguousarray(features, dtype="<f4")
    path.write_bytes(arr.tobytes())
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps({"t": int(arr.shape[0]), "d": int(arr.shape[1])}) + "\n")
    return [path, sidecar]


def read_features(path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != meta["t"] * meta["d"]:
        raise ValueError(f"{path}: {raw.size} values, sidecar declares {meta['t']} x {meta['d']}")
    return raw.reshape(meta["t"], meta["d"]).astype(np.float64)


def write_corpus(corpus: Corpus, out_dir, spec: SynthSpec | None = None) -> dict:
    """Write features, annotations, vocabulary and embeddings plus a manifest."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    files: list[Path] = []
    for video in corpus.videos():
        files += write_features(out / "features" / f"{video.video_id}.f32", video.features)
    save_annotations([v.annotation for v in corpus.videos()], out / "annotations.jsonl")
    corpus.vocab.save(out / "vocab.json")
    corpus.space.save(out / "embeddings.json", corpus.vocab)
    files += [out / "annotations.jsonl", out / "vocab.json", out / "embeddings.json"]
    manifest = {
        "files": [{"path": f.relative_to(out).as_posix(), "sha256": _sha256(f)} for f in files],
        "splits": {name: [v.video_id for v in videos] for name, videos in corpus.splits.items()},
    }
    if spec is not None:
        manifest["spec"] = spec.to_dict()
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def read_corpus(data_dir, normalize_embeddings: bool = False, embeddings_path=None) -> Corpus:
    """Load a corpus directory written by :func:`write_corpus`.

    Without a manifest every video goes to a single ``"all"`` split.
    """
    root = Path(data_dir)
    vocab = ClassVocabulary.load(root / "vocab.json")
    seqs = read_annotation_lines(root / "annotations.jsonl")
    for seq in seqs:
        seq.validate(vocab)
    space = load_semantic_space(embeddings_path or root / "embeddings.json", vocab, normalize=normalize_embeddings)
    videos = {}
    for seq in seqs:
        feats = read_features(root / "features" / f"{seq.video_id}.f32")
        if feats.shape[0] != seq.num_frames:
            raise ValueError(f"{seq.video_id}: {feats.shape[0]} feature frames but {seq.num_frames} annotated")
        videos[seq.video_id] = Video(seq, feats)
    manifest_path = root / "manifest.json"
    if manifest_path.exists():
        split_ids = json.loads(manifest_path.read_text())["splits"]
        splits = {name: [videos[i] for i in ids] for name, ids in split_ids.items()}
    else:
        splits = {"all": list(videos.values())}
    return Corpus(vocab, space, splits)
