"""Training loop, evaluation and checkpoints for the COR Network."""
from __future__ import annotations

import base64
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .annotations import ClassVocabulary, cooccurrence_counts, to_dense_targets
from .corm import CormConfig
from .losses import EvalReport, bce_loss, cooc_mse_loss, per_frame_map, total_loss
from .numcore import OptimizerState, ShapeError
from .seqmodel import EncoderConfig, cor_network_forward, init_network_params, network_param_shapes
from .synth import Corpus, Video

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_HEADER = "epoch,bce,mse,total,val_map"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    data: str | None = None
    embeddings: str | None = None
    encoder: dict = field(default_factory=lambda: {"d0": 64, "layers": 3, "kernel": 9})
    corm: dict = field(default_factory=lambda: {"dv": 32, "d_k": 16, "vcor_fn": "M1", "scor_fn": "M2"})
    lr: float = 5e-4
    epochs: int = 30
    batch_size: int = 1
    a: float = 1e-3
    crop: int = 256
    seed: int = 0
    scor_once: bool = False
    normalize_cooc: bool = False
    normalize_embeddings: bool = False
    freeze: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "freeze", tuple(self.freeze))
        for name in ("epochs", "batch_size", "crop"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr < 0 or self.a < 0:
            raise ConfigError("lr and a must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> RunConfig:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["freeze"] = list(self.freeze)
        return d

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("data")
        d.pop("embeddings")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def build(self, d_in: int, n_classes: int, d_e: int) -> tuple[EncoderConfig, CormConfig]:
        try:
            enc = EncoderConfig(d_in=d_in, **self.encoder)
            corm = CormConfig(d0=enc.d0, n_classes=n_classes, d_e=d_e, scor_once=self.scor_once, **self.corm)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        return enc, corm


# ---------------------------------------------------------------------------
# windows


@dataclass(frozen=True)
class Window:
    features: np.ndarray  # crop x D_in, zero-padded
    targets: np.ndarray  # crop x N, zero on padding
    mask: np.ndarray  # crop, 1 on real frames


def make_window(video: Video, vocab: ClassVocabulary, crop: int, offset: int = 0) -> Window:
    """Cut ``crop`` frames starting at ``offset``; pad short videos with masked zeros."""
    y = to_dense_targets(video.annotation, vocab)
    x = video.features
    t = x.shape[0]
    if t >= crop:
        sl = slice(offset, offset + crop)
        return Window(x[sl], y[sl], np.ones(crop))
    pad = crop - t
    return Window(np.pad(x, ((0, pad), (0, 0))), np.pad(y, ((0, pad), (0, 0))),
                  np.concatenate([np.ones(t), np.zeros(pad)]))


def window_loss(params, window: Window, semantic, enc: EncoderConfig, corm: CormConfig,
                a: float, normalize_cooc: bool = False):
    """Loss breakdown for one window; ``params`` may hold tensors or arrays."""
    probs, r = cor_network_forward(window.features, semantic, params, enc, corm, mode="train",
                                   mask=window.mask)
    r_star = cooccurrence_counts(window.targets * window.mask[:, None])
    if normalize_cooc:
        frames = float(window.mask.sum())
        r, r_star = r / frames, r_star / frames
    return total_loss(bce_loss(probs, window.targets, mask=window.mask), cooc_mse_loss(r, r_star), a)


# ---------------------------------------------------------------------------
# evaluation


def predict_video(params, features, enc: EncoderConfig) -> np.ndarray:
    probs, _ = cor_network_forward(features, None, params, enc, None, mode="infer")
    return probs.data


def evaluate(params, videos: Sequence[Video], enc: EncoderConfig, labels: Sequence[str],
             seed: int | None = None, config_digest: str | None = None) -> EvalReport:
    """Per-frame mAP of the prediction branch, frames pooled in video order."""
    vocab = ClassVocabulary(tuple(labels))
    probs = [predict_video(params, v.features, enc) for v in videos]
    targets = [to_dense_targets(v.annotation, vocab) for v in videos]
    return per_frame_map(np.concatenate(probs), np.concatenate(targets), labels,
                         seed=seed, config_digest=config_digest)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    optimizer: OptimizerState
    history: list[dict]
    best_epoch: int | None
    best_checkpoint: Path | None = None


def _check_dimensions(corpus: Corpus, enc: EncoderConfig, corm: CormConfig) -> None:
    for video in corpus.videos():
        if video.features.shape[1] != enc.d_in:
            raise ShapeError(f"{video.video_id}: feature width {video.features.shape[1]} != {enc.d_in}")
        video.annotation.validate(corpus.vocab)
    if corpus.space.matrix.shape != (corm.n_classes, corm.d_e):
        raise ShapeError(f"embeddings {corpus.space.matrix.shape} do not match "
                         f"{corm.n_classes} classes x {corm.d_e}")


def train(config: RunConfig, corpus: Corpus, out_dir=None,
          params: dict[str, np.ndarray] | None = None) -> TrainResult:
    """Train on ``corpus.train``; validate on ``corpus.val`` after each epoch.

    With ``out_dir`` set, writes ``log.csv``, ``train.log`` and one
    checkpoint per epoch.
    """
    if not corpus.train:
        raise ConfigError("corpus has no training videos")
    enc, corm = config.build(corpus.train[0].features.shape[1], len(corpus.vocab), corpus.space.dim)
    _check_dimensions(corpus, enc, corm)
    if params is None:
        params = init_network_params(enc, corm, config.seed)
    unknown = set(config.freeze) - set(params)
    if unknown:
        raise ConfigError(f"cannot freeze unknown parameters {sorted(unknown)}")
    trainable = [k for k in params if k not in config.freeze]
    state = OptimizerState.for_params({k: params[k] for k in trainable}, lr=config.lr)
    semantic = corpus.space.matrix

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        (out / "log.csv").write_text(LOG_HEADER + "\n")
        (out / "train.log").write_text(f"config {config.digest()}\n")

    def note(msg: str) -> None:
        log.info(msg)
        if out is not None:
            with open(out / "train.log", "a") as fh:
                fh.write(msg + "\n")

    rng = np.random.default_rng([config.seed, 2])
    history = []
    best_epoch, best_map, best_path = None, -np.inf, None
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(corpus.train))
        sums = np.zeros(3)
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            accum = {k: np.zeros_like(params[k]) for k in trainable}
            for idx in batch:
                video = corpus.train[idx]
                t = video.features.shape[0]
                offset = int(rng.integers(0, t - config.crop + 1)) if t > config.crop else 0
                window = make_window(video, corpus.vocab, config.crop, offset)
                rec = nc.ComputationRecord()
                leaves = {k: (rec.leaf(k, v) if k not in config.freeze else v) for k, v in params.items()}
                losses = window_loss(leaves, window, semantic, enc, corm, config.a, config.normalize_cooc)
                grads = nc.backward(rec, losses.total)
                for k in trainable:
                    accum[k] += grads[k].data
                sums += losses.values()
            grads = {k: g / len(batch) for k, g in accum.items()}
            new, state = nc.optimizer_step({k: params[k] for k in trainable}, grads, state)
            params = {**params, **new}
        bce, mse, total = (float(v) for v in sums / len(corpus.train))
        val_map = (evaluate(params, corpus.val, enc, corpus.vocab.labels).map
                   if corpus.val else float("nan"))
        history.append({"epoch": epoch, "bce": bce, "mse": mse, "total": total, "val_map": val_map})
        note(f"epoch {epoch} bce={bce:.6f} mse={mse:.6f} total={total:.6f} val_map={val_map:.6f}")
        if val_map > best_map:
            best_epoch, best_map = epoch, val_map
        if out is not None:
            with open(out / "log.csv", "a") as fh:
                fh.write(f"{epoch},{bce!r},{mse!r},{total!r},{val_map!r}\n")
            path = out / "checkpoints" / f"epoch_{epoch:03d}.json"
            save_checkpoint(path, params, state, config, enc, corm, corpus.vocab.labels, epoch)
            if best_epoch == epoch:
                best_path = path
    if best_path is not None:
        note(f"best checkpoint: {best_path.name} (val_map={best_map!r})")
    return TrainResult(params, state, history, best_epoch, best_path)


# ---------------------------------------------------------------------------
# checkpoints


def _encode_array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    raw = np.frombuffer(base64.b64decode(d["data"]), dtype="<f8")
    return raw.reshape(d["shape"]).astype(np.float64)


def save_checkpoint(path, params, state: OptimizerState, config: RunConfig, enc: EncoderConfig,
                    corm: CormConfig, labels: Sequence[str], epoch: int) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "config_digest": config.digest(),
        "config": config.to_dict(),
        "encoder": enc.to_dict(),
        "corm": corm.to_dict(),
        "labels": list(labels),
        "epoch": epoch,
        "params": {k: _encode_array(v) for k, v in params.items()},
        "optimizer": {
            "lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps, "step": state.step,
            "m": {k: _encode_array(v) for k, v in state.m.items()},
            "v": {k: _encode_array(v) for k, v in state.v.items()},
        },
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


@dataclass
class Checkpoint:
    version: int
    config: RunConfig
    config_digest: str
    encoder: EncoderConfig
    corm: CormConfig
    labels: list[str]
    epoch: int
    params: dict[str, np.ndarray]
    optimizer: OptimizerState


def load_checkpoint(path) -> Checkpoint:
    d = json.loads(Path(path).read_text())
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {d.get('version')}")
    opt = d["optimizer"]
    state = OptimizerState(opt["lr"], opt["beta1"], opt["beta2"], opt["eps"], opt["step"],
                           {k: _decode_array(v) for k, v in opt["m"].items()},
                           {k: _decode_array(v) for k, v in opt["v"].items()})
    enc = EncoderConfig(**d["encoder"])
    corm = CormConfig(**d["corm"])
    params = {k: _decode_array(v) for k, v in d["params"].items()}
    expected = network_param_shapes(enc, corm)
    for name, shape in expected.items():
        if name not in params:
            raise ShapeError(f"{path}: checkpoint lacks tensor {name}")
        if params[name].shape != tuple(shape):
            raise ShapeError(f"{path}: tensor {name} has shape {params[name].shape}, expected {tuple(shape)}")
    return Checkpoint(d["version"], RunConfig.from_dict(d["config"]), d["config_digest"], enc, corm,
                      d["labels"], d["epoch"], params, state)


def replace_corm_params(params: dict[str, np.ndarray], fill: float) -> dict[str, np.ndarray]:
    """Copy of ``params`` with every CORM tensor filled with ``fill``."""
    return {k: (np.full_like(v, fill) if k.startswith("corm.") else v) for k, v in params.items()}
