"""Co-occurrence relation module (CORM).

Two branches predict an N x N co-occurrence matrix:

* the visual branch projects encoder features ``X0`` (T x D0) to T x Dv,
  expands them to one feature per class (T x N x Dv) with a per-class
  scale and offset, and correlates the classes at every frame;
* the semantic branch correlates the fixed label embeddings once.

The two are fused as ``alpha * sum_t Rv_t + T * beta * Rs``.

Parameters are kept in a flat ``{name: array}`` dict, see
:func:`init_corm_params` for the names.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import numcore as nc
from .numcore import ShapeError, Tensor

CORRELATIONS = ("M1", "M2")


@dataclass(frozen=True)
class CormConfig:
    d0: int
    n_classes: int
    d_e: int
    dv: int = 32
    d_k: int = 16
    vcor_fn: str = "M1"
    scor_fn: str = "M2"
    alpha_init: float = 0.5
    beta_init: float = 0.5
    scor_once: bool = False

    def __post_init__(self):
        for name in ("d0", "n_classes", "d_e", "dv", "d_k"):
            if getattr(self, name) < 1:
                raise ValueError(f"CormConfig.{name} must be >= 1, got {getattr(self, name)}")
        for name in ("vcor_fn", "scor_fn"):
            if getattr(self, name) not in CORRELATIONS:
                raise ValueError(f"CormConfig.{name} must be one of {CORRELATIONS}, got {getattr(self, name)!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def _branch_shapes(fn: str, width: int, d_k: int, prefix: str) -> dict[str, tuple[int, ...]]:
    if fn == "M1":
        return {f"{prefix}.phi.weight": (width, 1), f"{prefix}.phi.bias": (1,),
                f"{prefix}.psi.weight": (width, 1), f"{prefix}.psi.bias": (1,)}
    return {f"{prefix}.h_q": (width, d_k), f"{prefix}.h_k": (width, d_k)}


def corm_param_shapes(config: CormConfig) -> dict[str, tuple[int, ...]]:
    shapes = {
        "corm.f.weight": (config.d0, config.dv),
        "corm.f.bias": (config.dv,),
        "corm.g.weight": (config.n_classes,),
        "corm.g.bias": (config.n_classes,),
    }
    shapes.update(_branch_shapes(config.vcor_fn, config.dv, config.d_k, "corm.vcor"))
    shapes.update(_branch_shapes(config.scor_fn, config.d_e, config.d_k, "corm.scor"))
    shapes["corm.alpha"] = ()
    shapes["corm.beta"] = ()
    return shapes


def param_count(config: CormConfig) -> int:
    return sum(math.prod(s) for s in corm_param_shapes(config).values())


def init_corm_params(config: CormConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases.

    The per-class scale ``g`` has fan-in 1. ``alpha``/``beta`` start at the
    configured values.
    """
    params = {}
    for name, shape in corm_param_shapes(config).items():
        if name == "corm.alpha":
            params[name] = np.array(config.alpha_init)
        elif name == "corm.beta":
            params[name] = np.array(config.beta_init)
        elif name == "corm.g.weight":
            params[name] = rng.uniform(-1.0, 1.0, size=shape)
        elif name.endswith("bias"):
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


# ---------------------------------------------------------------------------
# building blocks


def preprocess(x0, weight, bias) -> Tensor:
    """Per-frame affine reduction T x D0 -> T x Dv."""
    x0, weight = nc.as_tensor(x0), nc.as_tensor(weight)
    if x0.ndim != 2 or x0.shape[1] != weight.shape[0]:
        raise ShapeError(f"preprocess: input {x0.shape} does not match weight {weight.shape}")
    return nc.affine(x0, weight, bias)


def class_features(x, weight, bias) -> Tensor:
    """Expand T x Dv to T x N x Dv via ``w_n * x + b_n`` per class n."""
    x, weight, bias = nc.as_tensor(x), nc.as_tensor(weight), nc.as_tensor(bias)
    if x.ndim != 2:
        raise ShapeError(f"class_features: expected T x Dv input, got {x.shape}")
    if weight.shape != bias.shape or weight.ndim != 1:
        raise ShapeError(f"class_features: weight {weight.shape} and bias {bias.shape} must be (N,)")
    n = weight.shape[0]
    t, dv = x.shape
    xu = nc.reshape(x, (t, 1, dv))
    return xu * nc.reshape(weight, (1, n, 1)) + nc.reshape(bias, (1, n, 1))


def correlate_m1(features, phi_w, phi_b, psi_w, psi_b) -> Tensor:
    """``sigmoid(phi(F_i) - psi(F_j))`` for every class pair.

    ``features`` is (..., N, D); the result is (..., N, N).
    """
    features = nc.as_tensor(features)
    if features.shape[-1] != nc.as_tensor(phi_w).shape[0] or features.shape[-1] != nc.as_tensor(psi_w).shape[0]:
        raise ShapeError(f"M1: feature width {features.shape[-1]} does not match projections "
                         f"{nc.as_tensor(phi_w).shape} / {nc.as_tensor(psi_w).shape}")
    p = nc.affine(features, phi_w, phi_b)  # (..., N, 1)
    q = nc.transpose(nc.affine(features, psi_w, psi_b))  # (..., 1, N)
    return nc.sigmoid(p - q)


def correlate_m2(features, h_q, h_k) -> Tensor:
    """Scaled dot-product attention map ``softmax(Q K^T / sqrt(d_k))``."""
    features, h_q, h_k = nc.as_tensor(features), nc.as_tensor(h_q), nc.as_tensor(h_k)
    if features.shape[-1] != h_q.shape[0] or features.shape[-1] != h_k.shape[0]:
        raise ShapeError(f"M2: feature width {features.shape[-1]} does not match projections "
                         f"{h_q.shape} / {h_k.shape}")
    if h_q.shape != h_k.shape:
        raise ShapeError(f"M2: query {h_q.shape} and key {h_k.shape} projections differ")
    d_k = h_q.shape[1]
    q = features @ h_q
    k = features @ h_k
    return nc.softmax((q @ nc.transpose(k)) / math.sqrt(d_k))


def fuse_and_sum(rv, rs, alpha, beta, mask=None, scor_once: bool = False) -> Tensor:
    """Fuse per-frame visual matrices (T x N x N) with the semantic one (N x N).

    ``mask`` (length T, 0/1) drops padded frames from the temporal sum; the
    semantic term is counted once per valid frame unless ``scor_once``.
    """
    rv, rs = nc.as_tensor(rv), nc.as_tensor(rs)
    if rv.ndim != 3 or rv.shape[1:] != rs.shape or rs.shape[0] != rs.shape[1]:
        raise ShapeError(f"fuse_and_sum: visual {rv.shape} and semantic {rs.shape} are not T x N x N / N x N")
    if rv.shape[0] < 1:
        raise ShapeError("fuse_and_sum: need at least one frame")
    if mask is None:
        frames = rv.shape[0]
    else:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != (rv.shape[0],):
            raise ShapeError(f"fuse_and_sum: mask {mask.shape} does not match {rv.shape[0]} frames")
        rv = rv * mask.reshape(-1, 1, 1)
        frames = float(mask.sum())
    visual = nc.tsum(rv, axis=0)
    semantic = rs if scor_once else rs * float(frames)
    return alpha * visual + beta * semantic


def _correlate(fn: str, features, params, prefix: str) -> Tensor:
    if fn == "M1":
        return correlate_m1(features, params[f"{prefix}.phi.weight"], params[f"{prefix}.phi.bias"],
                            params[f"{prefix}.psi.weight"], params[f"{prefix}.psi.bias"])
    return correlate_m2(features, params[f"{prefix}.h_q"], params[f"{prefix}.h_k"])


def vcor_branch(x0, params, config: CormConfig) -> Tensor:
    """Per-frame visual co-occurrence matrices, T x N x N."""
    x = preprocess(x0, params["corm.f.weight"], params["corm.f.bias"])
    cls = class_features(x, params["corm.g.weight"], params["corm.g.bias"])
    return _correlate(config.vcor_fn, cls, params, "corm.vcor")


def scor_branch(semantic, params, config: CormConfig) -> Tensor:
    return _correlate(config.scor_fn, semantic, params, "corm.scor")


def corm_forward(x0, semantic, params, config: CormConfig, mask=None) -> Tensor:
    """Predicted N x N co-occurrence matrix for one sequence.

    ``semantic`` is the N x D_e embedding matrix (array or SemanticSpace).
    """
    semantic = getattr(semantic, "matrix", semantic)
    try:
        rv = vcor_branch(x0, params, config)
    except ShapeError as exc:
        raise ShapeError(f"VCOR branch: {exc}") from None
    try:
        rs = scor_branch(semantic, params, config)
    except ShapeError as exc:
        raise ShapeError(f"SCOR branch: {exc}") from None
    if rv.shape[1:] != rs.shape:
        raise ShapeError(f"VCOR output {rv.shape[1:]} and SCOR output {rs.shape} differ "
                         "(class count of features and embeddings disagree)")
    return fuse_and_sum(rv, rs, params["corm.alpha"], params["corm.beta"], mask, config.scor_once)
