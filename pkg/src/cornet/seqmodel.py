"""Temporal-convolution encoder, per-frame prediction head, and the COR Network.

The encoder stands in for a host sequence model: ``L`` layers of
same-length 1-D convolution followed by a rectifier. The head is an affine
map plus sigmoid per frame. In training mode the encoder output is also
fed to the CORM; in inference mode only the head runs.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import numcore as nc
from .corm import CormConfig, corm_forward, corm_param_shapes, init_corm_params
from .numcore import ShapeError, Tensor


@dataclass(frozen=True)
class EncoderConfig:
    d_in: int
    d0: int = 64
    layers: int = 3
    kernel: int = 9

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError(f"encoder needs at least one layer, got {self.layers}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"encoder kernel size must be odd and positive, got {self.kernel}")
        if self.d_in < 1 or self.d0 < 1:
            raise ValueError("encoder widths must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def network_param_shapes(enc: EncoderConfig, corm: CormConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    width = enc.d_in
    for layer in range(enc.layers):
        shapes[f"encoder.{layer}.weight"] = (enc.kernel, width, enc.d0)
        shapes[f"encoder.{layer}.bias"] = (enc.d0,)
        width = enc.d0
    shapes["head.weight"] = (enc.d0, corm.n_classes)
    shapes["head.bias"] = (corm.n_classes,)
    shapes.update(corm_param_shapes(corm))
    return shapes


def init_network_params(enc: EncoderConfig, corm: CormConfig, seed: int) -> dict[str, np.ndarray]:
    """Seeded initial parameters for the whole network.

    CORM values come from a generator derived from ``seed``, so the
    encoder/head values depend only on ``seed`` and their own shapes; two
    networks differing only in CORM settings start from the same host.
    """
    if corm.d0 != enc.d0:
        raise ShapeError(f"CORM expects D0={corm.d0} but encoder produces {enc.d0}")
    rng = np.random.default_rng(seed)
    params = {}
    for layer in range(enc.layers):
        width = enc.d_in if layer == 0 else enc.d0
        bound = 1.0 / math.sqrt(enc.kernel * width)
        params[f"encoder.{layer}.weight"] = rng.uniform(-bound, bound, (enc.kernel, width, enc.d0))
        params[f"encoder.{layer}.bias"] = np.zeros(enc.d0)
    bound = 1.0 / math.sqrt(enc.d0)
    params["head.weight"] = rng.uniform(-bound, bound, (enc.d0, corm.n_classes))
    params["head.bias"] = np.zeros(corm.n_classes)
    corm_rng = np.random.default_rng([seed, 1])
    params.update(init_corm_params(corm, corm_rng))
    return params


def encode(features, params, enc: EncoderConfig) -> Tensor:
    """T x D_in -> T x D0."""
    x = nc.as_tensor(features)
    if x.ndim != 2 or x.shape[1] != enc.d_in:
        raise ShapeError(f"encoder expects T x {enc.d_in} features, got {x.shape}")
    for layer in range(enc.layers):
        x = nc.relu(nc.conv1d(x, params[f"encoder.{layer}.weight"], params[f"encoder.{layer}.bias"]))
    return x


def predict(x0, params) -> Tensor:
    """Per-frame class probabilities, T x N."""
    x0, weight = nc.as_tensor(x0), nc.as_tensor(params["head.weight"])
    if x0.ndim != 2 or x0.shape[1] != weight.shape[0]:
        raise ShapeError(f"head expects T x {weight.shape[0]} input, got {x0.shape}")
    return nc.sigmoid(nc.affine(x0, weight, params["head.bias"]))


def cor_network_forward(features, semantic, params, enc: EncoderConfig, corm: CormConfig | None,
                        mode: str = "train", mask=None) -> tuple[Tensor, Tensor | None]:
    """Run the network; returns ``(probabilities, R)`` with ``R`` None in infer mode.

    Inference reads only encoder and head parameters, so ``semantic`` and the
    CORM entries of ``params`` may be absent or arbitrary there.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x0 = encode(features, params, enc)
    probs = predict(x0, params)
    if mode == "infer":
        return probs, None
    return probs, corm_forward(x0, semantic, params, corm, mask=mask)
