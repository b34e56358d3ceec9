"""Speaker encoder: frame-wise MLP followed by masked attention pooling.

The MLP never mixes frames, so the only cross-frame interaction is inside
the pooling step. This is a deliberately small stand-in network.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import PoolConfig, init_pool_params, pool, pool_backward
from .dsp import AperiodicityMask, MelSpectrogram
from .errors import ConfigError, ShapeError, StaleCacheError
from .grad import (DifferentiableOp, ParamSet, he_normal, min_preactivation, mlp_backward, mlp_forward,
                   register_op)


@dataclass(frozen=True)
class EncoderConfig:
    hidden: tuple[int, ...] = (128, 128)
    dim: int = 64
    pool: PoolConfig = field(default_factory=PoolConfig)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.dim < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError("encoder: layer sizes must be positive")
        if self.dim % self.pool.heads:
            raise ConfigError(f"encoder: dim {self.dim} not divisible by {self.pool.heads} heads")

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1


def init_encoder_params(rng: np.random.Generator, mel_bins: int, cfg: EncoderConfig) -> dict:
    sizes = (mel_bins, *cfg.hidden, cfg.dim)
    params = {}
    for i in range(len(sizes) - 1):
        params[f"enc.W{i}"] = he_normal(rng, sizes[i + 1], sizes[i])
        params[f"enc.b{i}"] = np.zeros(sizes[i + 1])
    params.update(init_pool_params(rng, cfg.dim))
    return params


def _as_bits(mask, T):
    if mask is None:
        return np.ones(T, dtype=bool)
    bits = mask.bits if isinstance(mask, AperiodicityMask) else np.asarray(mask)
    return bits.astype(bool)


@dataclass
class EncoderCache:
    mlp: list
    pool: object
    params: object
    version: int


def encode(Y, mask, params, cfg: EncoderConfig = EncoderConfig()):
    """v = E_s(Y). ``Y`` is a MelSpectrogram or a (T, M) array.

    ``mask=None`` pools over every frame. Returns ``(v, cache)``.
    """
    frames = Y.frames if isinstance(Y, MelSpectrogram) else np.asarray(Y, dtype=np.float64)
    if frames.ndim != 2:
        raise ShapeError("encoder input must be (T, M)")
    if frames.shape[1] != params["enc.W0"].shape[1]:
        raise ShapeError(f"encoder expects {params['enc.W0'].shape[1]} mel bins, got {frames.shape[1]}")
    bits = _as_bits(mask, frames.shape[0])
    Ws = [params[f"enc.W{i}"] for i in range(cfg.n_layers)]
    bs = [params[f"enc.b{i}"] for i in range(cfg.n_layers)]
    S, mlp_cache = mlp_forward(frames, Ws, bs)
    v, pcache = pool(S, bits, params, cfg.pool)
    return v, EncoderCache(mlp_cache, pcache, params, getattr(params, "version", 0))


def encode_backward(dv, cache: EncoderCache):
    """Returns ``(dY, grads)``; grads covers every ``enc.*`` and ``pool.*`` key."""
    if isinstance(cache.params, ParamSet) and cache.params.version != cache.version:
        raise StaleCacheError("encoder parameters changed since the forward pass")
    dS, grads = pool_backward(dv, cache.pool)
    dY, dWs, dbs = mlp_backward(dS, cache.mlp)
    for i, (dW, db) in enumerate(zip(dWs, dbs)):
        grads[f"enc.W{i}"] = dW
        grads[f"enc.b{i}"] = db
    return dY, grads


class EncoderOp(DifferentiableOp):
    name = "speaker_encoder"

    def __init__(self, mask, cfg: EncoderConfig):
        self.mask = np.asarray(mask, dtype=bool)
        self.cfg = cfg

    def forward(self, inputs):
        params = {k: v for k, v in inputs.items() if k != "Y"}
        return encode(inputs["Y"], self.mask, params, self.cfg)

    def backward(self, grad_out, cache):
        dY, grads = encode_backward(grad_out, cache)
        grads["Y"] = dY
        return grads


@register_op("speaker_encoder")
def _encoder_case(rng):
    cfg = EncoderConfig(hidden=(12, 10), dim=8, pool=PoolConfig(heads=2))
    T, M = 7, 10
    inputs = {"Y": rng.standard_normal((T, M))}
    inputs.update(init_encoder_params(rng, M, cfg))
    for i in range(cfg.n_layers):
        inputs[f"enc.b{i}"] = 0.1 * rng.standard_normal(inputs[f"enc.b{i}"].shape)
    return EncoderOp([1, 1, 0, 1, 0, 0, 1], cfg), inputs


@register_op("speaker_encoder_full_width")
def _encoder_wide_case(rng):
    cfg = EncoderConfig(hidden=(128, 128), dim=16, pool=PoolConfig(heads=4))
    T, M = 12, 100
    mask = (rng.random(T) < 0.6).astype(int)
    mask[0] = 1
    inputs = dict(init_encoder_params(rng, M, cfg))
    Ws = [inputs[f"enc.W{i}"] for i in range(cfg.n_layers)]
    bs = [inputs[f"enc.b{i}"] for i in range(cfg.n_layers)]
    # 256 hidden units per frame make a near-kink unit likely; redraw Y
    for _ in range(100):
        inputs["Y"] = rng.standard_normal((T, M))
        if min_preactivation(inputs["Y"], Ws, bs) > 1e-3:
            break
    return EncoderOp(mask, cfg), inputs
