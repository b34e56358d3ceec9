"""Voicing-masked multi-head self-attention pooling.

Frame features are stored frames-as-rows, ``S`` with shape (T, d). For each
head, keys at unvoiced frames are excluded from the softmax so their
attention weight is exactly zero; the per-frame attention outputs are then
averaged over time into one d-dimensional embedding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NoVoicedFramesError, ShapeError, StaleCacheError
from .grad import (DifferentiableOp, ParamSet, glorot_normal, masked_softmax, register_op,
                   softmax_backward)

POOL_KEYS = ("pool.WQ", "pool.WK", "pool.WV")


@dataclass(frozen=True)
class PoolConfig:
    heads: int = 4
    # "head": scores / sqrt(d / heads); "model": scores / sqrt(d)
    scale: str = "head"
    # "all": average over all T query rows; "voiced": only over voiced rows
    average: str = "all"

    def __post_init__(self):
        if self.heads < 1:
            raise ConfigError("pool: heads must be >= 1")
        if self.scale not in ("head", "model"):
            raise ConfigError(f"pool: unknown scale {self.scale!r}")
        if self.average not in ("all", "voiced"):
            raise ConfigError(f"pool: unknown average {self.average!r}")


def init_pool_params(rng: np.random.Generator, d: int) -> dict[str, np.ndarray]:
    return {key: glorot_normal(rng, d, d) for key in POOL_KEYS}


@dataclass
class PoolCache:
    S: np.ndarray
    Qh: np.ndarray
    Kh: np.ndarray
    Vh: np.ndarray
    A: np.ndarray
    row_weights: np.ndarray
    W: tuple
    scale: float
    params: object = None
    version: int = 0


def _split(X, h):
    T, d = X.shape
    return X.reshape(T, h, d // h).transpose(1, 0, 2)


def _merge(Xh):
    h, T, dh = Xh.shape
    return Xh.transpose(1, 0, 2).reshape(T, h * dh)


def pool_forward(S, mask, WQ, WK, WV, cfg: PoolConfig = PoolConfig()):
    """Pool a (T, d) feature sequence into a length-d embedding.

    Returns ``(v, cache)``. Raises :class:`NoVoicedFramesError` when every
    mask bit is 0.
    """
    S = np.asarray(S, dtype=np.float64)
    T, d = S.shape
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if mask.size != T:
        raise ShapeError(f"mask length {mask.size} != frame count {T}")
    if d % cfg.heads:
        raise ShapeError(f"feature dim {d} not divisible by {cfg.heads} heads")
    if not mask.any():
        raise NoVoicedFramesError()
    h = cfg.heads
    scale = math.sqrt(d // h) if cfg.scale == "head" else math.sqrt(d)
    Qh, Kh, Vh = (_split(S @ W.T, h) for W in (WQ, WK, WV))
    A = masked_softmax(Qh @ Kh.transpose(0, 2, 1) / scale, mask[None, None, :])
    O = _merge(A @ Vh)
    if cfg.average == "all":
        r = np.full(T, 1.0 / T)
    else:
        r = mask / mask.sum()
    return r @ O, PoolCache(S, Qh, Kh, Vh, A, r, (WQ, WK, WV), scale)


def pool_backward_arrays(dv, cache: PoolCache):
    """Returns (dS, dWQ, dWK, dWV)."""
    dO = np.outer(cache.row_weights, dv)
    h = cache.Qh.shape[0]
    dOh = _split(dO, h)
    dA = dOh @ cache.Vh.transpose(0, 2, 1)
    dVh = cache.A.transpose(0, 2, 1) @ dOh
    dSc = softmax_backward(dA, cache.A) / cache.scale
    dQ = _merge(dSc @ cache.Kh)
    dK = _merge(dSc.transpose(0, 2, 1) @ cache.Qh)
    dV = _merge(dVh)
    WQ, WK, WV = cache.W
    S = cache.S
    dS = dQ @ WQ + dK @ WK + dV @ WV
    return dS, dQ.T @ S, dK.T @ S, dV.T @ S


def pool(S, mask, params, cfg: PoolConfig = PoolConfig()):
    """Pool with weights taken from ``params['pool.W*']``."""
    v, cache = pool_forward(S, mask, *(params[k] for k in POOL_KEYS), cfg)
    cache.params = params
    cache.version = getattr(params, "version", 0)
    return v, cache


def pool_backward(dv, cache: PoolCache):
    """Returns ``(dS, grads)`` with grads keyed like the pooling params.

    Raises :class:`StaleCacheError` if the parameter set was updated after
    the forward pass that produced ``cache``.
    """
    if isinstance(cache.params, ParamSet) and cache.params.version != cache.version:
        raise StaleCacheError("pooling parameters changed since the forward pass")
    dS, dWQ, dWK, dWV = pool_backward_arrays(np.asarray(dv, dtype=np.float64), cache)
    return dS, dict(zip(POOL_KEYS, (dWQ, dWK, dWV)))


def attention_weights(cache: PoolCache) -> np.ndarray:
    """(heads, T, T) attention matrix from a forward cache."""
    return cache.A


class AttentionPoolOp(DifferentiableOp):
    name = "attention_pool"

    def __init__(self, mask, cfg: PoolConfig = PoolConfig()):
        self.mask = np.asarray(mask, dtype=bool)
        self.cfg = cfg

    def forward(self, inputs):
        return pool_forward(inputs["s"], self.mask, inputs["WQ"], inputs["WK"], inputs["WV"], self.cfg)

    def backward(self, grad_out, cache):
        dS, dWQ, dWK, dWV = pool_backward_arrays(grad_out, cache)
        return {"s": dS, "WQ": dWQ, "WK": dWK, "WV": dWV}


def _pool_case(rng, cfg):
    d, T = 8, 6
    mask = np.array([1, 0, 1, 1, 0, 1])
    inputs = {"s": rng.standard_normal((T, d))}
    inputs.update({k.split(".")[1]: v for k, v in init_pool_params(rng, d).items()})
    return AttentionPoolOp(mask, cfg), inputs


@register_op("attention_pool")
def _pool_literal_case(rng):
    return _pool_case(rng, PoolConfig(heads=2))


@register_op("attention_pool_voiced_average")
def _pool_voiced_case(rng):
    return _pool_case(rng, PoolConfig(heads=2, average="voiced"))


@register_op("attention_pool_model_scale")
def _pool_model_scale_case(rng):
    return _pool_case(rng, PoolConfig(heads=2, scale="model"))
