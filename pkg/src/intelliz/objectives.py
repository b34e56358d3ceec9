"""Loss functions and the speaker-conditioned projection discriminator."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .grad import DifferentiableOp, glorot_normal, he_normal, mlp_backward, mlp_forward, register_op


@dataclass(frozen=True)
class LossWeights:
    lambda_kd: float = 0.5
    lambda_cyc: float = 0.5
    lambda_adv: float = 0.1

    def __post_init__(self):
        for name in ("lambda_kd", "lambda_cyc", "lambda_adv"):
            w = getattr(self, name)
            if not (math.isfinite(w) and w >= 0):
                raise ConfigError(f"{name} must be a finite non-negative number")


def _finite(*xs):
    for x in xs:
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("non-finite loss input")


# -- embedding distances ----------------------------------------------------

def l2_distance_forward(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"embedding dims differ: {a.shape} vs {b.shape}")
    diff = a - b
    # scale first so tiny differences do not underflow to a zero distance
    top = float(np.max(np.abs(diff), initial=0.0))
    dist = top * float(np.sqrt(np.sum((diff / top) ** 2))) if top > 0 else 0.0
    return dist, (diff, dist)


def l2_distance_backward(dloss, cache):
    """Gradient w.r.t. (a, b); taken as 0 at a == b."""
    diff, dist = cache
    if dist == 0.0:
        z = np.zeros_like(diff)
        return z, z.copy()
    g = dloss * diff / dist
    return g, -g


def kd_loss(p, v) -> float:
    """||p - v||_2 between a prototype and an encoder output."""
    return l2_distance_forward(p, v)[0]


def cycle_loss(v_in, v_im) -> float:
    """||v_im - v_in||_2 between a reference embedding and its re-encoding."""
    return l2_distance_forward(v_im, v_in)[0]


def mean_pairwise(fn, pairs) -> float:
    """Batch loss: the mean of ``fn(a, b)`` over (a, b) pairs."""
    vals = [fn(a, b) for a, b in pairs]
    if not vals:
        raise ValueError("empty batch")
    return float(np.mean(vals))


# -- adversarial terms ------------------------------------------------------

def disc_loss(real_score, fake_score) -> float:
    """Least-squares discriminator loss (real - 1)^2 + fake^2."""
    _finite(real_score, fake_score)
    return float((real_score - 1.0) ** 2 + fake_score ** 2)


def disc_loss_grad(real_score, fake_score):
    return 2.0 * (real_score - 1.0), 2.0 * fake_score


def adv_loss(fake_score) -> float:
    """Generator counterpart of :func:`disc_loss`: (fake - 1)^2."""
    _finite(fake_score)
    return float((fake_score - 1.0) ** 2)


def adv_loss_grad(fake_score):
    return 2.0 * (fake_score - 1.0)


@dataclass
class LossParts:
    rec: float = 0.0
    kd: float = 0.0
    cyc: float = 0.0
    adv: float = 0.0


def total_generator_loss(parts: LossParts, weights: LossWeights = LossWeights()) -> float:
    """lambda_kd*KD + lambda_cyc*cyc + lambda_adv*adv + rec."""
    _finite(parts.rec, parts.kd, parts.cyc, parts.adv)
    return (weights.lambda_kd * parts.kd + weights.lambda_cyc * parts.cyc
            + weights.lambda_adv * parts.adv + parts.rec)


# -- projection discriminator -----------------------------------------------

@dataclass(frozen=True)
class DiscConfig:
    hidden: tuple[int, ...] = (128, 128)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError("discriminator: need at least one positive hidden width")

    @property
    def n_layers(self) -> int:
        return len(self.hidden)


def init_disc_params(rng, mel_bins: int, spk_dim: int, cfg: DiscConfig = DiscConfig()) -> dict:
    sizes = (mel_bins, *cfg.hidden)
    params = {}
    for i in range(len(sizes) - 1):
        params[f"disc.W{i}"] = he_normal(rng, sizes[i + 1], sizes[i])
        params[f"disc.b{i}"] = np.zeros(sizes[i + 1])
    feat = sizes[-1]
    params["disc.psi_w"] = glorot_normal(rng, 1, feat)[0]
    params["disc.psi_b"] = np.zeros(1)
    params["disc.proj"] = glorot_normal(rng, feat, spk_dim)
    return params


def disc_forward(Y, v, params, cfg: DiscConfig = DiscConfig()):
    """score = psi(phi(Y)) + <proj v, phi(Y)>, phi = frame-wise MLP + time mean.

    Returns ``(score, cache)``.
    """
    Y = np.asarray(Y, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != params["disc.W0"].shape[1]:
        raise ShapeError(f"discriminator expects (T, {params['disc.W0'].shape[1]}) input, got {Y.shape}")
    if v.shape != (params["disc.proj"].shape[1],):
        raise ShapeError(f"discriminator condition has shape {v.shape}")
    n = cfg.n_layers
    H, mcache = mlp_forward(Y, [params[f"disc.W{i}"] for i in range(n)],
                            [params[f"disc.b{i}"] for i in range(n)], relu_last=True)
    f = H.mean(axis=0)
    pv = params["disc.proj"] @ v
    score = float(params["disc.psi_w"] @ f + params["disc.psi_b"][0] + pv @ f)
    return score, (mcache, f, pv, v, H.shape[0], params["disc.psi_w"], params["disc.proj"])


def disc_backward(dscore, cache):
    """Returns ``(dY, dv, grads)``."""
    mcache, f, pv, v, T, psi_w, proj = cache
    df = dscore * (psi_w + pv)
    dpv = dscore * f
    dH = np.broadcast_to(df / T, (T, df.size))
    dY, dWs, dbs = mlp_backward(np.array(dH), mcache)
    grads = {"disc.psi_w": dscore * f, "disc.psi_b": np.array([dscore]), "disc.proj": np.outer(dpv, v)}
    for i, (dW, db) in enumerate(zip(dWs, dbs)):
        grads[f"disc.W{i}"] = dW
        grads[f"disc.b{i}"] = db
    return dY, proj.T @ dpv, grads


# -- registered ops -----------------------------------------------------------

class L2DistanceOp(DifferentiableOp):
    name = "l2_distance"

    def forward(self, inputs):
        d, cache = l2_distance_forward(inputs["a"], inputs["b"])
        return np.array(d), cache

    def backward(self, grad_out, cache):
        da, db = l2_distance_backward(float(grad_out), cache)
        return {"a": da, "b": db}


class DiscriminatorOp(DifferentiableOp):
    name = "projection_discriminator"

    def __init__(self, cfg: DiscConfig):
        self.cfg = cfg

    def forward(self, inputs):
        params = {k: v for k, v in inputs.items() if k not in ("Y", "v")}
        s, cache = disc_forward(inputs["Y"], inputs["v"], params, self.cfg)
        return np.array(s), cache

    def backward(self, grad_out, cache):
        dY, dv, grads = disc_backward(float(grad_out), cache)
        grads["Y"] = dY
        grads["v"] = dv
        return grads


class DiscLossOp(DifferentiableOp):
    name = "disc_loss"

    def forward(self, inputs):
        r, f = float(inputs["real"]), float(inputs["fake"])
        return np.array(disc_loss(r, f)), (r, f)

    def backward(self, grad_out, cache):
        gr, gf = disc_loss_grad(*cache)
        return {"real": np.array(float(grad_out) * gr), "fake": np.array(float(grad_out) * gf)}


class AdvLossOp(DifferentiableOp):
    name = "adv_loss"

    def forward(self, inputs):
        f = float(inputs["fake"])
        return np.array(adv_loss(f)), f

    def backward(self, grad_out, cache):
        return {"fake": np.array(float(grad_out) * adv_loss_grad(cache))}


class TotalLossOp(DifferentiableOp):
    name = "total_generator_loss"

    def __init__(self, weights: LossWeights = LossWeights()):
        self.weights = weights

    def forward(self, inputs):
        parts = LossParts(**{k: float(v) for k, v in inputs.items()})
        return np.array(total_generator_loss(parts, self.weights)), None

    def backward(self, grad_out, cache):
        g = float(grad_out)
        w = self.weights
        return {"rec": np.array(g), "kd": np.array(g * w.lambda_kd), "cyc": np.array(g * w.lambda_cyc),
                "adv": np.array(g * w.lambda_adv)}


@register_op("l2_distance")
def _l2_case(rng):
    return L2DistanceOp(), {"a": rng.standard_normal(8), "b": rng.standard_normal(8)}


@register_op("projection_discriminator")
def _disc_case(rng):
    cfg = DiscConfig(hidden=(9, 7))
    inputs = {"Y": rng.standard_normal((6, 5)), "v": rng.standard_normal(4)}
    params = init_disc_params(rng, 5, 4, cfg)
    params["disc.b0"] = 0.1 * rng.standard_normal(9)
    params["disc.b1"] = 0.1 * rng.standard_normal(7)
    params["disc.psi_b"] = rng.standard_normal(1)
    inputs.update(params)
    return DiscriminatorOp(cfg), inputs


@register_op("disc_loss")
def _disc_loss_case(rng):
    return DiscLossOp(), {"real": np.array(rng.standard_normal()), "fake": np.array(rng.standard_normal())}


@register_op("adv_loss")
def _adv_loss_case(rng):
    return AdvLossOp(), {"fake": np.array(rng.standard_normal())}


@register_op("total_generator_loss")
def _total_case(rng):
    return TotalLossOp(), {k: np.array(rng.uniform(0, 3)) for k in ("rec", "kd", "cyc", "adv")}
