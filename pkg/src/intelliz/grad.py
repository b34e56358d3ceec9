"""Dense float64 math with hand-written backward passes.

Tensors are plain ``numpy.ndarray`` objects in float64. Every trainable
building block exposes a ``*_forward`` function returning ``(out, cache)``
and a matching ``*_backward`` taking the upstream gradient and the cache.
Ops that are wrapped as :class:`DifferentiableOp` and registered with
:func:`register_op` are picked up automatically by the gradient-check suite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import FrozenParameterError, ShapeError

DTYPE = np.float64


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; the only source of randomness in the package."""
    return np.random.Generator(np.random.PCG64(seed))


def he_normal(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    return rng.standard_normal((n_out, n_in)) * math.sqrt(2.0 / n_in)


def glorot_normal(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    return rng.standard_normal((n_out, n_in)) * math.sqrt(2.0 / (n_in + n_out))


class ParamSet(dict):
    """Mapping of parameter name to float64 array.

    ``version`` is bumped by every optimizer update so forward caches can
    detect that the weights they were computed with are gone. A frozen set
    rejects item assignment and its arrays are read-only.
    """

    def __init__(self, *args, **kwargs):
        super().__init__()
        self.version = 0
        self.frozen = False
        for k, v in dict(*args, **kwargs).items():
            self[k] = v

    def _check_mutable(self):
        if self.frozen:
            raise FrozenParameterError("parameter set is frozen")

    def __setitem__(self, key, value):
        self._check_mutable()
        super().__setitem__(key, np.asarray(value, dtype=DTYPE))

    def __delitem__(self, key):
        self._check_mutable()
        super().__delitem__(key)

    def update(self, *args, **kwargs):
        self._check_mutable()
        for k, v in dict(*args, **kwargs).items():
            self[k] = v

    def pop(self, *args):
        self._check_mutable()
        return super().pop(*args)

    def setdefault(self, key, default=None):
        self._check_mutable()
        return super().setdefault(key, default)

    def clear(self):
        self._check_mutable()
        super().clear()

    def freeze(self) -> "ParamSet":
        for arr in self.values():
            arr.flags.writeable = False
        self.frozen = True
        return self

    def bump(self):
        self._check_mutable()
        self.version += 1

    def copy(self) -> "ParamSet":
        """Deep, mutable copy."""
        out = ParamSet()
        for k, v in self.items():
            out[k] = np.array(v, dtype=DTYPE, copy=True)
        return out

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.items() if k.startswith(prefix)}


# ---------------------------------------------------------------------------
# Functional primitives

def affine_forward(x, W, b):
    """Row-wise affine map ``x @ W.T + b``; x is (N, in), W is (out, in)."""
    return x @ W.T + b, (x, W)


def affine_backward(dout, cache):
    x, W = cache
    return dout @ W, dout.T @ x, dout.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0.0), x


def relu_backward(dout, cache):
    return dout * (cache > 0)


def mlp_forward(x, weights, biases, relu_last=False):
    """Stack of affine layers with ReLU between them (and after the last
    one when ``relu_last``)."""
    caches = []
    h = x
    n = len(weights)
    for i, (W, b) in enumerate(zip(weights, biases)):
        h, ca = affine_forward(h, W, b)
        cr = None
        if i < n - 1 or relu_last:
            h, cr = relu_forward(h)
        caches.append((ca, cr))
    return h, caches


def mlp_backward(dout, caches):
    """Returns (dx, [dW...], [db...])."""
    dWs, dbs = [], []
    d = dout
    for ca, cr in reversed(caches):
        if cr is not None:
            d = relu_backward(d, cr)
        d, dW, db = affine_backward(d, ca)
        dWs.append(dW)
        dbs.append(db)
    return d, dWs[::-1], dbs[::-1]


def min_preactivation(x, weights, biases) -> float:
    """Smallest |pre-activation| over the hidden layers of an MLP.

    Grad-check fixtures use it to stay clear of ReLU kinks, where central
    differences straddle the corner and disagree with the one-sided
    analytic gradient.
    """
    h = np.asarray(x, dtype=DTYPE)
    lowest = np.inf
    for W, b in zip(weights[:-1], biases[:-1]):
        pre = h @ W.T + b
        lowest = min(lowest, float(np.min(np.abs(pre))))
        h = np.maximum(pre, 0.0)
    return lowest


def masked_softmax(scores, mask):
    """Row softmax over the columns where ``mask`` is true.

    Masked columns get the most negative finite score, and their weights are
    then zeroed and the rows renormalized, so masked weights are exactly 0.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("masked_softmax needs at least one unmasked column")
    z = np.where(mask, scores, np.finfo(DTYPE).min)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    e = np.where(mask, e, 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dA, A):
    return A * (dA - (dA * A).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# Differentiable ops and gradient checking

class DifferentiableOp:
    """Forward/backward pair over a dict of named float64 inputs.

    Non-differentiable arguments (masks, symbol ids, config) live on the
    instance. ``backward`` returns a gradient for every input key.
    """

    name = "op"

    def forward(self, inputs: dict[str, np.ndarray]) -> tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, grad_out, cache) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def __call__(self, inputs):
        return self.forward(inputs)[0]


# name -> factory(rng) -> (op, inputs)
GRADCHECK_REGISTRY: dict[str, Callable[[np.random.Generator], tuple[DifferentiableOp, dict]]] = {}


def register_op(name: str):
    def deco(factory):
        if name in GRADCHECK_REGISTRY:
            raise KeyError(f"op {name!r} registered twice")
        GRADCHECK_REGISTRY[name] = factory
        return factory
    return deco


@dataclass
class GradCheckReport:
    op_name: str
    errors: dict[str, float]
    tol: float
    checked_entries: dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol


def _scaled_error(analytic, numeric):
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
    diff = np.max(np.abs(analytic - numeric), initial=0.0)
    if scale == 0.0:
        return float(diff)
    return float(diff / scale)


def grad_check(op: DifferentiableOp, inputs: dict, epsilon: float = 1e-5, tol: float = 1e-4,
               seed: int = 0, max_entries: int | None = None) -> GradCheckReport:
    """Compare ``op.backward`` against central finite differences.

    The op output is contracted with a fixed random tensor R so every output
    element contributes: f(x) = sum(R * op(x)). For each input the reported
    error is max|analytic - numeric| divided by the largest gradient
    magnitude of that input (0 when both gradients are identically zero).
    ``max_entries`` limits the number of coordinates probed per input; the
    probed coordinates are drawn with ``seed``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    rng = make_rng(seed)
    inputs = {k: np.array(v, dtype=DTYPE, copy=True) for k, v in inputs.items()}
    out, cache = op.forward(inputs)
    out = np.asarray(out, dtype=DTYPE)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"{op.name}: non-finite forward output")
    R = rng.standard_normal(out.shape) if out.shape else np.array(1.0)
    analytic = op.backward(R if out.shape else 1.0, cache)

    def f(inp):
        y = np.asarray(op.forward(inp)[0], dtype=DTYPE)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(f"{op.name}: non-finite forward output")
        return float(np.sum(R * y))

    errors, counts = {}, {}
    for name, x in inputs.items():
        g = np.asarray(analytic[name], dtype=DTYPE)
        if g.shape != x.shape:
            raise ShapeError(f"{op.name}: gradient for {name} has shape {g.shape}, expected {x.shape}")
        idx = np.arange(x.size)
        if max_entries is not None and x.size > max_entries:
            idx = np.sort(rng.choice(x.size, size=max_entries, replace=False))
        numeric = np.empty(len(idx))
        flat = x.reshape(-1)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = f(inputs)
            flat[i] = orig - epsilon
            fm = f(inputs)
            flat[i] = orig
            numeric[j] = (fp - fm) / (2 * epsilon)
        errors[name] = _scaled_error(g.reshape(-1)[idx], numeric)
        counts[name] = len(idx)
    return GradCheckReport(op.name, errors, tol, counts)


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: ParamSet, grads: dict[str, np.ndarray]) -> None:
    """In-place Adam update with bias correction.

    Only parameters present in ``grads`` move; all of them share one step
    counter. Validation happens before any array is touched.
    """
    if getattr(params, "frozen", False):
        raise FrozenParameterError("cannot update a frozen parameter set")
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"{name}: non-finite gradient")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    if isinstance(params, ParamSet):
        params.bump()


# ---------------------------------------------------------------------------
# Registered primitives

class AffineOp(DifferentiableOp):
    name = "affine"

    def forward(self, inputs):
        return affine_forward(inputs["x"], inputs["W"], inputs["b"])

    def backward(self, grad_out, cache):
        dx, dW, db = affine_backward(grad_out, cache)
        return {"x": dx, "W": dW, "b": db}


class LinearMapOp(DifferentiableOp):
    """y = W x for a single vector x."""

    name = "linear_map"

    def forward(self, inputs):
        return inputs["W"] @ inputs["x"], (inputs["W"], inputs["x"])

    def backward(self, grad_out, cache):
        W, x = cache
        return {"W": np.outer(grad_out, x), "x": W.T @ grad_out}


class ReluOp(DifferentiableOp):
    name = "relu"

    def forward(self, inputs):
        return relu_forward(inputs["x"])

    def backward(self, grad_out, cache):
        return {"x": relu_backward(grad_out, cache)}


class MaskedSoftmaxOp(DifferentiableOp):
    name = "masked_softmax"

    def __init__(self, mask):
        self.mask = np.asarray(mask, dtype=bool)

    def forward(self, inputs):
        A = masked_softmax(inputs["scores"], self.mask)
        return A, A

    def backward(self, grad_out, cache):
        return {"scores": softmax_backward(grad_out, cache)}


class MLPOp(DifferentiableOp):
    name = "mlp"

    def __init__(self, n_layers, relu_last=False):
        self.n_layers = n_layers
        self.relu_last = relu_last

    def forward(self, inputs):
        Ws = [inputs[f"W{i}"] for i in range(self.n_layers)]
        bs = [inputs[f"b{i}"] for i in range(self.n_layers)]
        return mlp_forward(inputs["x"], Ws, bs, self.relu_last)

    def backward(self, grad_out, cache):
        dx, dWs, dbs = mlp_backward(grad_out, cache)
        out = {"x": dx}
        for i, (dW, db) in enumerate(zip(dWs, dbs)):
            out[f"W{i}"] = dW
            out[f"b{i}"] = db
        return out


@register_op("affine")
def _affine_case(rng):
    return AffineOp(), {"x": rng.standard_normal((5, 4)), "W": rng.standard_normal((3, 4)),
                        "b": rng.standard_normal(3)}


@register_op("linear_map")
def _linear_case(rng):
    return LinearMapOp(), {"W": rng.standard_normal((4, 6)), "x": rng.standard_normal(6)}


@register_op("relu")
def _relu_case(rng):
    x = rng.standard_normal((4, 5))
    x[np.abs(x) < 0.05] = 0.5  # keep probes away from the kink
    return ReluOp(), {"x": x}


@register_op("masked_softmax")
def _softmax_case(rng):
    return MaskedSoftmaxOp([1, 0, 1, 1, 0]), {"scores": rng.standard_normal((3, 5))}


@register_op("mlp")
def _mlp_case(rng):
    sizes = [6, 8, 7, 3]
    inputs = {"x": rng.standard_normal((4, 6))}
    for i in range(3):
        inputs[f"W{i}"] = rng.standard_normal((sizes[i + 1], sizes[i]))
        inputs[f"b{i}"] = rng.standard_normal(sizes[i + 1])
    return MLPOp(3), inputs
