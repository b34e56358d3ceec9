import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import intelliz  # noqa: F401  (registers every op)
from intelliz.errors import FrozenParameterError, ShapeError
from intelliz.grad import (GRADCHECK_REGISTRY, AdamState, DifferentiableOp, LinearMapOp, ParamSet, adam_step,
                           grad_check, make_rng, masked_softmax, softmax_backward)


def all_subclasses(cls):
    out = set()
    for sub in cls.__subclasses__():
        out.add(sub)
        out |= all_subclasses(sub)
    return out


@pytest.mark.parametrize("name", sorted(GRADCHECK_REGISTRY))
def test_registered_op_gradients(name):
    op, inputs = GRADCHECK_REGISTRY[name](make_rng(1234))
    report = grad_check(op, inputs, epsilon=1e-5, tol=1e-4)
    assert report.passed, f"{name}: {report.errors}"


def test_every_op_class_is_registered():
    seen = {type(GRADCHECK_REGISTRY[n](make_rng(0))[0]) for n in GRADCHECK_REGISTRY}
    pkg_ops = {c for c in all_subclasses(DifferentiableOp) if c.__module__.startswith("intelliz.")}
    assert pkg_ops <= seen, sorted(c.__name__ for c in pkg_ops - seen)


def test_linear_map_is_tight():
    rng = make_rng(3)
    report = grad_check(LinearMapOp(), {"W": rng.standard_normal((5, 7)), "x": rng.standard_normal(7)})
    assert report.max_error < 1e-6


class ConstantOp(DifferentiableOp):
    name = "constant"

    def forward(self, inputs):
        return np.full(3, 2.0), None

    def backward(self, grad_out, cache):
        return {"x": np.zeros(4)}


def test_constant_op_zero_gradients():
    report = grad_check(ConstantOp(), {"x": np.arange(4.0)})
    assert report.errors == {"x": 0.0}


class WrongGradOp(DifferentiableOp):
    name = "wrong"

    def forward(self, inputs):
        return inputs["x"] ** 2, inputs["x"]

    def backward(self, grad_out, cache):
        return {"x": grad_out * cache}  # missing factor 2


def test_checker_catches_wrong_gradient():
    assert not grad_check(WrongGradOp(), {"x": np.array([1.0, -2.0, 3.0])}).passed


def test_checker_rejects_bad_gradient_shape():
    class BadShape(WrongGradOp):
        def backward(self, grad_out, cache):
            return {"x": np.zeros(2)}

    with pytest.raises(ShapeError):
        grad_check(BadShape(), {"x": np.ones(3)})


def test_grad_suite_runtime():
    t0 = time.perf_counter()
    for name in GRADCHECK_REGISTRY:
        op, inputs = GRADCHECK_REGISTRY[name](make_rng(7))
        grad_check(op, inputs)
    assert time.perf_counter() - t0 < 120


def test_adam_zero_gradient():
    p = ParamSet({"w": np.array([1.0, -2.0])})
    st_ = AdamState(lr=0.1)
    adam_step(st_, p, {"w": np.zeros(2)})
    assert st_.step == 1
    assert np.array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_closed_form():
    g = np.array([0.3, -2.0, 1e-3, 5.0])
    p = ParamSet({"w": np.zeros(4)})
    st_ = AdamState(lr=0.01, eps=1e-8)
    adam_step(st_, p, {"w": g})
    # m_hat = g, v_hat = g^2 after bias correction
    assert np.allclose(p["w"], -0.01 * g / (np.abs(g) + 1e-8), rtol=0, atol=1e-15)


def test_adam_constant_gradient_converges_to_sign():
    g = np.array([0.5, -3.0, 1e-2])
    p = ParamSet({"w": np.zeros(3)})
    st_ = AdamState(lr=1e-3)
    for _ in range(1000):
        before = p["w"].copy()
        adam_step(st_, p, {"w": g})
    assert np.allclose(p["w"] - before, -1e-3 * np.sign(g), rtol=1e-4)


def test_adam_bumps_version_and_validates():
    p = ParamSet({"w": np.zeros(2)})
    adam_step(AdamState(), p, {"w": np.ones(2)})
    assert p.version == 1
    with pytest.raises(KeyError):
        adam_step(AdamState(), p, {"nope": np.ones(2)})
    with pytest.raises(ShapeError):
        adam_step(AdamState(), p, {"w": np.ones(3)})
    with pytest.raises(FloatingPointError):
        adam_step(AdamState(), p, {"w": np.array([1.0, np.nan])})
    assert p.version == 1


def test_frozen_paramset():
    p = ParamSet({"w": np.zeros(2)}).freeze()
    with pytest.raises(FrozenParameterError):
        adam_step(AdamState(), p, {"w": np.ones(2)})
    with pytest.raises(FrozenParameterError):
        p["w"] = np.ones(2)
    with pytest.raises(ValueError):
        p["w"][0] = 1.0
    q = p.copy()
    q["w"][0] = 1.0
    assert p["w"][0] == 0.0


def test_make_rng_is_pcg64_and_seeded():
    a, b = make_rng(5), make_rng(5)
    assert type(a.bit_generator).__name__ == "PCG64"
    assert np.array_equal(a.standard_normal(4), b.standard_normal(4))


small = arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
               elements=st.floats(-10, 10, allow_nan=False))


@settings(max_examples=50)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 31))
def test_matmul_associative(n, k, m, p, seed):
    rng = np.random.default_rng(seed)
    A, B, C = rng.standard_normal((n, k)), rng.standard_normal((k, m)), rng.standard_normal((m, p))
    assert np.allclose((A @ B) @ C, A @ (B @ C), rtol=0, atol=1e-10)


@settings(max_examples=50)
@given(small, st.integers(0, 2 ** 31))
def test_softmax_rows_sum_to_one(scores, seed):
    mask = np.random.default_rng(seed).random(scores.shape[1]) < 0.6
    mask[0] = True
    A = masked_softmax(scores, mask)
    assert np.allclose(A.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
    assert np.all(A[:, ~mask] == 0.0)


def test_softmax_backward_zero_upstream():
    A = masked_softmax(np.random.default_rng(0).standard_normal((3, 4)), np.ones(4, bool))
    assert np.all(softmax_backward(np.zeros_like(A), A) == 0)
