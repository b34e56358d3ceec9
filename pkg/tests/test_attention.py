import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import naive_pool
from intelliz.attention import (POOL_KEYS, AttentionPoolOp, PoolConfig, attention_weights, init_pool_params, pool,
                                pool_backward, pool_forward)
from intelliz.errors import ConfigError, NoVoicedFramesError, ShapeError, StaleCacheError
from intelliz.grad import AdamState, ParamSet, adam_step, grad_check, make_rng


def random_case(rng, d=8, T=5, heads=2):
    S = rng.standard_normal((T, d))
    W = [rng.standard_normal((d, d)) / np.sqrt(d) for _ in range(3)]
    return S, W, PoolConfig(heads=heads)


def test_single_unmasked_frame_is_one_hot():
    rng = make_rng(0)
    S, W, cfg = random_case(rng, T=3)
    v, cache = pool_forward(S, [0, 1, 0], *W, cfg)
    A = attention_weights(cache)
    assert np.all(A[:, :, 1] == 1.0)
    assert np.all(A[:, :, [0, 2]] == 0.0)
    # every row attends to frame 1, so the mean over rows is V at frame 1
    assert np.allclose(v, W[2] @ S[1], rtol=0, atol=1e-14)


def test_constant_frames_uniform_attention():
    rng = make_rng(1)
    _, W, cfg = random_case(rng, T=6)
    s = rng.standard_normal(8)
    S = np.tile(s, (6, 1))
    v, cache = pool_forward(S, np.ones(6), *W, cfg)
    assert np.allclose(attention_weights(cache), 1 / 6, rtol=0, atol=1e-15)
    assert np.allclose(v, W[2] @ s, rtol=0, atol=1e-13)


@pytest.mark.parametrize("scale, average", [("head", "all"), ("head", "voiced"), ("model", "all")])
def test_matches_naive_loop(scale, average):
    rng = make_rng(2)
    S, W, _ = random_case(rng, d=8, T=5, heads=2)
    mask = [1, 1, 0, 1, 0]
    cfg = PoolConfig(heads=2, scale=scale, average=average)
    v, _ = pool_forward(S, mask, *W, cfg)
    want = naive_pool(S.tolist(), mask, *(w.tolist() for w in W), heads=2, scale=scale, average=average)
    assert np.max(np.abs(v - np.array(want))) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 9), st.sampled_from([1, 2, 4]))
def test_masked_keys_get_exactly_zero(seed, T, heads):
    rng = np.random.default_rng(seed)
    mask = rng.random(T) < 0.5
    mask[rng.integers(T)] = True
    S, W, _ = random_case(rng, d=8, T=T)
    _, cache = pool_forward(S * 50.0, mask, *W, PoolConfig(heads=heads))
    A = attention_weights(cache)
    assert np.all(A[:, :, ~mask] == 0.0)
    # convexity: rows are probability vectors over the unmasked frames
    assert np.all(A >= 0)
    assert np.allclose(A.sum(-1), 1.0, rtol=0, atol=1e-12)


def test_masked_frames_do_not_leak_through_keys_and_values():
    rng = make_rng(3)
    S, W, _ = random_case(rng, T=7)
    mask = np.array([1, 0, 1, 1, 0, 0, 1], bool)
    S2 = S.copy()
    S2[~mask] = rng.standard_normal((3, 8)) * 10
    cfg = PoolConfig(heads=2, average="voiced")
    v1, _ = pool_forward(S, mask, *W, cfg)
    v2, _ = pool_forward(S2, mask, *W, cfg)
    assert np.max(np.abs(v1 - v2)) <= 1e-12
    # literal averaging: the masked rows still contribute their own queries
    lit = PoolConfig(heads=2)
    u1, _ = pool_forward(S, mask, *W, lit)
    u2, _ = pool_forward(S2, mask, *W, lit)
    assert np.max(np.abs(u1 - u2)) > 1e-6
    # ... and only through WQ: with WQ changed nothing, keys/values cannot matter
    Wq0 = [np.zeros((8, 8)), W[1], W[2]]
    z1, _ = pool_forward(S, mask, *Wq0, lit)
    z2, _ = pool_forward(S2, mask, *Wq0, lit)
    assert np.max(np.abs(z1 - z2)) <= 1e-12


def test_permutation_invariance_all_ones():
    rng = make_rng(4)
    S, W, cfg = random_case(rng, T=6)
    perm = rng.permutation(6)
    v1, _ = pool_forward(S, np.ones(6), *W, cfg)
    v2, _ = pool_forward(S[perm], np.ones(6), *W, cfg)
    assert np.allclose(v1, v2, rtol=0, atol=1e-12)


def test_all_masked_is_an_error():
    rng = make_rng(5)
    S, W, cfg = random_case(rng)
    with pytest.raises(NoVoicedFramesError, match="no voiced frames in reference"):
        pool_forward(S, np.zeros(5), *W, cfg)


def test_shape_errors():
    rng = make_rng(6)
    S, W, cfg = random_case(rng)
    with pytest.raises(ShapeError):
        pool_forward(S, np.ones(4), *W, cfg)
    with pytest.raises(ShapeError):
        pool_forward(S, np.ones(5), *W, PoolConfig(heads=3))
    with pytest.raises(ConfigError):
        PoolConfig(scale="sqrt")


def test_zero_upstream_zero_gradients():
    rng = make_rng(7)
    S = rng.standard_normal((6, 8))
    params = ParamSet(init_pool_params(rng, 8))
    _, cache = pool(S, [1, 0, 1, 1, 0, 1], params, PoolConfig(heads=2))
    dS, grads = pool_backward(np.zeros(8), cache)
    assert not dS.any() and not any(g.any() for g in grads.values())


def test_single_frame_gradient_ignores_masked_values():
    rng = make_rng(8)
    S = rng.standard_normal((4, 8))
    params = ParamSet(init_pool_params(rng, 8))
    mask = [0, 0, 1, 0]
    _, cache = pool(S, mask, params, PoolConfig(heads=2))
    dS, _ = pool_backward(rng.standard_normal(8), cache)
    # with one unmasked key, the softmax is constant; masked frames only
    # reach v through their own query row, which has zero gradient here
    assert np.all(dS[[0, 1, 3]] == 0.0)


def test_stale_cache_detected():
    rng = make_rng(9)
    S = rng.standard_normal((5, 8))
    params = ParamSet(init_pool_params(rng, 8))
    _, cache = pool(S, np.ones(5), params, PoolConfig(heads=2))
    adam_step(AdamState(), params, {k: np.ones((8, 8)) for k in POOL_KEYS})
    with pytest.raises(StaleCacheError):
        pool_backward(np.ones(8), cache)


@pytest.mark.parametrize("average", ["all", "voiced"])
def test_grad_check_random_mask(average):
    rng = make_rng(10)
    mask = rng.random(6) < 0.5
    mask[0] = True
    op = AttentionPoolOp(mask, PoolConfig(heads=2, average=average))
    inputs = {"s": rng.standard_normal((6, 8))}
    inputs.update({k.split(".")[1]: v for k, v in init_pool_params(rng, 8).items()})
    assert grad_check(op, inputs).max_error < 1e-4
