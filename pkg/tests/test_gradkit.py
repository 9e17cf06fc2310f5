import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmprior import gradkit as gk


def params_from(**arrays):
    ps = gk.ParamSet()
    for k, v in arrays.items():
        ps.add(k, v)
    return ps


def weighted_sum(t, rng):
    """Scalar readout with random weights so every output entry matters."""
    w = rng.uniform(0.5, 1.5, size=t.shape)
    return gk.reduce_sum(t * w)


# name -> (input shapes/domains builder, op)
def _pos(rng, shape):
    return rng.uniform(0.3, 2.0, size=shape)


def _away_from_zero(rng, shape):
    x = rng.uniform(0.2, 2.0, size=shape)
    return x * np.where(rng.random(shape) < 0.5, -1.0, 1.0)


PRIMITIVES = {
    "matmul": (lambda r: {"a": r.uniform(-2, 2, (3, 4)), "b": r.uniform(-2, 2, (4, 2))},
               lambda p: gk.matmul(p["a"], p["b"])),
    "add_broadcast": (lambda r: {"a": r.uniform(-2, 2, (5, 3)), "b": r.uniform(-2, 2, (3,))},
                      lambda p: p["a"] + p["b"]),
    "sub": (lambda r: {"a": r.uniform(-2, 2, (4, 3)), "b": r.uniform(-2, 2, (4, 3))},
            lambda p: p["a"] - p["b"]),
    "mul": (lambda r: {"a": r.uniform(-2, 2, (4, 3)), "b": r.uniform(-2, 2, (1, 3))},
            lambda p: p["a"] * p["b"]),
    "neg": (lambda r: {"a": r.uniform(-2, 2, (4, 3))}, lambda p: -p["a"]),
    "exp": (lambda r: {"a": r.uniform(-2, 2, (4, 3))}, lambda p: gk.exp(p["a"])),
    "log": (lambda r: {"a": _pos(r, (4, 3))}, lambda p: gk.log(p["a"])),
    "tanh": (lambda r: {"a": r.uniform(-2, 2, (4, 3))}, lambda p: gk.tanh(p["a"])),
    "abs": (lambda r: {"a": _away_from_zero(r, (4, 3))}, lambda p: gk.absolute(p["a"])),
    "pow": (lambda r: {"a": _pos(r, (4, 3))}, lambda p: gk.power(p["a"], 2.7)),
    # x^3 has a zero derivative at 0, where central differences lose relative accuracy
    "pow_int": (lambda r: {"a": _away_from_zero(r, (4, 3))}, lambda p: gk.power(p["a"], 3)),
    "sum_axis0": (lambda r: {"a": r.uniform(-2, 2, (4, 3))},
                  lambda p: gk.reduce_sum(p["a"], axis=0)),
    "sum_axis1": (lambda r: {"a": r.uniform(-2, 2, (4, 3))},
                  lambda p: gk.reduce_sum(p["a"], axis=1)),
    "concat": (lambda r: {"a": r.uniform(-2, 2, (4, 2)), "b": r.uniform(-2, 2, (4, 3))},
               lambda p: gk.concat([p["a"], p["b"]])),
    "split": (lambda r: {"a": r.uniform(-2, 2, (4, 5))},
              lambda p: gk.split(p["a"], 2)[1] * 2.0 + gk.reduce_sum(gk.split(p["a"], 2)[0], axis=1,
                                                                   keepdims=True)),
    "reverse": (lambda r: {"a": r.uniform(-2, 2, (4, 5))}, lambda p: gk.reverse(p["a"])),
    "logsumexp": (lambda r: {"a": r.uniform(-2, 2, (4, 3))},
                  lambda p: gk.logsumexp(p["a"], axis=-1)),
    "clip_interior": (lambda r: {"a": r.uniform(-1.5, 1.5, (4, 3))},
                      lambda p: gk.clip(p["a"], -1.9, 1.9) * p["a"]),
    "div": (lambda r: {"a": r.uniform(-2, 2, (4, 3)), "b": _pos(r, (4, 3))},
            lambda p: p["a"] / p["b"]),
    "reshape": (lambda r: {"a": r.uniform(-2, 2, (6,))},
                lambda p: gk.reshape(p["a"], (2, 3)) * np.arange(6.0).reshape(2, 3)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_central_differences(name):
    build, op = PRIMITIVES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = 0.0
    for trial in range(100):
        ps = params_from(**build(rng))
        w_rng_seed = rng.integers(2**32)
        f = lambda: weighted_sum(op(ps), np.random.default_rng(w_rng_seed))
        worst = max(worst, gk.gradient_check(f, ps, h=1e-5))
    assert worst < 1e-5, f"{name}: max relative error {worst:.3g}"


def test_matmul_identity():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = gk.matmul(np.eye(2), m)
    np.testing.assert_array_equal(out.data, m)


def test_exp_log_roundtrip():
    x = np.array([0.5, 2.0])
    np.testing.assert_allclose(gk.exp(gk.log(x)).data, x, rtol=1e-15)


def test_reduce_sum_ones():
    np.testing.assert_array_equal(gk.reduce_sum(np.ones((3, 4)), axis=1).data, [4, 4, 4])


def test_backward_quadratic():
    ps = params_from(w=[1.0, -2.0, 3.0])
    grads = gk.backward(gk.reduce_sum(ps["w"] * ps["w"]), ps)
    np.testing.assert_array_equal(grads["w"], [2.0, -4.0, 6.0])


def test_backward_constant_output_gives_zero_grad():
    ps = params_from(w=[1.0, 2.0], unused=[5.0])
    out = gk.reduce_sum(gk.Tensor([3.0, 4.0]))
    grads = gk.backward(out, ps)
    np.testing.assert_array_equal(grads["w"], 0.0)
    np.testing.assert_array_equal(grads["unused"], 0.0)


def test_backward_unused_param_is_zero():
    ps = params_from(w=[1.0, 2.0], unused=[5.0])
    grads = gk.backward(gk.reduce_sum(ps["w"]), ps)
    np.testing.assert_array_equal(grads["unused"], [0.0])


def test_shared_subexpression_accumulates():
    ps = params_from(x=[1.5])
    grads = gk.backward(gk.reduce_sum(ps["x"] + ps["x"]), ps)
    assert grads["x"][0] == 2.0


def test_backward_rejects_non_scalar():
    ps = params_from(x=[1.0, 2.0])
    with pytest.raises(gk.ShapeError):
        gk.backward(ps["x"] * 2.0, ps)


def test_shape_mismatch_rejected_before_compute():
    with pytest.raises(gk.ShapeError):
        gk.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(gk.ShapeError):
        gk.add(np.ones((2, 3)), np.ones((4,)))


def test_non_finite_result_names_op():
    with pytest.raises(gk.NumericFailure, match="log"):
        gk.log(np.array([0.0, 1.0]))
    with pytest.raises(gk.NumericFailure, match="exp"):
        gk.exp(np.array([1000.0]))


def test_mlp_gradient_check():
    rng = np.random.default_rng(7)
    ps = gk.ParamSet()
    gk.init_mlp(ps, "net", [3, 8, 8, 2], rng, zero_last=False)
    x = rng.uniform(-2, 2, size=(6, 3))
    y = rng.uniform(-1, 1, size=(6, 2))

    def f():
        d = gk.mlp(ps, "net", gk.Tensor(x), 3) - y
        return gk.mean(gk.reduce_sum(d * d, axis=1))
    assert gk.gradient_check(f, ps, 1e-5) < 1e-5


def test_gradient_check_quadratic_is_tight():
    ps = params_from(w=[0.3, -1.2, 2.0])
    assert gk.gradient_check(lambda: gk.reduce_sum(ps["w"] * ps["w"]), ps) < 1e-9


def test_gradient_check_rejects_bad_step():
    ps = params_from(w=[1.0])
    with pytest.raises(ValueError):
        gk.gradient_check(lambda: gk.reduce_sum(ps["w"]), ps, h=0.0)


def test_no_grad_records_nothing():
    ps = params_from(w=[1.0])
    with gk.no_grad():
        out = ps["w"] * 3.0
    assert not out.requires_grad and out._parents == ()


def test_paramset_unique_names():
    ps = params_from(w=[1.0])
    with pytest.raises(KeyError):
        ps.add("w", [2.0])


# ---------------------------------------------------------------- Adam

def adam_oracle(theta, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Straight recurrence from the Adam definition, scalar by scalar."""
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        theta = theta - lr * m_hat / (v_hat ** 0.5 + eps)
        out.append(theta)
    return out


def test_adam_zero_grad_is_identity():
    ps = params_from(w=[1.0, -2.0])
    state = gk.AdamState()
    gk.adam_step(ps, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(ps["w"].data, [1.0, -2.0])
    assert state.t == 1


def test_adam_first_step_moves_by_lr():
    ps = params_from(w=[0.5])
    state = gk.AdamState(learning_rate=1e-3)
    g = 0.37
    gk.adam_step(ps, {"w": np.array([g])}, state)
    # t=1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    expected = 0.5 - 1e-3 * g / (abs(g) + 1e-8)
    assert ps["w"].data[0] == pytest.approx(expected, abs=1e-15)
    assert 0.5 - ps["w"].data[0] == pytest.approx(1e-3, rel=1e-7)


@pytest.mark.parametrize("seed", range(5))
def test_adam_matches_recurrence_oracle(seed):
    rng = np.random.default_rng(seed)
    grads = rng.normal(size=20)
    lr = rng.uniform(1e-4, 1e-2)
    ps = params_from(w=[0.25])
    state = gk.AdamState(learning_rate=lr)
    expected = adam_oracle(0.25, grads, lr=lr)
    for g, e in zip(grads, expected):
        gk.adam_step(ps, {"w": np.array([g])}, state)
        assert abs(ps["w"].data[0] - e) < 1e-12


def test_adam_two_constant_steps():
    ps = params_from(w=[0.0])
    state = gk.AdamState()
    traj = adam_oracle(0.0, [2.0, 2.0])
    gk.adam_step(ps, {"w": np.array([2.0])}, state)
    gk.adam_step(ps, {"w": np.array([2.0])}, state)
    assert abs(ps["w"].data[0] - traj[1]) < 1e-12


def test_adam_nan_gradient_aborts():
    ps = params_from(w=[1.0])
    state = gk.AdamState()
    with pytest.raises(gk.NumericFailure):
        gk.adam_step(ps, {"w": np.array([np.nan])}, state)
    assert ps["w"].data[0] == 1.0 and state.t == 0


def test_adam_rejects_bad_betas():
    with pytest.raises(ValueError):
        gk.AdamState(beta1=1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6),
       st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6))
def test_adam_zero_lr_is_identity(values, grads):
    n = min(len(values), len(grads))
    ps = params_from(w=values[:n])
    before = ps["w"].data.copy()
    gk.adam_step(ps, {"w": np.array(grads[:n])}, gk.AdamState(learning_rate=0.0))
    np.testing.assert_array_equal(ps["w"].data, before)
