import json
import math

import numpy as np
import pytest

from graphqa import tensor as T
from graphqa.gradcheck import grad_check
from graphqa.optim import (
    AdamState,
    CheckpointError,
    adam_step,
    glorot,
    load_params_into,
    read_checkpoint,
    save_checkpoint,
)
from graphqa.tensor import Parameter, Tensor


def scalar_adam(x0, grad, steps, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Plain-float reference Adam with bias correction."""
    x, m, v, trace = x0, 0.0, 0.0, [x0]
    for t in range(1, steps + 1):
        g = grad(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        trace.append(x)
    return trace


def run_adam_on_square(lr, steps=100):
    p = Parameter(np.array([1.0]), "x")
    state = AdamState(lr=lr)
    trace = [1.0]
    for _ in range(steps):
        p.zero_grad()
        T.reduce_sum(T.mul(p, p)).backward()
        adam_step([p], state)
        trace.append(float(p.data[0]))
    return trace, state


def test_first_step_moves_by_lr():
    p = Parameter(np.array([0.5, -2.0]), "p")
    p.grad[:] = 1.0
    adam_step([p], AdamState())
    assert np.allclose(p.data, [0.5 - 1e-3, -2.0 - 1e-3], atol=1e-9)


def test_zero_gradient_keeps_parameter():
    p = Parameter(np.array([0.5, -2.0]), "p")
    adam_step([p], AdamState())
    assert np.array_equal(p.data, [0.5, -2.0])


def test_square_matches_scalar_simulation():
    trace, state = run_adam_on_square(1e-3)
    ref = scalar_adam(1.0, lambda x: 2 * x, 100)
    assert np.allclose(trace, ref, atol=1e-12)
    assert state.step == 100
    assert all(b < a for a, b in zip(trace, trace[1:]))
    # with the default rate the walk ends just short of 0.9 (see the reference)
    assert trace[-1] == pytest.approx(0.901743598, abs=1e-8)


def test_square_descends_below_point_nine():
    trace, _ = run_adam_on_square(1e-2)
    assert np.allclose(trace, scalar_adam(1.0, lambda x: 2 * x, 100, lr=1e-2), atol=1e-12)
    assert all(abs(b) < abs(a) for a, b in zip(trace[:50], trace[1:51]))
    assert abs(trace[-1]) < 0.9


def test_moments_shaped_like_params():
    p = Parameter(np.ones((3, 2)), "w")
    p.grad[:] = 0.1
    st = AdamState()
    adam_step([p], st)
    assert st.m["w"].shape == st.v["w"].shape == (3, 2)


def test_glorot_range_and_bias_zero():
    rng = np.random.default_rng(0)
    w = glorot(rng, 30, 20)
    a = math.sqrt(6 / 50)
    assert w.shape == (30, 20) and np.all(np.abs(w) <= a)
    assert abs(w.std() - a / math.sqrt(3)) < 0.02


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    params = [Parameter(rng.standard_normal((2, 3)), "a"), Parameter(rng.standard_normal(4), "b")]
    save_checkpoint(tmp_path / "c.json", {"k": 1}, params)
    doc = read_checkpoint(tmp_path / "c.json")
    assert doc["config"] == {"k": 1}
    fresh = [Parameter(np.zeros((2, 3)), "a"), Parameter(np.zeros(4), "b")]
    load_params_into(doc, fresh)
    for p, q in zip(params, fresh):
        assert np.array_equal(p.data, q.data)


def test_checkpoint_mismatches(tmp_path):
    save_checkpoint(tmp_path / "c.json", {}, [Parameter(np.zeros((2, 3)), "a")])
    doc = read_checkpoint(tmp_path / "c.json")
    with pytest.raises(CheckpointError, match="shape"):
        load_params_into(doc, [Parameter(np.zeros((3, 2)), "a")])
    with pytest.raises(CheckpointError, match="missing"):
        load_params_into(doc, [Parameter(np.zeros((2, 3)), "a"), Parameter(np.zeros(1), "b")])
    bad = json.loads((tmp_path / "c.json").read_text())
    bad["version"] = 99
    (tmp_path / "d.json").write_text(json.dumps(bad))
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "d.json")


# -- grad_check harness -------------------------------------------------------------


def test_gradcheck_linear_layer():
    rng = np.random.default_rng(0)
    W = Parameter(rng.standard_normal((4, 3)), "W")
    b = Parameter(rng.standard_normal(3), "b")
    x = T.const(rng.standard_normal((5, 4)), np.float64)
    R = T.const(rng.standard_normal((5, 3)), np.float64)
    rep = grad_check(lambda: T.reduce_sum(T.mul(T.add(T.matmul(x, W), b), R)), [W, b], tolerance=1e-6, n_coords=20)
    assert rep.passed, str(rep)
    assert rep.n_coords == 20


def _broken_square(a: Tensor) -> Tensor:
    # forward a*a, but the backward rule forgets the factor 2
    return Tensor(a.data * a.data, (a,), lambda g: (g * a.data,), "broken")


def test_gradcheck_detects_corrupted_backward():
    p = Parameter(np.random.default_rng(0).standard_normal(6) + 3.0, "p")
    rep = grad_check(lambda: T.reduce_sum(_broken_square(p)), [p], tolerance=1e-4)
    assert not rep.passed
    assert rep.max_rel_error > 0.4
