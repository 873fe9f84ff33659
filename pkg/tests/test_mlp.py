import numpy as np
import pytest

from homebess.errors import ConfigError, ContractError, NumericError, ShapeError
from homebess.mlp import (
    MlpParams,
    adam_update,
    backward,
    clone_params,
    finite_diff_grad,
    forward,
    init_adam,
    init_mlp,
    pack_adam,
    pack_params,
    unpack_adam,
    unpack_params,
)


def test_init_shapes_and_determinism():
    params = init_mlp([7, 200, 200, 3], "sigmoid", seed=0)
    assert params.layer_sizes == [7, 200, 200, 3]
    assert params.weights[0].shape == (7, 200)
    assert params.biases[-1].shape == (3,)
    again = init_mlp([7, 200, 200, 3], "sigmoid", seed=0)
    for a, b in zip(params.weights, again.weights):
        assert np.array_equal(a, b)
    other = init_mlp([7, 200, 200, 3], "sigmoid", seed=1)
    assert not np.array_equal(params.weights[0], other.weights[0])


def test_init_fan_in_bounds_and_zero_biases():
    params = init_mlp([100, 50, 1], seed=3)
    bound = 1.0 / np.sqrt(100)
    assert np.abs(params.weights[0]).max() <= bound
    assert np.all(params.biases[0] == 0.0)


def test_init_rejects_bad_sizes():
    with pytest.raises(ConfigError):
        init_mlp([3], seed=0)
    with pytest.raises(ConfigError):
        init_mlp([3, 0, 2], seed=0)
    with pytest.raises(ConfigError):
        init_mlp([3, 2], output_activation="tanh", seed=0)


def test_forward_zero_net_identity():
    params = MlpParams([np.zeros((4, 3))], [np.zeros(3)], "identity")
    out, _ = forward(params, np.ones(4))
    assert np.array_equal(out, np.zeros(3))


def test_forward_single_linear_layer_hand_value():
    params = MlpParams([np.array([[2.0]])], [np.array([1.0])], "identity")
    out, _ = forward(params, np.array([3.0]))
    assert out[0] == pytest.approx(7.0)  # 2*3 + 1


def test_forward_sigmoid_range():
    params = init_mlp([5, 8, 3], "sigmoid", seed=2)
    rng = np.random.default_rng(0)
    for _ in range(20):
        out, _ = forward(params, rng.normal(size=5) * 10)
        assert np.all(out >= 0.0) and np.all(out <= 1.0)


def test_forward_shape_error():
    params = init_mlp([5, 4, 2], seed=0)
    with pytest.raises(ShapeError):
        forward(params, np.ones(6))


def test_forward_is_pure():
    params = init_mlp([4, 6, 2], "sigmoid", seed=5)
    x = np.array([0.3, -0.2, 0.9, 0.1])
    a, _ = forward(params, x)
    b, _ = forward(params, x)
    assert np.array_equal(a, b)


def test_backward_zero_output_grad():
    params = init_mlp([4, 6, 2], seed=1)
    _, cache = forward(params, np.ones(4))
    grads, input_grad = backward(params, cache, np.zeros(2))
    for dw, db in grads:
        assert np.all(dw == 0.0) and np.all(db == 0.0)
    assert np.all(input_grad == 0.0)


def test_backward_single_linear_layer_outer_product():
    params = MlpParams([np.array([[0.5, -1.0], [2.0, 0.3], [0.0, 1.0]])],
                       [np.zeros(2)], "identity")
    x = np.array([1.0, -2.0, 3.0])
    g = np.array([0.7, -0.4])
    _, cache = forward(params, x)
    grads, input_grad = backward(params, cache, g)
    assert np.allclose(grads[0][0], np.outer(x, g))
    assert np.allclose(grads[0][1], g)
    assert np.allclose(input_grad, params.weights[0] @ g)


def test_backward_requires_matching_cache():
    p1 = init_mlp([3, 4, 1], seed=0)
    p2 = init_mlp([3, 4, 1], seed=1)
    _, cache = forward(p1, np.ones(3))
    with pytest.raises(ContractError):
        backward(p2, cache, np.ones(1))


def _relative_error(analytic, numeric):
    # per-tensor norm ratio, the standard gradient-check metric
    worst = 0.0
    for (aw, ab), (nw, nb) in zip(analytic, numeric):
        for a, n in ((aw, nw), (ab, nb)):
            denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
            worst = max(worst, float(np.linalg.norm(a - n) / denom))
    return worst


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(42)
    for output_activation in ("identity", "sigmoid"):
        for sizes in ([5, 8, 8, 2], [3, 16, 1]):
            params = init_mlp(sizes, output_activation, seed=rng.integers(1 << 30))
            x = rng.normal(size=sizes[0])
            target = rng.normal(size=sizes[-1])

            def loss(out):
                return float(np.sum((out - target) ** 2))

            out, cache = forward(params, x)
            grads, _ = backward(params, cache, 2.0 * (out - target))
            numeric = finite_diff_grad(params, x, loss)
            assert _relative_error(grads, numeric) < 1e-5


def test_finite_diff_constant_function_is_zero():
    params = init_mlp([3, 4, 2], seed=0)
    grads = finite_diff_grad(params, np.ones(3), lambda out: 1.0)
    for dw, db in grads:
        assert np.allclose(dw, 0.0, atol=1e-6)
        assert np.allclose(db, 0.0, atol=1e-6)


def test_finite_diff_quadratic_close_to_analytic():
    # single 1x1 linear layer, f(w) = (w*x)^2 has df/dw = 2*w*x^2
    params = MlpParams([np.array([[1.5]])], [np.array([0.0])], "identity")
    x = np.array([2.0])
    grads = finite_diff_grad(params, x, lambda out: float(out[0] ** 2))
    assert grads[0][0][0, 0] == pytest.approx(2 * 1.5 * 4.0, rel=1e-8)


def test_adam_zero_gradient_keeps_params():
    params = init_mlp([3, 4, 2], seed=0)
    before = clone_params(params)
    state = init_adam(params)
    zero = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(params.weights, params.biases)]
    adam_update(params, zero, state, lr=0.1)
    assert state.step == 1
    for a, b in zip(params.weights, before.weights):
        assert np.array_equal(a, b)


def test_adam_first_step_is_signed_lr():
    params = MlpParams([np.array([[1.0, -2.0]])], [np.zeros(2)], "identity")
    state = init_adam(params)
    g = np.array([[0.3, -0.7]])
    adam_update(params, [(g.copy(), np.zeros(2))], state, lr=0.01)
    # first-step bias correction collapses to lr * sign(g)
    assert params.weights[0][0, 0] == pytest.approx(1.0 - 0.01, rel=1e-6)
    assert params.weights[0][0, 1] == pytest.approx(-2.0 + 0.01, rel=1e-6)


def test_adam_drift_decays_after_gradient_stops():
    params = MlpParams([np.array([[0.0]])], [np.zeros(1)], "identity")
    state = init_adam(params)
    g = np.array([[1.0]])
    zero = np.array([[0.0]])
    adam_update(params, [(g, np.zeros(1))], state, lr=0.05)
    w1 = params.weights[0][0, 0]
    adam_update(params, [(zero, np.zeros(1))], state, lr=0.05)
    w2 = params.weights[0][0, 0]
    adam_update(params, [(zero, np.zeros(1))], state, lr=0.05)
    w3 = params.weights[0][0, 0]
    assert abs(w2 - w1) < abs(w1 - 0.0)
    assert abs(w3 - w2) < abs(w2 - w1)


def test_adam_rejects_non_finite_gradient():
    params = init_mlp([2, 2], seed=0)
    state = init_adam(params)
    bad = [(np.full((2, 2), np.nan), np.zeros(2))]
    with pytest.raises(NumericError):
        adam_update(params, bad, state, lr=0.1)


def test_pack_unpack_roundtrip():
    params = init_mlp([4, 8, 2], "sigmoid", seed=9)
    state = init_adam(params)
    g = [(np.ones_like(w), np.ones_like(b)) for w, b in zip(params.weights, params.biases)]
    adam_update(params, g, state, lr=0.01)
    meta, arrays = pack_params(params, "net")
    restored = unpack_params(meta, arrays, "net")
    assert restored.layer_sizes == params.layer_sizes
    for a, b in zip(restored.weights, params.weights):
        assert np.array_equal(a, b)
    ometa, oarrays = pack_adam(state, "opt")
    ostate = unpack_adam(ometa, oarrays, "opt", len(params.weights))
    assert ostate.step == state.step
    for (a, _), (b, _) in zip(ostate.m, state.m):
        assert np.array_equal(a, b)
