import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from emoblind import nn
from emoblind.errors import NumericError, ParseError, ShapeError


def linear_net(W, b=None):
    W = np.asarray(W, dtype=float)
    return nn.DenseNet([nn.Layer(W, np.zeros(W.shape[0]) if b is None else b, "linear")])


def random_net(seed, sizes=(5, 7, 4), acts=("relu", "softmax")):
    net = nn.init_net(list(sizes), list(acts), seed=seed)
    rng = np.random.default_rng(seed + 100)
    for layer in net.layers:
        layer.b[:] = rng.normal(0, 0.1, size=layer.b.shape)
    return net


# --- DenseNet / forward ------------------------------------------------------


def test_identity_linear_layer():
    out = nn.predict(linear_net(np.eye(2)), [[1.0, 2.0]])
    np.testing.assert_array_equal(out, [[1.0, 2.0]])


def test_softmax_of_zero_logits_is_uniform():
    net = nn.DenseNet([nn.Layer(np.zeros((6, 3)), np.zeros(6), "softmax")])
    out = nn.predict(net, np.ones((1, 3)))
    np.testing.assert_allclose(out, np.full((1, 6), 1 / 6), atol=1e-15)


def test_relu_layer():
    net = nn.DenseNet([nn.Layer(np.eye(2), np.zeros(2), "relu")])
    np.testing.assert_array_equal(nn.predict(net, [[-1.0, 3.0]]), [[0.0, 3.0]])


def test_forward_shape_error_names_layer():
    net = nn.init_net([4, 3, 2], ["relu", "linear"], seed=0)
    net.layers[1] = nn.Layer(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ShapeError, match="layer 0"):
        nn.forward(net, np.zeros((2, 5)))


def test_layers_must_compose():
    with pytest.raises(ShapeError):
        nn.DenseNet([nn.Layer(np.zeros((3, 2)), np.zeros(3)), nn.Layer(np.zeros((2, 4)), np.zeros(2))])


def test_softmax_only_last():
    with pytest.raises(ShapeError):
        nn.DenseNet([nn.Layer(np.eye(2), np.zeros(2), "softmax"), nn.Layer(np.eye(2), np.zeros(2))])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 6), elements=st.floats(-50, 50)))
def test_softmax_rows_are_probabilities(z):
    p = nn.softmax(z)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_init_within_glorot_bound():
    net = nn.init_net([30, 20], ["linear"], seed=3)
    assert np.abs(net.layers[0].W).max() <= math.sqrt(6 / 50)
    assert np.all(net.layers[0].b == 0)


# --- backward --------------------------------------------------------------


def test_zero_output_gradient_gives_zero_grads():
    net = random_net(0)
    trace = nn.forward(net, np.ones((3, 5)))
    grads, gin = nn.backward(net, trace, np.zeros((3, 4)))
    assert all(np.all(dW == 0) and np.all(db == 0) for dW, db in grads)
    assert np.all(gin == 0)


def test_linear_weight_gradient_is_outer_product():
    rng = np.random.default_rng(1)
    W = rng.normal(size=(3, 2))
    x = rng.normal(size=2)
    g = rng.normal(size=3)
    net = linear_net(W)
    grads, gin = nn.backward(net, nn.forward(net, x), g)
    np.testing.assert_allclose(grads[0][0], np.outer(g, x))
    np.testing.assert_allclose(gin[0], W.T @ g)


def test_backward_does_not_mutate():
    net = random_net(2)
    before = [p.copy() for p in net.params()]
    trace = nn.forward(net, np.ones((2, 5)))
    nn.backward(net, trace, np.ones((2, 4)))
    for a, b in zip(before, net.params()):
        np.testing.assert_array_equal(a, b)


def test_backward_stale_trace():
    net = random_net(0)
    other = random_net(0, sizes=(5, 6, 4))
    trace = nn.forward(other, np.ones((2, 5)))
    with pytest.raises(ShapeError):
        nn.backward(net, trace, np.ones((2, 4)))


def _weighted_output_loss(X, weights):
    def loss_fn(net):
        trace = nn.forward(net, X)
        grads, _ = nn.backward(net, trace, weights)
        return float(np.sum(trace.output * weights)), grads

    return loss_fn


def test_two_layer_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    net = random_net(7, sizes=(4, 6, 3), acts=("sigmoid", "linear"))
    X = rng.normal(size=(5, 4))
    Wt = rng.normal(size=(5, 3))
    assert nn.finite_difference_check(net, _weighted_output_loss(X, Wt), eps=1e-5) < 1e-4


def test_softmax_jacobian_backward():
    rng = np.random.default_rng(8)
    net = random_net(8, sizes=(4, 5, 6), acts=("relu", "softmax"))
    X = rng.normal(size=(3, 4))
    assert nn.finite_difference_check(net, _weighted_output_loss(X, rng.normal(size=(3, 6)))) < 1e-4


# --- finite_difference_check ------------------------------------------------


def test_fd_exact_on_quadratic():
    rng = np.random.default_rng(0)
    net = linear_net(rng.normal(size=(3, 4)), rng.normal(size=3))
    X = rng.normal(size=(6, 4))
    T = rng.normal(size=(6, 3))

    def loss_fn(n):
        trace = nn.forward(n, X)
        r = trace.output - T
        grads, _ = nn.backward(n, trace, 2 * r)
        return float(np.sum(r**2)), grads

    assert nn.finite_difference_check(net, loss_fn) < 1e-8


def _ce_loss(X, y):
    def loss_fn(net):
        trace = nn.forward(net, X)
        value, g = nn.cross_entropy(trace.logits, y)
        grads, _ = nn.backward(net, trace, g, from_logits=True)
        return value, grads

    return loss_fn


def test_fd_three_layer_relu_softmax():
    rng = np.random.default_rng(3)
    net = nn.init_net([6, 8, 7, 4], ["relu", "relu", "softmax"], seed=3)
    X = rng.normal(size=(10, 6))
    y = rng.integers(0, 4, size=10)
    assert nn.finite_difference_check(net, _ce_loss(X, y), eps=1e-5) < 1e-4


def test_fd_detects_corrupted_gradient():
    rng = np.random.default_rng(4)
    net = nn.init_net([5, 6, 3], ["relu", "softmax"], seed=4)
    X = rng.normal(size=(8, 5))
    y = rng.integers(0, 3, size=8)
    honest = _ce_loss(X, y)

    def corrupted(n):
        value, grads = honest(n)
        dW = grads[1][0].copy()
        k = np.unravel_index(np.abs(dW).argmax(), dW.shape)
        dW[k] *= 2
        grads[1] = (dW, grads[1][1])
        return value, grads

    assert nn.finite_difference_check(net, honest) < 1e-4
    assert nn.finite_difference_check(net, corrupted) > 0.1


def test_fd_subsamples_large_nets():
    rng = np.random.default_rng(5)
    net = nn.init_net([120, 100, 3], ["relu", "linear"], seed=5)
    X = rng.normal(size=(4, 120))
    y = rng.integers(0, 3, size=4)
    assert net.num_params > 10_000
    assert nn.finite_difference_check(net, _ce_loss(X, y), max_params=300) < 1e-4


def test_fd_rejects_nonfinite_loss():
    net = linear_net(np.eye(2))
    with pytest.raises(NumericError):
        nn.finite_difference_check(net, lambda n: (float("nan"), nn.zero_grads(n)))


# --- Adam ------------------------------------------------------------------


def test_adam_zero_gradient_leaves_params():
    net = random_net(1)
    before = [p.copy() for p in net.params()]
    state = nn.AdamState.zeros(net)
    nn.adam_update(net, nn.zero_grads(net), state, nn.TrainConfig())
    assert state.step == 1
    for a, b in zip(before, net.params()):
        np.testing.assert_array_equal(a, b)


def test_adam_first_step_closed_form():
    net = linear_net([[0.0]])
    state = nn.AdamState.zeros(net)
    grads = [(np.array([[0.5]]), np.array([0.0]))]
    nn.adam_update(net, grads, state, nn.TrainConfig(learning_rate=0.001))
    # m_hat = 0.5, v_hat = 0.25, step = lr * 0.5 / (0.5 + eps)
    assert abs(net.layers[0].W[0, 0] - (-0.001)) < 1e-6


def test_adam_two_steps_differ_from_one_double_step():
    grads = [(np.array([[0.5, -0.2]]), np.array([0.1]))]
    a = linear_net([[0.3, 0.4]])
    b = a.copy()
    sa = nn.AdamState.zeros(a)
    cfg = nn.TrainConfig(learning_rate=0.01)
    nn.adam_update(a, grads, sa, cfg)
    nn.adam_update(a, grads, sa, cfg)
    nn.adam_update(b, grads, nn.AdamState.zeros(b), nn.TrainConfig(learning_rate=0.02))
    assert not np.array_equal(a.layers[0].W, b.layers[0].W)


def test_adam_rejects_nonfinite_without_mutation():
    net = linear_net([[1.0]])
    state = nn.AdamState.zeros(net)
    with pytest.raises(NumericError):
        nn.adam_update(net, [(np.array([[np.inf]]), np.array([0.0]))], state, nn.TrainConfig())
    assert state.step == 0 and net.layers[0].W[0, 0] == 1.0


@pytest.mark.parametrize("kwargs", [dict(beta1=1.0), dict(beta2=0.0), dict(batch_size=0), dict(learning_rate=0)])
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        nn.TrainConfig(**kwargs)


def test_training_is_bit_deterministic():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 5))
    y = (X[:, 0] > 0).astype(int)
    cfg = nn.TrainConfig(epochs=5, batch_size=32, seed=11)
    a = nn.init_net([5, 8, 2], ["relu", "softmax"], seed=1)
    b = nn.init_net([5, 8, 2], ["relu", "softmax"], seed=1)
    ha = nn.fit(a, X, y, cfg)
    hb = nn.fit(b, X, y, cfg)
    assert ha == hb
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)


# --- losses ----------------------------------------------------------------


def test_cross_entropy_uniform():
    loss, g = nn.cross_entropy(np.zeros(6), 2)
    assert loss == pytest.approx(math.log(6), abs=1e-12)
    expected = np.full(6, 1 / 6)
    expected[2] -= 1
    np.testing.assert_allclose(g, expected)


def test_cross_entropy_peaked_goes_to_zero():
    loss, _ = nn.cross_entropy(np.array([200.0, 0.0, 0.0]), 0)
    assert loss < 1e-12


def test_cross_entropy_two_class_value():
    loss, _ = nn.cross_entropy(np.array([1.0, 0.0]), 0)
    assert loss == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
    assert loss == pytest.approx(0.3133, abs=1e-4)


def test_cross_entropy_bad_label():
    with pytest.raises(ValueError):
        nn.cross_entropy(np.zeros(3), 3)


def test_triplet_equal_points_gives_margin():
    v = np.array([0.3, -1.0])
    loss, grads = nn.triplet_loss(v, v, v, 0.2)
    assert loss == pytest.approx(0.2)


def test_triplet_inactive_has_zero_grad():
    loss, grads = nn.triplet_loss(np.zeros(2), np.zeros(2), np.array([1.0, 0.0]), 0.2)
    assert loss == 0
    assert all(np.all(g == 0) for g in grads)


def test_triplet_value():
    loss, _ = nn.triplet_loss(np.zeros(2), np.array([1.0, 0.0]), np.array([1.0, 0.0]), 0.2)
    assert loss == pytest.approx(0.2)


def test_triplet_gradients_finite_difference():
    rng = np.random.default_rng(9)
    a, p, n = rng.normal(size=(3, 4))
    loss, (ga, gp, gn) = nn.triplet_loss(a, p, n, margin=5.0)
    assert loss > 0
    eps = 1e-6
    for vec, g in ((a, ga), (p, gp), (n, gn)):
        for i in range(4):
            vec[i] += eps
            up = nn.triplet_loss(a, p, n, 5.0)[0]
            vec[i] -= 2 * eps
            down = nn.triplet_loss(a, p, n, 5.0)[0]
            vec[i] += eps
            assert (up - down) / (2 * eps) == pytest.approx(g[i], rel=1e-6, abs=1e-8)


def test_triplet_shape_mismatch():
    with pytest.raises(ShapeError):
        nn.triplet_loss(np.zeros(2), np.zeros(3), np.zeros(2))


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (3, 3), elements=st.floats(-5, 5)),
    st.floats(0, 2 * math.pi),
    st.floats(0, 2 * math.pi),
)
def test_triplet_rotation_invariance(pts, alpha, beta):
    ca, sa, cb, sb = math.cos(alpha), math.sin(alpha), math.cos(beta), math.sin(beta)
    Rz = np.array([[ca, -sa, 0], [sa, ca, 0], [0, 0, 1]])
    Rx = np.array([[1, 0, 0], [0, cb, -sb], [0, sb, cb]])
    R = Rz @ Rx
    before = nn.triplet_loss(*pts, margin=0.2)[0]
    after = nn.triplet_loss(*(pts @ R.T), margin=0.2)[0]
    assert after == pytest.approx(before, abs=1e-9)


def test_gradient_reversal():
    np.testing.assert_array_equal(nn.gradient_reversal([2.0, -4.0], 1.0), [-2.0, 4.0])
    np.testing.assert_array_equal(nn.gradient_reversal([2.0, -4.0], 0.0), [0.0, 0.0])
    np.testing.assert_array_equal(nn.gradient_reversal([2.0, -4.0], 0.5), [-1.0, 2.0])


def test_binary_cross_entropy_gradient():
    rng = np.random.default_rng(2)
    net = nn.init_net([3, 4, 1], ["relu", "sigmoid"], seed=2)
    X = rng.normal(size=(7, 3))
    t = rng.integers(0, 2, size=7)

    def loss_fn(n):
        trace = nn.forward(n, X)
        value, g = nn.binary_cross_entropy(trace.logits, t)
        return value, nn.backward(n, trace, g, from_logits=True)[0]

    assert nn.finite_difference_check(net, loss_fn) < 1e-4


def test_hinge_gradient():
    rng = np.random.default_rng(6)
    net = nn.init_net([4, 3], ["linear"], seed=6)
    X = rng.normal(size=(9, 4))
    y = rng.integers(0, 3, size=9)

    def loss_fn(n):
        trace = nn.forward(n, X)
        value, g = nn.ovr_hinge(trace.logits, y)
        return value, nn.backward(n, trace, g, from_logits=True)[0]

    assert nn.finite_difference_check(net, loss_fn) < 1e-4


# --- persistence -------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    net = random_net(12, sizes=(5, 7, 4), acts=("relu", "softmax"))
    net.name = "w_3"
    path = tmp_path / "net.txt"
    nn.save_net(net, path)
    back = nn.load_net(path)
    assert back.name == "w_3"
    X = np.random.default_rng(0).normal(size=(6, 5))
    np.testing.assert_allclose(nn.predict(back, X), nn.predict(net, X), atol=1e-12, rtol=0)


def test_load_rejects_bad_row(tmp_path):
    text = nn.dumps_net(random_net(0)).splitlines()
    text[6] = "1.0 2.0"
    with pytest.raises(ParseError, match="line 7"):
        nn.loads_net("\n".join(text))
