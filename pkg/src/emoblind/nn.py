"""Small dense-network engine in float64 numpy.

Networks are plain lists of (W, b, activation) layers. ``forward`` returns a
:class:`Trace` holding every intermediate activation, ``backward`` consumes it
and returns parameter gradients plus the gradient with respect to the input,
which is what lets the suppression code chain a suppressor into a frozen
classifier head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError, ParseError, ShapeError

ACTIVATIONS = ("linear", "relu", "sigmoid", "softmax")
FORMAT_TAG = "emoblind-net"
FORMAT_VERSION = 1


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "linear"

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]


@dataclass
class DenseNet:
    layers: list[Layer]
    name: str = ""

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("network needs at least one layer")
        for i, layer in enumerate(self.layers):
            layer.W = np.asarray(layer.W, dtype=np.float64)
            layer.b = np.asarray(layer.b, dtype=np.float64)
            if layer.W.ndim != 2 or layer.b.shape != (layer.W.shape[0],):
                raise ShapeError(f"layer {i}: weight {layer.W.shape} and bias {layer.b.shape} disagree")
            if layer.activation not in ACTIVATIONS:
                raise ConfigError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.activation == "softmax" and i != len(self.layers) - 1:
                raise ShapeError(f"layer {i}: softmax is only allowed on the last layer")
            if i > 0 and self.layers[i - 1].out_dim != layer.in_dim:
                raise ShapeError(
                    f"layer {i}: expects {layer.in_dim} inputs but layer {i - 1} emits {self.layers[i - 1].out_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.W, layer.b))
        return out

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> DenseNet:
        return DenseNet([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers], self.name)


@dataclass
class Trace:
    """Cached forward pass. ``activations[0]`` is the input batch."""

    activations: list[np.ndarray]
    preacts: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]

    @property
    def logits(self) -> np.ndarray:
        return self.preacts[-1]


def init_net(sizes, activations, seed=0, name="") -> DenseNet:
    """Glorot-uniform weights in +-sqrt(6/(in+out)), zero biases."""
    if len(activations) != len(sizes) - 1:
        raise ConfigError("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(Layer(W, np.zeros(fan_out), act))
    return DenseNet(layers, name)


def identity_net(dim, depth=3, noise=0.0, seed=0, name="") -> DenseNet:
    """Stack of linear layers initialised at identity plus optional Gaussian jitter."""
    rng = np.random.default_rng(seed)
    layers = []
    for _ in range(depth):
        W = np.eye(dim)
        if noise > 0:
            W = W + rng.normal(0.0, noise / math.sqrt(dim), size=(dim, dim))
        layers.append(Layer(W, np.zeros(dim), "linear"))
    return DenseNet(layers, name)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _activate(z, activation):
    if activation == "linear":
        return z
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return sigmoid(z)
    return softmax(z)


def _activation_backward(grad, z, a, activation):
    if activation == "linear":
        return grad
    if activation == "relu":
        return grad * (z > 0)
    if activation == "sigmoid":
        return grad * a * (1.0 - a)
    # softmax Jacobian-vector product
    return a * (grad - np.sum(grad * a, axis=-1, keepdims=True))


def forward(net: DenseNet, batch) -> Trace:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    activations, preacts = [x], []
    for i, layer in enumerate(net.layers):
        if x.shape[1] != layer.in_dim:
            raise ShapeError(f"layer {i} of {net.name or 'network'}: expected {layer.in_dim} inputs, got {x.shape[1]}")
        z = x @ layer.W.T + layer.b
        x = _activate(z, layer.activation)
        preacts.append(z)
        activations.append(x)
    return Trace(activations, preacts)


def predict(net: DenseNet, batch) -> np.ndarray:
    return forward(net, batch).output


def backward(net: DenseNet, trace: Trace, output_gradient, from_logits=False, params=True):
    """Backpropagate ``output_gradient`` through ``net``.

    With ``from_logits=True`` the gradient is taken to be with respect to the
    last layer's pre-activation, so fused losses (softmax + cross-entropy,
    sigmoid + BCE) skip the final activation derivative.

    Returns ``(grads, input_gradient)`` where ``grads`` is a list of
    ``(dW, db)`` pairs aligned with ``net.layers`` (None entries when
    ``params`` is false). Nothing is mutated.
    """
    if len(trace.preacts) != len(net.layers):
        raise ShapeError(f"trace has {len(trace.preacts)} layers, network has {len(net.layers)}")
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    for i, layer in enumerate(net.layers):
        if trace.activations[i].shape[1] != layer.in_dim or trace.preacts[i].shape[1] != layer.out_dim:
            raise ShapeError(f"layer {i}: trace does not match network shapes")
    if g.shape != trace.output.shape:
        raise ShapeError(f"output gradient {g.shape} does not match output {trace.output.shape}")

    grads = [None] * len(net.layers)
    last = len(net.layers) - 1
    for i in range(last, -1, -1):
        layer = net.layers[i]
        if not (from_logits and i == last):
            g = _activation_backward(g, trace.preacts[i], trace.activations[i + 1], layer.activation)
        if params:
            grads[i] = (g.T @ trace.activations[i], g.sum(axis=0))
        g = g @ layer.W
    return grads, g


def zero_grads(net: DenseNet):
    return [(np.zeros_like(l.W), np.zeros_like(l.b)) for l in net.layers]


def add_grads(a, b, scale=1.0):
    return [(dWa + scale * dWb, dba + scale * dbb) for (dWa, dba), (dWb, dbb) in zip(a, b)]


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class TrainConfig:
    epochs: int = 150
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 128
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, net: DenseNet) -> AdamState:
        return cls([np.zeros_like(p) for p in net.params()], [np.zeros_like(p) for p in net.params()])


def adam_update(net: DenseNet, grads, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam step, applied in place. Returns ``(net, state)``."""
    params = net.params()
    flat = [g for pair in grads for g in pair]
    if len(flat) != len(params) or len(state.m) != len(params):
        raise ShapeError("gradient/state layout does not match network")
    for p, g, m in zip(params, flat, state.m):
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient, update aborted")

    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, flat, state.m, state.v):
        if config.weight_decay:
            g = g + config.weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.epsilon)
    return net, state


# ---------------------------------------------------------------------------
# losses; all return (loss, gradient) with batch losses averaged over rows


def cross_entropy(logits, label):
    """Softmax cross-entropy. Gradient is with respect to the logits.

    Accepts a single logit vector with an integer label, or a (B, C) batch
    with a label vector, in which case the loss is the batch mean.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    y = np.atleast_1d(np.asarray(label))
    C = z2.shape[1]
    if C < 2:
        raise ValueError("cross_entropy needs at least two classes")
    if y.shape[0] != z2.shape[0]:
        raise ShapeError("one label per logit row required")
    if np.any(y < 0) or np.any(y >= C):
        raise ValueError(f"label out of range for {C} classes")
    y = y.astype(int)
    shifted = z2 - z2.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(y))
    losses = log_norm - shifted[rows, y]
    grad = softmax(z2)
    grad[rows, y] -= 1.0
    if single:
        return float(losses[0]), grad[0]
    return float(losses.mean()), grad / len(y)


def binary_cross_entropy(logits, targets):
    """Sigmoid cross-entropy on raw logits, batch mean."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    losses = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    grad = (sigmoid(z) - t) / len(z)
    return float(losses.mean()), grad.reshape(-1, 1)


def ovr_hinge(scores, labels):
    """One-vs-rest hinge: mean over rows of sum_c max(0, 1 - y_c s_c)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    signs = -np.ones_like(s)
    signs[np.arange(len(y)), y] = 1.0
    margins = 1.0 - signs * s
    active = margins > 0
    loss = float(np.where(active, margins, 0.0).sum(axis=1).mean())
    return loss, -signs * active / len(y)


def triplet_loss(a, p, n, margin=0.2):
    """Hinge on squared distances, max(0, |a-p|^2 - |a-n|^2 + margin).

    For (B, d) inputs the loss is the batch mean and gradients are scaled
    accordingly. Returns ``(loss, (grad_a, grad_p, grad_n))``.
    """
    a, p, n = (np.asarray(v, dtype=np.float64) for v in (a, p, n))
    if not (a.shape == p.shape == n.shape):
        raise ShapeError(f"triplet shapes differ: {a.shape}, {p.shape}, {n.shape}")
    if margin < 0:
        raise ValueError("margin must be >= 0")
    single = a.ndim == 1
    if single:
        a, p, n = a[None], p[None], n[None]
    d_ap = a - p
    d_an = a - n
    raw = (d_ap**2).sum(axis=1) - (d_an**2).sum(axis=1) + margin
    active = (raw > 0)[:, None] / len(raw)
    ga = 2.0 * (n - p) * active
    gp = -2.0 * d_ap * active
    gn = 2.0 * d_an * active
    loss = float(np.maximum(raw, 0.0).mean())
    if single:
        return loss, (ga[0], gp[0], gn[0])
    return loss, (ga, gp, gn)


def l2_normalize(x, eps=1e-12):
    """Row-wise unit normalisation. Returns ``(u, backward)`` with ``backward(g_u) -> g_x``."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.sqrt(np.sum(x * x, axis=-1, keepdims=True)) + eps
    u = x / norms

    def backward_fn(g):
        return (g - u * np.sum(u * g, axis=-1, keepdims=True)) / norms

    return u, backward_fn


def gradient_reversal(upstream_gradient, scale=1.0):
    """Backward pass of the reversal layer; its forward pass is the identity."""
    if not math.isfinite(scale):
        raise ValueError("reversal scale must be finite")
    return -scale * np.asarray(upstream_gradient, dtype=np.float64)


# ---------------------------------------------------------------------------
# verification


def finite_difference_check(net: DenseNet, loss_fn, eps=1e-5, max_params=10_000, seed=0, rel_floor=1e-3) -> float:
    """Largest relative disagreement between analytic and central-difference gradients.

    ``loss_fn(net)`` must return ``(loss, grads)`` with ``grads`` in the
    ``backward`` layout. Entries are compared as
    ``|a - n| / max(|a|, |n|, rel_floor * max|grad|)`` so that entries far
    below the gradient's scale are judged against that scale. Above
    ``max_params`` parameters a seeded subsample is checked.
    """
    loss, grads = loss_fn(net)
    if not math.isfinite(loss):
        raise NumericError("loss is not finite")
    params = net.params()
    analytic = [g for pair in grads for g in pair]
    total = sum(p.size for p in params)
    index = [(k, j) for k, p in enumerate(params) for j in range(p.size)]
    if total > max_params:
        rng = np.random.default_rng(seed)
        index = [index[i] for i in rng.choice(total, size=max_params, replace=False)]

    a_vals = np.empty(len(index))
    n_vals = np.empty(len(index))
    for slot, (k, j) in enumerate(index):
        flat = params[k].reshape(-1)
        saved = flat[j]
        flat[j] = saved + eps
        up = loss_fn(net)[0]
        flat[j] = saved - eps
        down = loss_fn(net)[0]
        flat[j] = saved
        if not (math.isfinite(up) and math.isfinite(down)):
            raise NumericError("loss is not finite under perturbation")
        n_vals[slot] = (up - down) / (2.0 * eps)
        a_vals[slot] = analytic[k].reshape(-1)[j]

    scale = max(np.abs(a_vals).max(initial=0.0), np.abs(n_vals).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a_vals), np.abs(n_vals)), rel_floor * scale)
    return float((np.abs(a_vals - n_vals) / denom).max())


# ---------------------------------------------------------------------------
# training loop shared by probes, adversaries and heads

LOSSES = {"ce": cross_entropy, "bce": binary_cross_entropy, "hinge": ovr_hinge}


def fit(net: DenseNet, X, y, config: TrainConfig, loss="ce", seed=None, epochs=None):
    """Minibatch Adam on ``loss`` computed from the final pre-activation.

    Returns the list of per-epoch mean losses. ``net`` is trained in place.
    """
    loss_fn = LOSSES[loss]
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    state = AdamState.zeros(net)
    history = []
    n = len(X)
    for _ in range(config.epochs if epochs is None else epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            trace = forward(net, X[idx])
            value, g = loss_fn(trace.logits, y[idx])
            if not math.isfinite(value):
                raise NumericError("training loss became non-finite")
            grads, _ = backward(net, trace, g, from_logits=True)
            adam_update(net, grads, state, config)
            total += value * len(idx)
        history.append(total / n)
    return history


# ---------------------------------------------------------------------------
# persistence


def dumps_net(net: DenseNet) -> str:
    lines = [f"{FORMAT_TAG} {FORMAT_VERSION}", f"name {net.name or '-'}", f"layers {len(net.layers)}"]
    for layer in net.layers:
        lines.append(f"{layer.in_dim} {layer.out_dim} {layer.activation}")
    for layer in net.layers:
        for row in layer.W:
            lines.append(" ".join(repr(float(v)) for v in row))
        lines.append(" ".join(repr(float(v)) for v in layer.b))
    return "\n".join(lines) + "\n"


def loads_net(text: str, first_line=1) -> DenseNet:
    lines = text.splitlines()

    def fail(msg, i):
        raise ParseError(msg, first_line + i)

    if not lines or lines[0].split() != [FORMAT_TAG, str(FORMAT_VERSION)]:
        fail(f"expected header '{FORMAT_TAG} {FORMAT_VERSION}'", 0)
    if len(lines) < 3 or not lines[1].startswith("name ") or not lines[2].startswith("layers "):
        fail("missing name/layers lines", 1)
    name = lines[1][5:]
    name = "" if name == "-" else name
    try:
        count = int(lines[2].split()[1])
    except (IndexError, ValueError):
        fail("bad layer count", 2)
    dims = []
    for i in range(3, 3 + count):
        parts = lines[i].split() if i < len(lines) else []
        if len(parts) != 3:
            fail("bad layer descriptor", i)
        try:
            dims.append((int(parts[0]), int(parts[1]), parts[2]))
        except ValueError:
            fail("bad layer descriptor", i)
    i = 3 + count
    layers = []
    for fan_in, fan_out, act in dims:
        rows = []
        for _ in range(fan_out + 1):
            if i >= len(lines):
                fail("unexpected end of file", i)
            try:
                vals = [float(v) for v in lines[i].split()]
            except ValueError:
                fail("non-numeric parameter value", i)
            want = fan_in if len(rows) < fan_out else fan_out
            if len(vals) != want:
                fail(f"expected {want} values, found {len(vals)}", i)
            rows.append(vals)
            i += 1
        W = np.array(rows[:fan_out], dtype=np.float64).reshape(fan_out, fan_in)
        layers.append(Layer(W, np.array(rows[fan_out], dtype=np.float64), act))
    return DenseNet(layers, name)


def save_net(net: DenseNet, path) -> None:
    Path(path).write_text(dumps_net(net), encoding="utf-8")


def load_net(path) -> DenseNet:
    return loads_net(Path(path).read_text(encoding="utf-8"))
