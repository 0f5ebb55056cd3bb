"""Dense networks with manual forward/backward passes, losses, and Adam.

Everything runs at 64-bit precision. The forward/backward code is written
to be dtype-agnostic so a complex-valued copy of a network can be pushed
through the same code paths (used for machine-precision Hessian-vector
products in the meta-learning module).
"""

from dataclasses import dataclass, field

import numpy as np

from .accel import USE_NUMBA, njit
from .errors import ShapeError

ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass
class DenseNet:
    """Fully-connected network: weights[k] is (dims[k+1], dims[k])."""

    layer_dims: list
    weights: list
    biases: list
    activation: str = "relu"

    @property
    def n_layers(self):
        return len(self.weights)

    def copy(self):
        return DenseNet(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )

    def params(self):
        """Flat list of parameter arrays: all weights, then all biases."""
        return list(self.weights) + list(self.biases)


@dataclass
class ForwardCache:
    """Intermediates from one forward pass: one (pre, post) pair per layer."""

    x: np.ndarray
    pre_acts: list
    acts: list
    squeezed: bool = False

    @property
    def depth(self):
        return len(self.pre_acts)


@dataclass
class AdamState:
    """Adam moments for a list of parameter arrays."""

    first_moment: list
    second_moment: list
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0

    @classmethod
    def for_params(cls, params, lr, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def init_xavier(layer_dims, activation="relu", seed=0):
    """Build a DenseNet with Xavier-uniform weights and zero biases.

    Weights are drawn from U[-sqrt(6/(fan_in+fan_out)), +sqrt(...)];
    identical seeds give bit-identical networks.
    """
    dims = list(layer_dims)
    if len(dims) < 2 or any(int(d) < 1 for d in dims):
        raise ShapeError(f"invalid architecture: layer_dims={layer_dims!r}")
    if activation not in ACTIVATIONS:
        raise ShapeError(f"unknown activation {activation!r}; choose from {ACTIVATIONS}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return DenseNet(dims, weights, biases, activation)


def _activate(z, kind):
    if kind == "relu":
        # Mask on the real part keeps complex-step perturbations intact.
        return np.where(z.real > 0, z, np.zeros((), dtype=z.dtype))
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(pre, kind):
    if kind == "relu":
        return (pre.real > 0).astype(pre.dtype)
    if kind == "tanh":
        t = np.tanh(pre)
        return 1.0 - t * t
    return np.ones_like(pre)


def forward(net, x_batch):
    """Run the network on a batch. Returns (outputs, ForwardCache).

    Accepts a single vector (dims[0],) or a batch (n, dims[0]); the output
    matches the input's rank. Pure function of (net, x_batch).
    """
    x = np.asarray(x_batch)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.layer_dims[0]:
        raise ShapeError(
            f"input has shape {np.shape(x_batch)}, expected (*, {net.layer_dims[0]})"
        )
    acts = [x]
    pre_acts = []
    a = x
    last = net.n_layers - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        pre_acts.append(z)
        a = z if k == last else _activate(z, net.activation)
        acts.append(a)
    cache = ForwardCache(x=x, pre_acts=pre_acts, acts=acts, squeezed=squeezed)
    y = a[0] if squeezed else a
    return y, cache


def backward(net, cache, upstream_grad):
    """Backpropagate upstream_grad (dLoss/dy) through a cached forward pass.

    Returns (weight_grads, bias_grads, dLoss/dx).
    """
    g = np.asarray(upstream_grad)
    if cache.squeezed and g.ndim == 1:
        g = g[None, :]
    if cache.depth != net.n_layers:
        raise ShapeError(
            f"cache depth {cache.depth} does not match net with {net.n_layers} layers"
        )
    if g.shape != cache.acts[-1].shape:
        raise ShapeError(
            f"upstream grad shape {np.shape(upstream_grad)} does not match "
            f"output shape {cache.acts[-1].shape}"
        )
    weight_grads = [None] * net.n_layers
    bias_grads = [None] * net.n_layers
    delta = g
    for k in range(net.n_layers - 1, -1, -1):
        if k != net.n_layers - 1:
            delta = delta * _activate_grad(cache.pre_acts[k], net.activation)
        weight_grads[k] = delta.T @ cache.acts[k]
        bias_grads[k] = delta.sum(axis=0)
        delta = delta @ net.weights[k]
    dx = delta[0] if cache.squeezed else delta
    return weight_grads, bias_grads, dx


# --- Adam ----------------------------------------------------------------


@njit(cache=True)
def _adam_update_numba(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    for i in range(p.size):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        p[i] = p[i] - lr * mhat / (np.sqrt(vhat) + eps)


def _adam_update_numpy(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    m[:] = beta1 * m + (1.0 - beta1) * g
    v[:] = beta2 * v + (1.0 - beta2) * g * g
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


_adam_update = _adam_update_numba if USE_NUMBA else _adam_update_numpy


def adam_apply(params, grads, state):
    """One in-place Adam step with bias correction over parallel lists."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError("params/grads/state lists differ in length")
    state.step_count += 1
    bc1 = 1.0 - state.beta1 ** state.step_count
    bc2 = 1.0 - state.beta2 ** state.step_count
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        g = np.asarray(g)
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match param {p.shape}")
        _adam_update(
            p.reshape(-1),
            np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
            m.reshape(-1),
            v.reshape(-1),
            state.lr,
            state.beta1,
            state.beta2,
            state.epsilon,
            bc1,
            bc2,
        )
    return params, state


def adam_step(net, grads, state):
    """Apply one Adam step to a DenseNet given (weight_grads, bias_grads)."""
    weight_grads, bias_grads = grads
    adam_apply(net.weights + net.biases, list(weight_grads) + list(bias_grads), state)
    return net, state


# --- losses ---------------------------------------------------------------


def mse_loss(pred, target):
    """Mean squared error over all components; grad is w.r.t. pred."""
    p = np.asarray(pred)
    t = np.asarray(target)
    if p.shape != t.shape:
        raise ShapeError(f"pred shape {p.shape} != target shape {t.shape}")
    diff = p - t
    n = p.size
    loss = np.sum(diff * diff) / n
    grad = 2.0 * diff / n
    return loss, grad


def softmax(x, axis=-1):
    """Numerically stabilized softmax (max-subtraction on the real part)."""
    shift = np.max(x.real, axis=axis, keepdims=True)
    e = np.exp(x - shift)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_cross_entropy(scores, class_index):
    """Cross-entropy of softmax(scores) against integer class labels.

    Accepts a single score vector with an int label, or a (n, c) batch with
    an (n,) label array; batch losses are averaged and the gradient carries
    the 1/n factor. Gradient rows are softmax - onehot (sum to zero).
    """
    s = np.asarray(scores)
    single = s.ndim == 1
    if single:
        s = s[None, :]
        labels = np.asarray([class_index])
    else:
        labels = np.asarray(class_index)
        if labels.shape != (s.shape[0],):
            raise ShapeError(
                f"labels shape {labels.shape} does not match batch {s.shape[0]}"
            )
    n, c = s.shape
    if np.any(labels < 0) or np.any(labels >= c):
        raise IndexError(f"class index out of range for {c} classes")
    shift = np.max(s.real, axis=1, keepdims=True)
    z = s - shift
    lse = np.log(np.sum(np.exp(z), axis=1))
    picked = np.take_along_axis(z, labels[:, None], axis=1)[:, 0]
    loss = np.sum(lse - picked) / n
    grad = np.exp(z - lse[:, None])
    np.subtract.at(grad, (np.arange(n), labels), 1.0)
    grad = grad / n
    if single:
        grad = grad[0]
    return loss, grad


def loss_and_grad(pred, target, loss_kind):
    """Dispatch on loss_kind: 'mse' expects target arrays, 'ce' int labels."""
    if loss_kind == "mse":
        return mse_loss(pred, target)
    if loss_kind == "ce":
        return softmax_cross_entropy(pred, target)
    raise ValueError(f"unknown loss kind {loss_kind!r}")
