"""MAML adapted to streaming data with a partitioned replay buffer.

Each iteration partitions the buffer into equal age-contiguous sub-buffers
(one per pseudo-task), draws disjoint support/query sets from each, takes
one inner gradient step per task, and applies a single outer update (via
Adam) on the sum of query-loss gradients.

The default outer gradient is first-order (query gradient evaluated at the
adapted parameters). The exact path multiplies in the (I - alpha*H) inner
correction, with the Hessian-vector product computed by complex-step
differentiation of the support gradient: exact to machine precision and
checked against closed forms on quadratics in the test suite.
"""

import numpy as np

from . import netcore as nc
from .errors import InsufficientDataError
from .replay import SupportSet


def _as_support(support):
    if isinstance(support, SupportSet):
        return support
    return SupportSet.from_samples(list(support))


def _targets(sup, loss_kind):
    if loss_kind == "ce":
        return np.argmax(sup.ys, axis=1)
    return sup.ys


def loss_and_param_grads(net, xs, targets, loss_kind):
    """Mean loss on a batch and its gradient for net.params() order."""
    y, cache = nc.forward(net, xs)
    loss, g_y = nc.loss_and_grad(y, targets, loss_kind)
    dw, db, _ = nc.backward(net, cache, g_y)
    return loss, dw + db


def support_hvp(net, support, loss_kind, vec, h=1e-30):
    """Hessian-vector product of the support loss at net's parameters.

    Evaluates the gradient at params + i*h*vec with complex arithmetic and
    reads off Im(grad)/h; no subtractive cancellation, so the result is
    exact at 64-bit precision.
    """
    sup = _as_support(support)
    n_w = len(net.weights)
    cnet = nc.DenseNet(
        list(net.layer_dims),
        [w.astype(np.complex128) + 1j * h * v for w, v in zip(net.weights, vec[:n_w])],
        [b.astype(np.complex128) + 1j * h * v for b, v in zip(net.biases, vec[n_w:])],
        net.activation,
    )
    _, grads = loss_and_param_grads(
        cnet, sup.xs.astype(np.complex128), _targets(sup, loss_kind), loss_kind
    )
    return [g.imag / h for g in grads]


def inner_update(theta, support, alpha, loss_kind):
    """One full-batch gradient step on the support loss; theta untouched."""
    sup = _as_support(support)
    _, grads = loss_and_param_grads(theta, sup.xs, _targets(sup, loss_kind), loss_kind)
    adapted = theta.copy()
    n_w = len(adapted.weights)
    for w, g in zip(adapted.weights, grads[:n_w]):
        w -= alpha * g
    for b, g in zip(adapted.biases, grads[n_w:]):
        b -= alpha * g
    return adapted


class MamlLearner:
    """Meta-parameters plus inner/outer step configuration."""

    def __init__(
        self,
        theta,
        inner_lr,
        outer_lr,
        support_size,
        query_size,
        tasks_per_iter,
        loss_kind="mse",
        second_order=False,
    ):
        self.theta = theta
        self.inner_lr = inner_lr
        self.outer_lr = outer_lr
        self.support_size = support_size
        self.query_size = query_size
        self.tasks_per_iter = tasks_per_iter
        self.loss_kind = loss_kind
        self.second_order = second_order
        self.adam = nc.AdamState.for_params(theta.params(), lr=outer_lr)


def outer_gradients(learner, task_batches):
    """Outer gradient (summed over tasks) and the mean query loss.

    First-order: gradient of each query loss at the adapted parameters.
    Exact: composes the (I - alpha*H_support) correction via complex-step
    Hessian-vector products.
    """
    if not task_batches:
        raise ValueError("task_batches must be non-empty")
    theta = learner.theta
    total = [np.zeros_like(p) for p in theta.params()]
    losses = []
    for support, query in task_batches:
        sup = _as_support(support)
        que = _as_support(query)
        adapted = inner_update(theta, sup, learner.inner_lr, learner.loss_kind)
        loss_q, g_q = loss_and_param_grads(
            adapted, que.xs, _targets(que, learner.loss_kind), learner.loss_kind
        )
        losses.append(float(loss_q))
        if learner.second_order and learner.inner_lr != 0.0:
            hv = support_hvp(theta, sup, learner.loss_kind, g_q)
            g_q = [g - learner.inner_lr * h for g, h in zip(g_q, hv)]
        for acc, g in zip(total, g_q):
            acc += g
    return total, float(np.mean(losses))


def outer_update(learner, task_batches):
    """Accumulate outer gradients across tasks and apply one Adam step."""
    grads, mean_loss = outer_gradients(learner, task_batches)
    nc.adam_apply(learner.theta.params(), grads, learner.adam)
    return mean_loss


def train_iteration(learner, buffer, rng):
    """One Alg-2 iteration: partition, per-task inner steps, one outer step."""
    t = learner.tasks_per_iter
    need = t * (learner.support_size + learner.query_size)
    if len(buffer) < need:
        raise InsufficientDataError(
            f"buffer holds {len(buffer)} samples; need {need} for "
            f"{t} tasks x (s={learner.support_size} + q={learner.query_size})"
        )
    slices = buffer.partition(t)
    batches = []
    for part in slices:
        idx = rng.choice(len(part), size=learner.support_size + learner.query_size, replace=False)
        support = [part[i] for i in idx[: learner.support_size]]
        query = [part[i] for i in idx[learner.support_size :]]
        batches.append((support, query))
    return outer_update(learner, batches)


def adapt_and_predict(learner, support, x):
    """Adapt a copy of theta on the support, then predict; theta untouched."""
    sup = _as_support(support)
    adapted = inner_update(learner.theta, sup, learner.inner_lr, learner.loss_kind)
    y, _ = nc.forward(adapted, np.asarray(x, dtype=np.float64))
    return y
