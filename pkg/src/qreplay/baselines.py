"""Reference learners: kNN oracles, vanilla BP, and simplified CBP.

The kNN predictors are parameter-free oracles used both as baselines and
as cross-checks for the query-only learner. CBP here is a documented
simplification of continual backpropagation: per-unit utilities decay
toward each unit's recent contribution (mean |activation| times outgoing
weight norm) and the lowest-utility mature units are reinitialized at a
fractional rate per step. Outputs label it "CBP (simplified)".
"""

from dataclasses import dataclass, field

import numpy as np

from . import netcore as nc
from .accel import USE_NUMBA, njit
from .errors import InsufficientDataError
from .replay import SupportSet

WEIGHT_KINDS = ("uniform", "inverse_distance", "exp_decay")


@dataclass
class KnnOracle:
    """k nearest neighbors under Euclidean distance with optional weights."""

    k: int
    weight_kind: str = "uniform"
    alpha: float = 1.0

    def __post_init__(self):
        if self.weight_kind not in WEIGHT_KINDS:
            raise ValueError(f"weight_kind must be one of {WEIGHT_KINDS}")


def _nearest(support, x, k):
    sup = support if isinstance(support, SupportSet) else SupportSet.from_samples(list(support))
    if k > len(sup):
        raise InsufficientDataError(
            f"k={k} exceeds support size {len(sup)}"
        )
    d = np.linalg.norm(sup.xs - np.asarray(x)[None, :], axis=1)
    idx = np.argsort(d, kind="stable")[:k]
    return sup, idx, d[idx]


def knn_predict(oracle, support, x):
    """Unweighted local average of the k nearest labels."""
    sup, idx, _ = _nearest(support, x, oracle.k)
    return sup.ys[idx].mean(axis=0)


def weighted_knn_predict(oracle, support, x):
    """Distance-weighted average over the k nearest labels.

    inverse_distance short-circuits on exact matches (limit convention):
    if any of the k nearest sits at distance zero, their plain mean label
    is returned.
    """
    sup, idx, dist = _nearest(support, x, oracle.k)
    ys = sup.ys[idx]
    if oracle.weight_kind == "uniform":
        w = np.ones(len(idx))
    elif oracle.weight_kind == "inverse_distance":
        zero = dist == 0.0
        if np.any(zero):
            return ys[zero].mean(axis=0)
        w = 1.0 / dist
    else:
        w = np.exp(-oracle.alpha * dist)
    return (w[:, None] * ys).sum(axis=0) / w.sum()


# --- gradient-descent baselines -------------------------------------------


def _batch_arrays(sample_batch, loss_kind):
    xs = np.stack([s.x for s in sample_batch])
    if loss_kind == "ce":
        targets = np.array([int(np.argmax(s.y)) for s in sample_batch])
    else:
        targets = np.stack([s.y for s in sample_batch])
    return xs, targets


def bp_train_step(net, sample_batch, adam, loss_kind):
    """Plain forward/backward/Adam on one batch; returns pre-update loss."""
    loss, _ = _bp_step_with_cache(net, sample_batch, adam, loss_kind)
    return loss


def _bp_step_with_cache(net, sample_batch, adam, loss_kind):
    xs, targets = _batch_arrays(sample_batch, loss_kind)
    y, cache = nc.forward(net, xs)
    loss, g_y = nc.loss_and_grad(y, targets, loss_kind)
    dw, db, _ = nc.backward(net, cache, g_y)
    nc.adam_step(net, (dw, db), adam)
    return float(loss), cache


@njit(cache=True)
def _utility_update_numba(util, contrib, decay):
    for i in range(util.size):
        util[i] = decay * util[i] + (1.0 - decay) * contrib[i]


def _utility_update_numpy(util, contrib, decay):
    util[:] = decay * util + (1.0 - decay) * contrib


_utility_update = _utility_update_numba if USE_NUMBA else _utility_update_numpy


class CbpState:
    """Per-hidden-unit utilities/ages plus the fractional replacement
    accumulator, one slot per hidden layer."""

    def __init__(
        self,
        net,
        replacement_rate=1e-4,
        maturity_threshold=100,
        utility_decay=0.99,
        seed=0,
    ):
        hidden = net.layer_dims[1:-1]
        self.utilities = [np.zeros(h) for h in hidden]
        self.ages = [np.zeros(h, dtype=np.int64) for h in hidden]
        self.accumulators = [0.0 for _ in hidden]
        self.replacement_rate = replacement_rate
        self.maturity_threshold = maturity_threshold
        self.utility_decay = utility_decay
        self.rng = np.random.default_rng(seed)


def _reinit_units(net, state, adam, layer, unit_idx):
    """Fresh Xavier fan-in, zeroed outgoing weights, cleared optimizer
    moments, reset age/utility for the given hidden units."""
    fan_in = net.layer_dims[layer]
    fan_out = net.layer_dims[layer + 1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    n_w = len(net.weights)
    for i in unit_idx:
        net.weights[layer][i, :] = state.rng.uniform(-limit, limit, size=fan_in)
        net.biases[layer][i] = 0.0
        net.weights[layer + 1][:, i] = 0.0
        state.utilities[layer][i] = 0.0
        state.ages[layer][i] = 0
        if adam is not None:
            for moments in (adam.first_moment, adam.second_moment):
                moments[layer][i, :] = 0.0
                moments[layer + 1][:, i] = 0.0
                moments[n_w + layer][i] = 0.0


def cbp_train_step(net, state, sample_batch, adam, loss_kind):
    """BP step, then utility bookkeeping and selective reinitialization.

    With replacement_rate=0 the network trajectory is bit-identical to
    bp_train_step.
    """
    loss, cache = _bp_step_with_cache(net, sample_batch, adam, loss_kind)
    for layer in range(len(state.utilities)):
        act = cache.acts[layer + 1]
        outgoing = np.linalg.norm(net.weights[layer + 1], axis=0)
        contrib = np.abs(act).mean(axis=0) * outgoing
        _utility_update(state.utilities[layer], contrib, state.utility_decay)
        state.ages[layer] += 1
    if state.replacement_rate > 0.0:
        for layer in range(len(state.utilities)):
            mature = np.flatnonzero(state.ages[layer] >= state.maturity_threshold)
            if mature.size == 0:
                continue
            state.accumulators[layer] += state.replacement_rate * mature.size
            n_replace = int(state.accumulators[layer])
            if n_replace == 0:
                continue
            state.accumulators[layer] -= n_replace
            order = np.argsort(state.utilities[layer][mature], kind="stable")
            chosen = mature[order[:n_replace]]
            _reinit_units(net, state, adam, layer, chosen)
    return loss
