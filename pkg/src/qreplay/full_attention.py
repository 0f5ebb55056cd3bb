"""Full self-attention baseline over support-plus-query token sequences.

Support samples become tokens concat(x_j, y_j); the query token is
concat(x_t, zeros). L single-head attention blocks with residual
connections (no positional encodings, no layer norm) feed a linear head
that reads the final query-token row. Every layer performs all pairwise
query-key dot products, so the per-layer cost is (m+1)^2 -- tracked by an
instrumented counter as the quadratic counterpart of the query-only model.
"""

from dataclasses import dataclass

import numpy as np

from . import netcore as nc
from .errors import InsufficientDataError, ShapeError


@dataclass
class AttentionBlock:
    """Single-head projections plus a residual feedforward."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    ffn: nc.DenseNet

    def params(self):
        return [self.w_q, self.w_k, self.w_v] + self.ffn.params()


def attention_weights(q_rows, k_rows, d):
    """Softmax over scaled query-key dot products; rows sum to 1."""
    q = np.atleast_2d(q_rows)
    k = np.atleast_2d(k_rows)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    scores = q @ k.T / np.sqrt(d)
    return nc.softmax(scores, axis=-1)


class FullAttentionModel:
    """Stack of attention blocks with a linear output head and Adam state."""

    def __init__(self, x_dim, y_dim, n_layers=1, n_heads=1, lr=1e-4, seed=0):
        if n_heads != 1:
            raise ShapeError("only single-head attention is supported")
        self.x_dim = x_dim
        self.y_dim = y_dim
        self.d_model = x_dim + y_dim
        self.n_layers = n_layers
        rng = np.random.default_rng(seed)
        d = self.d_model
        limit = np.sqrt(6.0 / (2 * d))
        self.blocks = []
        for _ in range(n_layers):
            self.blocks.append(
                AttentionBlock(
                    w_q=rng.uniform(-limit, limit, size=(d, d)),
                    w_k=rng.uniform(-limit, limit, size=(d, d)),
                    w_v=rng.uniform(-limit, limit, size=(d, d)),
                    ffn=nc.init_xavier([d, d, d], activation="relu", seed=rng),
                )
            )
        self.head = nc.init_xavier([d, y_dim], seed=rng)
        self.adam = nc.AdamState.for_params(self.params(), lr=lr)
        self.dot_product_count = 0

    def params(self):
        out = []
        for blk in self.blocks:
            out.extend(blk.params())
        out.extend(self.head.params())
        return out

    def tokens_for(self, queries, support):
        """(n_q, m+1, d) token tensor: support rows then the query token."""
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if q.shape[1] != self.x_dim:
            raise ShapeError(f"query dim {q.shape[1]} != configured {self.x_dim}")
        n_q, m = q.shape[0], len(support)
        t = np.zeros((n_q, m + 1, self.d_model))
        t[:, :m, : self.x_dim] = support.xs[None, :, :]
        t[:, :m, self.x_dim :] = support.ys[None, :, :]
        t[:, m, : self.x_dim] = q  # label slot stays zero
        return t


def _block_forward(tokens, block, counter_host=None):
    """One attention block on a (B, n, d) tensor. Returns (out, cache)."""
    d = tokens.shape[-1]
    q = tokens @ block.w_q
    k = tokens @ block.w_k
    v = tokens @ block.w_v
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(d)
    if counter_host is not None:
        counter_host.dot_product_count += tokens.shape[0] * tokens.shape[1] ** 2
    alpha = nc.softmax(scores, axis=-1)
    attended = alpha @ v
    u = tokens + attended
    b, n, _ = u.shape
    f_flat, ffn_cache = nc.forward(block.ffn, u.reshape(b * n, d))
    out = u + f_flat.reshape(b, n, d)
    cache = (tokens, q, k, v, alpha, ffn_cache, u.shape)
    return out, cache


def _block_backward(d_out, block, cache):
    """Gradient of one block. Returns (d_tokens, grads aligned with params())."""
    tokens, q, k, v, alpha, ffn_cache, u_shape = cache
    b, n, d = u_shape
    dw_f, db_f, du_flat = nc.backward(block.ffn, ffn_cache, d_out.reshape(b * n, d))
    du = d_out + du_flat.reshape(b, n, d)
    d_attended = du
    d_tokens = du.copy()
    d_alpha = d_attended @ v.transpose(0, 2, 1)
    d_v = alpha.transpose(0, 2, 1) @ d_attended
    d_scores = alpha * (d_alpha - np.sum(alpha * d_alpha, axis=-1, keepdims=True))
    d_scores = d_scores / np.sqrt(d)
    d_q = d_scores @ k
    d_k = d_scores.transpose(0, 2, 1) @ q
    d_tokens += d_q @ block.w_q.T + d_k @ block.w_k.T + d_v @ block.w_v.T
    t2 = tokens.transpose(0, 2, 1)
    dw_q = (t2 @ d_q).sum(axis=0)
    dw_k = (t2 @ d_k).sum(axis=0)
    dw_v = (t2 @ d_v).sum(axis=0)
    return d_tokens, [dw_q, dw_k, dw_v] + list(dw_f) + list(db_f)


def attention_layer(tokens, block):
    """Forward-only single block application for a 2-D (n, d) token matrix."""
    out, _ = _block_forward(np.asarray(tokens, dtype=np.float64)[None, :, :], block)
    return out[0]


def forward_tokens(model, queries, support, count=True):
    """Run all blocks; returns (head outputs (n_q, b), caches for backward)."""
    if len(support) == 0:
        raise InsufficientDataError("support set is empty")
    tokens = model.tokens_for(queries, support)
    caches = []
    for blk in model.blocks:
        tokens, cache = _block_forward(tokens, blk, counter_host=model if count else None)
        caches.append(cache)
    query_rows = tokens[:, -1, :]
    y_hat, head_cache = nc.forward(model.head, query_rows)
    return y_hat, (caches, head_cache, tokens.shape)


def predict(model, x_t, support):
    """Prediction for one query point."""
    y_hat, _ = forward_tokens(model, np.asarray(x_t)[None, :], support)
    return y_hat[0]


def predict_batch(model, queries, support):
    y_hat, _ = forward_tokens(model, queries, support)
    return y_hat


def _backward_all(model, caches_bundle, g_y):
    caches, head_cache, final_shape = caches_bundle
    dw_h, db_h, d_query_rows = nc.backward(model.head, head_cache, g_y)
    d_tokens = np.zeros(final_shape)
    d_tokens[:, -1, :] = d_query_rows
    block_grads = [None] * len(model.blocks)
    for i in range(len(model.blocks) - 1, -1, -1):
        d_tokens, grads = _block_backward(d_tokens, model.blocks[i], caches[i])
        block_grads[i] = grads
    flat = []
    for grads in block_grads:
        flat.extend(grads)
    flat.extend(dw_h)
    flat.extend(db_h)
    return flat


def batch_train_step(model, sample_batch, buffer, m, loss_kind, rng):
    """Insert the batch, draw one shared support, one Adam update."""
    if not sample_batch:
        raise InsufficientDataError("empty training batch")
    for s in sample_batch:
        buffer.insert(s)
    if len(buffer) < m:
        raise InsufficientDataError(
            f"buffer holds {len(buffer)} samples; support size {m} requires warm-up"
        )
    support = buffer.sample_support(m, rng)
    xs = np.stack([s.x for s in sample_batch])
    if loss_kind == "ce":
        targets = np.array([int(np.argmax(s.y)) for s in sample_batch])
    else:
        targets = np.stack([s.y for s in sample_batch])
    y_hat, caches_bundle = forward_tokens(model, xs, support)
    loss, g_y = nc.loss_and_grad(y_hat, targets, loss_kind)
    grads = _backward_all(model, caches_bundle, g_y)
    nc.adam_apply(model.params(), grads, model.adam)
    return float(loss)


def train_step(model, sample, buffer, m, loss_kind, rng):
    return batch_train_step(model, [sample], buffer, m, loss_kind, rng)
