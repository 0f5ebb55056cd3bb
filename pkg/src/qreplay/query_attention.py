"""Query-only attention learner over a replay buffer.

Each incoming query is scored once against every support element (m scorer
evaluations, never m^2) and the prediction is the score-weighted sum of
support labels:

    y_hat = sum_j score(x_t, x_j[, y_j]) * y_j

Scores are raw by default; softmax normalization sits behind a flag for
ablations. A per-model counter tracks scorer evaluations so the linear
cost contract stays assertable.
"""

from dataclasses import dataclass

import numpy as np

from . import netcore as nc
from .errors import InsufficientDataError, ShapeError


@dataclass
class Prediction:
    """Weighted-sum prediction plus the support scores that produced it."""

    y_hat: np.ndarray
    scores: np.ndarray


class QueryOnlyModel:
    """Scorer network plus optimizer state and the evaluation counter.

    The scorer maps concat(x_t, x_j, y_j) (or concat(x_t, x_j) when labels
    are excluded) to one raw score. Any object with a DenseNet-compatible
    ``forward`` works as a scorer; tests exploit this to hand-construct
    scoring rules.
    """

    def __init__(
        self,
        x_dim,
        y_dim,
        hidden_size=100,
        hidden_layers=1,
        include_labels=True,
        lr=1e-4,
        seed=0,
        normalize_scores=False,
        activation="relu",
        scorer=None,
    ):
        self.x_dim = x_dim
        self.y_dim = y_dim
        self.include_labels = include_labels
        self.normalize_scores = normalize_scores
        self.input_dim = 2 * x_dim + (y_dim if include_labels else 0)
        if scorer is None:
            dims = [self.input_dim] + [hidden_size] * hidden_layers + [1]
            scorer = nc.init_xavier(dims, activation=activation, seed=seed)
        self.scorer = scorer
        self.adam = (
            nc.AdamState.for_params(scorer.params(), lr=lr)
            if isinstance(scorer, nc.DenseNet)
            else None
        )
        self.scorer_eval_count = 0

    def pair_rows(self, queries, support):
        """Stack concat(x_t, x_j[, y_j]) rows for every (query, support) pair."""
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if q.shape[1] != self.x_dim:
            raise ShapeError(f"query dim {q.shape[1]} != configured {self.x_dim}")
        if support.xs.shape[1] != self.x_dim or support.ys.shape[1] != self.y_dim:
            raise ShapeError("support dims do not match model configuration")
        n_q, m = q.shape[0], len(support)
        rows = np.empty((n_q, m, self.input_dim))
        a = self.x_dim
        rows[:, :, :a] = q[:, None, :]
        rows[:, :, a : 2 * a] = support.xs[None, :, :]
        if self.include_labels:
            rows[:, :, 2 * a :] = support.ys[None, :, :]
        return rows.reshape(n_q * m, self.input_dim)


def _scorer_forward(model, rows):
    if isinstance(model.scorer, nc.DenseNet):
        out, cache = nc.forward(model.scorer, rows)
    else:
        out, cache = model.scorer.forward(rows)
    model.scorer_eval_count += rows.shape[0]
    return out, cache


def score(model, x_t, support_element):
    """Raw scorer output for one (query, support element) pair."""
    from .replay import SupportSet

    sup = SupportSet.from_samples([support_element])
    rows = model.pair_rows(np.asarray(x_t)[None, :], sup)
    out, _ = _scorer_forward(model, rows)
    return float(out[0, 0])


def predict_batch(model, queries, support):
    """Scores and predictions for a batch of queries against one support.

    Returns (y_hat (n_q, b), scores (n_q, m), scorer cache, pair rows);
    exactly m scorer evaluations per query.
    """
    if len(support) == 0:
        raise InsufficientDataError("support set is empty")
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    rows = model.pair_rows(q, support)
    out, cache = _scorer_forward(model, rows)
    scores = out.reshape(q.shape[0], len(support))
    if model.normalize_scores:
        scores = nc.softmax(scores, axis=1)
    y_hat = scores @ support.ys
    return y_hat, scores, cache, rows


def predict(model, x_t, support):
    """Prediction for a single query point (Alg-style weighted label sum)."""
    y_hat, scores, _, _ = predict_batch(model, np.asarray(x_t)[None, :], support)
    return Prediction(y_hat=y_hat[0], scores=scores[0])


def _train_on_supports(model, xs, targets, support, loss_kind):
    """Shared core: predict, loss, backprop through the weighted sum, Adam."""
    y_hat, scores, cache, _ = predict_batch(model, xs, support)
    loss, g_y = nc.loss_and_grad(y_hat, targets, loss_kind)
    d_scores = g_y @ support.ys.T  # (n_q, m)
    if model.normalize_scores:
        d_scores = scores * (d_scores - np.sum(scores * d_scores, axis=1, keepdims=True))
    upstream = d_scores.reshape(-1, 1)
    dw, db, _ = nc.backward(model.scorer, cache, upstream)
    nc.adam_step(model.scorer, (dw, db), model.adam)
    return float(loss)


def _targets_for(batch, loss_kind):
    if loss_kind == "ce":
        return np.array([int(np.argmax(s.y)) for s in batch])
    return np.stack([s.y for s in batch])


def batch_train_step(model, sample_batch, buffer, m, loss_kind, rng):
    """Insert the batch, draw one shared support, make one Adam update.

    Per-query losses are averaged; the pre-update mean loss is returned.
    """
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
    targets = _targets_for(sample_batch, loss_kind)
    return _train_on_supports(model, xs, targets, support, loss_kind)


def train_step(model, sample, buffer, m, loss_kind, rng):
    """One online step: insert, sample support, predict, update."""
    return batch_train_step(model, [sample], buffer, m, loss_kind, rng)
