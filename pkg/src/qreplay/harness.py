"""Experiment runner: trains learners on task streams and emits CSV metrics.

Protocol per seed (following the forward/backward evaluation scheme):

* rank probe at the start of each scheduled task (held-out probe batch);
* single-pass training through the task's sample budget;
* forward metric per task: held-out accuracy (classification) or mean
  online predict-then-update loss (regression);
* buffer snapshots archived per task (bounded ring); backward probes at
  configured lags re-evaluate archived tasks with task identity known.

Learners never see task indices: the training path hands them bare
(x, y) samples only.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import baselines as bl
from . import diagnostics as dg
from . import full_attention as fa
from . import maml as ml
from . import netcore as nc
from . import query_attention as qa
from .errors import AggregationError, ConfigError, DataError, NumericError
from .replay import ReplayBuffer, SupportSet
from .streams import PermutedImageStream, ScrStream

PHASES = ("forward", "backward", "rank")

LEARNER_LABELS = {
    "query_only": "query_only",
    "full_attention": "full_attention",
    "maml": "maml",
    "bp": "bp",
    "cbp": "cbp_simplified",
    "knn_oracle": "knn_oracle",
}

RAW_HEADER = "seed,task,phase,lag,value,learner,experiment"
AGG_HEADER = "task_window,phase,lag,mean,std,learner,experiment"

_EVAL_CHUNK_ROWS = 200_000  # cap on pair/token rows materialized per eval chunk


@dataclass
class MetricsRow:
    seed: int
    task: int
    phase: str
    lag: object  # int for backward rows, None otherwise
    value: float
    learner: str
    experiment: str


# --- learner adapters ------------------------------------------------------


class _SupportAdapterBase:
    """Shared buffer handling for the two attention-style learners."""

    supports_rank = True

    def __init__(self, cfg, stream, rngs):
        self.m = cfg["support_size"]
        self.buffer = ReplayBuffer(cfg["buffer_capacity"])
        self.loss_kind = stream.loss_kind
        self.train_rng = rngs["train"]
        self.eval_rng = rngs["eval"]

    def _ready(self, incoming):
        return len(self.buffer) + incoming >= self.m

    def archive_snapshot(self):
        """Frozen support for backward probes: the newest m buffer samples,
        which all carry the ending task's data distribution."""
        snap = self.buffer.snapshot()
        return snap[-self.m :]

    def _eval_support(self, snapshot=None, rng=None):
        if snapshot is None:
            return self.buffer.sample_support(self.m, rng or self.eval_rng)
        if len(snapshot) <= self.m:
            return SupportSet.from_samples(snapshot)
        rng = rng or self.eval_rng
        idx = rng.choice(len(snapshot), size=self.m, replace=False)
        return SupportSet.from_samples([snapshot[i] for i in idx])


class QueryOnlyAdapter(_SupportAdapterBase):
    def __init__(self, cfg, stream, rngs):
        super().__init__(cfg, stream, rngs)
        lp = cfg["learner_params"]
        self.model = qa.QueryOnlyModel(
            x_dim=stream.x_dim,
            y_dim=stream.y_dim,
            hidden_size=lp["hidden_size"],
            hidden_layers=lp["hidden_layers"],
            include_labels=lp["include_labels"],
            lr=lp["lr"],
            seed=rngs["init"],
            normalize_scores=lp["normalize_scores"],
        )

    def observe(self, batch):
        if not self._ready(len(batch)):
            self.buffer.insert_many(batch)
            return None
        return qa.batch_train_step(
            self.model, batch, self.buffer, self.m, self.loss_kind, self.train_rng
        )

    def eval_outputs(self, xs, snapshot=None, rng=None):
        support = self._eval_support(snapshot, rng)
        out = np.empty((xs.shape[0], self.model.y_dim))
        chunk = max(1, _EVAL_CHUNK_ROWS // max(1, len(support)))
        for start in range(0, xs.shape[0], chunk):
            block = xs[start : start + chunk]
            y_hat, _, _, _ = qa.predict_batch(self.model, block, support)
            out[start : start + chunk] = y_hat
        return out

    def rank_view(self, probe_xs, rng):
        n = probe_xs.shape[0]
        snap = self.buffer.snapshot()
        if snap:
            idx = rng.integers(0, len(snap), size=n)
            sup_x = np.stack([snap[i].x for i in idx])
            sup_y = np.stack([snap[i].y for i in idx])
        else:
            # cold start: probe inputs pair with themselves, flat labels
            sup_x = probe_xs
            sup_y = np.full((n, self.model.y_dim), 1.0 / self.model.y_dim)
        a = self.model.x_dim
        rows = np.empty((n, self.model.input_dim))
        rows[:, :a] = probe_xs
        rows[:, a : 2 * a] = sup_x
        if self.model.include_labels:
            rows[:, 2 * a :] = sup_y
        return self.model.scorer, rows, "mse"


class FullAttentionAdapter(_SupportAdapterBase):
    def __init__(self, cfg, stream, rngs):
        super().__init__(cfg, stream, rngs)
        lp = cfg["learner_params"]
        self.model = fa.FullAttentionModel(
            x_dim=stream.x_dim,
            y_dim=stream.y_dim,
            n_layers=lp["attention_layers"],
            n_heads=lp["attention_heads"],
            lr=lp["lr"],
            seed=rngs["init"].integers(2**63),
        )

    def observe(self, batch):
        if not self._ready(len(batch)):
            self.buffer.insert_many(batch)
            return None
        return fa.batch_train_step(
            self.model, batch, self.buffer, self.m, self.loss_kind, self.train_rng
        )

    def eval_outputs(self, xs, snapshot=None, rng=None):
        support = self._eval_support(snapshot, rng)
        out = np.empty((xs.shape[0], self.model.y_dim))
        chunk = max(1, _EVAL_CHUNK_ROWS // (len(support) + 1))
        for start in range(0, xs.shape[0], chunk):
            block = xs[start : start + chunk]
            out[start : start + chunk] = fa.predict_batch(self.model, block, support)
        return out

    def rank_view(self, probe_xs, rng):
        snap = self.buffer.snapshot()
        if snap:
            idx = rng.choice(len(snap), size=min(self.m, len(snap)), replace=False)
            support = SupportSet.from_samples([snap[i] for i in idx])
        else:
            ys = np.full((probe_xs.shape[0], self.model.y_dim), 1.0 / self.model.y_dim)
            support = SupportSet(
                samples=[], xs=np.asarray(probe_xs), ys=ys
            )
        _, bundle = fa.forward_tokens(self.model, probe_xs, support, count=False)
        head_cache = bundle[1]
        return self.model.head, head_cache.x, self.loss_kind


class BpAdapter:
    supports_rank = True

    def __init__(self, cfg, stream, rngs):
        lp = cfg["learner_params"]
        dims = [stream.x_dim] + [lp["hidden_size"]] * lp["hidden_layers"] + [stream.y_dim]
        self.net = nc.init_xavier(dims, activation="relu", seed=rngs["init"])
        self.adam = nc.AdamState.for_params(self.net.params(), lr=lp["lr"])
        self.loss_kind = stream.loss_kind

    def observe(self, batch):
        return bl.bp_train_step(self.net, batch, self.adam, self.loss_kind)

    def eval_outputs(self, xs, snapshot=None, rng=None):
        y, _ = nc.forward(self.net, xs)
        return y

    def rank_view(self, probe_xs, rng):
        return self.net, probe_xs, self.loss_kind


class CbpAdapter(BpAdapter):
    def __init__(self, cfg, stream, rngs):
        super().__init__(cfg, stream, rngs)
        lp = cfg["learner_params"]
        self.state = bl.CbpState(
            self.net,
            replacement_rate=lp["replacement_rate"],
            maturity_threshold=lp["maturity_threshold"],
            utility_decay=lp["utility_decay"],
            seed=rngs["cbp"].integers(2**63),
        )

    def observe(self, batch):
        return bl.cbp_train_step(self.net, self.state, batch, self.adam, self.loss_kind)


class MamlAdapter:
    supports_rank = True

    def __init__(self, cfg, stream, rngs):
        lp = cfg["learner_params"]
        dims = [stream.x_dim] + [lp["hidden_size"]] * lp["hidden_layers"] + [stream.y_dim]
        theta = nc.init_xavier(dims, activation="relu", seed=rngs["init"])
        self.learner = ml.MamlLearner(
            theta,
            inner_lr=lp["inner_lr"],
            outer_lr=lp["outer_lr"],
            support_size=lp["inner_support"],
            query_size=lp["inner_query"],
            tasks_per_iter=lp["tasks_per_iter"],
            loss_kind=stream.loss_kind,
            second_order=lp["second_order"],
        )
        self.buffer = ReplayBuffer(cfg["buffer_capacity"])
        self.loss_kind = stream.loss_kind
        self.train_rng = rngs["train"]

    def _need(self):
        return self.learner.tasks_per_iter * (
            self.learner.support_size + self.learner.query_size
        )

    def _recent_support(self, snapshot=None):
        pool = snapshot if snapshot is not None else self.buffer.snapshot()
        s = self.learner.support_size
        if len(pool) < s:
            return None
        return pool[-s:]  # newest samples; no task identity involved

    def archive_snapshot(self):
        snap = self.buffer.snapshot()
        return snap[-max(self.learner.support_size, 1) :]

    def _predict(self, xs, support):
        if support is None:
            y, _ = nc.forward(self.learner.theta, xs)
            return y
        return ml.adapt_and_predict(self.learner, support, xs)

    def observe(self, batch):
        xs = np.stack([s.x for s in batch])
        if self.loss_kind == "ce":
            targets = np.array([int(np.argmax(s.y)) for s in batch])
        else:
            targets = np.stack([s.y for s in batch])
        pred = self._predict(xs, self._recent_support())
        loss, _ = nc.loss_and_grad(pred, targets, self.loss_kind)
        self.buffer.insert_many(batch)
        if len(self.buffer) >= self._need():
            ml.train_iteration(self.learner, self.buffer, self.train_rng)
        return float(loss)

    def eval_outputs(self, xs, snapshot=None, rng=None):
        if snapshot is not None:
            s = self.learner.support_size
            rng = rng or np.random.default_rng(0)
            idx = rng.choice(len(snapshot), size=min(s, len(snapshot)), replace=False)
            support = [snapshot[i] for i in idx]
        else:
            support = self._recent_support()
        return self._predict(xs, support)

    def rank_view(self, probe_xs, rng):
        return self.learner.theta, probe_xs, self.loss_kind


class KnnAdapter:
    supports_rank = False

    def __init__(self, cfg, stream, rngs):
        lp = cfg["learner_params"]
        self.oracle = bl.KnnOracle(
            k=lp["k"], weight_kind=lp["weight_kind"], alpha=lp["knn_alpha"]
        )
        self.buffer = ReplayBuffer(cfg["buffer_capacity"])
        self.loss_kind = stream.loss_kind
        self.y_dim = stream.y_dim
        self.m = cfg["support_size"]

    def archive_snapshot(self):
        snap = self.buffer.snapshot()
        return snap[-self.m :]

    def _predict_many(self, xs, pool):
        sup = SupportSet.from_samples(pool)
        return np.stack(
            [bl.weighted_knn_predict(self.oracle, sup, x) for x in xs]
        )

    def observe(self, batch):
        loss = None
        if len(self.buffer) >= self.oracle.k:
            xs = np.stack([s.x for s in batch])
            pred = self._predict_many(xs, self.buffer.snapshot())
            if self.loss_kind == "ce":
                targets = np.array([int(np.argmax(s.y)) for s in batch])
            else:
                targets = np.stack([s.y for s in batch])
            loss, _ = nc.loss_and_grad(pred, targets, self.loss_kind)
            loss = float(loss)
        self.buffer.insert_many(batch)
        return loss

    def eval_outputs(self, xs, snapshot=None, rng=None):
        pool = snapshot if snapshot is not None else self.buffer.snapshot()
        return self._predict_many(xs, pool)


_ADAPTERS = {
    "query_only": QueryOnlyAdapter,
    "full_attention": FullAttentionAdapter,
    "maml": MamlAdapter,
    "bp": BpAdapter,
    "cbp": CbpAdapter,
    "knn_oracle": KnnAdapter,
}


def build_stream(cfg, seed):
    samples_per_task = cfg["steps_per_task"] * cfg["batch_size"]
    if cfg["experiment"] == "pmnist":
        return PermutedImageStream(
            cfg["data"]["images"],
            cfg["data"]["labels"],
            seed=seed,
            task_count=cfg["task_count"],
            samples_per_task=samples_per_task,
            eval_size=cfg["eval"]["forward_eval_size"],
        )
    st = cfg["stream"]
    return ScrStream(
        seed=seed,
        task_count=cfg["task_count"],
        steps_per_task=samples_per_task,
        input_bits=st["input_bits"],
        flip_bits=st["flip_bits"],
        target_hidden=st["target_hidden"],
        threshold=st["threshold"],
        output_scale=st["output_scale"],
        eval_size=cfg["eval"]["backward_buffer_per_task"],
    )


def build_adapter(cfg, stream, seed):
    root = np.random.SeedSequence([int(seed), 0x9E3779B9])
    init_ss, train_ss, eval_ss, probe_ss, cbp_ss = root.spawn(5)
    rngs = {
        "init": np.random.default_rng(init_ss),
        "train": np.random.default_rng(train_ss),
        "eval": np.random.default_rng(eval_ss),
        "probe": np.random.default_rng(probe_ss),
        "cbp": np.random.default_rng(cbp_ss),
    }
    adapter = _ADAPTERS[cfg["learner"]](cfg, stream, rngs)
    return adapter, rngs


# --- evaluation ------------------------------------------------------------


def _metric(outputs, targets, loss_kind):
    if loss_kind == "ce":
        return float(np.mean(np.argmax(outputs, axis=1) == targets))
    return float(np.mean((outputs - targets) ** 2))


def forward_eval(adapter, stream, task, cfg):
    """Held-out accuracy for classification tasks (no task identity given
    to the learner; support-based learners use their live buffer)."""
    eval_x, eval_y = stream.eval_set(task)
    n = cfg["eval"]["forward_eval_size"]
    outputs = adapter.eval_outputs(eval_x[:n])
    return _metric(outputs, eval_y[:n], stream.loss_kind)


def backward_eval(adapter, stream, cfg, seed, probed_task):
    """Evaluate an archived task; task identity is known here, so support
    comes from the frozen buffer snapshot taken at that task's end."""
    snapshot = probed_task["snapshot"]
    task = probed_task["task"]
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xBAC0, int(task)]))
    if stream.loss_kind == "ce":
        eval_x, eval_y = stream.eval_set(task)
        n = cfg["eval"]["forward_eval_size"]
        eval_x, eval_y = eval_x[:n], eval_y[:n]
    else:
        eval_x, eval_y = stream.eval_set(task, count=cfg["eval"]["backward_buffer_per_task"])
    outputs = adapter.eval_outputs(eval_x, snapshot=snapshot, rng=rng)
    return _metric(outputs, eval_y, stream.loss_kind)


# --- the run loop ----------------------------------------------------------


def run_single_seed(cfg, seed):
    """Train one learner through the whole stream; returns metric rows."""
    stream = build_stream(cfg, seed)
    adapter, rngs = build_adapter(cfg, stream, seed)
    label = LEARNER_LABELS[cfg["learner"]]
    experiment = cfg["experiment"]
    rows = []
    archives = {}
    ring = cfg["eval"]["archive_ring"]
    lags = cfg["eval"]["backward_probe_lags"]
    probe_every = cfg["eval"]["backward_probe_every"]
    rank_every = cfg["diagnostics"]["rank_schedule"]
    has_buffer = hasattr(adapter, "buffer")

    def add(task, phase, lag, value):
        rows.append(MetricsRow(seed, task, phase, lag, float(value), label, experiment))

    for task in range(cfg["task_count"]):
        if rank_every > 0 and adapter.supports_rank and task % rank_every == 0:
            probe_xs = stream.eval_inputs(task, cfg["diagnostics"]["probe_size"])
            value = dg.rank_probe(
                adapter, probe_xs, rngs["probe"],
                method=cfg["diagnostics"]["spectrum_method"],
            )
            add(task, "rank", None, value)
        step_losses = []
        for _ in range(cfg["steps_per_task"]):
            batch = stream.next_train(cfg["batch_size"])
            loss = adapter.observe(batch)
            if loss is not None:
                if not np.isfinite(loss):
                    raise NumericError(
                        f"non-finite training loss at task {task} (seed {seed})"
                    )
                step_losses.append(loss)
        if experiment == "pmnist":
            value = forward_eval(adapter, stream, task, cfg)
        else:
            value = float(np.mean(step_losses)) if step_losses else float("nan")
        add(task, "forward", None, value)
        if has_buffer:
            archives[task] = {"task": task, "snapshot": adapter.archive_snapshot()}
        else:
            archives[task] = {"task": task, "snapshot": None}
        stale = [t for t in archives if t <= task - ring]
        for t in stale:
            del archives[t]
        if probe_every > 0 and (task + 1) % probe_every == 0:
            for j in sorted(lags):
                if task - j in archives:
                    value = backward_eval(adapter, stream, cfg, seed, archives[task - j])
                    add(task, "backward", j, value)
    return rows


def raw_csv_lines(rows):
    lines = [RAW_HEADER]
    for r in rows:
        lag = "" if r.lag is None else str(r.lag)
        lines.append(
            f"{r.seed},{r.task},{r.phase},{lag},{r.value!r},{r.learner},{r.experiment}"
        )
    return lines


def parse_raw_csv(text):
    lines = text.strip().splitlines()
    if not lines or lines[0] != RAW_HEADER:
        raise DataError(f"raw CSV must start with header {RAW_HEADER!r}")
    rows = []
    for line in lines[1:]:
        seed, task, phase, lag, value, learner, experiment = line.split(",")
        rows.append(
            MetricsRow(
                int(seed), int(task), phase, int(lag) if lag else None,
                float(value), learner, experiment,
            )
        )
    return rows


def window_average(series, window):
    """Non-overlapping block means; a final partial block averages over its
    actual length."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    values = list(series)
    return [
        float(np.mean(values[i : i + window])) for i in range(0, len(values), window)
    ]


def aggregate_seeds(per_seed_values):
    """Mean and population std across seeds for aligned value lists."""
    arr = np.asarray(per_seed_values, dtype=np.float64)
    return arr.mean(axis=0), arr.std(axis=0)


def aggregate_rows(rows, window):
    """Aggregate raw rows into (task_window, phase, lag) cells.

    Every seed must cover exactly the same (phase, lag, task) cells;
    otherwise an AggregationError names the first hole.
    """
    seeds = sorted({r.seed for r in rows})
    learner = rows[0].learner
    experiment = rows[0].experiment
    cells = {}
    for r in rows:
        cells.setdefault((r.phase, r.lag), {}).setdefault(r.seed, {})[r.task] = r.value
    out_lines = [AGG_HEADER]
    phase_order = {p: i for i, p in enumerate(PHASES)}
    for (phase, lag) in sorted(cells, key=lambda k: (phase_order[k[0]], k[1] or 0)):
        by_seed = cells[(phase, lag)]
        tasks = None
        for seed in seeds:
            if seed not in by_seed:
                raise AggregationError(
                    f"seed {seed} has no rows for cell (phase={phase}, lag={lag})"
                )
            seed_tasks = sorted(by_seed[seed])
            if tasks is None:
                tasks = seed_tasks
            elif seed_tasks != tasks:
                missing = set(tasks).symmetric_difference(seed_tasks)
                raise AggregationError(
                    f"seeds disagree on tasks for cell (phase={phase}, lag={lag}): "
                    f"task {sorted(missing)[0]}"
                )
        windowed = [
            window_average([by_seed[s][t] for t in tasks], window) for s in seeds
        ]
        mean, std = aggregate_seeds(windowed)
        for w, (mu, sd) in enumerate(zip(mean, std)):
            lag_str = "" if lag is None else str(lag)
            out_lines.append(
                f"{w},{phase},{lag_str},{float(mu)!r},{float(sd)!r},{learner},{experiment}"
            )
    return out_lines


def run_experiment(cfg):
    """Run all seeds, write one raw CSV per seed plus one aggregate CSV.

    Returns the mapping of written paths. Identical (config, seed) runs
    produce byte-identical files.
    """
    if cfg["experiment"] == "pmnist":
        for key in ("images", "labels"):
            path = cfg["data"][key]
            if not os.path.exists(path):
                raise DataError(
                    f"missing data file for pmnist: {path} (config key data.{key}); "
                    f"generate a synthetic corpus with 'qreplay synth-data' or point "
                    f"at MNIST-style IDX files"
                )
    os.makedirs(cfg["output_dir"], exist_ok=True)
    label = LEARNER_LABELS[cfg["learner"]]
    stem = f"{cfg['experiment']}_{label}"
    paths = {"raw": [], "aggregate": None}
    all_rows = []
    for seed in cfg["seeds"]:
        rows = run_single_seed(cfg, seed)
        all_rows.extend(rows)
        path = os.path.join(cfg["output_dir"], f"{stem}_seed{seed}.csv")
        with open(path, "w") as f:
            f.write("\n".join(raw_csv_lines(rows)) + "\n")
        paths["raw"].append(path)
    agg_path = os.path.join(cfg["output_dir"], f"{stem}_aggregate.csv")
    with open(agg_path, "w") as f:
        f.write("\n".join(aggregate_rows(all_rows, cfg["eval"]["window"])) + "\n")
    paths["aggregate"] = agg_path
    return paths
