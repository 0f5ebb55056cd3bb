"""Non-stationary data sources.

Two streams share one protocol: ``next_train(batch_size)`` emits each
training sample exactly once and never exposes task identity; the harness
reads ``current_task_index`` and per-task held-out data through
``eval_set``/``eval_inputs`` on its own side of the fence.

* PermutedImageStream: IDX-file images downsampled to 7x7; each task
  applies a fresh random permutation of the 49 pixels to a fresh shuffle
  of the base corpus (58,000 train / 2,000 eval per task).
* ScrStream: slowly changing regression. 20 binary inputs; the first 15
  hold per-task values and exactly one of them flips at each boundary,
  the last 5 are redrawn per sample; targets come from a frozen random
  linear-threshold-unit network.
"""

import os
import struct

import numpy as np

from .errors import DataError, ShapeError
from .replay import Sample

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049


def load_idx(path):
    """Parse a big-endian IDX file.

    Image files (magic 2051) come back as float64 scaled to [0, 1] with
    shape (n, rows, cols); label files (magic 2049) as int64 of shape (n,).
    """
    if not os.path.exists(path):
        raise DataError(
            f"IDX file not found: {path} (expected MNIST-style files such as "
            f"train-images-idx3-ubyte / train-labels-idx1-ubyte; see README "
            f"for generating a synthetic stand-in)"
        )
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise DataError(f"{path}: truncated IDX header ({len(raw)} bytes)")
    magic = struct.unpack(">i", raw[:4])[0]
    if magic == IDX_IMAGE_MAGIC:
        ndim = 3
    elif magic == IDX_LABEL_MAGIC:
        ndim = 1
    else:
        raise DataError(
            f"{path}: bad IDX magic {magic}, expected {IDX_IMAGE_MAGIC} "
            f"(images) or {IDX_LABEL_MAGIC} (labels)"
        )
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated IDX dimension header")
    dims = struct.unpack(f">{ndim}i", raw[4:header])
    expected = header + int(np.prod(dims))
    if len(raw) != expected:
        raise DataError(
            f"{path}: expected {expected} bytes for dims {dims}, got {len(raw)}"
        )
    body = np.frombuffer(raw, dtype=np.uint8, offset=header)
    if magic == IDX_IMAGE_MAGIC:
        return body.reshape(dims).astype(np.float64) / 255.0
    return body.astype(np.int64)


def write_idx_images(path, images):
    """Write a uint8 (n, rows, cols) array in IDX image format."""
    arr = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", IDX_IMAGE_MAGIC, *arr.shape))
        f.write(arr.tobytes())


def write_idx_labels(path, labels):
    """Write an integer label vector in IDX label format."""
    arr = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", IDX_LABEL_MAGIC, arr.shape[0]))
        f.write(arr.tobytes())


def downsample_28_to_7(image):
    """4x4 non-overlapping mean pooling from 784 pixels down to 49.

    Accepts (784,), (28, 28), or batches thereof; returns (49,) or (n, 49).
    """
    arr = np.asarray(image, dtype=np.float64)
    single = arr.ndim == 1 or arr.shape == (28, 28)
    flat = arr.reshape(1, -1) if single else arr.reshape(arr.shape[0], -1)
    if flat.shape[1] != 784:
        raise ShapeError(f"expected 784 pixels per image, got {flat.shape[1]}")
    pooled = flat.reshape(-1, 7, 4, 7, 4).mean(axis=(2, 4)).reshape(-1, 49)
    return pooled[0] if single else pooled


def make_permutation(task_seed):
    """Deterministic random permutation of the 49 downsampled pixels."""
    return np.random.default_rng(task_seed).permutation(49)


def _one_hot(label, n_classes):
    y = np.zeros(n_classes)
    y[label] = 1.0
    return y


class PermutedImageStream:
    """Permuted-pixel task stream over an IDX image corpus.

    Each task reshuffles the base corpus (58,000 train / 2,000 eval by
    default proportions) and applies one fixed pixel permutation to every
    image; labels are untouched. Task permutations and shuffles derive
    from (seed, task_index), so any task is reproducible on demand.
    """

    N_CLASSES = 10
    loss_kind = "ce"
    y_dim = N_CLASSES

    def __init__(self, images_path, labels_path, seed, task_count, samples_per_task,
                 eval_size=2000):
        images = load_idx(images_path)
        labels = load_idx(labels_path)
        if images.ndim != 3:
            raise DataError(f"{images_path}: expected an image tensor")
        if labels.shape[0] != images.shape[0]:
            raise DataError(
                f"image count {images.shape[0]} != label count {labels.shape[0]}"
            )
        self.base_x = downsample_28_to_7(images.reshape(images.shape[0], -1))
        self.base_y = labels
        self.n_base = self.base_x.shape[0]
        if eval_size >= self.n_base:
            raise DataError("eval_size must leave room for training samples")
        self.train_pool = self.n_base - eval_size
        if samples_per_task > self.train_pool:
            raise DataError(
                f"samples_per_task {samples_per_task} exceeds per-task "
                f"training pool {self.train_pool}"
            )
        self.eval_size = eval_size
        self.seed = seed
        self.task_count = task_count
        self.samples_per_task = samples_per_task
        self.x_dim = 49
        self.current_task_index = 0
        self.emitted_per_task = [0] * task_count
        self._cursor = 0
        self._task_cache = {}
        self._load_task(0)

    def _rngs_for(self, task):
        ss = np.random.SeedSequence([int(self.seed), int(task)])
        perm_ss, shuffle_ss = ss.spawn(2)
        return np.random.default_rng(perm_ss), np.random.default_rng(shuffle_ss)

    def task_arrays(self, task):
        """(train_x, train_y, eval_x, eval_y) for one task, permutation
        applied. Deterministic per (seed, task)."""
        if task in self._task_cache:
            return self._task_cache[task]
        perm_rng, shuffle_rng = self._rngs_for(task)
        perm = perm_rng.permutation(49)
        order = shuffle_rng.permutation(self.n_base)
        train_idx = order[: self.train_pool]
        eval_idx = order[self.train_pool :]
        arrays = (
            self.base_x[train_idx][:, perm],
            self.base_y[train_idx],
            self.base_x[eval_idx][:, perm],
            self.base_y[eval_idx],
        )
        return arrays

    def _load_task(self, task):
        self._current = self.task_arrays(task)
        self._cursor = 0

    def next_train(self, batch_size):
        """Emit the next batch of training samples (no task identity)."""
        train_x, train_y, _, _ = self._current
        batch = []
        for _ in range(batch_size):
            if self._cursor >= self.samples_per_task:
                if self.current_task_index + 1 >= self.task_count:
                    raise DataError("stream exhausted: all tasks consumed")
                self.current_task_index += 1
                self._load_task(self.current_task_index)
                train_x, train_y, _, _ = self._current
            i = self._cursor
            batch.append(
                Sample(x=train_x[i], y=_one_hot(train_y[i], self.N_CLASSES))
            )
            self._cursor += 1
            self.emitted_per_task[self.current_task_index] += 1
        return batch

    def eval_set(self, task):
        """(inputs, integer labels) held out for one task."""
        _, _, eval_x, eval_y = (
            self._current if task == self.current_task_index else self.task_arrays(task)
        )
        return eval_x, eval_y

    def eval_inputs(self, task, n):
        return self.eval_set(task)[0][:n]


class ScrStream:
    """Slowly changing regression stream with a frozen LTU target network."""

    loss_kind = "mse"
    y_dim = 1

    def __init__(self, seed, task_count, steps_per_task, input_bits=20, flip_bits=15,
                 target_hidden=100, threshold=1.5, output_scale=1.0, eval_size=200):
        if flip_bits >= input_bits:
            raise DataError("flip_bits must be smaller than input_bits")
        self.seed = seed
        self.task_count = task_count
        self.samples_per_task = steps_per_task
        self.input_bits = input_bits
        self.flip_bits = flip_bits
        self.threshold = threshold
        self.output_scale = output_scale
        self.eval_size = eval_size
        self.x_dim = input_bits
        ss = np.random.SeedSequence([int(seed), 0x5C5])
        net_ss, init_ss, flip_ss, sample_ss = ss.spawn(4)
        net_rng = np.random.default_rng(net_ss)
        self._w_hidden = net_rng.choice([-1.0, 1.0], size=(target_hidden, input_bits))
        self._w_out = net_rng.choice([-1.0, 1.0], size=target_hidden)
        init_rng = np.random.default_rng(init_ss)
        first = init_rng.integers(0, 2, size=flip_bits).astype(np.float64)
        flip_rng = np.random.default_rng(flip_ss)
        # Precompute the full flip-zone history so past tasks are replayable.
        self._states = [first]
        for _ in range(task_count - 1):
            nxt = self._states[-1].copy()
            j = int(flip_rng.integers(0, flip_bits))
            nxt[j] = 1.0 - nxt[j]
            self._states.append(nxt)
        self._sample_rng = np.random.default_rng(sample_ss)
        self.current_task_index = 0
        self.emitted_per_task = [0] * task_count
        self._cursor = 0

    def flip_state(self, task):
        return self._states[task].copy()

    def target_for(self, x):
        """Frozen LTU network output for inputs of shape (n, input_bits)."""
        x = np.atleast_2d(x)
        fired = (x @ self._w_hidden.T > self.threshold).astype(np.float64)
        return (fired @ self._w_out) * self.output_scale

    def _draw(self, rng, task):
        free = self.input_bits - self.flip_bits
        x = np.empty(self.input_bits)
        x[: self.flip_bits] = self._states[task]
        x[self.flip_bits :] = rng.integers(0, 2, size=free).astype(np.float64)
        y = self.target_for(x[None, :])[0]
        return Sample(x=x, y=np.array([y]))

    def next_train(self, batch_size):
        batch = []
        for _ in range(batch_size):
            if self._cursor >= self.samples_per_task:
                if self.current_task_index + 1 >= self.task_count:
                    raise DataError("stream exhausted: all tasks consumed")
                self.current_task_index += 1
                self._cursor = 0
            batch.append(self._draw(self._sample_rng, self.current_task_index))
            self._cursor += 1
            self.emitted_per_task[self.current_task_index] += 1
        return batch

    def eval_set(self, task, count=None):
        """Held-out samples for one task, regenerated deterministically."""
        count = self.eval_size if count is None else count
        rng = np.random.default_rng(np.random.SeedSequence([int(self.seed), 0xE7A1, int(task)]))
        free = self.input_bits - self.flip_bits
        x = np.empty((count, self.input_bits))
        x[:, : self.flip_bits] = self._states[task][None, :]
        x[:, self.flip_bits :] = rng.integers(0, 2, size=(count, free)).astype(np.float64)
        y = self.target_for(x)[:, None]
        return x, y

    def eval_inputs(self, task, n):
        return self.eval_set(task, count=n)[0]
