"""Bounded FIFO replay buffer with uniform support sampling and partitioning.

The buffer stores sample rows in preallocated ring arrays so that support
sampling is a single fancy-indexing operation; the Sample-level view is
materialized only where callers need individual elements (partitioning,
archival snapshots).

The training-path sample type deliberately carries no task identity; the
experiment harness tracks task structure on its own side.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, ShapeError


@dataclass(frozen=True)
class Sample:
    """One (input, target) pair. y is one-hot for classification, length-1
    for regression."""

    x: np.ndarray
    y: np.ndarray


@dataclass
class SupportSet:
    """Stacked support matrices; the per-sample view is optional."""

    samples: list
    xs: np.ndarray  # (m, a)
    ys: np.ndarray  # (m, b)

    def __len__(self):
        return self.xs.shape[0]

    @classmethod
    def from_samples(cls, samples):
        if not samples:
            raise InsufficientDataError("support set must be non-empty")
        xs = np.stack([s.x for s in samples])
        ys = np.stack([s.y for s in samples])
        return cls(samples=list(samples), xs=xs, ys=ys)


class ReplayBuffer:
    """Oldest-first bounded queue of samples.

    Dimensions (a, b) may be fixed at construction or locked by the first
    insert; later samples must match.
    """

    def __init__(self, capacity, x_dim=None, y_dim=None):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.x_dim = x_dim
        self.y_dim = y_dim
        self._x = None
        self._y = None
        self._start = 0
        self._size = 0
        if x_dim is not None and y_dim is not None:
            self._allocate()

    def _allocate(self):
        self._x = np.empty((self.capacity, self.x_dim))
        self._y = np.empty((self.capacity, self.y_dim))

    def __len__(self):
        return self._size

    def _physical(self, logical):
        return (self._start + logical) % self.capacity

    def _sample_at(self, logical):
        i = self._physical(logical)
        return Sample(x=self._x[i].copy(), y=self._y[i].copy())

    def __iter__(self):
        return (self._sample_at(i) for i in range(self._size))

    def insert(self, sample):
        """Append one sample; evict the oldest element if over capacity."""
        x = np.asarray(sample.x, dtype=np.float64)
        y = np.asarray(sample.y, dtype=np.float64)
        if x.ndim != 1 or y.ndim != 1:
            raise ShapeError("samples must hold 1-D x and y arrays")
        if self.x_dim is None:
            self.x_dim, self.y_dim = x.shape[0], y.shape[0]
            self._allocate()
        elif x.shape[0] != self.x_dim or y.shape[0] != self.y_dim:
            raise ShapeError(
                f"sample dims ({x.shape[0]}, {y.shape[0]}) do not match "
                f"buffer dims ({self.x_dim}, {self.y_dim})"
            )
        if self._size < self.capacity:
            pos = self._physical(self._size)
            self._size += 1
        else:
            pos = self._start  # overwrite the oldest element
            self._start = (self._start + 1) % self.capacity
        self._x[pos] = x
        self._y[pos] = y
        return self

    def insert_many(self, samples):
        for s in samples:
            self.insert(s)
        return self

    def sample_support(self, m, rng):
        """Draw m elements uniformly without replacement."""
        if m < 1 or m > self._size:
            raise InsufficientDataError(
                f"cannot sample support of size {m} from buffer of size {self._size}"
            )
        logical = rng.choice(self._size, size=m, replace=False)
        phys = (self._start + logical) % self.capacity
        return SupportSet(samples=None, xs=self._x[phys], ys=self._y[phys])

    def partition(self, t):
        """Split into t equal age-contiguous slices, oldest block first.

        Slice size is floor(size / t); the newest (size mod t) elements are
        left out so all slices are equal.
        """
        if t < 1:
            raise ValueError(f"partition count must be >= 1, got {t}")
        if t > self._size:
            raise InsufficientDataError(
                f"cannot partition buffer of size {self._size} into {t} sub-buffers"
            )
        slice_size = self._size // t
        return [
            [self._sample_at(i * slice_size + j) for j in range(slice_size)]
            for i in range(t)
        ]

    def snapshot(self):
        """Immutable copy of current contents, oldest first."""
        return [self._sample_at(i) for i in range(self._size)]
