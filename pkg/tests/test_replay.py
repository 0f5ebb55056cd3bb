import numpy as np
import pytest

from qreplay.errors import InsufficientDataError, ShapeError
from qreplay.replay import ReplayBuffer, Sample, SupportSet


def mk(v, y=0.0):
    return Sample(x=np.array([float(v)]), y=np.array([float(y)]))


def xs(buffer_or_list):
    return [s.x[0] for s in buffer_or_list]


class TestInsert:
    def test_fifo_eviction(self):
        buf = ReplayBuffer(capacity=2)
        for v in (1, 2, 3):
            buf.insert(mk(v))
        assert xs(buf) == [2.0, 3.0]

    def test_no_eviction_below_capacity(self):
        buf = ReplayBuffer(capacity=1000)
        for v in range(999):
            buf.insert(mk(v))
        assert len(buf) == 999
        assert xs(buf)[0] == 0.0

    def test_arrival_order_preserved(self):
        buf = ReplayBuffer(capacity=10)
        order = [5, 1, 9, 3, 7]
        for v in order:
            buf.insert(mk(v))
        assert xs(buf) == [float(v) for v in order]

    def test_dimension_mismatch(self):
        buf = ReplayBuffer(capacity=4, x_dim=2, y_dim=1)
        with pytest.raises(ShapeError):
            buf.insert(mk(1))

    def test_fifo_law_random_sequences(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            cap = int(rng.integers(1, 12))
            total = int(rng.integers(0, 30))
            buf = ReplayBuffer(capacity=cap)
            values = [float(v) for v in rng.normal(size=total)]
            for v in values:
                buf.insert(mk(v))
            assert xs(buf) == values[-min(cap, total):] if total else xs(buf) == []


class TestSampleSupport:
    def test_full_draw_is_permutation(self):
        buf = ReplayBuffer(capacity=8)
        for v in range(8):
            buf.insert(mk(v))
        sup = buf.sample_support(8, np.random.default_rng(1))
        assert sorted(sup.xs[:, 0]) == [float(v) for v in range(8)]

    def test_single_element(self):
        buf = ReplayBuffer(capacity=3).insert(mk(42))
        sup = buf.sample_support(1, np.random.default_rng(0))
        assert sup.xs[0, 0] == 42.0

    def test_without_replacement(self):
        buf = ReplayBuffer(capacity=6)
        for v in range(6):
            buf.insert(mk(v))
        rng = np.random.default_rng(2)
        for _ in range(50):
            sup = buf.sample_support(4, rng)
            assert len(set(sup.xs[:, 0])) == 4

    def test_uniformity_binomial_bound(self):
        # 10k draws of m=1 from 4 elements: each count within 3 sigma of 2500
        buf = ReplayBuffer(capacity=4)
        for v in range(4):
            buf.insert(mk(v))
        rng = np.random.default_rng(3)
        counts = np.zeros(4)
        for _ in range(10_000):
            sup = buf.sample_support(1, rng)
            counts[int(sup.xs[0, 0])] += 1
        sigma = np.sqrt(10_000 * 0.25 * 0.75)
        assert np.all(np.abs(counts - 2500.0) <= 3.0 * sigma)

    def test_insufficient_data(self):
        buf = ReplayBuffer(capacity=4).insert(mk(1))
        with pytest.raises(InsufficientDataError):
            buf.sample_support(2, np.random.default_rng(0))

    def test_deterministic_given_rng_state(self):
        buf = ReplayBuffer(capacity=10)
        for v in range(10):
            buf.insert(mk(v))
        a = buf.sample_support(5, np.random.default_rng(9))
        b = buf.sample_support(5, np.random.default_rng(9))
        assert np.array_equal(a.xs, b.xs)


class TestPartition:
    def test_even_split(self):
        buf = ReplayBuffer(capacity=6)
        for v in range(6):
            buf.insert(mk(v))
        parts = buf.partition(3)
        assert [xs(p) for p in parts] == [[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]]

    def test_remainder_dropped_newest(self):
        buf = ReplayBuffer(capacity=7)
        for v in range(7):
            buf.insert(mk(v))
        parts = buf.partition(3)
        assert [len(p) for p in parts] == [2, 2, 2]
        used = [v for p in parts for v in xs(p)]
        assert 6.0 not in used  # newest element unused

    def test_single_partition_is_whole_buffer(self):
        buf = ReplayBuffer(capacity=5)
        for v in range(5):
            buf.insert(mk(v))
        (part,) = buf.partition(1)
        assert xs(part) == xs(buf)

    def test_disjoint_equal_slices(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            size = int(rng.integers(1, 40))
            t = int(rng.integers(1, size + 1))
            buf = ReplayBuffer(capacity=64)
            for v in range(size):
                buf.insert(mk(v))
            parts = buf.partition(t)
            sizes = {len(p) for p in parts}
            assert sizes == {size // t}
            flat = [v for p in parts for v in xs(p)]
            assert len(flat) == len(set(flat))

    def test_insufficient(self):
        buf = ReplayBuffer(capacity=4).insert(mk(0))
        with pytest.raises(InsufficientDataError):
            buf.partition(2)


class TestSampleType:
    def test_training_sample_carries_no_task_identity(self):
        s = mk(0)
        assert not hasattr(s, "task_id")
        assert set(Sample.__dataclass_fields__) == {"x", "y"}

    def test_support_set_stacks(self):
        sup = SupportSet.from_samples([mk(1, 10), mk(2, 20)])
        assert sup.xs.shape == (2, 1)
        assert np.allclose(sup.ys[:, 0], [10.0, 20.0])

    def test_empty_support_rejected(self):
        with pytest.raises(InsufficientDataError):
            SupportSet.from_samples([])
