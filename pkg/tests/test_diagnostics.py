import numpy as np
import pytest

from qreplay import diagnostics as dg
from qreplay import netcore as nc
from qreplay.errors import DegenerateSpectrumError, NumericError

from oracles import char_poly_eigenvalues, finite_diff_hessian


def sym_random(rng, n, scale=1.0):
    a = rng.normal(size=(n, n)) * scale
    return 0.5 * (a + a.T)


class TestJacobi:
    def test_identity(self):
        eigs = dg.jacobi_eigenvalues(np.eye(4))
        assert np.allclose(eigs, np.ones(4))

    def test_diagonal(self):
        eigs = dg.jacobi_eigenvalues(np.diag([3.0, 1.0]))
        assert np.allclose(eigs, [3.0, 1.0])

    def test_hand_2x2(self):
        eigs = dg.jacobi_eigenvalues(np.array([[2.0, 1.0], [1.0, 2.0]]))
        assert np.allclose(eigs, [3.0, 1.0], atol=1e-12)

    def test_matches_char_poly_on_small_fixtures(self):
        rng = np.random.default_rng(0)
        fixtures = [sym_random(rng, 2) for _ in range(10)]
        fixtures += [sym_random(rng, 3) for _ in range(10)]
        fixtures.append(np.array([[2.0, 1.0], [1.0, 2.0]]))
        fixtures.append(np.diag([5.0, -1.0, 0.5]))
        for mat in fixtures:
            jac = dg.jacobi_eigenvalues(mat)
            ref = char_poly_eigenvalues(mat)
            assert np.max(np.abs(jac - ref)) < 1e-9

    def test_trace_preserved_and_matches_lapack(self):
        rng = np.random.default_rng(1)
        for n in (5, 12, 30):
            mat = sym_random(rng, n)
            jac = dg.jacobi_eigenvalues(mat)
            assert abs(jac.sum() - np.trace(mat)) < 1e-9
            ref = np.linalg.eigvalsh(mat)[::-1]
            assert np.max(np.abs(jac - ref)) < 1e-9

    def test_rejects_non_symmetric(self):
        with pytest.raises(ValueError):
            dg.jacobi_eigenvalues(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            dg.jacobi_eigenvalues(np.zeros((2, 3)))


class TestEffectiveRank:
    def test_uniform_spectrum(self):
        erank, normalized = dg.effective_rank(np.ones(4))
        assert abs(erank - 4.0) < 1e-12
        assert abs(normalized - 1.0) < 1e-12

    def test_rank_one_spectrum(self):
        erank, normalized = dg.effective_rank(np.array([5.0, 0.0, 0.0]))
        assert abs(erank - 1.0) < 1e-12
        assert abs(normalized - 1.0 / 3.0) < 1e-12

    def test_analytic_three_one(self):
        erank, _ = dg.effective_rank(np.array([3.0, 1.0]))
        expected = np.exp(-(0.75 * np.log(0.75) + 0.25 * np.log(0.25)))
        assert abs(erank - expected) < 1e-12
        assert abs(erank - 1.754765) < 1e-6

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        lam = rng.normal(size=12)
        base, _ = dg.effective_rank(lam)
        for c in (1e-6, 1.0, 1e6):
            scaled, _ = dg.effective_rank(c * lam)
            assert abs(scaled - base) < 1e-9

    def test_negative_eigenvalues_use_magnitude(self):
        a, _ = dg.effective_rank(np.array([3.0, -1.0]))
        b, _ = dg.effective_rank(np.array([3.0, 1.0]))
        assert abs(a - b) < 1e-12

    def test_bounds(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            lam = rng.normal(size=int(rng.integers(1, 20)))
            erank, normalized = dg.effective_rank(lam)
            nonzero = np.count_nonzero(lam)
            assert 1.0 - 1e-12 <= erank <= nonzero + 1e-9
            assert 0.0 < normalized <= 1.0 + 1e-12

    def test_degenerate_spectrum(self):
        with pytest.raises(DegenerateSpectrumError):
            dg.effective_rank(np.zeros(3))


class TestLastLayerHessian:
    def test_hand_mse_fixture(self):
        # linear 1x1 output on hidden activation a=(1,2):
        # Hessian over (w1, w2, b) = 2 * [[1,2,1],[2,4,2],[1,2,1]]
        net = nc.DenseNet(
            [2, 2, 1],
            [np.eye(2), np.array([[0.3, -0.2]])],
            [np.zeros(2), np.zeros(1)],
            activation="identity",
        )
        hess = dg.last_layer_hessian(net, np.array([[1.0, 2.0]]), "mse")
        expected = 2.0 * np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=float)
        assert np.allclose(hess, expected, atol=1e-12)

    def test_exactly_symmetric(self):
        rng = np.random.default_rng(4)
        net = nc.init_xavier([3, 5, 4], seed=11)
        h = dg.last_layer_hessian(net, rng.normal(size=(6, 3)), "ce")
        assert np.array_equal(h, h.T)

    def test_empty_batch_rejected(self):
        net = nc.init_xavier([2, 2], seed=0)
        with pytest.raises(ValueError):
            dg.last_layer_hessian(net, np.zeros((0, 2)), "mse")

    @pytest.mark.parametrize("loss_kind", ["mse", "ce"])
    def test_matches_finite_difference_hessian(self, loss_kind):
        rng = np.random.default_rng(5)
        for _ in range(5):
            dims = [int(rng.integers(2, 5)), int(rng.integers(2, 6)), int(rng.integers(2, 4))]
            net = nc.init_xavier(dims, activation="tanh", seed=int(rng.integers(2**31)))
            n = int(rng.integers(1, 4))
            x = rng.normal(size=(n, dims[0]))
            if loss_kind == "mse":
                target = rng.normal(size=(n, dims[-1]))
            else:
                target = rng.integers(0, dims[-1], size=n)

            w, b = net.weights[-1], net.biases[-1]
            out_dim, in_dim = w.shape
            theta = np.concatenate(
                [np.concatenate([w[o], [b[o]]]) for o in range(out_dim)]
            )

            def loss_fn():
                for o in range(out_dim):
                    w[o, :] = theta[o * (in_dim + 1) : o * (in_dim + 1) + in_dim]
                    b[o] = theta[o * (in_dim + 1) + in_dim]
                y, _ = nc.forward(net, x)
                return nc.loss_and_grad(y, target, loss_kind)[0]

            fd = finite_diff_hessian(loss_fn, theta, h=1e-4)
            loss_fn()  # restore params from theta
            closed = dg.last_layer_hessian(net, x, loss_kind)
            assert np.max(np.abs(closed - fd)) < 1e-5


class TestSpectrum:
    def test_jacobi_and_lapack_agree(self):
        rng = np.random.default_rng(6)
        mat = sym_random(rng, 20)
        a = dg.hessian_spectrum(mat, method="jacobi")
        b = dg.hessian_spectrum(mat, method="lapack")
        assert abs(a.normalized_erank - b.normalized_erank) < 1e-9
        assert np.max(np.abs(a.eigenvalues - b.eigenvalues)) < 1e-8

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(7)
        spec = dg.hessian_spectrum(sym_random(rng, 8))
        assert abs(spec.probabilities.sum() - 1.0) < 1e-9
        assert np.all(np.diff(spec.eigenvalues) <= 1e-12)

    def test_auto_dispatch_threshold(self):
        rng = np.random.default_rng(8)
        small = dg.hessian_spectrum(sym_random(rng, 4), method="auto")
        big = dg.hessian_spectrum(sym_random(rng, dg.JACOBI_MAX_DIM + 8), method="auto")
        assert small.erank >= 1.0 and big.erank >= 1.0

    def test_scaled_matrix_jacobi_converges(self):
        rng = np.random.default_rng(9)
        mat = sym_random(rng, 6, scale=1e8)
        spec = dg.hessian_spectrum(mat, method="jacobi")
        ref = dg.hessian_spectrum(mat / 1e8, method="lapack")
        assert abs(spec.normalized_erank - ref.normalized_erank) < 1e-9
