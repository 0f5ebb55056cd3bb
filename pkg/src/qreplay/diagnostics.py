"""Last-layer Hessians, symmetric eigensolving, and effective rank.

The effective rank of the last-layer Hessian is tracked across tasks as a
plasticity proxy: erank = exp(entropy of the normalized eigenvalue
distribution), normalized by the Hessian dimension.

Eigenvalues come from a cyclic Jacobi solver (numba-accelerated, with a
pure-numpy twin selected by QREPLAY_NO_NUMBA). For matrices larger than
``JACOBI_MAX_DIM`` the spectrum helper switches to LAPACK's ``eigvalsh``;
the two routes are cross-checked in the test suite.
"""

from dataclasses import dataclass

import numpy as np

from .accel import USE_NUMBA, njit
from .errors import DegenerateSpectrumError, NumericError, ShapeError
from .netcore import forward, softmax

# Above this dimension hessian_spectrum prefers LAPACK over Jacobi sweeps.
JACOBI_MAX_DIM = 64

_MAX_SWEEPS = 60


@njit(cache=True)
def _jacobi_sweeps_numba(a, tol, max_sweeps):
    n = a.shape[0]
    for sweep in range(max_sweeps):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                v = abs(a[i, j])
                if v > off:
                    off = v
        if off < tol:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for i in range(n):
                    aip = a[i, p]
                    aiq = a[i, q]
                    a[i, p] = c * aip - s * aiq
                    a[i, q] = s * aip + c * aiq
                for i in range(n):
                    api = a[p, i]
                    aqi = a[q, i]
                    a[p, i] = c * api - s * aqi
                    a[q, i] = s * api + c * aqi
    return -1


def _jacobi_sweeps_numpy(a, tol, max_sweeps):
    n = a.shape[0]
    for sweep in range(max_sweeps):
        off_mat = np.abs(np.triu(a, k=1))
        if (off_mat.max() if n > 1 else 0.0) < tol:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
    return -1


_jacobi_sweeps = _jacobi_sweeps_numba if USE_NUMBA else _jacobi_sweeps_numpy


def jacobi_eigenvalues(sym_matrix, tol=1e-12):
    """All eigenvalues of a symmetric matrix, descending, via cyclic Jacobi.

    Rotations repeat until the largest off-diagonal magnitude drops below
    tol. The input must be square and symmetric within 1e-10.
    """
    a = np.array(sym_matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] > 1 and np.max(np.abs(a - a.T)) > 1e-10:
        raise ValueError("matrix is not symmetric within 1e-10")
    sweeps = _jacobi_sweeps(a, float(tol), _MAX_SWEEPS)
    if sweeps < 0:
        raise NumericError(
            f"Jacobi did not reach off-diagonal < {tol} in {_MAX_SWEEPS} sweeps"
        )
    return np.sort(np.diag(a))[::-1].copy()


def effective_rank(eigenvalues):
    """(erank, normalized_erank) of a spectrum.

    Probabilities use the absolute-value convention p_i = |l_i| / sum|l_j|
    so indefinite Hessians stay well-defined; zero-probability terms
    contribute nothing to the entropy. Normalization divides by the number
    of eigenvalues.
    """
    lam = np.abs(np.asarray(eigenvalues, dtype=np.float64))
    if lam.ndim != 1 or lam.size == 0:
        raise ValueError("eigenvalues must be a non-empty 1-D array")
    total = lam.sum()
    if total == 0.0:
        raise DegenerateSpectrumError("all eigenvalues are zero")
    p = lam / total
    nz = p[p > 0.0]
    entropy = -np.sum(nz * np.log(nz))
    erank = float(np.exp(entropy))
    return erank, erank / lam.size


@dataclass
class HessianSpectrum:
    """Eigenvalues (descending), their probabilities, and effective rank."""

    eigenvalues: np.ndarray
    probabilities: np.ndarray
    erank: float
    normalized_erank: float


def last_layer_hessian(net, probe_batch, loss_kind):
    """Exact Hessian of the mean loss w.r.t. the final layer's (W, b).

    Parameters are ordered per output unit: (W[0,:], b[0], W[1,:], b[1], ...).
    The final layer is linear in both supported losses, so the Hessian has a
    closed form that needs only the last hidden activations (and, for
    cross-entropy, the current softmax outputs); targets never enter.
    Averaged over the batch and symmetrized.
    """
    x = np.asarray(probe_batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] == 0:
        raise ValueError("probe batch must be non-empty")
    y, cache = forward(net, x)
    n = x.shape[0]
    a_last = cache.acts[-2]  # (n, h) input to the final layer
    h = a_last.shape[1]
    b_out = net.layer_dims[-1]
    a_tilde = np.concatenate([a_last, np.ones((n, 1))], axis=1)  # (n, h+1)
    d = h + 1
    dim = b_out * d
    hess = np.zeros((dim, dim))
    if loss_kind == "mse":
        block = (2.0 / b_out) * (a_tilde.T @ a_tilde) / n
        for o in range(b_out):
            hess[o * d : (o + 1) * d, o * d : (o + 1) * d] = block
    elif loss_kind == "ce":
        s = softmax(y, axis=1)  # (n, b_out)
        # R_n = diag(s_n) - s_n s_n^T, contracted against a~ a~^T per sample.
        for o in range(b_out):
            for p in range(o, b_out):
                r = s[:, o] * ((o == p) - s[:, p])  # (n,)
                block = (a_tilde * r[:, None]).T @ a_tilde / n
                hess[o * d : (o + 1) * d, p * d : (p + 1) * d] = block
                if p != o:
                    hess[p * d : (p + 1) * d, o * d : (o + 1) * d] = block.T
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    return 0.5 * (hess + hess.T)


def hessian_spectrum(hess, method="auto", tol=1e-12):
    """Eigendecompose a symmetric Hessian and compute its effective rank.

    method: "jacobi", "lapack", or "auto" (Jacobi up to JACOBI_MAX_DIM,
    LAPACK beyond). The matrix is scale-normalized before Jacobi so the
    absolute tolerance is meaningful; effective rank is scale-invariant.
    """
    hess = np.asarray(hess, dtype=np.float64)
    n = hess.shape[0]
    if method == "auto":
        method = "jacobi" if n <= JACOBI_MAX_DIM else "lapack"
    if method == "jacobi":
        scale = np.max(np.abs(hess))
        if scale == 0.0:
            raise DegenerateSpectrumError("all-zero Hessian")
        eigs = jacobi_eigenvalues(hess / scale, tol=tol) * scale
    elif method == "lapack":
        eigs = np.linalg.eigvalsh(hess)[::-1].copy()
    else:
        raise ValueError(f"unknown spectrum method {method!r}")
    erank, normalized = effective_rank(eigs)
    lam = np.abs(eigs)
    return HessianSpectrum(
        eigenvalues=eigs,
        probabilities=lam / lam.sum(),
        erank=erank,
        normalized_erank=normalized,
    )


def rank_probe(learner, probe_xs, rng, method="auto"):
    """Normalized effective rank of a learner's final-layer Hessian.

    The learner exposes its trackable head via ``rank_view(probe_xs, rng)``
    returning (net, net_inputs, loss_kind); see the learner modules.
    """
    net, inputs, loss_kind = learner.rank_view(probe_xs, rng)
    hess = last_layer_hessian(net, inputs, loss_kind)
    return hessian_spectrum(hess, method=method).normalized_erank


def track_rank(learner, stream, probe_size, schedule, task_count, rng, method="auto"):
    """Probe the learner's normalized effective rank at task boundaries.

    schedule is the probing stride in tasks (1 = every task). The probe
    batch comes from each task's held-out data, so no training samples are
    consumed. Returns a list of (task_index, normalized_erank) rows. This
    helper does not train; the experiment harness interleaves the same
    probe with its training loop.
    """
    if schedule < 1:
        raise ValueError(f"schedule must be >= 1, got {schedule}")
    series = []
    for task in range(task_count):
        if task % schedule != 0:
            continue
        xs = stream.eval_inputs(task, probe_size)
        series.append((task, rank_probe(learner, xs, rng, method=method)))
    return series
