"""Independent numerical oracles used across the test suite.

These stay deliberately dumb: central finite differences for first and
second derivatives, characteristic-polynomial roots for tiny eigenproblems,
and brute-force nearest-neighbor search. They never call the code paths
they are checking.
"""

import numpy as np


def finite_diff_grad(loss_fn, arrays, h=1e-5):
    """Central-difference gradient of loss_fn() w.r.t. each array in-place.

    loss_fn takes no arguments and reads the (mutated) arrays; returns a
    list of gradient arrays matching shapes.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn()
            flat[i] = orig - h
            lm = loss_fn()
            flat[i] = orig
            gflat[i] = (lp - lm) / (2.0 * h)
        grads.append(g)
    return grads


def finite_diff_hessian(loss_fn, arr, h=1e-4):
    """Second-order central-difference Hessian w.r.t. a flat array in-place."""
    n = arr.size
    flat = arr.reshape(-1)
    hess = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            oi, oj = flat[i], flat[j]
            if i == j:
                l0 = loss_fn()
                flat[i] = oi + h
                lp = loss_fn()
                flat[i] = oi - h
                lm = loss_fn()
                flat[i] = oi
                hess[i, i] = (lp - 2.0 * l0 + lm) / (h * h)
            else:
                flat[i], flat[j] = oi + h, oj + h
                lpp = loss_fn()
                flat[i], flat[j] = oi + h, oj - h
                lpm = loss_fn()
                flat[i], flat[j] = oi - h, oj + h
                lmp = loss_fn()
                flat[i], flat[j] = oi - h, oj - h
                lmm = loss_fn()
                flat[i], flat[j] = oi, oj
                hess[i, j] = hess[j, i] = (lpp - lpm - lmp + lmm) / (4.0 * h * h)
    return hess


def max_rel_err(a, b, floor=1e-6):
    """Worst-case elementwise relative error with a small floor so that
    near-zero components compare on an absolute scale."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


def char_poly_eigenvalues(mat):
    """Eigenvalues of a 2x2 or 3x3 matrix from characteristic-polynomial
    roots (Faddeev-LeVerrier coefficients), sorted descending."""
    a = np.asarray(mat, dtype=np.float64)
    n = a.shape[0]
    if n == 2:
        tr = a[0, 0] + a[1, 1]
        det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
        coeffs = [1.0, -tr, det]
    elif n == 3:
        tr = np.trace(a)
        a2 = a @ a
        c1 = 0.5 * (tr * tr - np.trace(a2))
        det = np.linalg.det(a)
        coeffs = [1.0, -tr, c1, -det]
    else:
        raise ValueError("only 2x2 and 3x3 supported")
    roots = np.roots(coeffs)
    return np.sort(roots.real)[::-1]


def brute_force_knn(xs, ys, query, k):
    """Indices and mean label of the k nearest support points (Euclidean,
    stable order on ties)."""
    d = np.linalg.norm(xs - query[None, :], axis=1)
    idx = np.argsort(d, kind="stable")[:k]
    return idx, ys[idx].mean(axis=0)
