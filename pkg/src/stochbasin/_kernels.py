"""Compiled CSR kernels for long runs of repeated matrix-vector products.

Every kernel walks rows in index order and sums each row left to right, so
results are bitwise reproducible.
"""
import numba
import numpy as np


@numba.njit(cache=True)
def _csr_matvec(indptr, indices, data, x, out):
    n = indptr.shape[0] - 1
    for i in range(n):
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            acc += data[p] * x[indices[p]]
        out[i] = acc


@numba.njit(cache=True)
def weighted_power_sum(indptr, indices, data, v, n_terms, decay):
    """Return ``sum_{k < n_terms} decay**k * A**k @ v`` for a CSR matrix ``A``."""
    n = v.shape[0]
    cur = v.copy()
    nxt = np.empty(n)
    total = v.copy()
    w = 1.0
    for _ in range(1, n_terms):
        _csr_matvec(indptr, indices, data, cur, nxt)
        w *= decay
        for i in range(n):
            total[i] += w * nxt[i]
        cur, nxt = nxt, cur
    return total


@numba.njit(cache=True)
def neumann_until(indptr, indices, data, v, decay, tol, max_terms):
    """Sum ``sum_{k < K} decay**k A**k v``, stopping once ``decay**K <= tol``.

    For a contraction ``A`` the neglected tail, once scaled by
    ``1 - decay``, is at most ``decay**K * |v|``. Returns the sum and ``K``.
    """
    n = v.shape[0]
    cur = v.copy()
    nxt = np.empty(n)
    total = v.copy()
    w = 1.0
    k = 1
    while k < max_terms:
        w *= decay
        if w <= tol:
            break
        _csr_matvec(indptr, indices, data, cur, nxt)
        for i in range(n):
            total[i] += w * nxt[i]
        cur, nxt = nxt, cur
        k += 1
    return total, k


@numba.njit(cache=True)
def chain_rhs(x, alpha, power, K, out):
    """Open swing-equation chain; rows of ``x`` are ``(phi_1..n, omega_1..n)``."""
    m = x.shape[0]
    n = power.shape[0]
    for r in range(m):
        prev = 0.0
        for i in range(n):
            nxt = np.sin(x[r, i] - x[r, i + 1]) if i < n - 1 else 0.0
            out[r, i] = x[r, n + i]
            out[r, n + i] = -alpha * x[r, n + i] + power[i] - K * (nxt - prev)
            prev = nxt
