"""Finite Markov chains: validated stochastic matrices, distribution
propagation, ergodic (Cesaro) and geometric (Abel) averages of matrix
powers, and the spectral projection onto the fixed space.

Matrices act on distributions from the right (``rho^T M``) and on
observables from the left (``M v``). ``side="left"`` means the former,
``side="right"`` the latter.
"""
import functools
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from . import _kernels
from .errors import (DimensionMismatch, DuplicateEntry, NegativeEntry,
                     RowSumViolation, SizeGuard, SolverDivergence,
                     ValidationError, WeightViolation)

logger = logging.getLogger(__name__)

ROW_TOL = 1e-12
DENSE_LIMIT = 10_000
DIRECT_LIMIT = 250_000
GTH_LIMIT = 2_000


class SparseStochasticMatrix:
    """Immutable row-stochastic matrix in CSR storage.

    Build instances with :func:`validate_stochastic`,
    :meth:`from_dense` or :meth:`from_sparse`; all of them validate.
    """

    def __init__(self, csr, tol=ROW_TOL):
        self._csr = csr
        self.tol = tol
        for arr in (csr.data, csr.indices, csr.indptr):
            arr.flags.writeable = False

    @classmethod
    def from_dense(cls, array, tol=ROW_TOL):
        a = np.asarray(array, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got {a.shape}")
        rows, cols = np.nonzero(a)
        return validate_stochastic((rows, cols, a[rows, cols]), a.shape[0], tol)

    @classmethod
    def from_sparse(cls, matrix, tol=ROW_TOL):
        coo = sp.coo_matrix(matrix)
        if coo.shape[0] != coo.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got {coo.shape}")
        return validate_stochastic((coo.row, coo.col, coo.data), coo.shape[0], tol)

    @property
    def n(self):
        return self._csr.shape[0]

    @property
    def shape(self):
        return self._csr.shape

    @property
    def nnz(self):
        return self._csr.nnz

    @property
    def csr(self):
        """The underlying CSR matrix (read-only buffers)."""
        return self._csr

    @functools.cached_property
    def csr_t(self):
        """CSR storage of the transpose, used for left products."""
        t = self._csr.T.tocsr()
        t.sort_indices()
        return t

    @functools.cached_property
    def _offdiag(self):
        coo = self._csr.tocoo()
        keep = coo.row != coo.col
        return coo.row[keep], coo.col[keep], coo.data[keep]

    def toarray(self):
        return self._csr.toarray()

    def entries(self):
        """Return ``(rows, cols, values)`` triplets in row-major order."""
        coo = self._csr.tocoo()
        return coo.row.copy(), coo.col.copy(), coo.data.copy()

    def right(self, x):
        """``M @ x``."""
        return self._csr @ x

    def left(self, x):
        """``x^T M`` as a 1-d array."""
        return self.csr_t @ x

    def generator_apply(self, x, side="right"):
        """Apply ``I - M`` in difference form.

        Uses ``((I - M) x)_i = sum_{j != i} M_ij (x_i - x_j)`` on the right
        and the net-flux form on the left. Both treat the rows as exactly
        stochastic and avoid the cancellation of ``x - M x`` for nearly
        constant (resp. nearly stationary) ``x``.
        """
        rows, cols, vals = self._offdiag
        n = self.n
        if side == "right":
            return np.bincount(rows, vals * (x[rows] - x[cols]), minlength=n)
        flux = vals * x[rows]
        return np.bincount(rows, flux, minlength=n) - np.bincount(cols, flux, minlength=n)

    def __repr__(self):
        return f"SparseStochasticMatrix(n={self.n}, nnz={self.nnz})"


def validate_stochastic(entries, n, tol=ROW_TOL):
    """Build a :class:`SparseStochasticMatrix` from ``(rows, cols, values)``.

    Rows are never renormalized: a row sum off by more than ``tol`` raises
    :class:`RowSumViolation` naming the worst row.
    """
    n = int(n)
    if n < 1:
        raise ValidationError("state count must be at least 1")
    rows, cols, vals = (np.asarray(a) for a in entries)
    rows = rows.astype(np.int64, copy=False).ravel()
    cols = cols.astype(np.int64, copy=False).ravel()
    vals = vals.astype(float, copy=False).ravel()
    if not (rows.size == cols.size == vals.size):
        raise DimensionMismatch("triplet arrays differ in length")
    if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= n):
        raise ValidationError(f"triplet index outside [0, {n})")
    if not np.all(np.isfinite(vals)):
        raise ValidationError("non-finite matrix entry")
    if np.any(vals < 0):
        k = int(np.argmin(vals))
        raise NegativeEntry(f"entry ({rows[k]}, {cols[k]}) = {vals[k]!r} is negative")
    if np.any(vals > 1 + tol):
        k = int(np.argmax(vals))
        raise ValidationError(f"entry ({rows[k]}, {cols[k]}) = {vals[k]!r} exceeds 1")
    keys = rows * n + cols
    uniq, counts = np.unique(keys, return_counts=True)
    if np.any(counts > 1):
        k = uniq[np.argmax(counts > 1)]
        raise DuplicateEntry(f"duplicate entry at ({k // n}, {k % n})")
    csr = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    csr.eliminate_zeros()
    csr.sort_indices()
    dev = np.asarray(csr.sum(axis=1)).ravel() - 1.0
    worst = int(np.argmax(np.abs(dev)))
    if abs(dev[worst]) > tol:
        raise RowSumViolation(worst, dev[worst])
    return SparseStochasticMatrix(csr, tol)


def probability_vector(values, tol=ROW_TOL):
    """Validate and return a probability vector as a read-only array."""
    rho = np.array(values, dtype=float).ravel()
    if rho.size == 0 or not np.all(np.isfinite(rho)):
        raise ValidationError("probability vector must be finite and non-empty")
    if np.any(rho < 0):
        raise NegativeEntry(f"probability vector has negative entry {rho.min()!r}")
    if abs(rho.sum() - 1.0) > tol:
        raise ValidationError(f"probability vector sums to {rho.sum()!r}")
    rho.flags.writeable = False
    return rho


def weight_vector(values, tol=1e-12):
    """Validate a generalized target state ``v`` with ``max |v_i| = 1``."""
    v = np.array(values, dtype=float).ravel()
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise WeightViolation("weight vector must be finite and non-empty")
    peak = np.abs(v).max()
    if peak == 0:
        raise WeightViolation("the zero vector is not a valid target")
    if abs(peak - 1.0) > tol:
        raise WeightViolation(f"max |v_i| is {peak!r}, expected 1")
    v.flags.writeable = False
    return v


def _check_len(M, v, what="vector"):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != M.n:
        raise DimensionMismatch(f"{what} has shape {v.shape}, matrix has n={M.n}")
    return v


def _check_side(side):
    if side not in ("left", "right"):
        raise ValidationError(f"side must be 'left' or 'right', got {side!r}")


def step_distribution(rho, M):
    """One step of the chain: ``rho^T M``."""
    rho = _check_len(M, rho, "distribution")
    return M.left(rho)


def _csr_for(M, side):
    a = M.csr if side == "right" else M.csr_t
    return a.indptr, a.indices, a.data


def cesaro_average_apply(M, v, N, side="right"):
    """Ergodic mean ``(1/N) sum_{k<N} M^k v`` (or ``v^T M^k`` on the left).

    Runs ``N - 1`` sparse products with a running sum; ``M^k`` is never
    formed.
    """
    _check_side(side)
    N = int(N)
    if N < 1:
        raise ValidationError("horizon N must be at least 1")
    v = _check_len(M, v)
    total = _kernels.weighted_power_sum(*_csr_for(M, side), np.ascontiguousarray(v), N, 1.0)
    return total / N


def geometric_average_apply(M, v, eps, method="solve", tol=1e-12, side="right",
                            solver="auto"):
    """Geometric mean ``eps * sum_k (1 - eps)^k M^k v``.

    Parameters
    ----------
    M : SparseStochasticMatrix
    v : array_like, shape (n,)
    eps : float
        Absorption probability in ``(0, 1]``.
    method : {"solve", "series"}
        ``"series"`` truncates the Neumann sum once ``(1 - eps)^K <= tol``
        (the scaled tail is then below ``tol * |v|``). ``"solve"`` solves
        ``(I - (1 - eps) M) x = eps v`` with :func:`resolvent_solve`.
    side : {"right", "left"}
    solver : str
        Passed to :func:`resolvent_solve`.
    """
    _check_side(side)
    eps = _check_eps(eps)
    v = _check_len(M, v)
    if method == "series":
        total, _ = _kernels.neumann_until(*_csr_for(M, side), np.ascontiguousarray(v),
                                          1.0 - eps, tol, 2**62)
        return eps * total
    if method != "solve":
        raise ValidationError(f"unknown method {method!r}")
    x, _ = resolvent_solve(M, eps * v, eps, side=side, solver=solver)
    return x


def _check_eps(eps):
    eps = float(eps)
    if not 0.0 < eps <= 1.0:
        raise ValidationError(f"eps must lie in (0, 1], got {eps!r}")
    return eps


class SolveInfo:
    __slots__ = ("residual", "iterations", "solver")

    def __init__(self, residual, iterations, solver):
        self.residual = float(residual)
        self.iterations = int(iterations)
        self.solver = solver

    def __repr__(self):
        return (f"SolveInfo(solver={self.solver!r}, iterations={self.iterations}, "
                f"residual={self.residual:.3e})")


def resolvent_solve(M, b, leak, side="right", solver="auto", free=None, fixed=None,
                    tol=1e-12, max_iter=None):
    """Solve ``x = b + diag(1 - leak) M x`` for ``x`` on the index set ``free``.

    With scalar ``leak = eps`` and ``b = eps v`` this is the geometric
    average; with a per-state ``leak = p1 + p2`` it is the fuzzy committor
    system. The leak is taken as given rather than as ``1 - c`` so that tiny
    values keep their relative precision. Outside ``free`` the solution is
    pinned to ``fixed`` (default zero), which lets the committor solvers
    restrict to states that can reach the target.

    Solvers
    -------
    ``"direct"``
        Sparse LU of ``I - diag(c) M`` on ``free`` followed by iterative
        refinement whose residual uses :meth:`SparseStochasticMatrix.generator_apply`.
        This keeps full accuracy as ``c -> 1``.
    ``"krylov"``
        GMRES with relative residual ``tol`` and at most ``10 n`` iterations.
    ``"richardson"``
        Fixed-point iteration from zero (monotone, hence minimal for
        non-negative data). Stops on the a-posteriori bound
        ``|dx| (1 - l) / l <= tol`` with ``l = min(leak) > 0``, otherwise on a
        sup-norm change below ``tol``.
    ``"auto"``
        ``"direct"`` up to ``DIRECT_LIMIT`` free states, else ``"krylov"``.

    The left-side variant (``side="left"``) solves ``x^T = b^T + x^T diag(c) M``
    on all states and ignores ``free``/``fixed``.
    """
    _check_side(side)
    n = M.n
    b = _check_len(M, b, "right-hand side")
    leak = np.broadcast_to(np.asarray(leak, dtype=float), (n,))
    c_arr = 1.0 - leak
    if side == "left":
        if free is not None:
            raise ValidationError("restricted solves are right-side only")
        free = np.arange(n)
    free = np.arange(n) if free is None else np.asarray(free, dtype=np.int64)
    x = np.zeros(n) if fixed is None else np.array(fixed, dtype=float)
    if free.size == 0:
        return x, SolveInfo(0.0, 0, "none")
    if solver == "auto":
        solver = "direct" if free.size <= DIRECT_LIMIT else "krylov"
    max_iter = max_iter or 10 * n

    def residual(xx):
        if side == "right":
            r = b - leak * xx - c_arr * M.generator_apply(xx, "right")
        else:
            r = b - leak * xx - M.generator_apply(c_arr * xx, "left")
        return r[free]

    if solver == "richardson":
        return _richardson(M, b, leak, side, free, x, tol)

    sub = M.csr if side == "right" else M.csr_t
    if side == "right":
        A = sp.identity(free.size, format="csr") - sp.diags(c_arr[free]) @ sub[free][:, free]
    else:
        A = sp.identity(n, format="csr") - sub @ sp.diags(c_arr)
    rhs = residual(x) if fixed is not None else b[free].copy()

    if solver == "direct":
        lu = spla.splu(A.tocsc())
        x[free] += lu.solve(rhs)
        for it in range(1, 6):
            corr = lu.solve(residual(x))
            x[free] += corr
            if np.abs(corr).max() <= 1e-16 * max(1.0, np.abs(x).max()):
                break
        res = np.abs(residual(x)).max()
        if not np.all(np.isfinite(x)):
            raise SolverDivergence("LU solve produced non-finite values")
        return x, SolveInfo(res, it, "direct")

    if solver == "krylov":
        counter = [0]

        def cb(_):
            counter[0] += 1

        sol, info = spla.gmres(A, rhs, rtol=tol, atol=0.0, restart=min(free.size, 100),
                               maxiter=max_iter, callback=cb, callback_type="pr_norm")
        if info != 0:
            raise SolverDivergence(f"GMRES did not reach rtol={tol} (info={info})")
        x[free] += sol
        return x, SolveInfo(np.abs(residual(x)).max(), counter[0], "krylov")

    raise ValidationError(f"unknown solver {solver!r}")


def _richardson(M, b, leak, side, free, x, tol, max_iter=10**7):
    c = 1.0 - leak
    lmin = float(leak[free].min())
    pinned = x.copy()
    is_free = np.zeros(M.n, dtype=bool)
    is_free[free] = True
    apply = M.right if side == "right" else M.left
    for it in range(1, max_iter + 1):
        if side == "right":
            new = np.where(is_free, b + c * apply(x), pinned)
        else:
            new = b + apply(c * x)
        step = np.abs(new - x)
        change = step.max() if side == "right" else step.sum()
        x = new
        bound = change * (1.0 - lmin) / lmin if lmin > 0.0 else change
        if bound <= tol:
            res = np.abs(x[free] - (b + c * apply(x))[free]).max() if side == "right" else change
            return x, SolveInfo(res, it, "richardson")
    raise SolverDivergence(f"Richardson iteration did not converge in {max_iter} steps")


def closed_classes(M):
    """Closed communicating classes of ``M`` with their stationary laws.

    Returns a list of ``(states, pi)`` pairs, ``states`` sorted. Classes are
    found from the sparsity pattern, so every stored positive entry counts
    as a transition however small it is.
    """
    n_comp, label = csgraph.connected_components(M.csr, directed=True, connection="strong")
    coo = M.csr.tocoo()
    leaving = label[coo.row] != label[coo.col]
    open_comp = np.zeros(n_comp, dtype=bool)
    open_comp[label[coo.row[leaving]]] = True
    out = []
    for c in np.flatnonzero(~open_comp):
        states = np.flatnonzero(label == c)
        out.append((states, _stationary(M.csr[states][:, states])))
    return out


def _stationary(sub):
    """Stationary law of an irreducible stochastic block.

    Grassmann-Taksar-Heyman elimination for moderate sizes (subtraction-free,
    so accurate even for nearly decoupled blocks); sparse LU with a
    normalization row above that.
    """
    m = sub.shape[0]
    if m == 1:
        return np.ones(1)
    if m <= GTH_LIMIT:
        A = sub.toarray()
        for k in range(m - 1, 0, -1):
            s = A[k, :k].sum()
            A[:k, k] /= s
            A[:k, :k] += np.outer(A[:k, k], A[k, :k])
        pi = np.zeros(m)
        pi[0] = 1.0
        for k in range(1, m):
            pi[k] = pi[:k] @ A[:k, k]
        return pi / pi.sum()
    G = (sp.identity(m, format="csr") - sub).T.tolil()
    G[0, :] = np.ones(m)
    rhs = np.zeros(m)
    rhs[0] = 1.0
    pi = spla.spsolve(G.tocsc(), rhs)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def fixed_space_projection(M, eps_floor=1e-12, check_tol=1e-8, method="classes"):
    """Dense spectral projection ``P_fix(M)`` onto the fixed space of ``M``.

    ``method="classes"`` (default) assembles the limit exactly:
    ``P = sum_C a_C pi_C^T`` over closed classes ``C``, where ``a_C`` is the
    absorption probability into ``C`` and ``pi_C`` its stationary law.
    ``method="resolvent"`` evaluates ``eps (I - (1 - eps) M)^{-1}`` at
    ``eps = eps_floor`` instead (rows renormalized to remove rounding along
    the near-singular direction), which only approximates the limit when
    every slow rate of the chain is much larger than ``eps_floor``.

    Raises
    ------
    SizeGuard
        If ``n`` exceeds ``DENSE_LIMIT``.
    SolverDivergence
        If the result is not idempotent within ``check_tol``.
    """
    if M.n > DENSE_LIMIT:
        raise SizeGuard(f"dense projection limited to n <= {DENSE_LIMIT}, got {M.n}")
    n = M.n
    if method == "resolvent":
        eps = _check_eps(eps_floor)
        A = np.eye(n) - (1.0 - eps) * M.toarray()
        P = np.linalg.solve(A, eps * np.eye(n))
        P /= P.sum(axis=1, keepdims=True)
    elif method == "classes":
        classes = closed_classes(M)
        recurrent = np.zeros(n, dtype=bool)
        for states, _ in classes:
            recurrent[states] = True
        transient = np.flatnonzero(~recurrent)
        P = np.zeros((n, n))
        for states, pi in classes:
            fixed = np.zeros(n)
            fixed[states] = 1.0
            a, _ = resolvent_solve(M, np.zeros(n), 0.0, free=transient, fixed=fixed)
            P[:, states] = np.outer(a, pi)
    else:
        raise ValidationError(f"unknown method {method!r}")
    defect = np.abs(P @ P - P).max()
    if not np.isfinite(defect) or defect > check_tol:
        raise SolverDivergence(
            f"projection not idempotent (max |P^2 - P| = {defect:.2e}); "
            "an eigenvalue may sit too close to 1 for eps_floor")
    return P


def invariant_distributions(M, tol=1e-10):
    """Basis of stationary distributions, one per closed communicating class.

    These are the distinct rows of the fixed-space projection; they are read
    off the class decomposition directly and deduplicated by L1 distance
    below ``10 * tol``.
    """
    if M.n > DENSE_LIMIT:
        raise SizeGuard(f"dense output limited to n <= {DENSE_LIMIT}, got {M.n}")
    found = []
    for states, pi in closed_classes(M):
        row = np.zeros(M.n)
        row[states] = pi
        if not any(np.abs(row - f).sum() < 10 * tol for f in found):
            found.append(row)
    return [probability_vector(r, tol=1e-9) for r in found]
