"""Committor-type quantities on finite Markov chains.

Classical absorption probabilities, committors between two sets, fuzzy
committors with arbitrary exit probabilities, eps-committors, finite-horizon
expected mean sojourn (EMS) times and eps-absorption stability.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (DomainViolation, ExitProbabilityViolation,
                     OverlappingSets, ValidationError)
from .markov import (_check_eps, _check_len, cesaro_average_apply,
                     probability_vector, resolvent_solve)
from .regions import Region, require_nonempty

__all__ = [
    "CommittorResult", "Region", "committor_to", "committor_between",
    "fuzzy_committor", "eps_committor", "eps_committor_series",
    "expected_time_in_target", "ems_finite", "eps_absorption_stability",
    "leak_rate",
]


@dataclass(frozen=True)
class CommittorResult:
    q: np.ndarray
    eps: float = None
    residual: float = 0.0
    iterations: int = 0
    solver: str = ""
    generalized: bool = False


def _as_region(target, n):
    if isinstance(target, Region):
        return target
    arr = np.asarray(target)
    if arr.size == 0 or np.issubdtype(arr.dtype, np.integer):
        return Region.from_indices(arr, n)
    raise ValidationError("pass integer state indices or a Region; use "
                          "Region.from_weights for weight-vector targets")


def _reaching(M, sources, blocked=None, passable=None):
    """Boolean mask of states with a path of positive-probability steps into
    ``sources``. Paths may not pass through ``blocked`` states, and only
    states with ``passable`` set may take a step at all."""
    n = M.n
    reach = np.zeros(n, dtype=bool)
    reach[sources] = True
    stop = np.zeros(n, dtype=bool) if blocked is None else blocked.copy()
    if passable is not None:
        stop |= ~passable
    indptr, indices = M.csr_t.indptr, M.csr_t.indices
    frontier = np.asarray(sources)
    while frontier.size:
        preds = np.concatenate([indices[indptr[j]:indptr[j + 1]] for j in frontier])
        preds = np.unique(preds)
        preds = preds[~reach[preds] & ~stop[preds]]
        reach[preds] = True
        frontier = preds
    return reach


def committor_to(M, A, solver="auto"):
    """Probability of ever reaching ``A`` from each state.

    Returns the minimal non-negative solution of ``q = M q`` off ``A``,
    ``q = 1`` on ``A``. States without a path to ``A`` are pinned to zero
    first; on the remaining states the system is non-singular. Pass
    ``solver="richardson"`` for monotone value iteration from zero.
    """
    region = _as_region(A, M.n)
    a_idx = require_nonempty(region, M.n)
    return _absorption(M, a_idx, np.zeros(M.n, dtype=bool), solver)


def committor_between(M, A, B, solver="auto"):
    """Probability of reaching ``A`` before ``B``."""
    a_idx = require_nonempty(_as_region(A, M.n), M.n)
    b_idx = require_nonempty(_as_region(B, M.n), M.n)
    if np.intersect1d(a_idx, b_idx).size:
        raise OverlappingSets("target sets A and B must be disjoint")
    in_b = np.zeros(M.n, dtype=bool)
    in_b[b_idx] = True
    return _absorption(M, a_idx, in_b, solver)


def _absorption(M, a_idx, in_b, solver):
    n = M.n
    reach = _reaching(M, a_idx, blocked=in_b)
    in_a = np.zeros(n, dtype=bool)
    in_a[a_idx] = True
    free = np.flatnonzero(reach & ~in_a & ~in_b)
    fixed = in_a.astype(float)
    q, info = resolvent_solve(M, np.zeros(n), 0.0, free=free, fixed=fixed, solver=solver)
    return CommittorResult(q, None, info.residual, info.iterations, info.solver)


def fuzzy_committor(M, p1, p2, solver="auto"):
    """Absorption probability into the first of two exit states.

    Each state ``i`` exits to the first exit with probability ``p1[i]``, to
    the second with ``p2[i]``, and otherwise follows ``M``. Solves
    ``(I - Mhat) q = p1`` with ``Mhat_ij = M_ij (1 - p1_i - p2_i)`` for its
    minimal non-negative solution.
    """
    p1 = _check_len(M, p1, "p1")
    p2 = _check_len(M, p2, "p2")
    if np.any(p1 < 0) or np.any(p2 < 0):
        raise ExitProbabilityViolation("exit probabilities must be non-negative")
    stay = 1.0 - p1 - p2
    if np.any(stay < -1e-12):
        raise ExitProbabilityViolation(
            f"p1 + p2 exceeds 1 at state {int(np.argmin(stay))}")
    stay = np.clip(stay, 0.0, 1.0)
    sources = np.flatnonzero(p1 > 0)
    if sources.size == 0:
        return CommittorResult(np.zeros(M.n), None, 0.0, 0, "none")
    free = np.flatnonzero(_reaching(M, sources, passable=stay > 0))
    q, info = resolvent_solve(M, p1, np.minimum(p1 + p2, 1.0), free=free, solver=solver)
    return CommittorResult(q, None, info.residual, info.iterations, info.solver)


def eps_committor(M, target, eps, solver="auto"):
    """eps-committor: the solution of ``(I - (1 - eps) M) q = eps t``.

    ``t`` is the indicator of ``target`` or, for a weight-vector region, the
    weights themselves (then the result is flagged ``generalized`` and not
    range-checked).
    """
    eps = _check_eps(eps)
    region = _as_region(target, M.n)
    t = region.vector(M.n)
    q, info = resolvent_solve(M, eps * t, eps, solver=solver)
    return CommittorResult(q, eps, info.residual, info.iterations, info.solver,
                           region.generalized)


def eps_committor_series(M, target, eps, K):
    """Truncated Neumann sum ``eps * sum_{k<K} (1-eps)^k M^k t``."""
    eps = _check_eps(eps)
    K = int(K)
    if K < 1:
        raise ValidationError("term count K must be at least 1")
    t = _as_region(target, M.n).vector(M.n)
    a = M.csr
    return eps * _kernels.weighted_power_sum(a.indptr, a.indices, a.data, t, K, 1.0 - eps)


def expected_time_in_target(M, target, eps, solver="auto"):
    """Expected number of steps spent in ``target`` before absorption, ``q_eps / eps``."""
    res = eps_committor(M, target, eps, solver)
    return res.q / res.eps


def ems_finite(M, target, N):
    """Finite-horizon EMS time ``s_N = (1/N) sum_{k<N} M^k 1_A`` per start state."""
    t = _as_region(target, M.n).vector(M.n)
    return cesaro_average_apply(M, t, N, side="right")


def eps_absorption_stability(M, target, rho, eps, solver="auto"):
    """``rho^T q_eps``: the eps-committor averaged over the perturbation ``rho``."""
    rho = probability_vector(rho)
    if rho.size != M.n:
        raise ValidationError(f"rho has length {rho.size}, expected {M.n}")
    return float(rho @ eps_committor(M, target, eps, solver).q)


def leak_rate(q, eps):
    """Per-step escape probability ``p`` of a set whose eps-committor is ``q``.

    Inverts ``q = eps / (1 - (1 - eps)(1 - p))``, assuming the set is left
    with constant probability ``p`` per step.
    """
    q, eps = float(q), float(eps)
    if not 0.0 < eps < 1.0:
        raise DomainViolation(f"eps must lie in (0, 1) to identify a leak rate, got {eps}")
    if not eps <= q <= 1.0:
        raise DomainViolation(f"q = {q} outside [eps, 1] = [{eps}, 1]: no leak rate in [0, 1]")
    return eps * (1.0 - q) / (q * (1.0 - eps))
