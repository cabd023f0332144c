"""Sampling-based generalized basin stability.

Each trial draws an initial state from a perturbation sampler and a run
time from a :class:`TimeRule`, integrates the system for that time and
records whether the endpoint lies in the target region. The success
fraction estimates the generalized basin stability; its standard error is
``sqrt(b (1 - b) / n)``.
"""
import csv
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import IntegrationFailure, ValidationError
from .markov import SparseStochasticMatrix

# Trials per RNG stream. Fixed so that estimates never depend on worker count.
BLOCK_TRIALS = 500


class FailedTrialsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TimeRule:
    """Distribution of the run time of one trial.

    ``kind`` is ``"exponential"`` (``value`` is the rate ``eps``, mean time
    ``1/eps``), ``"uniform"`` (``value`` is the horizon ``T``, times uniform
    on ``[0, T]``) or ``"fixed"`` (always ``T``).
    """

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("exponential", "uniform", "fixed"):
            raise ValidationError(f"unknown time rule {self.kind!r}")
        if not (math.isfinite(self.value) and self.value > 0):
            raise ValidationError("time rule parameter must be positive and finite")

    @classmethod
    def exponential(cls, eps):
        return cls("exponential", float(eps))

    @classmethod
    def uniform(cls, T):
        return cls("uniform", float(T))

    @classmethod
    def fixed(cls, T):
        return cls("fixed", float(T))

    @classmethod
    def from_horizon(cls, kind, T, convention="aligned"):
        """Rule for a nominal horizon ``T``.

        For the exponential rule, ``convention="aligned"`` uses
        ``eps = 2 / T`` so that the mean run time ``T / 2`` equals that of
        the uniform rule on ``[0, T]``; ``"reciprocal"`` uses ``eps = 1 / T``.
        """
        if kind != "exponential":
            return cls(kind, float(T))
        if convention == "aligned":
            return cls.exponential(2.0 / T)
        if convention == "reciprocal":
            return cls.exponential(1.0 / T)
        raise ValidationError(f"unknown horizon convention {convention!r}")

    @classmethod
    def for_chain_steps(cls, eps):
        """Exponential rule whose whole-step floor is geometric with parameter ``eps``.

        ``floor(t)`` for ``t ~ Exp(r)`` satisfies ``P(floor(t) >= k) = exp(-r k)``,
        which is ``(1 - eps)**k`` for ``r = -log(1 - eps)``. That is the
        absorption-time law behind the eps-committor.
        """
        if not 0.0 < eps < 1.0:
            raise ValidationError("eps must lie in (0, 1)")
        return cls.exponential(-math.log1p(-eps))

    @classmethod
    def parse(cls, text):
        """``exp:<eps>``, ``uniform:<T>`` or ``fixed:<T>``."""
        kind, _, val = text.partition(":")
        kind = {"exp": "exponential"}.get(kind, kind)
        try:
            return cls(kind, float(val))
        except ValueError:
            raise ValidationError(f"cannot parse time rule {text!r}") from None

    @property
    def mean(self):
        return {"exponential": 1.0 / self.value, "uniform": self.value / 2.0,
                "fixed": self.value}[self.kind]

    def draw(self, rng, m):
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.value, m)
        if self.kind == "uniform":
            return rng.uniform(0.0, self.value, m)
        return np.full(m, self.value)

    def __str__(self):
        return f"{self.kind}:{self.value!r}"


@dataclass(frozen=True)
class GbsEstimate:
    b_hat: float
    stderr: float
    n_samples: int
    n_failed: int
    time_rule: TimeRule
    seed: int
    sigma: float = 0.0


def standard_error(b, n):
    return math.sqrt(max(b * (1.0 - b), 0.0) / n)


class MarkovChainSystem:
    """A finite Markov chain viewed as a dynamical system, one step per unit time.

    States are encoded as ``(m, 1)`` float arrays holding the state index;
    a trial with run time ``t`` takes ``floor(t)`` steps.
    """

    deterministic = False
    dim = 1

    def __init__(self, M):
        if not isinstance(M, SparseStochasticMatrix):
            M = SparseStochasticMatrix.from_dense(M)
        self.M = M
        a = M.csr
        self._indptr = a.indptr
        self._indices = a.indices
        row = np.repeat(np.arange(M.n), np.diff(a.indptr))
        within = np.cumsum(a.data) - np.repeat(np.r_[0.0, np.cumsum(a.data)][a.indptr[:-1]],
                                               np.diff(a.indptr))
        # entry p of row i is chosen when i + u falls below gcum[p]
        self._gcum = row + within

    def step(self, states, rng):
        u = rng.random(states.size)
        pos = np.searchsorted(self._gcum, states + u, side="right")
        pos = np.minimum(np.maximum(pos, self._indptr[states]), self._indptr[states + 1] - 1)
        return self._indices[pos]

    def evolve(self, x, t, rng):
        s = np.asarray(x, dtype=float).reshape(-1).astype(np.int64)
        if np.any((s < 0) | (s >= self.M.n)):
            raise ValidationError("state index outside the chain")
        steps = np.floor(np.asarray(t, dtype=float)).astype(np.int64)
        steps = np.broadcast_to(steps, s.shape)
        order = np.argsort(-steps, kind="stable")
        s, steps = s[order], steps[order]
        desc = steps[::-1]
        for k in range(int(steps[0]) if s.size else 0):
            active = s.size - int(np.searchsorted(desc, k, side="right"))
            s[:active] = self.step(s[:active], rng)
        out = np.empty_like(s)
        out[order] = s
        return out[:, None].astype(float)


def uniform_box_sampler(lower, upper):
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)

    def sample(rng, m):
        return lower + rng.random((m, lower.size)) * (upper - lower)
    return sample


def point_sampler(x0):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    return lambda rng, m: np.tile(x0, (m, 1))


def distribution_sampler(rho):
    """Initial states of a :class:`MarkovChainSystem` drawn from ``rho``."""
    rho = np.asarray(rho, dtype=float)
    return lambda rng, m: rng.choice(rho.size, size=m, p=rho)[:, None].astype(float)


def _trial_block(system, perturbation, region, rule, m, seed, block):
    rng = np.random.default_rng(np.random.SeedSequence([seed, block]))
    x0 = np.asarray(perturbation(rng, m), dtype=float).reshape(m, -1)
    t = rule.draw(rng, m)
    end = system.evolve(x0, t, rng)
    ok = np.all(np.isfinite(end), axis=1)
    hits = np.zeros(m, dtype=bool)
    if ok.any():
        hits[ok] = region.contains(end[ok])
    return int(hits.sum()), int((~ok).sum())


def gbs_estimate(system, perturbation, region, rule, n_samples, seed=0, threads=None):
    """Generalized basin stability by Bernoulli trials.

    Parameters
    ----------
    system : FlowMapSpec or MarkovChainSystem
        Anything with ``evolve(x0, t, rng)``.
    perturbation : callable
        ``perturbation(rng, m) -> (m, d)`` initial states.
    region : Region
        Membership is tested at the endpoint only.
    rule : TimeRule
    n_samples : int
    seed : int
        Trials are processed in blocks of ``BLOCK_TRIALS``; block ``j`` uses
        ``SeedSequence([seed, j])`` for its initial states, times and noise.

    Trials whose state becomes non-finite are dropped, counted in
    ``n_failed`` and reported with a warning.
    """
    n = int(n_samples)
    if n < 1:
        raise ValidationError("n_samples must be at least 1")
    sizes = [min(BLOCK_TRIALS, n - s) for s in range(0, n, BLOCK_TRIALS)]
    work = lambda j: _trial_block(system, perturbation, region, rule, sizes[j], int(seed), j)
    threads = min(threads or os.cpu_count() or 1, len(sizes))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, range(len(sizes))))
    else:
        parts = [work(j) for j in range(len(sizes))]
    hits = sum(p[0] for p in parts)
    failed = sum(p[1] for p in parts)
    valid = n - failed
    if valid == 0:
        raise IntegrationFailure("every trial produced a non-finite state")
    if failed:
        warnings.warn(f"{failed} of {n} trials diverged and were excluded",
                      FailedTrialsWarning, stacklevel=2)
    b = hits / valid
    sigma = float(np.max(getattr(system, "noise_sigma", [0.0]), initial=0.0))
    return GbsEstimate(b, standard_error(b, valid), valid, failed, rule, int(seed), sigma)


def membership_estimate(system, x0, region, rule, n_repeats, seed=0, threads=None):
    """Probability that a run from the fixed state ``x0`` ends in ``region``.

    With an exponential rule this estimates the eps-committor at ``x0``,
    with a uniform rule the finite-horizon mean sojourn time.
    """
    return gbs_estimate(system, point_sampler(x0), region, rule, n_repeats, seed, threads)


def gbs_sweep(system, perturbation, region, rules, sigmas, n_samples, seed=0, threads=None,
              out=None):
    """Cartesian sweep over time rules and noise strengths.

    ``system`` must provide ``with_sigma``. Cell ``(i, j)`` uses seed
    ``SeedSequence([seed, i, j])`` so cells are independent. When ``out``
    is given, the table is also written as CSV.
    """
    rules, sigmas = list(rules), list(sigmas)
    if not rules or not sigmas:
        raise ValidationError("time-rule and sigma grids must be non-empty")
    table = []
    for j, sigma in enumerate(sigmas):
        sys_j = system.with_sigma(sigma)
        for i, rule in enumerate(rules):
            cell_seed = int(np.random.SeedSequence([int(seed), i, j]).generate_state(1)[0])
            est = gbs_estimate(sys_j, perturbation, region, rule, n_samples, cell_seed, threads)
            table.append(GbsEstimate(est.b_hat, est.stderr, est.n_samples, est.n_failed,
                                     rule, cell_seed, float(sigma)))
    if out is not None:
        write_gbs_csv(table, out)
    return table


GBS_COLUMNS = ("time_rule", "param", "sigma", "b_hat", "stderr", "n_samples", "n_failed")


def write_gbs_csv(table, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GBS_COLUMNS)
        for e in table:
            w.writerow([e.time_rule.kind, repr(e.time_rule.value), repr(e.sigma),
                        repr(e.b_hat), repr(e.stderr), e.n_samples, e.n_failed])
