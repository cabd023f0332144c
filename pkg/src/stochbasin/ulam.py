"""Ulam discretization of a flow map over a regular box partition.

Each retained box gets ``samples_per_box`` uniformly drawn points. The flow
map is applied once and landings are counted per destination box, so row
``i`` of the estimated matrix is the empirical distribution of ``phi(x)``
for ``x`` uniform in box ``i``.
"""
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import EmptyRow, IntegrationFailure, InvalidBounds, SizeGuard, ValidationError
from .markov import SparseStochasticMatrix

MAX_CELLS = 50_000_000
# Boxes integrated together; fixed so results never depend on the thread count.
BLOCK_BOXES = 256


class ExteriorMassWarning(UserWarning):
    pass


class GridPartition:
    """Regular grid on ``[lower, upper]`` with optional masked-out boxes.

    Boxes are half-open ``[lo, hi)`` except that the global upper face is
    closed, so every point of the closed domain has exactly one box.
    Retained boxes are numbered in row-major order of their grid cells,
    skipping masked cells.

    Parameters
    ----------
    lower, upper : array_like
    counts : sequence of int
    periodic : sequence of bool, optional
        Periodic coordinates wrap into ``[lower, upper)`` before lookup.
    mask : callable, optional
        ``mask(centers) -> bool array``; boxes whose center fails are dropped.
    domain : callable, optional
        ``domain(points) -> bool array``. Samples are drawn uniformly from
        ``box ∩ domain`` by rejection.
    """

    def __init__(self, lower, upper, counts, periodic=None, mask=None, domain=None):
        self.lower = np.asarray(lower, dtype=float).ravel()
        self.upper = np.asarray(upper, dtype=float).ravel()
        self.counts = tuple(int(c) for c in np.atleast_1d(counts))
        d = self.lower.size
        if self.upper.size != d or len(self.counts) != d or d == 0:
            raise InvalidBounds("lower, upper and counts need one entry per dimension")
        if not np.all(np.isfinite(self.lower)) or not np.all(np.isfinite(self.upper)):
            raise InvalidBounds("bounds must be finite")
        if np.any(self.lower >= self.upper):
            raise InvalidBounds("need lower < upper in every dimension")
        if min(self.counts) < 1:
            raise InvalidBounds("box counts must be at least 1")
        n_cells = math.prod(self.counts)
        if n_cells > MAX_CELLS:
            raise SizeGuard(f"{n_cells} grid cells exceed the limit of {MAX_CELLS}")
        self.periodic = (tuple(bool(p) for p in periodic) if periodic is not None
                         else (False,) * d)
        if len(self.periodic) != d:
            raise InvalidBounds("periodic needs one flag per dimension")
        self.widths = (self.upper - self.lower) / np.array(self.counts)
        self.domain = domain
        self.n_cells = n_cells
        keep = np.ones(n_cells, dtype=bool)
        if mask is not None:
            keep = np.asarray(mask(self._cell_centers(np.arange(n_cells))), dtype=bool)
        self.cell_of_box = np.flatnonzero(keep)
        if self.cell_of_box.size == 0:
            raise InvalidBounds("the mask removes every box")
        self.box_of_cell = np.full(n_cells, -1, dtype=np.int64)
        self.box_of_cell[self.cell_of_box] = np.arange(self.cell_of_box.size)
        for a in (self.cell_of_box, self.box_of_cell):
            a.flags.writeable = False

    @property
    def dim(self):
        return self.lower.size

    @property
    def n_boxes(self):
        return self.cell_of_box.size

    def _cell_centers(self, cells):
        multi = np.array(np.unravel_index(cells, self.counts)).T
        return self.lower + (multi + 0.5) * self.widths

    def box_lower(self, boxes):
        multi = np.array(np.unravel_index(self.cell_of_box[boxes], self.counts)).T
        return self.lower + multi * self.widths

    def centers(self, boxes=None):
        boxes = np.arange(self.n_boxes) if boxes is None else np.asarray(boxes)
        return self._cell_centers(self.cell_of_box[boxes])

    def locate(self, points):
        """Box index of each point, ``-1`` for exterior or masked-out cells."""
        x = np.atleast_2d(np.asarray(points, dtype=float))
        if x.shape[1] != self.dim:
            raise ValidationError(f"points have dimension {x.shape[1]}, expected {self.dim}")
        ok = np.all(np.isfinite(x), axis=1)
        multi = np.empty(x.shape, dtype=np.int64)
        for k in range(self.dim):
            lo, hi, c = self.lower[k], self.upper[k], self.counts[k]
            xk = x[:, k]
            if self.periodic[k]:
                xk = lo + np.mod(xk - lo, hi - lo)
                # mod can round up to exactly hi for tiny negative offsets
                xk = np.where(xk >= hi, lo, xk)
            else:
                ok &= (xk >= lo) & (xk <= hi)
            with np.errstate(invalid="ignore"):
                idx = np.floor((xk - lo) / self.widths[k])
            idx = np.where(np.isfinite(idx), idx, 0).astype(np.int64)
            multi[:, k] = np.clip(idx, 0, c - 1)
        cells = np.ravel_multi_index(multi.T, self.counts)
        out = self.box_of_cell[cells]
        out[~ok] = -1
        return out

    def sample(self, box, m, rng, max_rounds=1000):
        """``m`` points uniform in ``box`` (intersected with the domain, if any)."""
        lo = self.box_lower(box)
        if self.domain is None:
            return lo + rng.random((m, self.dim)) * self.widths
        got = []
        need = m
        for _ in range(max_rounds):
            pts = lo + rng.random((max(2 * need, 8), self.dim)) * self.widths
            pts = pts[np.asarray(self.domain(pts), dtype=bool)][:need]
            got.append(pts)
            need -= len(pts)
            if need == 0:
                return np.concatenate(got)
        raise ValidationError(f"box {box} barely intersects the sampling domain")

    def metadata(self):
        return {
            "lower": ",".join(repr(float(v)) for v in self.lower),
            "upper": ",".join(repr(float(v)) for v in self.upper),
            "counts": ",".join(str(c) for c in self.counts),
            "periodic": ",".join(str(int(p)) for p in self.periodic),
            "n_boxes": str(self.n_boxes),
        }


def build_partition(lower, upper, counts, periodic=None, mask=None, domain=None):
    return GridPartition(lower, upper, counts, periodic, mask, domain)


def simplex_mask(centers):
    """Keep boxes whose center lies in ``{x >= 0, sum(x) <= 1}``."""
    return np.all(centers >= 0, axis=1) & (centers.sum(axis=1) <= 1.0)


def locate(partition, points):
    return partition.locate(points)


@dataclass(frozen=True)
class UlamBuildReport:
    K: int
    samples_per_box: int
    exterior_mass: float
    seed: int
    exterior_policy: str
    exterior_counts: np.ndarray = None

    def metadata(self):
        return {"K": str(self.K), "samples_per_box": str(self.samples_per_box),
                "exterior_mass": repr(self.exterior_mass), "seed": str(self.seed),
                "exterior_policy": self.exterior_policy}


def _block(partition, flow, boxes, spb, seed, block_id):
    pts = np.concatenate([
        partition.sample(b, spb, np.random.default_rng(np.random.SeedSequence([seed, 0, int(b)])))
        for b in boxes])
    noise_rng = np.random.default_rng(np.random.SeedSequence([seed, 1, block_id]))
    end = flow.flow(pts, None if flow.deterministic else noise_rng)
    if not np.all(np.isfinite(end)):
        bad = boxes[np.flatnonzero(~np.all(np.isfinite(end), axis=1))[0] // spb]
        raise IntegrationFailure(f"flow map produced a non-finite state from box {bad}")
    return partition.locate(end)


def estimate_transition_matrix(partition, flow, samples_per_box, seed=0,
                               exterior_policy="absorb", threads=None):
    """Monte-Carlo Ulam matrix of ``flow`` on ``partition``.

    Parameters
    ----------
    partition : GridPartition
    flow : FlowMapSpec
    samples_per_box : int
    seed : int
        Box ``b`` draws its start points from ``SeedSequence([seed, 0, b])``;
        noise for block ``j`` of boxes comes from ``SeedSequence([seed, 1, j])``.
    exterior_policy : {"absorb", "renormalize"}
        ``"absorb"`` adds an absorbing state with index ``K`` that collects
        all exterior landings; ``"renormalize"`` drops them and rescales rows.
    threads : int, optional

    Returns
    -------
    M : SparseStochasticMatrix
    report : UlamBuildReport
    """
    spb = int(samples_per_box)
    if spb < 1:
        raise ValidationError("samples_per_box must be at least 1")
    if flow.dim != partition.dim:
        raise ValidationError("flow and partition dimensions differ")
    if exterior_policy not in ("absorb", "renormalize"):
        raise ValidationError(f"unknown exterior policy {exterior_policy!r}")
    K = partition.n_boxes
    blocks = [np.arange(s, min(s + BLOCK_BOXES, K)) for s in range(0, K, BLOCK_BOXES)]
    threads = threads or os.cpu_count() or 1
    work = lambda j: _block(partition, flow, blocks[j], spb, int(seed), j)
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            dest = list(pool.map(work, range(len(blocks))))
        dest = np.concatenate(dest)
    else:
        dest = np.concatenate([work(j) for j in range(len(blocks))])
    rows = np.repeat(np.arange(K), spb)
    exterior = dest < 0
    ext_counts = np.bincount(rows[exterior], minlength=K)
    ext_mass = float(ext_counts.sum()) / (K * spb)
    if ext_mass > 0.01:
        warnings.warn(f"{ext_mass:.2%} of samples left the partition", ExteriorMassWarning,
                      stacklevel=2)
    if exterior_policy == "absorb":
        n = K + 1
        dest = np.where(exterior, K, dest)
        counts = sp.coo_matrix((np.ones(rows.size), (rows, dest)), shape=(n, n)).tocsr()
        counts = counts + sp.csr_matrix(([float(spb)], ([K], [K])), shape=(n, n))
        counts.sum_duplicates()
        counts.data /= spb
    else:
        if np.any(ext_counts == spb):
            raise EmptyRow(f"every sample from box {int(np.argmax(ext_counts == spb))} "
                           "left the partition")
        keep = ~exterior
        counts = sp.coo_matrix((np.ones(keep.sum()), (rows[keep], dest[keep])),
                               shape=(K, K)).tocsr()
        counts.sum_duplicates()
        denom = (spb - ext_counts).astype(float)
        counts.data /= np.repeat(denom, np.diff(counts.indptr))
    M = SparseStochasticMatrix.from_sparse(counts)
    report = UlamBuildReport(K, spb, ext_mass, int(seed), exterior_policy, ext_counts)
    return M, report
