"""Target regions: discrete box sets, generalized weight vectors, and
continuous-state predicates.

The CLI mini-language for predicates is

``all-abs-lt:<prefix>:<value>``
    every coordinate whose name starts with ``prefix`` has ``|x| < value``
``ball:<c1,c2,...>:<radius>``
    Euclidean ball
``box:<lo1,lo2,...>:<hi1,hi2,...>``
    half-open axis-aligned box ``lo <= x < hi``
``everywhere``
    the whole state space
"""
import numpy as np

from .errors import EmptyTarget, ValidationError
from .markov import weight_vector


class Region:
    """A target set ``A`` in one of three representations.

    Use the ``from_*`` constructors. ``kind`` is ``"indices"``,
    ``"weights"`` or ``"predicate"``.
    """

    def __init__(self, kind, indices=None, weights=None, predicate=None, label=""):
        self.kind = kind
        self.indices = indices
        self.weights = weights
        self.predicate = predicate
        self.label = label

    @classmethod
    def from_indices(cls, indices, n=None, label=""):
        idx = np.asarray(indices)
        if idx.size and not np.issubdtype(idx.dtype, np.integer):
            if not np.all(idx == np.round(idx)):
                raise ValidationError("box indices must be integers")
        idx = np.unique(idx.astype(np.int64).ravel())
        if idx.size and idx[0] < 0:
            raise ValidationError(f"negative box index {idx[0]}")
        if n is not None and idx.size and idx[-1] >= n:
            raise ValidationError(f"box index {idx[-1]} outside [0, {n})")
        idx.flags.writeable = False
        return cls("indices", indices=idx, label=label)

    @classmethod
    def from_weights(cls, values, label=""):
        return cls("weights", weights=weight_vector(values), label=label)

    @classmethod
    def from_predicate(cls, fn, label=""):
        return cls("predicate", predicate=fn, label=label)

    @property
    def generalized(self):
        return self.kind == "weights"

    def _require_discrete(self, n):
        if self.kind == "predicate":
            raise ValidationError("a continuous predicate has no state vector; "
                                  "discretize it over a partition first")
        if self.kind == "indices" and self.indices.size and self.indices[-1] >= n:
            raise ValidationError(f"box index {self.indices[-1]} outside [0, {n})")
        if self.kind == "weights" and self.weights.size != n:
            raise ValidationError(f"weight vector has length {self.weights.size}, expected {n}")

    def vector(self, n):
        """Indicator (or weight) vector of length ``n``."""
        self._require_discrete(n)
        if self.kind == "weights":
            return np.array(self.weights)
        v = np.zeros(n)
        v[self.indices] = 1.0
        return v

    def index_array(self, n):
        self._require_discrete(n)
        if self.kind != "indices":
            raise ValidationError("operation needs a box-set target, got weights")
        return np.asarray(self.indices)

    def complement(self, n):
        mask = np.ones(n, dtype=bool)
        mask[self.index_array(n)] = False
        return Region.from_indices(np.flatnonzero(mask), n)

    def contains(self, points):
        """Evaluate membership for an ``(m, d)`` array of states.

        Box-set regions treat each point's first coordinate as a state
        index, which is how discrete chains are simulated.
        """
        pts = np.atleast_2d(np.asarray(points))
        if self.kind == "predicate":
            return np.asarray(self.predicate(pts), dtype=bool)
        if self.kind == "indices":
            return np.isin(pts[:, 0].astype(np.int64), self.indices)
        raise ValidationError("weight-vector targets have no membership test")

    def __repr__(self):
        if self.kind == "indices":
            body = f"{self.indices.size} states"
        elif self.kind == "weights":
            body = f"n={self.weights.size}"
        else:
            body = self.label or "predicate"
        return f"Region({self.kind}: {body})"


def require_nonempty(region, n):
    idx = region.index_array(n)
    if idx.size == 0:
        raise EmptyTarget("target set is empty")
    return idx


def _floats(text):
    try:
        return np.array([float(t) for t in text.split(",") if t.strip()])
    except ValueError:
        raise ValidationError(f"cannot parse numbers from {text!r}") from None


def parse_region(text, coord_names):
    """Parse the predicate mini-language against named coordinates."""
    parts = text.strip().split(":")
    kind = parts[0]
    dim = len(coord_names)
    if kind == "everywhere" and len(parts) == 1:
        return Region.from_predicate(lambda x: np.ones(len(x), dtype=bool), text)
    try:
        return _parse(kind, parts, text, coord_names, dim)
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"cannot parse region {text!r}") from None


def _parse(kind, parts, text, coord_names, dim):
    if kind == "all-abs-lt" and len(parts) == 3:
        cols = [i for i, name in enumerate(coord_names) if name.startswith(parts[1])]
        if not cols:
            raise ValidationError(f"no coordinate name starts with {parts[1]!r}")
        limit = float(parts[2])
        cols = np.array(cols)
        return Region.from_predicate(lambda x: np.all(np.abs(x[:, cols]) < limit, axis=1), text)
    if kind == "ball" and len(parts) == 3:
        center, radius = _floats(parts[1]), float(parts[2])
        if center.size != dim:
            raise ValidationError(f"ball center needs {dim} coordinates")
        return Region.from_predicate(
            lambda x: np.sum((x - center) ** 2, axis=1) < radius ** 2, text)
    if kind == "box" and len(parts) == 3:
        lo, hi = _floats(parts[1]), _floats(parts[2])
        if lo.size != dim or hi.size != dim:
            raise ValidationError(f"box corners need {dim} coordinates")
        return Region.from_predicate(lambda x: np.all((x >= lo) & (x < hi), axis=1), text)
    raise ValidationError(f"cannot parse region {text!r}")
