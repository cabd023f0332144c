"""Plain-text file formats.

Matrix: first line ``n nnz``, then ``nnz`` lines ``i j v`` (0-based).
Vector: one value per line. Region: one box index per line, or a header
``weights n`` followed by ``n`` values. Sidecar metadata: ``key=value``.
Floats are written with ``repr`` so files round-trip exactly.
"""
import csv

import numpy as np

from .errors import ValidationError
from .markov import validate_stochastic
from .regions import Region


def _lines(path):
    with open(path) as fh:
        return [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]


def write_matrix(M, path):
    rows, cols, vals = M.entries()
    with open(path, "w") as fh:
        fh.write(f"{M.n} {vals.size}\n")
        for i, j, v in zip(rows.tolist(), cols.tolist(), vals.tolist()):
            fh.write(f"{i} {j} {v!r}\n")


def read_matrix(path, tol=1e-12):
    lines = _lines(path)
    if not lines or len(lines[0]) != 2:
        raise ValidationError(f"{path}: first line must be 'n nnz'")
    try:
        n, nnz = int(lines[0][0]), int(lines[0][1])
        body = lines[1:]
        if len(body) != nnz or any(len(t) != 3 for t in body):
            raise ValidationError(f"{path}: expected {nnz} lines 'i j v', got {len(body)}")
        rows = np.array([int(t[0]) for t in body], dtype=np.int64)
        cols = np.array([int(t[1]) for t in body], dtype=np.int64)
        vals = np.array([float(t[2]) for t in body])
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return validate_stochastic((rows, cols, vals), n, tol)


def write_vector(v, path):
    with open(path, "w") as fh:
        for x in np.asarray(v, dtype=float).tolist():
            fh.write(f"{x!r}\n")


def read_vector(path):
    try:
        return np.array([float(t[0]) for t in _lines(path)])
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def read_region(path, n=None):
    lines = _lines(path)
    if lines and lines[0][0] == "weights":
        if len(lines[0]) != 2:
            raise ValidationError(f"{path}: header must be 'weights n'")
        size = int(lines[0][1])
        vals = [float(t[0]) for t in lines[1:]]
        if len(vals) != size:
            raise ValidationError(f"{path}: header announces {size} weights, found {len(vals)}")
        return Region.from_weights(vals, label=str(path))
    try:
        idx = [int(t[0]) for t in lines]
    except ValueError:
        raise ValidationError(f"{path}: box indices must be integers") from None
    return Region.from_indices(np.array(idx, dtype=np.int64), n, label=str(path))


def write_region(region, path):
    with open(path, "w") as fh:
        if region.kind == "weights":
            fh.write(f"weights {region.weights.size}\n")
            fh.writelines(f"{x!r}\n" for x in region.weights.tolist())
        else:
            fh.writelines(f"{i}\n" for i in region.indices.tolist())


def write_committor_csv(q, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "q"])
        for i, x in enumerate(np.asarray(q).tolist()):
            w.writerow([i, repr(x)])


def write_sidecar(meta, path):
    with open(path, "w") as fh:
        for k, v in meta.items():
            if "=" in str(k) or "\n" in str(v):
                raise ValidationError(f"cannot write metadata key {k!r}")
            fh.write(f"{k}={v}\n")


def read_sidecar(path):
    out = {}
    with open(path) as fh:
        for ln in fh:
            if ln.strip():
                k, _, v = ln.rstrip("\n").partition("=")
                out[k] = v
    return out
