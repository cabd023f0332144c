import math

import numpy as np
import pytest

from stochbasin.dynamics import FlowMapSpec, in_simplex, make_flow
from stochbasin.errors import EmptyRow, InvalidBounds, SizeGuard, ValidationError
from stochbasin.ulam import (ExteriorMassWarning, GridPartition, build_partition,
                             estimate_transition_matrix, simplex_mask)


class DoublingMap:
    """``x -> 2x mod 1`` as a duck-typed flow map."""

    dim = 1
    deterministic = True

    def flow(self, x, rng=None):
        return np.mod(2.0 * np.atleast_2d(x), 1.0)


def shift(width, dim=1):
    return FlowMapSpec(field=lambda x: np.full_like(x, width), dim=dim, tau=1.0, dt=1.0)


def test_one_dimensional_split():
    P = build_partition([0.0], [1.0], [4])
    np.testing.assert_allclose(P.box_lower(np.arange(4)).ravel(), [0, 0.25, 0.5, 0.75])
    np.testing.assert_array_equal(P.locate([[0.0], [0.25], [0.4999], [0.75], [1.0]]),
                                  [0, 1, 1, 3, 3])
    np.testing.assert_array_equal(P.locate([[-0.01], [1.01], [np.nan]]), [-1, -1, -1])


def test_row_major_indexing():
    P = build_partition([0, 0], [2, 3], [2, 3])
    assert P.locate([[1.5, 0.5]])[0] == 3
    assert P.locate([[0.5, 2.5]])[0] == 2
    np.testing.assert_allclose(P.centers([5]), [[1.5, 2.5]])


def test_box_counts():
    P = build_partition([0, 0], [1, 1], [128, 128], mask=simplex_mask, domain=in_simplex)
    assert P.n_boxes == 8256
    assert build_partition([-math.pi, -20], [math.pi, 20], [256, 256]).n_boxes == 65536


def test_pendulum_grid_locate():
    P = build_partition([-math.pi, -20], [math.pi, 20], [64, 64], periodic=[True, False])
    assert P.locate([[-math.pi, -20.0]])[0] == 0
    assert P.locate([[math.pi + 0.01, 0.0]])[0] == P.locate([[-math.pi + 0.01, 0.0]])[0]
    assert P.locate([[0.0, 25.0]])[0] == -1


def test_invalid_bounds():
    with pytest.raises(InvalidBounds):
        build_partition([0, 0], [1, 0], [2, 2])
    with pytest.raises(InvalidBounds):
        build_partition([0], [1], [0])
    with pytest.raises(InvalidBounds):
        build_partition([0, 0], [1, 1], [2])
    with pytest.raises(SizeGuard):
        build_partition([0, 0], [1, 1], [10**4, 10**4])


def test_masked_samples_lie_in_domain():
    P = build_partition([0, 0], [1, 1], [16, 16], mask=simplex_mask, domain=in_simplex)
    diag = P.locate([[0.5, 0.47]])[0]
    pts = P.sample(diag, 500, np.random.default_rng(0))
    assert in_simplex(pts).all()
    assert np.all(P.locate(pts) == diag)


def test_identity_flow_gives_identity():
    P = build_partition([0, 0], [1, 1], [8, 8])
    M, rep = estimate_transition_matrix(P, make_flow("identity", dim=2), 20)
    assert M.n == 65 and rep.exterior_mass == 0.0
    np.testing.assert_array_equal(M.toarray(), np.eye(65))


def test_periodic_shift_is_permutation():
    P = build_partition([0.0], [1.0], [10], periodic=[True])
    spec = FlowMapSpec(field=lambda x: np.full_like(x, 0.1), dim=1, tau=1.0, dt=1.0,
                       wrap=((0.0, 1.0),))
    M, _ = estimate_transition_matrix(P, spec, 50, exterior_policy="renormalize")
    A = M.toarray()
    np.testing.assert_array_equal(A, np.roll(np.eye(10), 1, axis=1))


def test_doubling_map_preserves_uniform():
    P = build_partition([0.0], [1.0], [32])
    M, _ = estimate_transition_matrix(P, DoublingMap(), 2000, exterior_policy="renormalize")
    A = M.toarray()
    assert np.all(A.sum(axis=1) == pytest.approx(1.0, abs=1e-12))
    # box i maps onto boxes 2i mod 32 and 2i + 1 mod 32 in roughly equal parts
    for i in range(32):
        assert set(np.flatnonzero(A[i])) <= {(2 * i) % 32, (2 * i + 1) % 32}
    u = np.full(32, 1 / 32)
    assert np.abs(u @ A - u).max() < 4 * math.sqrt(0.25 / 2000) / 16


def test_thread_count_determinism():
    P = build_partition([-math.pi, -20], [math.pi, 20], [24, 24], periodic=[True, False])
    flow = make_flow("pendulum", sigma=0.2)
    a, _ = estimate_transition_matrix(P, flow, 10, seed=3, threads=1)
    b, _ = estimate_transition_matrix(P, flow, 10, seed=3, threads=4)
    assert (a.csr != b.csr).nnz == 0
    c, _ = estimate_transition_matrix(P, flow, 10, seed=4, threads=1)
    assert (a.csr != c.csr).nnz > 0


def test_exterior_policies():
    P = build_partition([0.0], [1.0], [4])
    with pytest.warns(ExteriorMassWarning):
        M, rep = estimate_transition_matrix(P, shift(0.5), 100)
    A = M.toarray()
    assert M.n == 5 and rep.exterior_mass == pytest.approx(0.5)
    np.testing.assert_array_equal(A[2:, 4], [1, 1, 1])
    np.testing.assert_array_equal(A[0], [0, 0, 1, 0, 0])
    with pytest.raises(EmptyRow), pytest.warns(ExteriorMassWarning):
        estimate_transition_matrix(P, shift(0.5), 100, exterior_policy="renormalize")


def test_renormalize_partial_rows():
    P = build_partition([0.0], [1.0], [4])
    with pytest.warns(ExteriorMassWarning):
        M, rep = estimate_transition_matrix(P, shift(0.125), 400, exterior_policy="renormalize")
    A = M.toarray()
    assert A[3, 3] == 1.0
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-14)
    assert rep.exterior_counts[3] > 0 and rep.exterior_counts[:3].sum() == 0


def test_ulam_argument_checks():
    P = build_partition([0.0], [1.0], [4])
    with pytest.raises(ValidationError):
        estimate_transition_matrix(P, shift(0.1), 0)
    with pytest.raises(ValidationError):
        estimate_transition_matrix(P, shift(0.1, dim=2), 5)
    with pytest.raises(ValidationError):
        estimate_transition_matrix(P, shift(0.1), 5, exterior_policy="drop")


def test_metadata_round_trip_fields():
    P = GridPartition([0, 0], [1, 2], [3, 4], periodic=[True, False])
    meta = P.metadata()
    assert meta["counts"] == "3,4" and meta["periodic"] == "1,0" and meta["n_boxes"] == "12"
