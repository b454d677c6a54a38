import numpy as np
import pytest

from xmplace import FeatureMap, nmf_factorize, nmf_project
from xmplace.nmf import semantic_feature_map

from oracles import kmeans_label_agreement, nmf_objective


def test_objective_trace_non_increasing(rng):
    A = rng.random((60, 12))
    res = nmf_factorize(A, k=4, max_iters=100, tol=0.0, seed=3)
    trace = np.array(res.objective_trace)
    assert len(trace) == 101
    assert (np.diff(trace) <= 1e-10).all()
    assert trace[0] == pytest.approx(nmf_objective(A, res.assignments, res.basis), abs=trace[0])


def test_factors_stay_non_negative(rng):
    A = rng.random((40, 8))
    res = nmf_factorize(A, k=5, seed=1)
    assert res.assignments.min() >= 0
    assert res.basis.min() >= 0
    assert res.assignments.shape == (40, 5)
    assert res.basis.shape == (5, 8)


def test_trace_matches_objective_oracle(rng):
    A = rng.random((30, 6))
    res = nmf_factorize(A, k=3, max_iters=50, tol=0.0, seed=9)
    # the last trace entry was computed after the final update of both factors
    assert res.objective_trace[-1] == pytest.approx(
        nmf_objective(A, res.assignments, res.basis), rel=1e-12
    )


def test_rank_one_matrix_recovered(rng):
    u = rng.random(25) + 0.1
    v = rng.random(7) + 0.1
    A = np.outer(u, v)
    res = nmf_factorize(A, k=1, max_iters=500, tol=1e-14, seed=0)
    rel = nmf_objective(A, res.assignments, res.basis) / np.linalg.norm(A)
    assert rel < 1e-4


def test_separated_clusters_recovered(rng):
    """Points around well-separated non-negative centroids sort into
    components that agree with the true labels under the best matching."""
    centers = np.array(
        [[8.0, 0.5, 0.5, 0.5], [0.5, 8.0, 0.5, 0.5], [0.5, 0.5, 8.0, 0.5]]
    )
    labels = rng.integers(0, 3, size=240)
    A = np.maximum(centers[labels] + rng.normal(0, 0.25, size=(240, 4)), 0.0)
    res = nmf_factorize(A, k=3, max_iters=400, tol=1e-12, seed=2)
    found = res.assignments.argmax(axis=1)
    assert kmeans_label_agreement(labels, found) > 0.95


def test_determinism(rng):
    A = rng.random((20, 5))
    r1 = nmf_factorize(A, k=3, seed=42)
    r2 = nmf_factorize(A, k=3, seed=42)
    assert np.array_equal(r1.assignments, r2.assignments)
    assert np.array_equal(r1.basis, r2.basis)


def test_input_validation(rng):
    with pytest.raises(ValueError):
        nmf_factorize(np.array([[-1.0, 2.0]]), k=1)
    with pytest.raises(ValueError):
        nmf_factorize(np.array([[np.inf, 2.0]]), k=1)
    with pytest.raises(ValueError):
        nmf_factorize(rng.random((4, 4)), k=0)
    with pytest.raises(ValueError):
        nmf_factorize(rng.random(4), k=1)
    with pytest.raises(ValueError):
        nmf_project(rng.random((4, 5)), rng.random((2, 4)))


def test_projection_rows_independent(rng):
    """Each row's assignment depends only on that row, so projecting a
    permuted matrix equals permuting the projections."""
    A = rng.random((30, 6))
    basis = nmf_factorize(rng.random((50, 6)), k=4, seed=5).basis
    perm = rng.permutation(30)
    P = nmf_project(A, basis)
    P_perm = nmf_project(A[perm], basis)
    assert np.allclose(P_perm, P[perm], atol=1e-12)
    # and on subsets: the first row alone projects to the same assignment
    P_single = nmf_project(A[:1], basis)
    assert np.allclose(P_single[0], P[0], atol=1e-12)


def test_projection_reduces_residual(rng):
    A = rng.random((40, 8))
    basis = nmf_factorize(A, k=4, seed=7).basis
    P = nmf_project(A, basis)
    assert P.min() >= 0
    init = np.full_like(P, A.mean() / basis.mean())
    assert nmf_objective(A, P, basis) <= nmf_objective(A, init, basis) + 1e-12


def test_projection_deterministic_no_rng(rng):
    A = rng.random((15, 6))
    basis = nmf_factorize(A, k=3, seed=11).basis
    assert np.array_equal(nmf_project(A, basis), nmf_project(A, basis))


def test_zero_matrix_handled():
    A = np.zeros((10, 4))
    res = nmf_factorize(A, k=2, max_iters=50)
    assert np.isfinite(res.assignments).all() and np.isfinite(res.basis).all()
    P = nmf_project(A, np.ones((2, 4)))
    assert np.allclose(P, 0.0)


def test_semantic_feature_map_shapes(rng):
    fm = FeatureMap(h=3, w=4, c=6, data=rng.random((3, 4, 6)))
    basis = nmf_factorize(fm.as_matrix(), k=2, seed=0).basis
    sem = semantic_feature_map(fm, basis)
    assert (sem.h, sem.w, sem.c) == (3, 4, 2)
    with pytest.raises(ValueError):
        semantic_feature_map(fm, rng.random((2, 5)))
