"""Non-negative matrix factorization for semantic feature channels.

A stack of local feature vectors A (rows = spatial locations, columns =
feature channels) is factorized as A ~ P Q with P, Q entrywise
non-negative. Rows of Q act as channel-space cluster centroids and rows of
P as soft cluster assignments, so P re-expresses each location in a
K-channel "which cluster is this" basis. The basis Q is fit once on
training features and then frozen; at inference only P is solved for, row
by row, which keeps descriptors independent of what else is in the batch.

Updates are the classical multiplicative rules, which keep factors
non-negative and never increase the Frobenius objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import FeatureMap

# Denominator guard for multiplicative updates.
EPS = 1e-12


@dataclass
class NmfResult:
    """Factorization output: A ~ assignments @ basis."""

    assignments: np.ndarray
    basis: np.ndarray
    objective_trace: list[float] = field(default_factory=list)


def _check_nonneg(A: np.ndarray, name: str) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.isfinite(A).all():
        raise ValueError(f"{name} contains non-finite entries")
    if A.size and A.min() < 0:
        raise ValueError(f"{name} contains negative entries")
    return A


def nmf_factorize(
    A: np.ndarray,
    k: int,
    max_iters: int = 200,
    tol: float = 1e-6,
    seed: int = 0,
    ortho_weight: float = 0.0,
) -> NmfResult:
    """Factorize a non-negative matrix by alternating multiplicative updates.

    Minimizes ||A - P Q||_F over non-negative P (n x k) and Q (k x c).
    Initialization is uniform random, scaled so the initial product matches
    the mean of A; deterministic for a fixed seed. Iteration stops when the
    relative objective decrease falls below ``tol`` or after ``max_iters``
    full updates. ``objective_trace`` records the Frobenius error before
    the first update and after each iteration, and is non-increasing.

    ``ortho_weight`` adds a penalty pushing Q Q^T toward the identity
    (experimental hook, default off; monotonicity is only guaranteed at 0).
    """
    A = _check_nonneg(A, "A")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    n, c = A.shape

    rng = np.random.default_rng(seed)
    # E[(PQ)_ij] = k a^2 / 4 for U(0, a) factors; match it to mean(A).
    a = 2.0 * np.sqrt(A.mean() / k) if A.size else 1.0
    P = rng.uniform(0.0, a, size=(n, k))
    Q = rng.uniform(0.0, a, size=(k, c))

    def objective() -> float:
        return float(np.linalg.norm(A - P @ Q))

    trace = [objective()]
    for _ in range(max_iters):
        P *= (A @ Q.T) / (P @ (Q @ Q.T) + EPS)
        if ortho_weight > 0:
            num = P.T @ A + 2.0 * ortho_weight * Q
            den = (P.T @ P) @ Q + 2.0 * ortho_weight * ((Q @ Q.T) @ Q) + EPS
            Q *= num / den
        else:
            Q *= (P.T @ A) / ((P.T @ P) @ Q + EPS)
        cur = objective()
        prev = trace[-1]
        trace.append(cur)
        if prev <= 0 or (prev - cur) / prev < tol:
            break

    return NmfResult(assignments=P, basis=Q, objective_trace=trace)


def nmf_project(
    A: np.ndarray, basis: np.ndarray, max_iters: int = 200, tol: float = 1e-9
) -> np.ndarray:
    """Solve for non-negative assignments against a fixed basis.

    Minimizes ||A - P basis||_F over P >= 0 with the P-only multiplicative
    update. Each row initializes to its own mean over mean(basis) and
    converges on its own residual, so row i of the result depends only on
    row i of A: projecting a subset, a permutation, or a single row gives
    the same assignments. Deterministic (no randomness).
    """
    A = _check_nonneg(A, "A")
    basis = _check_nonneg(basis, "basis")
    if A.shape[1] != basis.shape[1]:
        raise ValueError(
            f"A has {A.shape[1]} channels but basis has {basis.shape[1]}"
        )
    n = A.shape[0]
    k = basis.shape[0]
    scale = A.mean(axis=1) / max(basis.mean(), EPS) if A.size else np.zeros(n)
    P = np.repeat(scale[:, None], k, axis=1)

    BBt = basis @ basis.T
    prev = np.linalg.norm(A - P @ basis, axis=1)
    live = np.arange(n)
    for _ in range(max_iters):
        if live.size == 0:
            break
        Pl = P[live] * ((A[live] @ basis.T) / (P[live] @ BBt + EPS))
        P[live] = Pl
        cur = np.linalg.norm(A[live] - Pl @ basis, axis=1)
        done = (prev[live] <= 0) | ((prev[live] - cur) / np.maximum(prev[live], EPS) < tol)
        prev[live] = cur
        live = live[~done]
    return P


def semantic_feature_map(f: FeatureMap, basis: np.ndarray) -> FeatureMap:
    """Re-express a local feature map in cluster-assignment channels."""
    basis = np.asarray(basis, dtype=np.float64)
    if basis.shape[1] != f.c:
        raise ValueError(
            f"feature map has {f.c} channels but basis expects {basis.shape[1]}"
        )
    P = nmf_project(f.as_matrix(), basis)
    k = basis.shape[0]
    return FeatureMap(h=f.h, w=f.w, c=k, data=P.reshape(f.h, f.w, k))
