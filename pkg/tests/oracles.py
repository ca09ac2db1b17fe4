"""Independent reference computations used by the tests.

Nothing here calls into the package; each routine is a slow, direct
implementation that the fast paths are checked against.
"""

import itertools
import math

import numpy as np


def jacobi_eigenvalues(S, tol=1e-15, max_sweeps=100):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending."""
    A = np.array(S, dtype=float)
    n = A.shape[0]
    for _ in range(max_sweeps):
        off = math.sqrt(sum(A[p, q] ** 2 for p in range(n) for q in range(n) if p != q))
        if off <= tol * max(1.0, np.abs(A).max()):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if A[p, q] == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2 * A[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                R = np.eye(n)
                R[p, p] = R[q, q] = c
                R[p, q] = s
                R[q, p] = -s
                A = R.T @ A @ R
    return np.sort(np.diag(A))[::-1]


def singular_values(A):
    """Singular values via Jacobi eigenvalues of the smaller Gram matrix."""
    A = np.asarray(A, dtype=float)
    G = A.T @ A if A.shape[0] >= A.shape[1] else A @ A.T
    ev = jacobi_eigenvalues(G)
    return np.sqrt(np.clip(ev, 0, None))


def tail_energy(A, r):
    """Sum of squared singular values beyond the r largest."""
    A = np.asarray(A, dtype=float)
    G = A.T @ A if A.shape[0] >= A.shape[1] else A @ A.T
    ev = np.clip(jacobi_eigenvalues(G), 0, None)
    return float(ev[r:].sum())


def per_frame_means(coords):
    """Centroid of each frame by explicit loops."""
    n_frames, n_points = len(coords), len(coords[0])
    out = []
    for f in range(n_frames):
        sx = sy = 0.0
        for p in range(n_points):
            sx += coords[f][p][0]
            sy += coords[f][p][1]
        out.append((sx / n_points, sy / n_points))
    return np.array(out)


def two_pass_covariance(X):
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    mean = [sum(X[i, a] for i in range(n)) / n for a in range(k)]
    C = np.zeros((k, k))
    for a in range(k):
        for b in range(k):
            C[a, b] = sum((X[i, a] - mean[a]) * (X[i, b] - mean[b]) for i in range(n)) / (n - 1)
    return C


def sphere_grid(step_deg=1.0):
    """Unit vectors on a (theta, phi) grid covering the upper half sphere."""
    theta = np.deg2rad(np.arange(0.0, 180.0 + step_deg / 2, step_deg))
    phi = np.deg2rad(np.arange(0.0, 180.0, step_deg))
    T, P = np.meshgrid(theta, phi, indexing="ij")
    return np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1)


def unreduced_objective(cameras, frames, b, d):
    """sum_i (w_i^T K_i d)^2 / ||K_i d||^2 with K_i = b kron M^i formed explicitly."""
    total = 0.0
    for M, Wi in zip(cameras, frames):
        K = np.kron(b.reshape(-1, 1), M)
        w = Wi.reshape(-1, order="F")
        v = K @ d
        den = v @ v
        if den > 0:
            total += (w @ v) ** 2 / den
    return total


def projection_residual(cameras, frames, b, d):
    """min over alpha of sum_i ||W^i - alpha_i M^i d b^T||^2, by per-frame least squares."""
    total = 0.0
    for M, Wi in zip(cameras, frames):
        B = np.outer(M @ d, b)
        nb = np.sum(B * B)
        a = np.sum(Wi * B) / nb if nb > 0 else 0.0
        total += np.sum((Wi - a * B) ** 2)
    return total


def exhaustive_seriation(C):
    """All orderings minimizing sum |C[pi p, pi q]| |p - q|, with the optimum."""
    A = np.abs(np.asarray(C, dtype=float))
    k = A.shape[0]
    best, winners = np.inf, []
    for perm in itertools.permutations(range(k)):
        val = sum(A[perm[p], perm[q]] * abs(p - q) for p in range(k) for q in range(k))
        if val < best - 1e-12:
            best, winners = val, [perm]
        elif abs(val - best) <= 1e-12:
            winners.append(perm)
    return best, winners
