"""Reconstruction error and coefficient-covariance analysis."""

from __future__ import annotations

import numpy as np

from .model import MeasurementMatrix, ReconstructionReport, RigidFactor, ValidationError


def reconstruction(rigid: RigidFactor, shapes, alpha) -> np.ndarray:
    from .recovery import reconstruct_nonrigid

    return rigid.M0 @ rigid.B0 + reconstruct_nonrigid(shapes, alpha)


def inverse_snr(measurements, rigid: RigidFactor, shapes, alpha) -> float:
    """Relative reprojection error ``100 * ||W - W_hat||_F / ||W||_F`` in percent.

    W is the translation-corrected measurement matrix.
    """
    W = measurements.W if isinstance(measurements, MeasurementMatrix) else np.asarray(measurements)
    norm = np.linalg.norm(W)
    if norm == 0.0:
        raise ValidationError("measurement matrix has zero norm")
    W_hat = reconstruction(rigid, shapes, alpha)
    if W_hat.shape != W.shape:
        raise ValidationError(f"reconstruction is {W_hat.shape}, measurements are {W.shape}")
    return float(100.0 * np.linalg.norm(W - W_hat) / norm)


def build_report(measurements, rigid, shapes, alpha, delta_w, runtime_ms=None,
                 rigid_scene=False, notes=()) -> ReconstructionReport:
    W = measurements.W
    residual = W - reconstruction(rigid, shapes, alpha)
    per_frame = np.linalg.norm(residual.reshape(-1, 2, W.shape[1]), axis=(1, 2))
    spectrum = np.linalg.svd(delta_w, compute_uv=False)
    return ReconstructionReport(
        inverse_snr_percent=inverse_snr(measurements, rigid, shapes, alpha),
        per_frame_residuals=per_frame,
        energy_spectrum=spectrum,
        runtime_ms=runtime_ms,
        rigid_scene=rigid_scene,
        notes=notes,
    )


def coefficient_covariance(alpha) -> np.ndarray:
    """Sample covariance over frames, ``(alpha - mean)^T (alpha - mean) / (I - 1)``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 2 or alpha.shape[0] < 2:
        raise ValidationError("need an I x K coefficient matrix with I >= 2")
    centered = alpha - alpha.mean(axis=0)
    cov = centered.T @ centered / (alpha.shape[0] - 1)
    return 0.5 * (cov + cov.T)


def concentration(C, permutation) -> float:
    """``sum_{p,q} |C[pi(p), pi(q)]| * |p - q|``; lower means closer to the diagonal."""
    A = np.abs(np.asarray(C, dtype=np.float64))
    perm = np.asarray(permutation, dtype=int)
    P = A[np.ix_(perm, perm)]
    idx = np.arange(len(perm))
    return float(np.sum(P * np.abs(idx[:, None] - idx[None, :])))


def seriate_covariance(C) -> tuple:
    """Greedy chain ordering that concentrates |C| near the diagonal.

    Start from the pair with the largest off-diagonal |C| (lowest indices on
    ties) and repeatedly attach the unused component most strongly linked to
    either chain end. Ties prefer the lower component index and then the
    tail end, so a diagonal matrix keeps its natural order. If the chain
    scores worse than the natural order, the natural order is returned.
    """
    A = np.abs(np.asarray(C, dtype=np.float64))
    k = A.shape[0]
    if A.shape != (k, k):
        raise ValidationError("covariance must be square")
    if k <= 1:
        return tuple(range(k))
    off = A.copy()
    np.fill_diagonal(off, -np.inf)
    best, start = -np.inf, (0, 1)
    for p in range(k):
        for q in range(p + 1, k):
            if off[p, q] > best:
                best, start = off[p, q], (p, q)
    chain = list(start)
    unused = [c for c in range(k) if c not in chain]
    while unused:
        choice = None
        for c in unused:
            for end in ("tail", "head"):
                anchor = chain[-1] if end == "tail" else chain[0]
                key = (A[anchor, c], -c, end == "tail")
                if choice is None or key > choice[0]:
                    choice = (key, c, end)
        _, c, end = choice
        if end == "tail":
            chain.append(c)
        else:
            chain.insert(0, c)
        unused.remove(c)
    natural = tuple(range(k))
    if concentration(A, chain) > concentration(A, natural):
        return natural
    return tuple(chain)


def offdiagonal_ratio(C) -> float:
    """Largest off-diagonal |C| over the largest diagonal entry."""
    C = np.asarray(C, dtype=np.float64)
    if C.shape[0] < 2:
        return 0.0
    top = np.abs(np.diag(C)).max()
    off = np.abs(C - np.diag(np.diag(C))).max()
    return float(off / top) if top > 0 else 0.0
