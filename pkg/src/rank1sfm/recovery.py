"""Back-projection directions, rank-1 basis shapes and coefficient projection."""

from __future__ import annotations

import numpy as np

from .analysis import coefficient_covariance, seriate_covariance
from .model import BasisShapeSet, CoefficientMatrix, RigidFactor, ValidationError
from .numeric import RayleighSumProblem, SolverConfig, SolverResult, maximize_rayleigh_sum

# Operators with norm at or below this fraction of ||M0^i|| ||d_k|| ||b_k|| count as zero.
NULL_OPERATOR_RTOL = 1e-12


def _frames(delta_w: np.ndarray) -> np.ndarray:
    delta_w = np.asarray(delta_w, dtype=np.float64)
    return delta_w.reshape(delta_w.shape[0] // 2, 2, delta_w.shape[1])


def solve_directions(delta_w, rigid: RigidFactor, rows, config: SolverConfig = SolverConfig()):
    """Solve one back-projection direction per mode row.

    Modes decouple because the rows are mutually orthogonal, so each row gets
    its own Rayleigh-sum problem with ``g_i = M0^i^T dW^i b_k`` and
    ``H_i = ||b_k||^2 M0^i^T M0^i``.

    Returns:
        List of SolverResult, one per row. A zero row (or zero residual)
        yields a degenerate result with objective 0.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    frames = _frames(delta_w)
    cameras = rigid.cameras()
    if frames.shape[0] != cameras.shape[0] or frames.shape[2] != rows.shape[1]:
        raise ValidationError("residual, cameras and mode rows have inconsistent shapes")
    results = []
    for b in rows:
        problem = RayleighSumProblem.from_frames(cameras, frames, b)
        results.append(maximize_rayleigh_sum(problem, config))
    return results


def form_basis_shapes(rigid: RigidFactor, rows, directions) -> BasisShapeSet:
    """Rank-1 operators ``B_k^i = M0^i d_k b_k^T`` in factored form."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    cameras = rigid.cameras()
    image_dirs = np.einsum("iab,kb->kia", cameras, directions)
    row_norms = np.linalg.norm(rows, axis=1)
    norms = np.linalg.norm(image_dirs, axis=2) * row_norms[:, None]
    scale = (np.linalg.norm(cameras, axis=(1, 2))[None, :]
             * np.linalg.norm(directions, axis=1)[:, None] * row_norms[:, None])
    null = norms <= NULL_OPERATOR_RTOL * scale
    return BasisShapeSet(image_dirs, rows, norms, null)


def frame_inner_products(delta_w, shapes: BasisShapeSet) -> np.ndarray:
    """``<dW^i, B_k^i>`` for all modes and frames, shape (K, I)."""
    return np.einsum("kia,iaj,kj->ki", shapes.image_dirs, _frames(delta_w), shapes.rows)


def project_coefficients(delta_w, shapes: BasisShapeSet, seriate: bool = True) -> CoefficientMatrix:
    """Coefficients ``alpha[i, k] = <dW^i, B_k^i / ||B_k^i||>``; zero operators give 0."""
    inner = frame_inner_products(delta_w, shapes)
    safe = np.where(shapes.null, 1.0, shapes.norms)
    alpha = np.where(shapes.null, 0.0, inner / safe).T
    cov = coefficient_covariance(alpha) if alpha.shape[0] >= 2 else np.zeros((alpha.shape[1],) * 2)
    perm = seriate_covariance(cov) if seriate else tuple(range(alpha.shape[1]))
    return CoefficientMatrix(alpha, cov, perm)


def reconstruct_nonrigid(shapes: BasisShapeSet, alpha) -> np.ndarray:
    """``sum_k alpha[i, k] * B_k^i / ||B_k^i||`` stacked as a 2I x J matrix."""
    alpha = np.asarray(alpha, dtype=np.float64)
    safe = np.where(shapes.null, 1.0, shapes.norms)
    weights = np.where(shapes.null, 0.0, alpha.T / safe)
    frames = np.einsum("ki,kia,kj->iaj", weights, shapes.image_dirs, shapes.rows)
    return frames.reshape(-1, shapes.rows.shape[1])


def directions_from(results: list[SolverResult]) -> np.ndarray:
    return np.array([r.direction for r in results]).reshape(-1, 3)
