"""Measurement assembly, rigid/non-rigid split and rank-K factorization."""

from __future__ import annotations

import warnings

import numpy as np

from .model import DeformationModel, MeasurementMatrix, RigidFactor, TrackTable, ValidationError
from .numeric import truncated_svd

RIGID_RANK = 3
# Singular values at or below this fraction of ||W||_F are treated as exact zeros.
ZERO_MODE_RTOL = 1e-12


def assemble_measurements(tracks: TrackTable) -> MeasurementMatrix:
    """Subtract per-frame centroids and stack frame-major into a 2I x J matrix."""
    coords = tracks.coords
    if not np.all(np.isfinite(coords)):
        raise ValidationError("non-finite coordinates")
    translations = coords.mean(axis=1)
    centered = coords - translations[:, None, :]
    W = centered.transpose(0, 2, 1).reshape(2 * tracks.n_frames, tracks.n_points)
    return MeasurementMatrix(W, translations)


def rigid_factor(measurements: MeasurementMatrix) -> RigidFactor:
    """Rank-3 affine factorization with ``M0 = U0 S0 / sqrt(J)`` and ``B0 = sqrt(J) V0^T``."""
    W = measurements.W
    n_frames, n_points = measurements.n_frames, measurements.n_points
    if n_frames < 2 or n_points < 4:
        raise ValidationError(f"need I >= 2 and J >= 4, got I={n_frames}, J={n_points}")
    svd = truncated_svd(W, RIGID_RANK)
    s = svd.full_spectrum
    if s[0] == 0.0:
        raise ValidationError("measurement matrix is identically zero")
    if s[2] < 1e-8 * s[0]:
        warnings.warn(
            f"degenerate rigid scene: sigma3/sigma1 = {s[2] / s[0]:.3g}", RuntimeWarning, stacklevel=2
        )
    root_j = np.sqrt(n_points)
    M0 = svd.U * svd.S / root_j
    B0 = root_j * svd.V.T
    return RigidFactor(M0, B0, svd.S, s[RIGID_RANK:])


def nonrigid_residual(measurements: MeasurementMatrix, rigid: RigidFactor) -> np.ndarray:
    """``Delta W = W - M0 B0``."""
    W = measurements.W if isinstance(measurements, MeasurementMatrix) else np.asarray(measurements)
    if W.shape != (rigid.M0.shape[0], rigid.B0.shape[1]):
        raise ValidationError(
            f"shape mismatch: W is {W.shape}, rigid factor gives "
            f"{(rigid.M0.shape[0], rigid.B0.shape[1])}"
        )
    return W - rigid.M0 @ rigid.B0


def max_modes(n_frames: int, n_points: int) -> int:
    return min(2 * n_frames, n_points) - RIGID_RANK


def check_k(k: int, n_frames: int, n_points: int) -> None:
    upper = max_modes(n_frames, n_points)
    if not 1 <= k <= upper:
        raise ValidationError(
            f"K={k} out of range: need 1 <= K <= min(2I, J) - 3 = "
            f"min({2 * n_frames}, {n_points}) - 3 = {upper}"
        )


def nonrigid_factor(delta_w, k: int, reference_norm: float | None = None) -> DeformationModel:
    """Rank-K factorization ``Delta W ~ M' B'`` (PCA variant, ``G = I``).

    Args:
        delta_w: 2I x J non-rigid residual.
        k: number of modes.
        reference_norm: scale against which a singular value counts as zero,
            normally ``||W||_F``. Defaults to exact-zero detection only.

    Modes whose singular value is zero get all-zero rows in both factors.
    """
    delta_w = np.asarray(delta_w, dtype=np.float64)
    n_frames, n_points = delta_w.shape[0] // 2, delta_w.shape[1]
    check_k(k, n_frames, n_points)
    svd = truncated_svd(delta_w, k)
    root_j = np.sqrt(n_points)
    Mprime = svd.U * svd.S / root_j
    Bprime = root_j * svd.V.T
    threshold = 0.0 if reference_norm is None else ZERO_MODE_RTOL * reference_norm
    zero = svd.S <= threshold
    Mprime[:, zero] = 0.0
    Bprime[zero] = 0.0
    return DeformationModel(Bprime, Mprime, np.eye(k), "pca", singular_values=svd.S)


def suggest_k(delta_w, energy_fraction: float = 0.01) -> int:
    """Smallest K whose discarded spectrum holds less than ``energy_fraction`` of ||Delta W||^2.

    Advisory only; the pipeline never applies it automatically.
    """
    s = np.linalg.svd(np.asarray(delta_w, dtype=np.float64), compute_uv=False)
    energy = s * s
    total = energy.sum()
    if total == 0.0:
        return 0
    tail = total - np.cumsum(energy)
    return int(np.argmax(tail < energy_fraction * total) + 1)
