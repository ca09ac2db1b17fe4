"""Domain types shared across the factorization pipeline.

Storage conventions:

* The measurement matrix is stacked frame-major: rows ``2*i`` and ``2*i + 1``
  hold the x- and y-coordinates of frame ``i`` (0-based).
* Cameras ``M0`` are stacked the same way, so ``M0[2*i:2*i+2]`` is the 2x3
  affine camera of frame ``i``.
* All arrays are float64 and made read-only on construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


def _frozen(a, ndim: Optional[int] = None, name: str = "array") -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TrackTable:
    """Raw 2D point tracks, ``coords[i, j] = (x, y)`` of point ``j`` in frame ``i``."""

    coords: np.ndarray
    labels: Optional[tuple] = None

    def __post_init__(self):
        coords = _frozen(self.coords, 3, "coords")
        if coords.shape[2] != 2:
            raise ValidationError(f"coords must have shape (I, J, 2), got {coords.shape}")
        n_frames, n_points = coords.shape[:2]
        if n_frames < 2 or n_points < 4:
            raise ValidationError(
                f"need at least 2 frames and 4 points, got I={n_frames}, J={n_points}"
            )
        if not np.all(np.isfinite(coords)):
            bad = np.argwhere(~np.isfinite(coords))[0]
            raise ValidationError(f"non-finite coordinate at frame {bad[0]}, point {bad[1]}")
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != n_points:
                raise ValidationError("labels must have one entry per point")
            object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "coords", coords)

    @property
    def n_frames(self) -> int:
        return self.coords.shape[0]

    @property
    def n_points(self) -> int:
        return self.coords.shape[1]

    @classmethod
    def from_matrix(cls, W: np.ndarray, labels=None) -> "TrackTable":
        """Build from a frame-major stacked 2I x J matrix."""
        W = np.asarray(W, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] % 2:
            raise ValidationError(f"expected a 2I x J matrix, got shape {W.shape}")
        n_frames = W.shape[0] // 2
        coords = W.reshape(n_frames, 2, W.shape[1]).transpose(0, 2, 1)
        return cls(coords, labels)

    def to_matrix(self) -> np.ndarray:
        """Frame-major stacked 2I x J matrix of raw coordinates."""
        return self.coords.transpose(0, 2, 1).reshape(2 * self.n_frames, self.n_points)


@dataclass(frozen=True)
class MeasurementMatrix:
    """Translation-corrected measurements plus the per-frame centroids removed."""

    W: np.ndarray
    translations: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "W", _frozen(self.W, 2, "W"))
        object.__setattr__(self, "translations", _frozen(self.translations, 2, "translations"))
        if self.W.shape[0] != 2 * self.translations.shape[0] or self.translations.shape[1] != 2:
            raise ValidationError("translations must have shape (I, 2) matching W (2I x J)")

    @property
    def n_frames(self) -> int:
        return self.translations.shape[0]

    @property
    def n_points(self) -> int:
        return self.W.shape[1]

    def frame(self, i: int) -> np.ndarray:
        return self.W[2 * i:2 * i + 2]

    def to_tracks(self) -> TrackTable:
        """Restore the raw tracks by adding the stored translations back."""
        raw = self.W + self.translations.reshape(-1)[:, None]
        return TrackTable.from_matrix(raw)


@dataclass(frozen=True)
class RigidFactor:
    """Rank-3 affine factorization ``W0 = M0 @ B0``.

    Attributes:
        M0: stacked inhomogeneous cameras, 2I x 3.
        B0: mean (rigid) shape, 3 x J.
        sigma0: the three retained singular values of W.
        sigma_rest: the remaining singular values of W.
    """

    M0: np.ndarray
    B0: np.ndarray
    sigma0: np.ndarray
    sigma_rest: np.ndarray

    def __post_init__(self):
        for name, nd in (("M0", 2), ("B0", 2), ("sigma0", 1), ("sigma_rest", 1)):
            object.__setattr__(self, name, _frozen(getattr(self, name), nd, name))

    @property
    def n_frames(self) -> int:
        return self.M0.shape[0] // 2

    def camera(self, i: int) -> np.ndarray:
        return self.M0[2 * i:2 * i + 2]

    def cameras(self) -> np.ndarray:
        """Cameras as an (I, 2, 3) array."""
        return self.M0.reshape(-1, 2, 3)

    @property
    def W0(self) -> np.ndarray:
        return self.M0 @ self.B0

    @property
    def spectrum(self) -> np.ndarray:
        return np.concatenate([self.sigma0, self.sigma_rest])


@dataclass(frozen=True)
class DeformationModel:
    """K rank-1 deformation modes.

    ``Bprime`` holds the mode rows b_k (already rotated by ``G`` for the ICA
    variant) and ``Mprime`` the matching coefficient-side factor, rotated so
    that ``Mprime @ Bprime`` is always the rank-K approximation of the
    non-rigid residual. ``directions`` is ``None`` until recovery has run.
    """

    Bprime: np.ndarray
    Mprime: np.ndarray
    G: np.ndarray
    variant: str = "pca"
    directions: Optional[np.ndarray] = None
    objectives: Optional[np.ndarray] = None
    degenerate: Optional[tuple] = None
    singular_values: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.variant not in ("pca", "ica"):
            raise ValidationError(f"variant must be 'pca' or 'ica', got {self.variant!r}")
        for name in ("Bprime", "Mprime", "G"):
            object.__setattr__(self, name, _frozen(getattr(self, name), 2, name))
        for name in ("directions", "objectives", "singular_values"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _frozen(value, None, name))
        if self.degenerate is not None:
            object.__setattr__(self, "degenerate", tuple(bool(x) for x in self.degenerate))

    @property
    def K(self) -> int:
        return self.Bprime.shape[0]

    def with_directions(self, directions, objectives, degenerate) -> "DeformationModel":
        return DeformationModel(
            self.Bprime, self.Mprime, self.G, self.variant,
            directions, objectives, tuple(degenerate), self.singular_values,
        )


@dataclass(frozen=True)
class RankOneBasisShape:
    """One frame's rank-1 operator ``B_k^i = M0^i d_k b_k^T`` (2 x J)."""

    frame: int
    mode: int
    operator: np.ndarray
    frob_norm: float

    @property
    def normalized(self) -> Optional[np.ndarray]:
        if self.frob_norm == 0.0:
            return None
        return self.operator / self.frob_norm


@dataclass(frozen=True)
class BasisShapeSet:
    """All rank-1 operators, stored in factored form.

    The operator for frame i and mode k is ``outer(image_dirs[k, i], rows[k])``;
    materializing all K*I operators is avoided because it scales as K*I*2*J.

    Attributes:
        image_dirs: (K, I, 2) image-plane directions ``M0^i d_k``.
        rows: (K, J) mode rows b_k.
        norms: (K, I) Frobenius norms of the operators.
        null: (K, I) boolean mask of operators treated as zero.
    """

    image_dirs: np.ndarray
    rows: np.ndarray
    norms: np.ndarray
    null: np.ndarray

    def __post_init__(self):
        for name in ("image_dirs", "rows", "norms"):
            object.__setattr__(self, name, _frozen(getattr(self, name), None, name))
        null = np.array(self.null, dtype=bool)
        null.setflags(write=False)
        object.__setattr__(self, "null", null)

    @property
    def K(self) -> int:
        return self.rows.shape[0]

    @property
    def n_frames(self) -> int:
        return self.image_dirs.shape[1]

    def operator(self, i: int, k: int) -> np.ndarray:
        return np.outer(self.image_dirs[k, i], self.rows[k])

    def normalized(self, i: int, k: int) -> Optional[np.ndarray]:
        if self.null[k, i]:
            return None
        return self.operator(i, k) / self.norms[k, i]

    def shape(self, i: int, k: int) -> RankOneBasisShape:
        return RankOneBasisShape(i, k, self.operator(i, k), float(self.norms[k, i]))

    def __iter__(self):
        for k in range(self.K):
            for i in range(self.n_frames):
                yield self.shape(i, k)


@dataclass(frozen=True)
class CoefficientMatrix:
    """Per-frame mode coefficients with their covariance and a display ordering."""

    alpha: np.ndarray
    cov: np.ndarray
    permutation: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "alpha", _frozen(self.alpha, 2, "alpha"))
        object.__setattr__(self, "cov", _frozen(self.cov, 2, "cov"))
        object.__setattr__(self, "permutation", tuple(int(p) for p in self.permutation))


@dataclass(frozen=True)
class ReconstructionReport:
    inverse_snr_percent: float
    per_frame_residuals: np.ndarray
    energy_spectrum: np.ndarray
    runtime_ms: Optional[float] = None
    rigid_scene: bool = False
    notes: Sequence[str] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.inverse_snr_percent >= 0:
            raise ValidationError("inverse SNR must be non-negative")
        object.__setattr__(self, "per_frame_residuals", _frozen(self.per_frame_residuals, 1))
        object.__setattr__(self, "energy_spectrum", _frozen(self.energy_spectrum, 1))
        object.__setattr__(self, "notes", tuple(self.notes))
