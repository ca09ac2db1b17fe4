"""Orthogonal separation of mode rows by symmetric FastICA.

Samples are the J columns of the K x J mode-row matrix; each row is one
signal. The returned ``G`` is orthogonal, so ``G @ Bprime`` keeps the rows
mutually orthogonal and white.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import ValidationError

logger = logging.getLogger(__name__)

# Whiteness defect above which the centered rows are re-whitened.
REWHITEN_TOL = 1e-3
# |z| below this for every row marks the input as Gaussian-like.
GAUSSIAN_Z = 4.0


@dataclass(frozen=True)
class IcaConfig:
    contrast: str = "logcosh"
    tol: float = 1e-8
    max_iters: int = 1000
    centering: bool = True
    polish_iters: int = 50

    def __post_init__(self):
        if self.contrast not in ("logcosh", "cubic"):
            raise ValidationError(f"unknown contrast {self.contrast!r}; use 'logcosh' or 'cubic'")
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be at least 1")


@dataclass
class IcaDiagnostics:
    iterations: int = 0
    converged: bool = True
    non_identifiable: bool = False
    rewhitened: bool = False
    whitening_defect: float = 0.0
    nonorthogonal_residual: float = 0.0
    gaussianity_z: tuple = ()
    final_change: float = 0.0


def _contrast(u: np.ndarray, kind: str):
    """Nonlinearity g = G' and its derivative."""
    if kind == "logcosh":
        t = np.tanh(u)
        return t, 1.0 - t * t
    return u ** 3, 3 * u * u


def symmetric_decorrelation(W: np.ndarray) -> np.ndarray:
    """``(W W^T)^{-1/2} W``, the orthogonal matrix closest to W."""
    U, _, Vt = np.linalg.svd(W)
    return U @ Vt


def initial_unmixing(k: int) -> np.ndarray:
    """Identity plus the fixed pattern ``0.01 * sin(p + 2q)`` (0-based p, q), orthogonalized."""
    p, q = np.indices((k, k))
    return symmetric_decorrelation(np.eye(k) + 0.01 * np.sin(p + 2 * q))


def gaussianity_scores(Y: np.ndarray) -> np.ndarray:
    """Per-row z-score of departure from normality.

    The larger of the skewness and excess-kurtosis z-scores under the
    Gaussian null (standard errors sqrt(6/J) and sqrt(24/J)).
    """
    n = Y.shape[1]
    Yc = Y - Y.mean(axis=1, keepdims=True)
    var = np.mean(Yc * Yc, axis=1)
    var = np.where(var > 0, var, np.finfo(float).tiny)
    skew = np.mean(Yc ** 3, axis=1) / var ** 1.5
    kurt = np.mean(Yc ** 4, axis=1) / var ** 2 - 3.0
    return np.maximum(np.abs(skew) / np.sqrt(6.0 / n), np.abs(kurt) / np.sqrt(24.0 / n))


def _fixed_point(W: np.ndarray, Z: np.ndarray, kind: str) -> np.ndarray:
    g, dg = _contrast(W @ Z, kind)
    n = Z.shape[1]
    return symmetric_decorrelation(g @ Z.T / n - dg.mean(axis=1)[:, None] * W)


def _change(W_new: np.ndarray, W_old: np.ndarray) -> float:
    return float(1.0 - np.min(np.abs(np.diag(W_new @ W_old.T))))


def _angle_step(W_new: np.ndarray, W_old: np.ndarray) -> float:
    """Largest off-diagonal |W_new W_old^T|, linear in the rotation angle."""
    P = np.abs(W_new @ W_old.T)
    return float(np.max(np.abs(P - np.eye(P.shape[0]))))


def fastica_orthogonal(Bprime, config: IcaConfig = IcaConfig()):
    """Orthogonal ``G`` making the rows of ``G @ Bprime`` as independent as possible.

    Args:
        Bprime: K x J mode rows, ideally white: ``Bprime @ Bprime.T / J = I``.
        config: contrast, tolerance and iteration budget.

    Returns:
        ``(G, diagnostics)``. Rows of G are signed so each separated row has
        non-negative third moment; K = 1 returns ``[[1.0]]``.
    """
    X = np.asarray(Bprime, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValidationError("Bprime must be a non-empty K x J matrix")
    k, n = X.shape
    diag = IcaDiagnostics()
    if k == 1:
        return np.ones((1, 1)), diag
    if np.linalg.matrix_rank(X) < k:
        raise ValidationError("rows of Bprime must be linearly independent")

    if config.centering:
        X = X - X.mean(axis=1, keepdims=True)
    C = X @ X.T / n
    diag.whitening_defect = float(np.abs(C - np.eye(k)).max())
    Z = X
    if diag.whitening_defect > REWHITEN_TOL:
        evals, evecs = np.linalg.eigh(C)
        inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
        Z = inv_sqrt @ X
        diag.rewhitened = True
        # G = polar factor of (W C^{-1/2}) = W; the dropped part is C^{-1/2} - I.
        diag.nonorthogonal_residual = float(np.linalg.norm(inv_sqrt - np.eye(k)))

    z_scores = gaussianity_scores(Z)
    diag.gaussianity_z = tuple(float(z) for z in z_scores)
    if np.all(z_scores < GAUSSIAN_Z):
        diag.non_identifiable = True
        logger.warning("mode rows look Gaussian; separation is not identifiable, keeping G = I")
        return np.eye(k), diag

    W = initial_unmixing(k)
    diag.converged = False
    change = np.inf
    for it in range(1, config.max_iters + 1):
        W_new = _fixed_point(W, Z, config.contrast)
        change = _change(W_new, W)
        W = W_new
        if change < config.tol:
            diag.converged = True
            break
    diag.iterations = it
    if diag.converged:
        # Keep iterating while steps still shrink; the tolerance above is
        # on 1 - |cos|, which leaves an angular error near sqrt(tol).
        step = np.inf
        for _ in range(config.polish_iters):
            W_new = _fixed_point(W, Z, config.contrast)
            new_step = _angle_step(W_new, W)
            if new_step >= step:
                break
            W, step = W_new, new_step
            diag.iterations += 1
            if step == 0.0:
                break
    else:
        logger.warning("FastICA did not converge in %d iterations", config.max_iters)
    diag.final_change = change

    Y = W @ Z
    skew = np.mean(Y ** 3, axis=1)
    signs = np.where(skew < 0, -1.0, 1.0)
    G = W * signs[:, None]
    return G, diag
