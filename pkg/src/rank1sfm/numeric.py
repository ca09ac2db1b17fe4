"""Numeric kernels: truncated SVD, Kronecker reductions and the Rayleigh-sum solver."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .model import ValidationError

logger = logging.getLogger(__name__)


class DegenerateDirectionError(ArithmeticError):
    """Every frame is skipped for the given direction."""


@dataclass(frozen=True)
class TruncatedSvd:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    residual_energy: float
    full_spectrum: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T


def fix_signs(U: np.ndarray, V: np.ndarray):
    """Flip singular-vector pairs so the largest-magnitude entry of each V column is positive.

    ``np.argmax`` returns the first maximum, which gives the lowest-index tie-break.
    """
    if V.size == 0:
        return U, V
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, V * signs


def truncated_svd(A, r: int) -> TruncatedSvd:
    """Best rank-``r`` approximation of ``A`` with a deterministic sign convention.

    Args:
        A: m x n matrix.
        r: retained rank, ``1 <= r <= min(m, n)``.

    Returns:
        TruncatedSvd with ``U`` (m x r), ``S`` (r,), ``V`` (n x r) and the
        squared Frobenius norm of the discarded part.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValidationError(f"expected a matrix, got shape {A.shape}")
    if not 1 <= r <= min(A.shape):
        raise ValidationError(f"rank r={r} out of range [1, {min(A.shape)}]")
    if not np.all(np.isfinite(A)):
        raise ValidationError("matrix has non-finite entries")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    U, V = fix_signs(U[:, :r], Vt[:r].T)
    tail = s[r:]
    return TruncatedSvd(
        U=U, S=s[:r].copy(), V=V,
        residual_energy=float(np.sum(tail * tail)),
        full_spectrum=s,
    )


# -- Kronecker identities ---------------------------------------------------
#
# vec() is column-major throughout, so vec(M d b^T) = (b kron M) d.


def kron_operator(b: np.ndarray, M: np.ndarray) -> np.ndarray:
    """The explicit (2J x 3) matrix ``b kron M``."""
    return np.kron(np.asarray(b, dtype=np.float64).reshape(-1, 1), M)


def kron_gram(b: np.ndarray, M: np.ndarray) -> np.ndarray:
    """``(b kron M)^T (b kron M)`` without forming the Kronecker product."""
    return float(b @ b) * (M.T @ M)


def kron_adjoint(b: np.ndarray, M: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``(b kron M)^T vec(W)`` evaluated as ``M^T W b``."""
    return M.T @ W @ b


# -- Rayleigh-sum problem ---------------------------------------------------


@dataclass(frozen=True)
class RayleighSumProblem:
    """Maximize ``sum_i (d.g_i)^2 / (d^T H_i d)`` over directions d.

    Attributes:
        g: (n, 3) per-frame vectors.
        H: (n, 3, 3) per-frame symmetric PSD matrices.
    """

    g: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        g = np.array(self.g, dtype=np.float64).reshape(-1, 3)
        H = np.array(self.H, dtype=np.float64).reshape(-1, 3, 3)
        if g.shape[0] != H.shape[0]:
            raise ValidationError("g and H must have the same number of frames")
        if not np.allclose(H, H.transpose(0, 2, 1), rtol=0, atol=1e-12 * max(1.0, np.abs(H).max(initial=0))):
            raise ValidationError("H matrices must be symmetric")
        H = 0.5 * (H + H.transpose(0, 2, 1))
        g.setflags(write=False)
        H.setflags(write=False)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "H", H)

    @property
    def n_frames(self) -> int:
        return self.g.shape[0]

    @classmethod
    def from_frames(cls, cameras: np.ndarray, residual_frames: np.ndarray, b: np.ndarray):
        """Build the reduced problem for one mode row ``b``.

        Args:
            cameras: (I, 2, 3) affine cameras.
            residual_frames: (I, 2, J) non-rigid residual blocks.
            b: (J,) mode row.
        """
        g = np.einsum("iab,iaj,j->ib", cameras, residual_frames, b)
        H = float(b @ b) * np.einsum("iab,iac->ibc", cameras, cameras)
        return cls(g, H)


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iters: int = 200
    num_starts: int = 8
    skip_rel: float = 1e-14
    scan_points: int = 1024
    scan_starts: int = 8


@dataclass
class SolverResult:
    direction: np.ndarray
    objective: float
    iterations: int
    converged: bool = True
    degenerate: bool = False
    residual: float = 0.0
    restart_spread: float = 0.0
    skipped_frames: int = 0
    histories: list = field(default_factory=list)


def _frame_terms(problem: RayleighSumProblem, d: np.ndarray, skip_rel: float):
    """Per-frame numerators dot(d, g_i), denominators d^T H_i d and the active mask."""
    d = d / np.linalg.norm(d)
    num = problem.g @ d
    den = np.einsum("b,ibc,c->i", d, problem.H, d)
    trace = np.trace(problem.H, axis1=1, axis2=2)
    active = den > skip_rel * trace
    return d, num, den, active


def rayleigh_sum_objective(problem: RayleighSumProblem, d, *, skip_rel: float = 1e-14,
                           return_skipped: bool = False):
    """Evaluate ``sum_i (d.g_i)^2 / (d^T H_i d)``.

    Frames whose denominator falls below ``skip_rel * trace(H_i)`` are skipped.
    The value is invariant to rescaling ``d``.

    Raises:
        ValidationError: ``d`` is zero.
        DegenerateDirectionError: every frame was skipped.
    """
    d = np.asarray(d, dtype=np.float64)
    if not np.any(d):
        raise ValidationError("direction must be non-zero")
    _, num, den, active = _frame_terms(problem, d, skip_rel)
    if not np.any(active):
        raise DegenerateDirectionError("all frames skipped for this direction")
    value = float(np.sum(num[active] ** 2 / den[active]))
    if return_skipped:
        return value, int(np.count_nonzero(~active))
    return value


def objective_rounding(problem: RayleighSumProblem, d, skip_rel: float = 1e-14) -> float:
    """First-order bound on the floating-point error of the objective at d."""
    d, num, den, active = _frame_terms(problem, d, skip_rel)
    num, den = num[active], den[active]
    g_norm = np.linalg.norm(problem.g[active], axis=1)
    h_norm = np.linalg.norm(problem.H[active], axis=(1, 2))
    terms = (2 * np.abs(num) * g_norm + num * num * h_norm / den) / den
    return float(np.finfo(float).eps * np.sum(terms))


def _safe_objective(problem, d, skip_rel):
    try:
        return rayleigh_sum_objective(problem, d, skip_rel=skip_rel)
    except DegenerateDirectionError:
        return -np.inf


def stationarity_matrices(problem: RayleighSumProblem, d: np.ndarray, skip_rel: float = 1e-14):
    """``A(d)`` and ``B(d)`` of the self-consistent eigenproblem ``A(d) d = B(d) d``."""
    d, num, den, active = _frame_terms(problem, d, skip_rel)
    g, H = problem.g[active], problem.H[active]
    num, den = num[active], den[active]
    A = np.einsum("i,ib,ic->bc", 1.0 / den, g, g)
    B = np.einsum("i,ibc->bc", (num / den) ** 2, H)
    return A, B


def eigen_residual(problem: RayleighSumProblem, d: np.ndarray, skip_rel: float = 1e-14) -> float:
    """``||A(d) d - lambda B(d) d||`` for unit d, relative to the objective."""
    d = d / np.linalg.norm(d)
    A, B = stationarity_matrices(problem, d, skip_rel)
    Ad, Bd = A @ d, B @ d
    f = float(d @ Ad)
    dBd = float(d @ Bd)
    if f <= 0.0 or dBd <= 0.0:
        return 0.0 if f <= 0.0 else np.inf
    lam = f / dBd
    return float(np.linalg.norm(Ad - lam * Bd) / f)


def _top_generalized_eigvec(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    reg = 1e-12 * max(np.trace(B), np.finfo(float).tiny)
    _, vecs = scipy.linalg.eigh(A, B + reg * np.eye(3))
    return vecs[:, -1]


def _mm_step(A: np.ndarray, B: np.ndarray, d: np.ndarray) -> np.ndarray:
    # Maximizer of the concave minorizer 2 (A d).x - x^T B x; never decreases the objective.
    reg = 1e-12 * max(np.trace(B), np.finfo(float).tiny)
    return np.linalg.solve(B + reg * np.eye(3), A @ d)


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x)


def default_starts(problem: RayleighSumProblem, num_starts: int = 8) -> list:
    """Deterministic restart directions: axes, their bisectors, the diagonal, and the top g-eigenvector."""
    e = np.eye(3)
    starts = [e[0], e[1], e[2],
              _unit(e[0] + e[1]), _unit(e[0] + e[2]), _unit(e[1] + e[2]),
              _unit(np.ones(3))]
    _, vecs = np.linalg.eigh(problem.g.T @ problem.g)
    starts.append(vecs[:, -1])
    return starts[:max(1, num_starts)]


def half_sphere_points(n: int) -> np.ndarray:
    """``n`` near-uniform unit vectors with z >= 0 (Fibonacci lattice), shape (n, 3)."""
    i = np.arange(n) + 0.5
    z = 1.0 - i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def scan_starts(problem: RayleighSumProblem, n_points: int, n_starts: int,
                skip_rel: float = 1e-14, min_angle_deg: float = 15.0) -> list:
    """Best directions of a coarse sphere scan, mutually at least ``min_angle_deg`` apart.

    The objective can have narrow peaks that fixed starts miss; a cheap
    vectorized scan places a start inside each of the strongest ones.
    """
    if n_points <= 0 or n_starts <= 0:
        return []
    D = half_sphere_points(n_points).T
    num = problem.g @ D
    den = np.einsum("icn,cn->in", problem.H @ D, D)
    trace = np.trace(problem.H, axis1=1, axis2=2)[:, None]
    active = den > skip_rel * trace
    safe = np.where(active, den, 1.0)
    values = np.sum(np.where(active, num * num / safe, 0.0), axis=0)
    cos_min = np.cos(np.deg2rad(min_angle_deg))
    chosen = []
    for idx in np.argsort(-values, kind="stable"):
        d = D[:, idx]
        if all(abs(d @ c) < cos_min for c in chosen):
            chosen.append(d)
            if len(chosen) == n_starts:
                break
    return chosen


def _tangent_newton_step(problem, d, skip_rel):
    """Newton step for the objective restricted to the unit sphere, or None.

    Only returned where the Riemannian Hessian is negative definite, i.e.
    near a local maximum.
    """
    d, a, h, active = _frame_terms(problem, d, skip_rel)
    g, H = problem.g[active], problem.H[active]
    a, h = a[active], h[active]
    Hd = H @ d
    grad = 2 * (np.einsum("i,ib->b", a / h, g) - np.einsum("i,ib->b", a * a / h ** 2, Hd))
    hess = (2 * np.einsum("i,ib,ic->bc", 1 / h, g, g)
            - 4 * np.einsum("i,ib,ic->bc", a / h ** 2, g, Hd)
            - 4 * np.einsum("i,ib,ic->bc", a / h ** 2, Hd, g)
            - 2 * np.einsum("i,ibc->bc", a * a / h ** 2, H)
            + 8 * np.einsum("i,ib,ic->bc", a * a / h ** 3, Hd, Hd))
    # Tangent basis of the sphere at d; d.grad = 0 by scale invariance.
    Q = np.linalg.svd(d.reshape(1, 3))[2][1:].T
    rh = Q.T @ hess @ Q
    rg = Q.T @ grad
    if np.linalg.eigvalsh(rh).max() >= 0:
        return None
    return _unit(d - Q @ np.linalg.solve(rh, rg))


def _ascend(problem, d, config):
    f = _safe_objective(problem, d, config.skip_rel)
    history = [f]
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iters + 1):
        residual = eigen_residual(problem, d, config.skip_rel)
        if residual < config.tol:
            converged = True
            break
        # Decreases within the rounding bound of the objective are not descent.
        floor = f - 8 * objective_rounding(problem, d, config.skip_rel)
        best_d, best_f = None, f
        if residual < 1e-3:
            newton = _tangent_newton_step(problem, d, config.skip_rel)
            if newton is not None:
                fn = _safe_objective(problem, newton, config.skip_rel)
                if fn >= floor:
                    best_d, best_f = newton, fn
        if best_d is None:
            A, B = stationarity_matrices(problem, d, config.skip_rel)
            x = _top_generalized_eigvec(A, B)
            if x @ d < 0:
                x = -x
            # Full eigen step, then halved damped steps back toward d.
            t = 1.0
            for _ in range(30):
                cand = _unit(d + t * (x - d))
                fc = _safe_objective(problem, cand, config.skip_rel)
                if fc >= floor:
                    best_d, best_f = cand, fc
                    break
                t *= 0.5
            mm = _mm_step(A, B, d)
            if np.all(np.isfinite(mm)) and np.any(mm):
                mm = _unit(mm)
                fm = _safe_objective(problem, mm, config.skip_rel)
                if fm > best_f or (best_d is None and fm >= floor):
                    best_d, best_f = mm, fm
        if best_d is None:
            break
        stalled = np.allclose(best_d, d, rtol=0, atol=1e-15)
        d, f = best_d, best_f
        history.append(f)
        if stalled:
            break
    converged = converged or eigen_residual(problem, d, config.skip_rel) < config.tol
    return d, f, iterations, converged, history


def maximize_rayleigh_sum(problem: RayleighSumProblem, config: SolverConfig = SolverConfig()) -> SolverResult:
    """Find a unit direction maximizing the Rayleigh-quotient sum.

    Each restart iterates the self-consistent generalized eigenproblem
    ``A(d) x = lambda B(d) x``; a step that would decrease the objective is
    halved toward the current iterate, and a minorize-maximize step is also
    tried, so the recorded objective never decreases. The best restart wins.
    """
    g_scale = np.abs(problem.g).max(initial=0.0)
    if problem.n_frames == 0 or g_scale == 0.0:
        return SolverResult(np.array([1.0, 0.0, 0.0]), 0.0, 0, converged=True, degenerate=True)

    runs = []
    starts = default_starts(problem, config.num_starts)
    starts += scan_starts(problem, config.scan_points, config.scan_starts, config.skip_rel)
    for start in starts:
        if not np.isfinite(_safe_objective(problem, start, config.skip_rel)):
            continue
        runs.append(_ascend(problem, _unit(np.asarray(start, dtype=np.float64)), config))
    if not runs:
        return SolverResult(np.array([1.0, 0.0, 0.0]), 0.0, 0, converged=False, degenerate=True)

    best = max(runs, key=lambda r: r[1])
    d, f, iterations, converged, _ = best
    # Canonical sign: largest-magnitude entry positive.
    if d[np.argmax(np.abs(d))] < 0:
        d = -d
    objectives = [r[1] for r in runs]
    _, skipped = rayleigh_sum_objective(problem, d, skip_rel=config.skip_rel, return_skipped=True)
    if not converged:
        logger.warning("Rayleigh-sum solver did not converge in %d iterations", config.max_iters)
    return SolverResult(
        direction=d,
        objective=f,
        iterations=iterations,
        converged=converged,
        degenerate=False,
        residual=eigen_residual(problem, d, config.skip_rel),
        restart_spread=float(max(objectives) - min(objectives)),
        skipped_frames=skipped,
        histories=[r[4] for r in runs],
    )
