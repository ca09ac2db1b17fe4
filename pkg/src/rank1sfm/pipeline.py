"""End-to-end rank-1 basis-shape factorization of a track table."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import build_report
from .factorize import (
    ZERO_MODE_RTOL, assemble_measurements, check_k, nonrigid_factor,
    nonrigid_residual, rigid_factor,
)
from .ica import IcaConfig, IcaDiagnostics, fastica_orthogonal
from .model import (
    BasisShapeSet, CoefficientMatrix, DeformationModel, MeasurementMatrix,
    ReconstructionReport, RigidFactor, TrackTable, ValidationError,
)
from .numeric import SolverConfig, SolverResult
from .recovery import directions_from, form_basis_shapes, project_coefficients, solve_directions

logger = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    measurements: MeasurementMatrix
    rigid: RigidFactor
    delta_w: np.ndarray
    model: DeformationModel
    solves: list
    shapes: BasisShapeSet
    coefficients: CoefficientMatrix
    report: ReconstructionReport
    ica: IcaDiagnostics | None = None
    timings_ms: dict = field(default_factory=dict)

    @property
    def inverse_snr(self) -> float:
        return self.report.inverse_snr_percent


def _separate(model: DeformationModel, config: IcaConfig):
    """Run ICA on the non-zero mode rows; zero rows keep an identity block."""
    active = np.flatnonzero(np.any(model.Bprime != 0.0, axis=1))
    k = model.K
    G = np.eye(k)
    diagnostics = IcaDiagnostics()
    if active.size:
        G_active, diagnostics = fastica_orthogonal(model.Bprime[active], config)
        G[np.ix_(active, active)] = G_active
    return G, diagnostics


def run(tracks: TrackTable, k: int, variant: str = "pca",
        ica_config: IcaConfig | None = None,
        solver_config: SolverConfig | None = None) -> PipelineResult:
    """Factorize tracks into a rigid shape plus K rank-1 deformation modes.

    Args:
        tracks: dense 2D tracks.
        k: number of deformation modes.
        variant: ``"pca"`` keeps the SVD mode rows, ``"ica"`` rotates them
            with FastICA first.
        ica_config: FastICA settings (ICA variant only).
        solver_config: settings for the direction solver.
    """
    if variant not in ("pca", "ica"):
        raise ValidationError(f"variant must be 'pca' or 'ica', got {variant!r}")
    ica_config = ica_config or IcaConfig()
    solver_config = solver_config or SolverConfig()
    check_k(k, tracks.n_frames, tracks.n_points)
    timings = {}
    t_start = t = time.perf_counter()

    def lap(name):
        nonlocal t
        now = time.perf_counter()
        timings[name] = 1e3 * (now - t)
        t = now

    measurements = assemble_measurements(tracks)
    rigid = rigid_factor(measurements)
    delta_w = nonrigid_residual(measurements, rigid)
    lap("rigid")

    w_norm = np.linalg.norm(measurements.W)
    model = nonrigid_factor(delta_w, k, reference_norm=w_norm)
    lap("nonrigid")
    rigid_scene = np.linalg.norm(delta_w) <= ZERO_MODE_RTOL * w_norm
    notes = []
    if rigid_scene:
        notes.append("rigid scene: non-rigid residual is numerically zero")

    ica_diag = None
    if variant == "ica":
        G, ica_diag = _separate(model, ica_config)
        model = DeformationModel(G @ model.Bprime, model.Mprime @ G.T, G, "ica",
                                 singular_values=model.singular_values)
        lap("ica")

    solves: list[SolverResult] = solve_directions(delta_w, rigid, model.Bprime, solver_config)
    directions = directions_from(solves)
    model = model.with_directions(
        directions,
        np.array([s.objective for s in solves]),
        [s.degenerate for s in solves],
    )
    lap("directions")

    shapes = form_basis_shapes(rigid, model.Bprime, directions)
    coefficients = project_coefficients(delta_w, shapes)
    lap("coefficients")
    total_ms = 1e3 * (time.perf_counter() - t_start)
    timings["total"] = total_ms

    report = build_report(measurements, rigid, shapes, coefficients.alpha, delta_w,
                          runtime_ms=total_ms, rigid_scene=bool(rigid_scene), notes=notes)
    return PipelineResult(measurements, rigid, delta_w, model, solves, shapes,
                          coefficients, report, ica_diag, timings)
