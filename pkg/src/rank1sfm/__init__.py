"""Non-rigid structure from motion with rank-1 (degenerate) basis shapes."""

from .dataio import SyntheticSpec, export_results, load_results, load_tracks, save_tracks, synthesize
from .ica import IcaConfig, fastica_orthogonal
from .model import (
    BasisShapeSet, CoefficientMatrix, DeformationModel, MeasurementMatrix,
    RankOneBasisShape, ReconstructionReport, RigidFactor, TrackTable, ValidationError,
)
from .numeric import SolverConfig, maximize_rayleigh_sum, truncated_svd
from .pipeline import PipelineResult, run

__version__ = "0.1.0"
