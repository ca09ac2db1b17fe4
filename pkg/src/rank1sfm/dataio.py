"""Track-file I/O, result export, dataset loaders and the synthetic generator.

All files are text. Floats are written with 17 significant digits (CSV) or
Python's shortest round-trip repr (JSON), so every export reloads bit-exactly.

Track formats:

* ``csv``: header ``frame,point,x,y``; 0-based indices, any row order, every
  (frame, point) pair present exactly once.
* ``matrix``: 2I lines of J whitespace-separated numbers (frame i's x-row then
  its y-row) plus a sidecar ``<stem>.json`` holding ``{"frames": I, "points": J}``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .model import RigidFactor, TrackTable, ValidationError

CSV_HEADER = ["frame", "point", "x", "y"]

# Expected sizes of the benchmark sequences (frames, points).
DATASETS = {
    "shark": (240, 91),
    "balloon": (51, 211),
    "ls3dw": (7200, 68),
}


def fmt(x) -> str:
    return format(float(x), ".17g")


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header is not None:
            writer.writerow(header)
        writer.writerows(rows)


def _dump_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


# -- tracks -------------------------------------------------------------------


def _parse_float(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ValidationError(f"cannot parse number {text!r} at {where}") from None
    if not math.isfinite(value):
        raise ValidationError(f"non-finite value {text!r} at {where}")
    return value


def _load_csv(path: Path) -> TrackTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise ValidationError(f"{path}: expected header {','.join(CSV_HEADER)}, got {header}")
        entries = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValidationError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                frame, point = int(row[0]), int(row[1])
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: frame and point must be integers") from None
            if frame < 0 or point < 0:
                raise ValidationError(f"{path}:{lineno}: negative index")
            if (frame, point) in entries:
                raise ValidationError(f"{path}:{lineno}: duplicate entry (frame {frame}, point {point})")
            where = f"{path}:{lineno}"
            entries[frame, point] = (_parse_float(row[2], where), _parse_float(row[3], where))
    if not entries:
        raise ValidationError(f"{path}: no observations")
    n_frames = 1 + max(f for f, _ in entries)
    n_points = 1 + max(p for _, p in entries)
    if len(entries) != n_frames * n_points:
        gap = next((f, p) for f in range(n_frames) for p in range(n_points) if (f, p) not in entries)
        raise ValidationError(
            f"{path}: dense coverage violated: missing (frame {gap[0]}, point {gap[1]}); "
            f"{n_frames * n_points - len(entries)} pair(s) absent"
        )
    coords = np.empty((n_frames, n_points, 2))
    for (f, p), xy in entries.items():
        coords[f, p] = xy
    return TrackTable(coords)


def sidecar_path(path: Path) -> Path:
    return Path(path).with_suffix(".json")


def _load_matrix(path: Path) -> TrackTable:
    side = sidecar_path(path)
    if not side.exists():
        raise ValidationError(f"{path}: missing sidecar {side}")
    with open(side) as fh:
        meta = json.load(fh)
    try:
        n_frames, n_points = int(meta["frames"]), int(meta["points"])
    except (KeyError, TypeError, ValueError):
        raise ValidationError(f"{side}: expected {{\"frames\": I, \"points\": J}}") from None
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != n_points:
                raise ValidationError(f"{path}:{lineno}: expected {n_points} values, got {len(fields)}")
            rows.append([_parse_float(x, f"{path}:{lineno}") for x in fields])
    if len(rows) != 2 * n_frames:
        raise ValidationError(f"{path}: expected {2 * n_frames} rows, got {len(rows)}")
    return TrackTable.from_matrix(np.array(rows))


def detect_format(path) -> str:
    return "csv" if Path(path).suffix.lower() == ".csv" else "matrix"


def load_tracks(path, format: str | None = None) -> TrackTable:
    """Load a track table from ``csv`` or ``matrix`` text format."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    format = format or detect_format(path)
    if format == "csv":
        return _load_csv(path)
    if format == "matrix":
        return _load_matrix(path)
    raise ValidationError(f"unknown track format {format!r}")


def save_tracks(tracks: TrackTable, path, format: str | None = None) -> None:
    path = Path(path)
    format = format or detect_format(path)
    if format == "csv":
        rows = ([f, p, fmt(x), fmt(y)]
                for f in range(tracks.n_frames)
                for p, (x, y) in enumerate(tracks.coords[f]))
        _write_rows(path, CSV_HEADER, rows)
    elif format == "matrix":
        with open(path, "w") as fh:
            for row in tracks.to_matrix():
                fh.write(" ".join(fmt(v) for v in row) + "\n")
        _dump_json(sidecar_path(path), {"frames": tracks.n_frames, "points": tracks.n_points})
    else:
        raise ValidationError(f"unknown track format {format!r}")


def load_dataset(name: str, path) -> TrackTable:
    """Load a benchmark sequence (user-supplied, matrix format) and check its size."""
    key = name.lower().replace("-", "")
    if key not in DATASETS:
        raise ValidationError(f"unknown dataset {name!r}; known: {', '.join(DATASETS)}")
    tracks = load_tracks(path, "matrix")
    expected = DATASETS[key]
    if (tracks.n_frames, tracks.n_points) != expected:
        raise ValidationError(
            f"{name}: expected I={expected[0]}, J={expected[1]}, "
            f"got I={tracks.n_frames}, J={tracks.n_points}"
        )
    return tracks


# -- synthetic data -----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic rank-1 deformation generator.

    ``coefficient_std`` defaults to ``0.3 * 0.7**k`` for mode k. ``support``
    chooses disjoint per-mode point supports (``"disjoint"``), dense rows
    (``"dense"``), or disjoint when every mode gets at least 5 points
    (``"auto"``).
    """

    n_frames: int
    n_points: int
    n_modes: int
    noise_std: float = 0.0
    coefficient_std: tuple | None = None
    seed: int = 0
    camera_scale: tuple = (50.0, 150.0)
    support: str = "auto"

    def __post_init__(self):
        if min(self.n_frames, self.n_points, self.n_modes) < 1:
            raise ValidationError("frames, points and modes must be positive")
        if not self.noise_std >= 0:
            raise ValidationError("noise std must be non-negative")
        if self.n_frames < 2:
            raise ValidationError("need at least 2 frames")
        if self.n_modes + 4 > self.n_points:
            raise ValidationError(
                f"infeasible: K={self.n_modes} modes need J >= K + 4 = {self.n_modes + 4} points"
            )
        if self.n_modes + 3 > 2 * self.n_frames:
            raise ValidationError(
                f"infeasible: K={self.n_modes} modes need 2I >= K + 3, got 2I = {2 * self.n_frames}"
            )
        if self.coefficient_std is not None and len(self.coefficient_std) != self.n_modes:
            raise ValidationError("coefficient_std needs one entry per mode")
        lo, hi = self.camera_scale
        if not 0 < lo <= hi:
            raise ValidationError("camera scale range must satisfy 0 < low <= high")
        if self.support not in ("auto", "disjoint", "dense"):
            raise ValidationError(f"unknown support mode {self.support!r}")

    def mode_std(self) -> np.ndarray:
        if self.coefficient_std is not None:
            return np.asarray(self.coefficient_std, dtype=np.float64)
        return 0.3 * 0.7 ** np.arange(self.n_modes)


@dataclass(frozen=True)
class GroundTruth:
    cameras: np.ndarray       # (I, 2, 3)
    translations: np.ndarray  # (I, 2)
    B0: np.ndarray            # (3, J)
    directions: np.ndarray    # (K, 3)
    rows: np.ndarray          # (K, J)
    alpha: np.ndarray         # (I, K)
    noise: np.ndarray         # (I, J, 2)
    conditioned: bool         # coefficients satisfy the exact-split constraints

    @property
    def noiseless(self) -> np.ndarray:
        """Noise-free coordinates, (I, J, 2)."""
        shapes = self.B0[None] + np.einsum("ik,kb,kj->ibj", self.alpha, self.directions, self.rows)
        proj = np.einsum("iab,ibj->iaj", self.cameras, shapes) + self.translations[:, :, None]
        return proj.transpose(0, 2, 1)

    def to_json(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}


def _orth_complement(vectors: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the complement of span(vectors columns)."""
    q, r = np.linalg.qr(vectors, mode="complete")
    return q[:, vectors.shape[1]:]


def _random_camera(rng, scale_range) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    return rng.uniform(*scale_range) * q[:2]


def _mode_rows(rng, spec: SyntheticSpec, constraints: np.ndarray) -> np.ndarray:
    n_points, n_modes = spec.n_points, spec.n_modes
    disjoint = spec.support == "disjoint" or (spec.support == "auto" and n_points >= 5 * n_modes)
    rows = np.zeros((n_modes, n_points))
    if disjoint:
        if n_points < 5 * n_modes:
            raise ValidationError("disjoint supports need J >= 5K")
        order = rng.permutation(n_points)
        for k, support in enumerate(np.array_split(order, n_modes)):
            local = constraints[support]
            basis = _orth_complement(local)
            rows[k, support] = basis @ rng.laplace(size=basis.shape[1])
    else:
        basis = _orth_complement(constraints)
        q, _ = np.linalg.qr(basis @ rng.normal(size=(basis.shape[1], n_modes)))
        rows = q.T.copy()
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return np.sqrt(n_points) * rows


def _conditioned_coefficients(rng, cameras, directions, std) -> tuple:
    """Coefficients for which the rigid/non-rigid SVD split is exact.

    Mode k's coefficients are projected onto the null space of
    ``sum_i a_i M^i^T M^i d_k = 0`` (rigid columns orthogonal to mode columns)
    and ``sum_i a_i alpha_k'^i d_k^T M^i^T M^i d_k' = 0`` for earlier modes
    (mode columns mutually orthogonal). Needs I >= K + 3.
    """
    n_frames, n_modes = cameras.shape[0], directions.shape[0]
    gram = np.einsum("iab,iac->ibc", cameras, cameras)
    alpha = np.zeros((n_frames, n_modes))
    conditioned = n_frames >= n_modes + 3
    for k in range(n_modes):
        a = rng.normal(size=n_frames)
        if conditioned:
            rows = [gram @ directions[k]]  # (I, 3)
            for kp in range(k):
                rows.append((alpha[:, kp] * np.einsum("b,ibc,c->i", directions[k], gram, directions[kp]))[:, None])
            C = np.hstack(rows)  # I x (3 + k)
            null = _orth_complement(C)
            a = null @ (null.T @ a)
        alpha[:, k] = std[k] * a / np.sqrt(np.mean(a * a))
    return alpha, conditioned


def synthesize(spec: SyntheticSpec):
    """Draw tracks from the rank-1 basis-shape model.

    Returns:
        ``(TrackTable, GroundTruth)``. Deterministic given ``spec.seed``.
        Rigid shape rows, mode rows and the constant vector are mutually
        orthogonal, and (when ``I >= K + 3``) the coefficients are conditioned
        so the rank-3 SVD split and the PCA mode rows are exact on noiseless data.
    """
    rng = np.random.default_rng(spec.seed)
    n_frames, n_points, n_modes = spec.n_frames, spec.n_points, spec.n_modes

    ones = np.ones((n_points, 1)) / np.sqrt(n_points)
    shape_basis = _orth_complement(ones) @ np.linalg.qr(rng.normal(size=(n_points - 1, 3)))[0]
    B0 = np.sqrt(n_points) * np.diag([1.0, 0.8, 0.6]) @ shape_basis.T
    constraints = np.hstack([ones, shape_basis])
    rows = _mode_rows(rng, spec, constraints)

    cameras = np.stack([_random_camera(rng, spec.camera_scale) for _ in range(n_frames)])
    translations = rng.normal(scale=100.0, size=(n_frames, 2))
    directions = rng.normal(size=(n_modes, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    alpha, conditioned = _conditioned_coefficients(rng, cameras, directions, spec.mode_std())
    noise = spec.noise_std * rng.normal(size=(n_frames, n_points, 2))

    truth = GroundTruth(cameras, translations, B0, directions, rows, alpha, noise, conditioned)
    return TrackTable(truth.noiseless + noise), truth


# -- results ------------------------------------------------------------------


FIXED_RESULT_FILES = (
    "cameras.json", "mean_shape.csv", "modes.json",
    "coefficients.csv", "covariance.csv", "report.json",
)


def perturbation_file(k: int) -> str:
    return f"mode_{k}_perturbation.csv"


def mode_perturbation(result, k: int) -> tuple:
    """3D shapes ``B0 +/- a * d_k b_k^T / (s_k ||b_k||)`` with ``a = 2 std(alpha_k)``.

    ``s_k`` is the mean image-plane gain ``||M0^i d_k||`` over frames, which
    maps the image-unit coefficient back to object units.
    """
    shapes = result.shapes
    alpha = result.coefficients.alpha[:, k]
    a = 2.0 * alpha.std(ddof=1) if alpha.size > 1 else 0.0
    gain = np.linalg.norm(shapes.image_dirs[k], axis=1).mean()
    row_norm = np.linalg.norm(shapes.rows[k])
    d = result.model.directions[k]
    if gain == 0.0 or row_norm == 0.0:
        delta = np.zeros_like(result.rigid.B0)
    else:
        delta = a * np.outer(d, shapes.rows[k]) / (gain * row_norm)
    return result.rigid.B0 + delta, result.rigid.B0 - delta


def export_results(result, out_dir, config: dict | None = None, record_timings: bool = False) -> list:
    """Write the result files of a pipeline run; returns the paths written.

    Runtimes go into ``report.json`` only with ``record_timings`` so that
    repeated runs produce byte-identical files.
    """
    from .analysis import concentration, offdiagonal_ratio

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    rigid, model, coeffs, report = result.rigid, result.model, result.coefficients, result.report
    n_frames, k = rigid.n_frames, model.K

    path = out / "cameras.json"
    _dump_json(path, {
        "frames": n_frames,
        "cameras": rigid.cameras().tolist(),
        "translations": result.measurements.translations.tolist(),
    })
    written.append(path)

    path = out / "mean_shape.csv"
    _write_rows(path, None, ([fmt(v) for v in row] for row in rigid.B0))
    written.append(path)

    modes = []
    for idx, solve in enumerate(result.solves):
        modes.append({
            "index": idx,
            "direction": model.directions[idx].tolist(),
            "row": model.Bprime[idx].tolist(),
            "objective": float(solve.objective),
            "degenerate": bool(solve.degenerate),
            "null_frames": int(result.shapes.null[idx].sum()),
            "converged": bool(solve.converged),
            "iterations": int(solve.iterations),
            "eigen_residual": float(solve.residual),
            "restart_spread": float(solve.restart_spread),
            "skipped_frames": int(solve.skipped_frames),
            "singular_value": float(model.singular_values[idx]),
        })
    path = out / "modes.json"
    payload = {"variant": model.variant, "K": k, "G": model.G.tolist(), "modes": modes}
    if result.ica is not None:
        payload["ica"] = asdict(result.ica)
        payload["ica"]["gaussianity_z"] = list(payload["ica"]["gaussianity_z"])
    _dump_json(path, payload)
    written.append(path)

    path = out / "coefficients.csv"
    _write_rows(path, ["frame"] + [f"alpha_{j}" for j in range(k)],
                ([i] + [fmt(v) for v in row] for i, row in enumerate(coeffs.alpha)))
    written.append(path)

    path = out / "covariance.csv"
    _write_rows(path, ["seriation"] + [f"c_{j}" for j in range(k)],
                ([coeffs.permutation[p]] + [fmt(v) for v in coeffs.cov[p]] for p in range(k)))
    written.append(path)

    path = out / "report.json"
    identity = tuple(range(k))
    _dump_json(path, {
        "inverse_snr_percent": report.inverse_snr_percent,
        "frames": n_frames,
        "points": rigid.B0.shape[1],
        "K": k,
        "variant": model.variant,
        "rigid_scene": report.rigid_scene,
        "notes": list(report.notes),
        "per_frame_residuals": report.per_frame_residuals.tolist(),
        "energy_spectrum": report.energy_spectrum.tolist(),
        "measurement_spectrum": rigid.spectrum.tolist(),
        "covariance": {
            "offdiagonal_ratio": offdiagonal_ratio(coeffs.cov),
            "concentration_identity": concentration(coeffs.cov, identity),
            "concentration_seriated": concentration(coeffs.cov, coeffs.permutation),
        },
        "config": config or {},
        "runtime_ms": ({key: float(v) for key, v in result.timings_ms.items()}
                       if record_timings else None),
    })
    written.append(path)

    for idx in range(k):
        plus, minus = mode_perturbation(result, idx)
        path = out / perturbation_file(idx)
        _write_rows(path, ["point", "x_plus", "y_plus", "z_plus", "x_minus", "y_minus", "z_minus"],
                    ([j] + [fmt(v) for v in plus[:, j]] + [fmt(v) for v in minus[:, j]]
                     for j in range(plus.shape[1])))
        written.append(path)
    return written


@dataclass(frozen=True)
class ResultsBundle:
    cameras: np.ndarray
    translations: np.ndarray
    B0: np.ndarray
    directions: np.ndarray
    rows: np.ndarray
    alpha: np.ndarray
    variant: str
    report: dict

    @property
    def K(self) -> int:
        return self.rows.shape[0]

    def rigid_factor(self) -> RigidFactor:
        spectrum = np.asarray(self.report.get("measurement_spectrum", [0.0] * 3), dtype=np.float64)
        return RigidFactor(self.cameras.reshape(-1, 3), self.B0, spectrum[:3], spectrum[3:])


def read_matrix_csv(path, header: bool) -> tuple:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader) if header else None
        data = [[_parse_float(v, str(path)) for v in row] for row in reader if row]
    return head, np.array(data, dtype=np.float64)


def load_coefficients(path) -> np.ndarray:
    _, data = read_matrix_csv(path, header=True)
    return data[:, 1:] if data.size else np.zeros((0, 0))


def load_covariance(path) -> tuple:
    _, data = read_matrix_csv(path, header=True)
    return data[:, 1:], tuple(int(p) for p in data[:, 0])


def load_results(result_dir) -> ResultsBundle:
    """Reload an exported result directory."""
    d = Path(result_dir)
    missing = [name for name in FIXED_RESULT_FILES if not (d / name).exists()]
    if missing:
        raise ValidationError(f"{d}: missing result files {', '.join(missing)}")
    with open(d / "cameras.json") as fh:
        cams = json.load(fh)
    with open(d / "modes.json") as fh:
        modes = json.load(fh)
    with open(d / "report.json") as fh:
        report = json.load(fh)
    _, B0 = read_matrix_csv(d / "mean_shape.csv", header=False)
    k = int(modes["K"])
    directions = np.array([m["direction"] for m in modes["modes"]], dtype=np.float64).reshape(k, 3)
    rows = np.array([m["row"] for m in modes["modes"]], dtype=np.float64).reshape(k, -1)
    alpha = load_coefficients(d / "coefficients.csv")
    cameras = np.array(cams["cameras"], dtype=np.float64)
    if alpha.shape != (cameras.shape[0], k):
        raise ValidationError(
            f"coefficients.csv has shape {alpha.shape}, expected {(cameras.shape[0], k)}"
        )
    return ResultsBundle(
        cameras=cameras,
        translations=np.array(cams["translations"], dtype=np.float64),
        B0=B0,
        directions=directions,
        rows=rows,
        alpha=alpha,
        variant=modes["variant"],
        report=report,
    )
