import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rank1sfm import pipeline
from rank1sfm.dataio import (
    DATASETS, FIXED_RESULT_FILES, SyntheticSpec, export_results, load_coefficients,
    load_covariance, load_dataset, load_results, load_tracks, perturbation_file,
    save_tracks, synthesize,
)
from rank1sfm.factorize import assemble_measurements
from rank1sfm.model import TrackTable, ValidationError


def write_csv(path, rows, header="frame,point,x,y"):
    path.write_text(header + "\n" + "\n".join(",".join(str(v) for v in r) for r in rows) + "\n")
    return path


# -- track loading ------------------------------------------------------------


def test_minimal_csv(tmp_path):
    rows = [(f, p, 10 * f + p, -p) for f in range(2) for p in range(4)]
    tracks = load_tracks(write_csv(tmp_path / "t.csv", rows[::-1]))
    assert (tracks.n_frames, tracks.n_points) == (2, 4)
    assert tuple(tracks.coords[1, 3]) == (13.0, -3.0)


def test_too_few_points_rejected(tmp_path):
    rows = [(f, p, f, p) for f in range(2) for p in range(2)]
    with pytest.raises(ValidationError, match="J=2"):
        load_tracks(write_csv(tmp_path / "t.csv", rows))


def test_gap_is_named(tmp_path):
    rows = [(f, p, f, p) for f in range(3) for p in range(5) if (f, p) != (1, 3)]
    with pytest.raises(ValidationError, match=r"dense coverage violated.*\(frame 1, point 3\)"):
        load_tracks(write_csv(tmp_path / "t.csv", rows))


def test_header_mismatch(tmp_path):
    rows = [(f, p, f, p) for f in range(2) for p in range(4)]
    with pytest.raises(ValidationError, match="header"):
        load_tracks(write_csv(tmp_path / "t.csv", rows, header="f,p,x,y"))


@pytest.mark.parametrize("bad", ["nan", "inf", "abc"])
def test_non_finite_value(tmp_path, bad):
    rows = [[f, p, f, p] for f in range(2) for p in range(4)]
    rows[5][2] = bad
    with pytest.raises(ValidationError):
        load_tracks(write_csv(tmp_path / "t.csv", rows))


def test_duplicate_entry(tmp_path):
    rows = [(f, p, f, p) for f in range(2) for p in range(4)] + [(0, 0, 1, 1)]
    with pytest.raises(ValidationError, match="duplicate"):
        load_tracks(write_csv(tmp_path / "t.csv", rows))


def test_missing_file(tmp_path):
    with pytest.raises(ValidationError, match="no such file"):
        load_tracks(tmp_path / "absent.csv")


def test_matrix_needs_sidecar(tmp_path):
    (tmp_path / "w.txt").write_text("1 2 3 4\n" * 4)
    with pytest.raises(ValidationError, match="sidecar"):
        load_tracks(tmp_path / "w.txt")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5), st.integers(4, 8), st.sampled_from(["csv", "txt"]))
def test_round_trip(tmp_path_factory, seed, n_frames, n_points, ext):
    rng = np.random.default_rng(seed)
    tracks = TrackTable(rng.normal(scale=300, size=(n_frames, n_points, 2)))
    path = tmp_path_factory.mktemp("rt") / f"tracks.{ext}"
    save_tracks(tracks, path)
    back = load_tracks(path)
    np.testing.assert_allclose(back.coords, tracks.coords, rtol=0, atol=1e-12)
    assert np.array_equal(back.coords, tracks.coords)


def test_dataset_size_check(tmp_path):
    tracks, _ = synthesize(SyntheticSpec(5, 8, 1))
    path = tmp_path / "shark.txt"
    save_tracks(tracks, path)
    with pytest.raises(ValidationError, match="expected I=240, J=91"):
        load_dataset("shark", path)
    with pytest.raises(ValidationError, match="unknown dataset"):
        load_dataset("whale", path)
    assert DATASETS["balloon"] == (51, 211)


# -- synthesize ---------------------------------------------------------------


@pytest.mark.parametrize("k", [1, 2, 4])
def test_synthetic_rank(k):
    tracks, _ = synthesize(SyntheticSpec(20, 30, k, seed=k))
    s = np.linalg.svd(assemble_measurements(tracks).W, compute_uv=False)
    assert s[k + 2] > 1e-6 * s[0]
    assert s[k + 3] < 1e-10 * s[0]


def test_synthetic_deterministic():
    spec = SyntheticSpec(10, 12, 2, noise_std=0.3, seed=99)
    (t1, g1), (t2, g2) = synthesize(spec), synthesize(spec)
    assert np.array_equal(t1.coords, t2.coords)
    assert json.dumps(g1.to_json()) == json.dumps(g2.to_json())


def test_synthetic_noiseless_identity():
    tracks, truth = synthesize(SyntheticSpec(12, 15, 3, seed=4))
    shapes = truth.B0[None] + np.einsum("ik,kb,kj->ibj", truth.alpha, truth.directions, truth.rows)
    model = np.einsum("iab,ibj->iaj", truth.cameras, shapes)
    model = model + truth.translations[:, :, None]
    W = tracks.coords.transpose(0, 2, 1)
    assert np.linalg.norm(W - model) < 1e-12 * np.linalg.norm(W)


def test_synthetic_rows_orthogonal():
    _, truth = synthesize(SyntheticSpec(12, 15, 3, seed=5))
    R = np.vstack([truth.B0, truth.rows, np.ones(15)])
    G = R @ R.T
    off = G - np.diag(np.diag(G))
    assert np.abs(off).max() < 1e-10 * np.abs(G).max()


def test_synthetic_noise_applied():
    t0, _ = synthesize(SyntheticSpec(8, 10, 1, seed=6))
    t1, truth = synthesize(SyntheticSpec(8, 10, 1, noise_std=0.5, seed=6))
    np.testing.assert_allclose(t1.coords - t0.coords, truth.noise, atol=1e-9)
    assert truth.noise.std() == pytest.approx(0.5, rel=0.3)


@pytest.mark.parametrize("kwargs", [
    {"n_frames": 5, "n_points": 8, "n_modes": 0},
    {"n_frames": 5, "n_points": 8, "n_modes": 1, "noise_std": -1.0},
    {"n_frames": 5, "n_points": 4, "n_modes": 1},
    {"n_frames": 1, "n_points": 8, "n_modes": 1},
])
def test_infeasible_spec(kwargs):
    with pytest.raises(ValidationError):
        SyntheticSpec(**kwargs)


# -- export -------------------------------------------------------------------


@pytest.fixture(scope="module")
def run_k2():
    tracks, _ = synthesize(SyntheticSpec(10, 12, 2, noise_std=0.2, seed=7))
    return tracks, pipeline.run(tracks, 2)


def test_export_inventory(tmp_path, run_k2):
    _, result = run_k2
    written = export_results(result, tmp_path)
    names = sorted(p.name for p in written)
    expected = sorted(list(FIXED_RESULT_FILES) + [perturbation_file(0), perturbation_file(1)])
    assert names == expected
    assert sorted(p.name for p in tmp_path.iterdir()) == expected


def test_export_round_trip(tmp_path, run_k2):
    _, result = run_k2
    export_results(result, tmp_path)
    alpha = load_coefficients(tmp_path / "coefficients.csv")
    assert np.array_equal(alpha, result.coefficients.alpha)
    cov, perm = load_covariance(tmp_path / "covariance.csv")
    assert np.array_equal(cov, result.coefficients.cov) and perm == result.coefficients.permutation
    bundle = load_results(tmp_path)
    assert np.array_equal(bundle.B0, result.rigid.B0)
    assert np.array_equal(bundle.cameras.reshape(-1, 3), result.rigid.M0)
    assert np.array_equal(bundle.directions, result.model.directions)
    assert np.array_equal(bundle.rows, result.model.Bprime)
    assert np.array_equal(bundle.translations, result.measurements.translations)


def test_perturbation_is_centred_on_mean_shape(tmp_path, run_k2):
    _, result = run_k2
    export_results(result, tmp_path)
    data = np.loadtxt(tmp_path / perturbation_file(0), delimiter=",", skiprows=1)
    plus, minus = data[:, 1:4].T, data[:, 4:7].T
    np.testing.assert_allclose((plus + minus) / 2, result.rigid.B0, atol=1e-9)
    delta = (plus - minus) / 2
    assert np.linalg.matrix_rank(delta, tol=1e-9 * np.abs(delta).max()) == 1


def test_report_omits_runtimes_by_default(tmp_path, run_k2):
    _, result = run_k2
    export_results(result, tmp_path)
    assert json.loads((tmp_path / "report.json").read_text())["runtime_ms"] is None
    export_results(result, tmp_path, record_timings=True)
    assert "total" in json.loads((tmp_path / "report.json").read_text())["runtime_ms"]


def test_degenerate_export(tmp_path):
    rng = np.random.default_rng(8)
    S = rng.normal(size=(3, 8))
    cams = rng.normal(size=(6, 2, 3))
    tracks = TrackTable(np.einsum("iab,bj->ija", cams, S))
    result = pipeline.run(tracks, 1)
    export_results(result, tmp_path)
    modes = json.loads((tmp_path / "modes.json").read_text())
    report = json.loads((tmp_path / "report.json").read_text())
    assert modes["modes"][0]["degenerate"] is True
    assert report["rigid_scene"] is True and report["notes"]


def test_load_results_missing_files(tmp_path):
    with pytest.raises(ValidationError, match="missing result files"):
        load_results(tmp_path)
