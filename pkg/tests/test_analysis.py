import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rank1sfm import pipeline
from rank1sfm.analysis import (
    coefficient_covariance, concentration, inverse_snr, offdiagonal_ratio, seriate_covariance,
)
from rank1sfm.dataio import SyntheticSpec, synthesize
from rank1sfm.factorize import assemble_measurements
from rank1sfm.model import MeasurementMatrix, ValidationError

import oracles


def noise_oracle(tracks, truth, k):
    """100 ||N_perp|| / ||W||, N_perp the noise outside the fitted (K+3)-dim subspaces."""
    W = assemble_measurements(tracks).W
    n_frames, n_points = tracks.n_frames, tracks.n_points
    N = truth.noise.transpose(0, 2, 1).reshape(2 * n_frames, n_points)
    N = N - N.mean(axis=1, keepdims=True)
    U, _, Vt = np.linalg.svd(W, full_matrices=False)
    U, V = U[:, :k + 3], Vt[:k + 3].T
    N_perp = N - U @ (U.T @ N)
    N_perp = N_perp - (N_perp @ V) @ V.T
    return 100 * np.linalg.norm(N_perp) / np.linalg.norm(W)


# -- inverse SNR --------------------------------------------------------------


@pytest.mark.parametrize("variant", ["pca", "ica"])
def test_exact_model_inverse_snr(variant):
    tracks, _ = synthesize(SyntheticSpec(20, 24, 3, seed=1))
    assert pipeline.run(tracks, 3, variant).inverse_snr < 1e-6


def test_inverse_snr_recomputes_report():
    tracks, _ = synthesize(SyntheticSpec(15, 20, 2, noise_std=0.5, seed=2))
    r = pipeline.run(tracks, 2)
    value = inverse_snr(r.measurements, r.rigid, r.shapes, r.coefficients.alpha)
    assert value == r.inverse_snr
    manual = 100 * np.linalg.norm(r.measurements.W - r.rigid.M0 @ r.rigid.B0
                                  - _nonrigid(r)) / np.linalg.norm(r.measurements.W)
    assert value == pytest.approx(manual, rel=1e-12)


def _nonrigid(r):
    out = np.zeros_like(r.measurements.W)
    for op in r.shapes:
        if op.frob_norm > 0:
            out[2 * op.frame:2 * op.frame + 2] += r.coefficients.alpha[op.frame, op.mode] * op.normalized
    return out


@pytest.mark.parametrize("noise", [0.1, 1.0])
def test_inverse_snr_tracks_noise_floor(noise):
    tracks, truth = synthesize(SyntheticSpec(40, 30, 4, noise_std=noise, seed=3))
    ratio = pipeline.run(tracks, 4).inverse_snr / noise_oracle(tracks, truth, 4)
    assert 0.8 <= ratio <= 1.2


def test_inverse_snr_zero_measurements():
    tracks, _ = synthesize(SyntheticSpec(6, 8, 1, seed=4))
    r = pipeline.run(tracks, 1)
    zero = MeasurementMatrix(np.zeros_like(r.measurements.W), r.measurements.translations)
    with pytest.raises(ValidationError, match="zero norm"):
        inverse_snr(zero, r.rigid, r.shapes, r.coefficients.alpha)


@pytest.mark.parametrize("seed", range(3))
def test_pca_and_ica_agree(seed):
    tracks, _ = synthesize(SyntheticSpec(30, 30, 3, noise_std=0.5, seed=10 + seed))
    pca, ica = pipeline.run(tracks, 3, "pca"), pipeline.run(tracks, 3, "ica")
    assert all(s.converged for s in pca.solves + ica.solves)
    assert abs(pca.inverse_snr - ica.inverse_snr) < 0.05


# -- covariance ---------------------------------------------------------------


def test_two_sample_variance():
    np.testing.assert_allclose(coefficient_covariance([[1.0], [-1.0]]), [[2.0]])


def test_constant_columns():
    assert np.all(coefficient_covariance(np.tile([3.0, -1.0], (5, 1))) == 0)


def test_covariance_matches_two_pass_oracle():
    alpha = np.random.default_rng(5).normal(loc=3, size=(12, 4))
    np.testing.assert_allclose(coefficient_covariance(alpha), oracles.two_pass_covariance(alpha),
                               rtol=0, atol=1e-12)


def test_covariance_needs_two_frames():
    with pytest.raises(ValidationError):
        coefficient_covariance(np.ones((1, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 20), st.integers(1, 6))
def test_covariance_symmetric_psd(seed, n, k):
    C = coefficient_covariance(np.random.default_rng(seed).normal(size=(n, k)))
    assert np.array_equal(C, C.T)
    assert np.linalg.eigvalsh(C).min() >= -1e-12 * max(1.0, np.abs(C).max())


# -- seriation ----------------------------------------------------------------


def test_diagonal_keeps_identity():
    assert seriate_covariance(np.diag([3.0, 1.0, 2.0, 5.0])) == (0, 1, 2, 3)


def test_singleton():
    assert seriate_covariance([[4.0]]) == (0,)


def test_block_covariance_matches_exhaustive_search():
    C = np.eye(5)
    for p, q, v in [(0, 3, 0.9), (1, 2, 0.8), (2, 4, 0.7), (1, 4, 0.6)]:
        C[p, q] = C[q, p] = v
    perm = seriate_covariance(C)
    pos = {c: i for i, c in enumerate(perm)}
    for block in ({0, 3}, {1, 2, 4}):
        idx = sorted(pos[c] for c in block)
        assert idx[-1] - idx[0] == len(block) - 1
    best, winners = oracles.exhaustive_seriation(C)
    assert concentration(C, perm) == pytest.approx(best, abs=1e-12)
    assert tuple(perm) in winners


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 7))
def test_seriation_never_worse_than_identity(seed, k):
    X = np.random.default_rng(seed).normal(size=(3 * k, k))
    C = np.cov(X, rowvar=False)
    perm = seriate_covariance(C)
    assert sorted(perm) == list(range(k))
    assert concentration(C, perm) <= concentration(C, range(k)) + 1e-12


def test_concentration_value():
    C = np.array([[1.0, 2.0], [2.0, 1.0]])
    assert concentration(C, (0, 1)) == 4.0


def test_offdiagonal_ratio():
    assert offdiagonal_ratio(np.array([[2.0, 0.5], [0.5, 1.0]])) == 0.25
    assert offdiagonal_ratio(np.array([[1.0]])) == 0.0
