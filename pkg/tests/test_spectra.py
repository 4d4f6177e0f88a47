import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ortho_group

from onestep.model import ExperimentConfig, train
from onestep.spectra import (BoundaryError, NotOrthonormalError, alignment_from_vectors, bulk_edge, detect_spikes,
                             histogram, operator_norm, orthonormal_basis, predicted_ell, principal_angle_distance,
                             singular_values, spectrum_report, spike_alignment)


def test_singular_value_basics():
    np.testing.assert_allclose(singular_values(np.eye(3), scaled=False), [1, 1, 1])
    u, v = np.array([1.0, 2.0, 2.0]), np.array([3.0, 4.0])
    s = singular_values(np.outer(u, v), scaled=False)
    assert s[0] == pytest.approx(15.0) and s[1] == pytest.approx(0.0, abs=1e-12)
    assert singular_values(np.outer(u, v))[0] == pytest.approx(15.0 / math.sqrt(3))


def test_singular_values_match_eigenvalues():
    M = np.random.default_rng(0).standard_normal((20, 30))
    s = singular_values(M, scaled=False)
    eig = np.sort(np.linalg.eigvalsh(M @ M.T))[::-1]
    np.testing.assert_allclose(s ** 2, eig, rtol=1e-8)
    assert np.all(np.diff(s) <= 0) and np.all(s >= 0)


@pytest.mark.parametrize("alpha, ell", [(0.0001, 1), (0.2, 1), (0.29, 2), (0.35, 3), (0.39, 4), (0.44, 8)])
def test_predicted_ell(alpha, ell):
    assert predicted_ell(alpha) == ell


@pytest.mark.parametrize("alpha", [0.0, 0.25, 1 / 3, 0.375, 0.4])
def test_predicted_ell_boundaries(alpha):
    with pytest.raises(BoundaryError):
        predicted_ell(alpha)


def test_predicted_ell_domain():
    with pytest.raises(ValueError):
        predicted_ell(0.5)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 0.499))
def test_predicted_ell_interval_scan(alpha):
    # oracle: scan ell = 1..1000 for the interval (ell-1)/(2ell) < alpha < ell/(2ell+2)
    try:
        ell = predicted_ell(alpha)
    except BoundaryError:
        return
    scan = [k for k in range(1, 1000) if (k - 1) / (2 * k) < alpha < k / (2 * k + 2)]
    assert scan == [ell]


def test_detect_spikes():
    count, values = detect_spikes([3.0, 1.2, 1.0], 1.0, 0.1)
    assert count == 2 and list(values) == [3.0, 1.2]
    assert detect_spikes([0.5, 0.4], 1.0)[0] == 0
    with pytest.raises(ValueError):
        detect_spikes([1.0], 1.0, -0.1)


def test_no_spikes_without_step():
    c = ExperimentConfig(n=300, d=90, N=150, alpha=0.2, eta_scale=0.0)
    data, m = train(c)
    s = singular_values(m.F)
    assert bulk_edge(m.F0) == s[0]
    for margin in (0.0, 0.1):
        assert detect_spikes(s, bulk_edge(m.F0), margin)[0] == 0


def test_principal_angle_distance_extremes():
    U = np.eye(6)[:, :2]
    assert principal_angle_distance(U, U) == 0.0
    assert principal_angle_distance(U, np.eye(6)[:, 2:4]) == pytest.approx(math.sqrt(2))
    with pytest.raises(NotOrthonormalError):
        principal_angle_distance(U, 2 * U)
    with pytest.raises(ValueError):
        principal_angle_distance(U, np.eye(6)[:, :3])


def _brute_force_distance(U1, U2, grid=2000):
    # oracle for l = 1, 2: minimize ||U1 - U2 Q||_op over a grid of 2x2 orthogonal Q (rotations and reflections)
    if U1.shape[1] == 1:
        return min(np.linalg.norm(U1 - s * U2, 2) for s in (1, -1))
    best = np.inf
    for t in np.linspace(0, 2 * math.pi, grid):
        c, s = math.cos(t), math.sin(t)
        for Q in (np.array([[c, -s], [s, c]]), np.array([[c, s], [s, -c]])):
            best = min(best, np.linalg.norm(U1 - U2 @ Q, 2))
    return best


@pytest.mark.parametrize("ell", [1, 2])
def test_distance_matches_brute_force(ell):
    rng = np.random.default_rng(ell)
    U1 = orthonormal_basis(rng.standard_normal((7, ell)))
    U2 = orthonormal_basis(rng.standard_normal((7, ell)))
    assert principal_angle_distance(U1, U2) == pytest.approx(_brute_force_distance(U1, U2), abs=1e-4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4))
def test_distance_basis_invariance(seed, ell):
    rng = np.random.default_rng(seed)
    U1 = orthonormal_basis(rng.standard_normal((10, ell)))
    U2 = orthonormal_basis(rng.standard_normal((10, ell)))
    Q = ortho_group.rvs(ell, random_state=seed) if ell > 1 else np.array([[-1.0]])
    assert abs(principal_angle_distance(U1, U2) - principal_angle_distance(U1, U2 @ Q)) < 1e-10


def test_rank_one_recovery():
    rng = np.random.default_rng(0)
    u, v = rng.standard_normal(200), rng.standard_normal(50)
    F = np.outer(u, v) + 0.1 * rng.standard_normal((200, 50))
    assert spike_alignment(F, u).cosines[0] > 0.99


def test_alignment_from_vectors_shape_check():
    with pytest.raises(ValueError):
        alignment_from_vectors(np.eye(4)[:, :2], np.ones((4, 1)))


def test_operator_norm_matches_svd():
    M = np.random.default_rng(0).standard_normal((40, 25))
    assert operator_norm(M, tol=1e-12) == pytest.approx(np.linalg.norm(M, 2), rel=1e-6)
    assert operator_norm(np.zeros((3, 3))) == 0.0


def test_spectrum_report_and_histogram_mass():
    c = ExperimentConfig(n=400, d=120, N=200, alpha=0.2, sigma_eps=0.5, teacher_coeffs=(0.0, 1.0, 1.0))
    data, m = train(c)
    rep = spectrum_report(m.F, m.F0, 0.2, targets=data.X_tilde @ m.beta_hat)
    assert rep.predicted_ell == 1 and rep.spike_count >= 1
    assert rep.alignment is not None and rep.alignment.cosines[0] > 0.5
    edges, counts = histogram(rep.svals)
    assert counts.sum() == len(rep.svals) == 200 and len(edges) == 61
    assert spectrum_report(m.F, m.F0, 0.25).predicted_ell is None
