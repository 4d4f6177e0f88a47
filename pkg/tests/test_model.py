import dataclasses
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from onestep.hermite import get_activation
from onestep.model import (ExperimentConfig, NearBoundaryWarning, estimate_beta, features, gaussian_equivalent_features,
                           generate_data, gradient, gradient_step, init_network, make_streams, regime_boundaries,
                           spiked_approximation, spiked_features, train)
from onestep.rmt_theory import alignment_limit
from onestep.spectra import operator_norm

FIG2 = ExperimentConfig(n=1000, d=300, N=500, alpha=0.29, lam=0.01, sigma_eps=math.sqrt(0.5),
                        teacher_coeffs=(0.0, 1.0, 1.0))


def small(**kw):
    base = dict(n=20, d=5, N=7, alpha=0.2, sigma_eps=0.3, teacher_coeffs=(0.0, 1.0, 0.5))
    base.update(kw)
    return ExperimentConfig(**base)


# ------------------------------------------------------------------ config


@pytest.mark.parametrize("kw", [dict(n=1), dict(d=1), dict(N=1), dict(lam=0.0), dict(alpha=0.5), dict(alpha=-0.1),
                                dict(sigma_eps=-1.0), dict(eta_scale=-1.0)])
def test_config_rejects_invalid(kw):
    with pytest.raises(ValueError):
        small(**kw)


def test_derived_ratios_and_step():
    c = small(n=1000, d=300, N=500, alpha=0.29, eta_scale=2.0)
    assert c.phi == pytest.approx(0.3) and c.psi == pytest.approx(0.6)
    assert c.eta == pytest.approx(2.0 * 1000 ** 0.29)


def test_boundary_warning():
    with pytest.warns(NearBoundaryWarning):
        small(alpha=0.251)
    with warnings.catch_warnings():
        warnings.simplefilter("error", NearBoundaryWarning)
        small(alpha=0.2)
    assert regime_boundaries(3) == [0.25, 1 / 3]


def test_streams_are_prefix_stable():
    # stream k of make_streams is SeedSequence(seed).spawn(...)[k], independent of how many are spawned
    streams = make_streams(5)
    ref = np.random.default_rng(np.random.SeedSequence(5).spawn(2)[1])
    assert streams["data"].standard_normal() == ref.standard_normal()


# ------------------------------------------------------------------ data


def test_identity_teacher_no_noise_is_linear():
    c = small(teacher="identity", teacher_coeffs=None, sigma_eps=0.0)
    data = generate_data(c, make_streams(0))
    np.testing.assert_array_equal(data.y, data.X @ data.beta_star)
    np.testing.assert_array_equal(data.y_tilde, data.X_tilde @ data.beta_star)


def test_generate_data_is_bitwise_deterministic():
    c = small()
    a, b = generate_data(c, make_streams(11)), generate_data(c, make_streams(11))
    for name in ("X", "y", "X_tilde", "y_tilde", "beta_star"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_single_generator_also_accepted():
    data = generate_data(small(), np.random.default_rng(0))
    assert data.X.shape == (20, 5)


def test_beta_star_norm_concentrates():
    # oracle: ||beta_star||^2 ~ chi^2_d / d has mean 1 and sd sqrt(2/d); over 50 seeds the sd of the mean is 0.008
    c = ExperimentConfig(n=2000, d=600, N=1000, alpha=0.2)
    norms = [float(np.sum(generate_data(c, make_streams(s)).beta_star ** 2)) for s in range(50)]
    assert 0.95 <= np.mean(norms) <= 1.05


def test_init_rows_unit_and_a_scale():
    c = small(N=50, d=30)
    W0, a = init_network(c, np.random.default_rng(0))
    np.testing.assert_allclose(np.linalg.norm(W0, axis=1), 1.0, atol=1e-12)
    sq = [float(np.sum(init_network(ExperimentConfig(n=10, d=4, N=400, alpha=0.1), np.random.default_rng(s))[1] ** 2))
          for s in range(100)]
    assert 0.97 <= np.mean(sq) <= 1.03


def test_init_rows_uniform_on_circle():
    c = ExperimentConfig(n=10, d=2, N=10_000, alpha=0.1)
    W0, _ = init_network(c, np.random.default_rng(3))
    angles = np.arctan2(W0[:, 1], W0[:, 0])
    assert stats.kstest(angles, stats.uniform(loc=-math.pi, scale=2 * math.pi).cdf).pvalue > 0.01


# ------------------------------------------------------------------ gradient


def _half_loss(W, a, X, y, student):
    r = y - student(X @ W.T) @ a / math.sqrt(W.shape[0])
    return 0.5 * float(r @ r) / X.shape[0]


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["tanh", "sigmoid_shifted", "relu_shifted"]))
def test_gradient_matches_finite_differences(seed, name):
    rng = np.random.default_rng(seed)
    c = small()
    data = generate_data(c, rng)
    W0, a = init_network(c, rng)
    student = get_activation(name)
    G = gradient(W0, a, data.X, data.y, student)
    h = 1e-6
    fd = np.empty_like(W0)
    for i in range(c.N):
        for j in range(c.d):
            E = np.zeros_like(W0)
            E[i, j] = h
            fd[i, j] = (_half_loss(W0 + E, a, data.X, data.y, student)
                        - _half_loss(W0 - E, a, data.X, data.y, student)) / (2 * h)
    assert np.max(np.abs(G + math.sqrt(c.N) * fd)) < 1e-5


def test_zero_step_keeps_weights():
    c = small(eta_scale=0.0)
    data, model = train(c)
    assert np.array_equal(model.W, model.W0)
    assert np.array_equal(model.F, model.F0)


def test_gradient_is_nearly_rank_one():
    c = ExperimentConfig(n=2000, d=600, N=1000, alpha=0.2, sigma_eps=math.sqrt(0.5), teacher_coeffs=(0.0, 1.0, 1.0))
    streams = make_streams(0)
    data = generate_data(c, streams)
    W0, a = init_network(c, streams["init"])
    student = c.student_activation
    G = gradient(W0, a, data.X, data.y, student)
    lead = student.c1 * np.outer(a, estimate_beta(data.X, data.y))
    assert np.linalg.norm(G - lead, 2) / np.linalg.norm(G, 2) < 0.3


def test_gradient_step_applies_eta():
    c = small()
    data = generate_data(c, make_streams(1))
    W0, a = init_network(c, make_streams(1)["init"])
    s = c.student_activation
    np.testing.assert_allclose(gradient_step(W0, a, data.X, data.y, s, 2.5) - W0,
                               2.5 * gradient(W0, a, data.X, data.y, s), atol=1e-15)


# ------------------------------------------------------------------ features and beta


def test_feature_identities():
    rng = np.random.default_rng(0)
    X, W = rng.standard_normal((6, 4)), rng.standard_normal((3, 4))
    np.testing.assert_array_equal(features(X, W, get_activation("identity")), X @ W.T)
    relu = get_activation("relu_shifted")
    np.testing.assert_allclose(features(X, np.zeros((3, 4)), relu), -1 / math.sqrt(2 * math.pi), rtol=1e-15)
    F = features(X, W, relu)
    assert F[2, 1] == pytest.approx(max(float(X[2] @ W[1]), 0.0) - 1 / math.sqrt(2 * math.pi), abs=1e-14)


def test_estimate_beta_identities():
    y = np.arange(5.0)
    np.testing.assert_array_equal(estimate_beta(np.eye(5), y), y / 5)
    np.testing.assert_array_equal(estimate_beta(np.ones((5, 3)), np.zeros(5)), np.zeros(3))


def test_beta_hat_alignment_near_limit():
    c = ExperimentConfig(n=4000, d=1200, N=10, alpha=0.2, sigma_eps=math.sqrt(0.5), teacher_coeffs=(0.0, 1.0, 1.0))
    data = generate_data(c, make_streams(0))
    b = estimate_beta(data.X, data.y)
    cos = abs(b @ data.beta_star) / (np.linalg.norm(b) * np.linalg.norm(data.beta_star))
    assert abs(cos - alignment_limit(1.0, math.sqrt(3.0), math.sqrt(0.5), 0.3)) < 0.05


# ------------------------------------------------------------------ spiked and linearized features


def test_spiked_zero_and_identity():
    rng = np.random.default_rng(0)
    F0, X, b, a = rng.standard_normal((8, 5)), rng.standard_normal((8, 3)), rng.standard_normal(3), rng.standard_normal(5)
    relu = get_activation("relu_shifted")
    np.testing.assert_array_equal(spiked_approximation(F0, X, b, a, 3.0, 0, relu), F0)
    ident = get_activation("identity")
    np.testing.assert_allclose(spiked_approximation(F0, X, b, a, 3.0, 1, ident), F0 + 3.0 * np.outer(X @ b, a))
    with pytest.raises(ValueError):
        spiked_approximation(F0, X, b, a, 3.0, -1, relu)


def test_spiked_features_on_training_inputs():
    c = small()
    data, m = train(c)
    s = c.student_activation
    np.testing.assert_allclose(spiked_features(data.X_tilde, m.W0, m.beta_hat, m.a, c.eta, 2, s),
                               spiked_approximation(m.F0, data.X_tilde, m.beta_hat, m.a, c.eta, 2, s))


def test_more_spike_terms_approximate_better():
    ratios = []
    for seed in range(10):
        c = dataclasses.replace(FIG2, seed=seed)
        data, m = train(c)
        s = c.student_activation
        errs = [operator_norm(m.F - spiked_approximation(m.F0, data.X_tilde, m.beta_hat, m.a, c.eta, ell, s))
                for ell in (1, 2)]
        ratios.append(errs[1] / errs[0])
    assert np.mean(ratios) < 1


def test_gaussian_equivalent_features():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((50, 10))
    W0 = rng.standard_normal((20, 10))
    W0 /= np.linalg.norm(W0, axis=1, keepdims=True)
    np.testing.assert_array_equal(gaussian_equivalent_features(X, W0, 1.0, 0.0, rng), X @ W0.T)
    X = rng.standard_normal((2000, 30))
    W0 = rng.standard_normal((500, 30))
    W0 /= np.linalg.norm(W0, axis=1, keepdims=True)
    F = gaussian_equivalent_features(X, W0, 0.5, 0.3, rng)
    assert F.var() == pytest.approx(0.25 + 0.09, rel=0.02)
