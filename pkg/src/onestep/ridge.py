"""Ridge regression on features, training loss and Monte Carlo test error."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .hermite import ActivationSpec, monomial_to_hermite

MIN_TEST_SAMPLES = 1000
DEFAULT_TEST_SAMPLES = 100_000
_TEST_BATCH = 10_000


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class RidgeFit:
    a_hat: np.ndarray
    train_loss: float
    lam: float
    method: str


def _cholesky_solve(A, B):
    try:
        factor = cho_factor(A, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise SolverError(f"Cholesky factorization failed: {exc}") from exc
    return cho_solve(factor, B)


def ridge_fit(F, y, lam: float, method: str = "auto") -> RidgeFit:
    """Minimize (1/n)||y - F a||^2 + lam ||a||^2.

    The primal system (F^T F + lam n I_N) a = F^T y is solved when N <= n and
    the dual one a = F^T (F F^T + lam n I_n)^{-1} y otherwise.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    F = np.asarray(F, dtype=float)
    y = np.asarray(y, dtype=float)
    n, N = F.shape
    if method == "auto":
        method = "primal" if N <= n else "dual"
    if method == "primal":
        gram = F.T @ F
        gram[np.diag_indices_from(gram)] += lam * n
        a_hat = _cholesky_solve(gram, F.T @ y)
    elif method == "dual":
        kernel = F @ F.T
        kernel[np.diag_indices_from(kernel)] += lam * n
        a_hat = F.T @ _cholesky_solve(kernel, y)
    else:
        raise ValueError(f"unknown method {method!r}")
    resid = y - F @ a_hat
    loss = float(resid @ resid / n + lam * a_hat @ a_hat)
    return RidgeFit(a_hat=a_hat, train_loss=loss, lam=lam, method=method)


def train_loss_resolvent(F, y, lam: float) -> float:
    """Training loss in closed form, lam y^T (F F^T + lam n I)^{-1} y."""
    F = np.asarray(F, dtype=float)
    n = F.shape[0]
    kernel = F @ F.T
    kernel[np.diag_indices_from(kernel)] += lam * n
    return float(lam * y @ _cholesky_solve(kernel, y))


@dataclass(frozen=True)
class MCEstimate:
    value: float
    std_err: float
    n_samples: int


def feature_predictor(W, a_hat, student: ActivationSpec):
    """x -> s(x W^T) a_hat, the network's prediction on a batch."""
    return lambda x: student(x @ W.T) @ a_hat


def test_errors_mc(predictors, teacher: ActivationSpec, beta_star, sigma_eps: float, rng: np.random.Generator,
                   n_test: int = DEFAULT_TEST_SAMPLES) -> tuple[list[MCEstimate], np.ndarray]:
    """Squared test error of several predictors on shared fresh samples.

    Each predictor maps an (m, d) batch to m predictions. Returns one estimate
    per predictor and the matrix of standard errors of pairwise differences,
    which is far smaller than the individual errors because draws are shared.
    """
    if n_test < MIN_TEST_SAMPLES:
        raise ValueError(f"n_test must be at least {MIN_TEST_SAMPLES}")
    d = beta_star.shape[0]
    k = len(predictors)
    total = np.zeros(k)
    cross = np.zeros((k, k))
    done = 0
    while done < n_test:
        m = min(_TEST_BATCH, n_test - done)
        x = rng.standard_normal((m, d))
        y = teacher(x @ beta_star)
        if sigma_eps > 0:
            y = y + sigma_eps * rng.standard_normal(m)
        sq = np.empty((m, k))
        for j, predict in enumerate(predictors):
            r = y - predict(x)
            sq[:, j] = r * r
        total += sq.sum(axis=0)
        cross += sq.T @ sq
        done += m
    mean = total / n_test
    cov = (cross / n_test - np.outer(mean, mean)) * n_test / (n_test - 1)
    var = np.diag(cov)
    diff_var = var[:, None] + var[None, :] - 2 * cov
    estimates = [MCEstimate(float(mean[j]), float(math.sqrt(max(var[j], 0.0) / n_test)), n_test) for j in range(k)]
    return estimates, np.sqrt(np.maximum(diff_var, 0.0) / n_test)


def test_error_mc(W, a_hat, teacher: ActivationSpec, beta_star, sigma_eps: float, student: ActivationSpec,
                  rng: np.random.Generator, n_test: int = DEFAULT_TEST_SAMPLES) -> MCEstimate:
    """Monte Carlo estimate of E(y - s(W x)^T a_hat)^2 with its standard error."""
    estimates, _ = test_errors_mc([feature_predictor(W, a_hat, student)], teacher, beta_star, sigma_eps, rng, n_test)
    return estimates[0]


def test_moment_aleph(k: int, beta_norm_sq: float = 1.0) -> float:
    """E (x^T beta)^k for Gaussian x, which is (k-1)!! ||beta||^k for even k."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if k % 2:
        return 0.0
    return float(math.prod(range(k - 1, 0, -2))) * beta_norm_sq ** (k // 2)


def test_moment_tau(k: int, teacher_coeffs, beta_star, beta) -> float:
    """E[y (x^T beta)^k] for y = f(x^T beta_star) + noise with unit-norm beta_star.

    Expanding (x^T beta)^k in Hermite polynomials of the normalized projection
    leaves only the diagonal terms, each weighted by i! rho^i.
    """
    beta_star = np.asarray(beta_star, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if not math.isclose(float(beta_star @ beta_star), 1.0, rel_tol=1e-9):
        raise ValueError("beta_star must have unit norm")
    xi = monomial_to_hermite(max(k, 1))
    norm = float(np.linalg.norm(beta))
    if norm == 0:
        return 0.0 if k else float(teacher_coeffs[0])
    rho = float(beta_star @ beta) / norm
    total = sum(xi[k, i] * (teacher_coeffs[i] if i < len(teacher_coeffs) else 0.0) * math.factorial(i) * rho ** i
                for i in range(k + 1))
    return norm ** k * total


# keep pytest from collecting these when a test module imports them
for _fn in (test_errors_mc, test_error_mc, test_moment_aleph, test_moment_tau):
    _fn.__test__ = False
