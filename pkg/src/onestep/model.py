"""Teacher-student data, two-layer initialization and the single large gradient step."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .hermite import ActivationSpec, TEACHER_DEGREE, get_activation

# Named RNG streams. Each is spawned from SeedSequence(seed) at a fixed index,
# so adding a consumer of one stream never shifts the draws of another.
# "aux" feeds test-error sampling, "surrogate" the Gaussian-equivalent noise.
STREAM_INDEX = {"teacher": 0, "data": 1, "init": 2, "aux": 3, "surrogate": 4}

BOUNDARY_WARN_WIDTH = 0.005


class NumericalError(RuntimeError):
    """A non-finite value appeared where the computation requires finite numbers."""


class NearBoundaryWarning(UserWarning):
    pass


def regime_boundaries(max_ell: int = 12) -> list[float]:
    """Step-size exponents (ell - 1) / (2 ell) where the spike count changes."""
    return [(ell - 1) / (2 * ell) for ell in range(2, max_ell + 1)]


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for each named stream of a run."""
    children = np.random.SeedSequence(int(seed)).spawn(len(STREAM_INDEX))
    return {name: np.random.default_rng(children[i]) for name, i in STREAM_INDEX.items()}


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    d: int
    N: int
    alpha: float
    eta_scale: float = 1.0
    lam: float = 0.01
    sigma_eps: float = 0.0
    student: str = "relu_shifted"
    teacher: str = "hermite_combo"
    teacher_coeffs: Optional[tuple] = (0.0, 1.0)
    seed: int = 0
    student_coeffs: Optional[tuple] = None

    def __post_init__(self):
        for name in ("n", "d", "N"):
            if int(getattr(self, name)) < 2:
                raise ValueError(f"{name} must be at least 2")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not 0 <= self.alpha < 0.5:
            raise ValueError("alpha must lie in [0, 0.5)")
        if self.sigma_eps < 0:
            raise ValueError("sigma_eps must be non-negative")
        if self.eta_scale < 0:
            raise ValueError("eta_scale must be non-negative")
        for name in ("teacher_coeffs", "student_coeffs"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(float(c) for c in value))
        near = [b for b in regime_boundaries() if abs(self.alpha - b) < BOUNDARY_WARN_WIDTH]
        if near:
            warnings.warn(f"alpha={self.alpha} is within {BOUNDARY_WARN_WIDTH} of the regime boundary {near[0]:.4f}; "
                          "the spike count there is not determined", NearBoundaryWarning, stacklevel=3)

    @property
    def phi(self) -> float:
        return self.d / self.n

    @property
    def psi(self) -> float:
        return self.d / self.N

    @property
    def eta(self) -> float:
        return self.eta_scale * self.n ** self.alpha

    @property
    def student_activation(self) -> ActivationSpec:
        coeffs = self.student_coeffs if self.student == "hermite_combo" else None
        return get_activation(self.student, coeffs)

    @property
    def teacher_activation(self) -> ActivationSpec:
        coeffs = self.teacher_coeffs if self.teacher == "hermite_combo" else None
        return get_activation(self.teacher, coeffs, K=TEACHER_DEGREE)


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    X_tilde: np.ndarray
    y_tilde: np.ndarray
    beta_star: np.ndarray


@dataclass(frozen=True)
class TrainedModel:
    config: ExperimentConfig
    W0: np.ndarray
    a: np.ndarray
    W: np.ndarray
    beta_hat: np.ndarray
    F0: np.ndarray = field(repr=False)
    F: np.ndarray = field(repr=False)


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{name} contains non-finite values")


def generate_data(config: ExperimentConfig, rng: np.random.Generator | dict) -> Dataset:
    """Draw beta_star, both splits and their labels.

    ``rng`` may be a single generator (used for everything) or the dict from
    ``make_streams``, in which case beta_star comes from the teacher stream.
    """
    if isinstance(rng, dict):
        teacher_rng, data_rng = rng["teacher"], rng["data"]
    else:
        teacher_rng = data_rng = rng
    n, d = config.n, config.d
    beta_star = teacher_rng.standard_normal(d) / math.sqrt(d)
    teacher = config.teacher_activation
    X = data_rng.standard_normal((n, d))
    X_tilde = data_rng.standard_normal((n, d))
    y = teacher(X @ beta_star) + config.sigma_eps * data_rng.standard_normal(n)
    y_tilde = teacher(X_tilde @ beta_star) + config.sigma_eps * data_rng.standard_normal(n)
    return Dataset(X=X, y=y, X_tilde=X_tilde, y_tilde=y_tilde, beta_star=beta_star)


def init_network(config: ExperimentConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """First-layer rows uniform on the unit sphere, second layer N(0, I/N)."""
    W0 = rng.standard_normal((config.N, config.d))
    W0 /= np.linalg.norm(W0, axis=1, keepdims=True)
    a = rng.standard_normal(config.N) / math.sqrt(config.N)
    return W0, a


def gradient(W0, a, X, y, student: ActivationSpec) -> np.ndarray:
    """Negative sqrt(N)-scaled gradient of the half squared loss with respect to W.

    Equals (1/n) [(a y^T - a a^T s(W0 X^T)/sqrt(N)) * s'(W0 X^T)] X.
    """
    n = X.shape[0]
    N = W0.shape[0]
    pre = X @ W0.T
    residual = y - student(pre) @ a / math.sqrt(N)
    weighted = student.derivative(pre) * residual[:, None]
    G = (a[:, None] * weighted.T) @ X / n
    _check_finite("gradient", G)
    return G


def gradient_step(W0, a, X, y, student: ActivationSpec, eta: float) -> np.ndarray:
    """W = W0 + eta * G."""
    W = W0 + eta * gradient(W0, a, X, y, student)
    _check_finite("updated weights", W)
    return W


def features(X, W, student: ActivationSpec) -> np.ndarray:
    return student(X @ W.T)


def estimate_beta(X, y) -> np.ndarray:
    """beta_hat = X^T y / n."""
    return X.T @ y / X.shape[0]


def spiked_approximation(F0, X_tilde, beta_hat, a, eta: float, ell: int, student: ActivationSpec) -> np.ndarray:
    """F0 plus the first ``ell`` rank-one terms c1^k c_k eta^k (X beta)^k (a^k)^T."""
    if ell < 0:
        raise ValueError("ell must be non-negative")
    c = student.coeffs
    proj = X_tilde @ beta_hat
    out = np.array(F0, dtype=float, copy=True)
    for k in range(1, ell + 1):
        scale = c.c1 ** k * c[k] * eta ** k
        out += scale * np.outer(proj ** k, a ** k)
    return out


def spiked_features(X, W0, beta_hat, a, eta: float, ell: int, student: ActivationSpec) -> np.ndarray:
    """Spiked approximation evaluated on arbitrary inputs, e.g. fresh test points."""
    return spiked_approximation(student(X @ W0.T), X, beta_hat, a, eta, ell, student)


def gaussian_equivalent_features(X_tilde, W0, c1: float, c_gt1: float, rng: np.random.Generator) -> np.ndarray:
    """Linearized surrogate c1 X W0^T + c_{>1} Z with Z standard Gaussian."""
    noise = rng.standard_normal((X_tilde.shape[0], W0.shape[0]))
    return c1 * X_tilde @ W0.T + c_gt1 * noise


def train(config: ExperimentConfig, streams: dict | None = None, data: Dataset | None = None) -> tuple[Dataset, TrainedModel]:
    """Run data generation, initialization and the gradient step for one seed."""
    streams = make_streams(config.seed) if streams is None else streams
    data = generate_data(config, streams) if data is None else data
    student = config.student_activation
    W0, a = init_network(config, streams["init"])
    W = gradient_step(W0, a, data.X, data.y, student, config.eta)
    F0 = features(data.X_tilde, W0, student)
    F = features(data.X_tilde, W, student)
    _check_finite("features", F)
    model = TrainedModel(config=config, W0=W0, a=a, W=W, beta_hat=estimate_beta(data.X, data.y), F0=F0, F=F)
    return data, model
