"""Probabilist's Hermite polynomials, activation expansions and the monomial table.

Coefficients follow the convention ``f(x) = sum_k c_k He_k(x)`` with
``c_k = E[f(Z) He_k(Z)] / k!`` for standard normal ``Z``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, roots_legendre

MAX_DEGREE = 64
MAX_MONOMIAL_DEGREE = 8
DEFAULT_QUAD_ORDER = 200
STUDENT_DEGREE = 16
TEACHER_DEGREE = 8

# Gaussian mass beyond this cutoff is below 1e-40, which swamps He_k growth for k <= 64.
_TAIL_CUTOFF = 14.0
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class NonCenteredActivationWarning(UserWarning):
    """Raised when an activation has a nonzero Gaussian mean."""


def hermite_eval(k: int, x):
    """Evaluate He_k at ``x`` through the three-term recurrence."""
    if not 0 <= k <= MAX_DEGREE:
        raise ValueError(f"degree must lie in [0, {MAX_DEGREE}], got {k}")
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if k == 0:
        return prev
    cur = x.copy()
    for j in range(1, k):
        prev, cur = cur, x * cur - j * prev
    return cur


def hermite_table(K: int, x) -> np.ndarray:
    """All of He_0..He_K at ``x``, stacked along a new leading axis."""
    if not 0 <= K <= MAX_DEGREE:
        raise ValueError(f"degree must lie in [0, {MAX_DEGREE}], got {K}")
    x = np.asarray(x, dtype=float)
    out = np.empty((K + 1,) + x.shape)
    out[0] = 1.0
    if K >= 1:
        out[1] = x
    for j in range(1, K):
        out[j + 1] = x * out[j] - j * out[j - 1]
    return out


def hermite_series(coeffs: Sequence[float], x):
    """Evaluate ``sum_k coeffs[k] He_k(x)`` with Clenshaw's recurrence."""
    coeffs = np.asarray(coeffs, dtype=float)
    x = np.asarray(x, dtype=float)
    b1 = np.zeros_like(x)
    b2 = np.zeros_like(x)
    for k in range(len(coeffs) - 1, -1, -1):
        b1, b2 = coeffs[k] + x * b1 - (k + 1) * b2, b1
    return b1


def hermite_series_derivative(coeffs: Sequence[float]) -> np.ndarray:
    """Coefficients of the derivative, using He_k' = k He_{k-1}."""
    coeffs = np.asarray(coeffs, dtype=float)
    if len(coeffs) <= 1:
        return np.zeros(1)
    return coeffs[1:] * np.arange(1, len(coeffs))


@lru_cache(maxsize=32)
def gaussian_nodes(quad_order: int, breakpoints: tuple[float, ...] = ()) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for E[g(Z)], Z ~ N(0, 1).

    Composite Gauss-Legendre on [-14, 14], split at the given breakpoints, with
    the Gaussian density folded into the weights. Splitting at kinks keeps the
    rule spectrally accurate on each smooth piece.
    """
    if quad_order < 2:
        raise ValueError("quad_order must be at least 2")
    cuts = sorted({-_TAIL_CUTOFF, _TAIL_CUTOFF, *(b for b in breakpoints if abs(b) < _TAIL_CUTOFF)})
    base, base_w = roots_legendre(quad_order)
    nodes, weights = [], []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        # split long pieces so every subinterval stays under ~7 units wide
        pieces = max(1, int(math.ceil((hi - lo) / 7.0)))
        edges = np.linspace(lo, hi, pieces + 1)
        for a, b in zip(edges[:-1], edges[1:]):
            half = 0.5 * (b - a)
            t = 0.5 * (a + b) + half * base
            nodes.append(t)
            weights.append(half * base_w * _INV_SQRT_2PI * np.exp(-0.5 * t * t))
    nodes_arr = np.concatenate(nodes)
    nodes_arr.setflags(write=False)
    weights_arr = np.concatenate(weights)
    weights_arr.setflags(write=False)
    return nodes_arr, weights_arr


def gaussian_expectation(fn: Callable, quad_order: int = DEFAULT_QUAD_ORDER, breakpoints=()) -> float:
    nodes, weights = gaussian_nodes(quad_order, tuple(breakpoints))
    return float(np.dot(weights, fn(nodes)))


@dataclass(frozen=True)
class HermiteCoeffs:
    """Hermite coefficients c_0..c_K of an activation.

    ``variance`` is Var f(Z) when known. By Parseval it equals the untruncated
    sum of k! c_k^2 over k >= 1, so the norms use it instead of the truncated
    series whenever it is available.
    """

    coeffs: np.ndarray
    variance: float | None = None

    def __post_init__(self):
        arr = np.array(self.coeffs, dtype=float)
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("need at least c_0 and c_1")
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    @property
    def K(self) -> int:
        return self.coeffs.size - 1

    def __getitem__(self, k: int) -> float:
        return float(self.coeffs[k]) if k <= self.K else 0.0

    @property
    def c1(self) -> float:
        return float(self.coeffs[1])

    @property
    def c2(self) -> float:
        return self[2]

    @property
    def c_total(self) -> float:
        return hermite_norms(self)[0]

    @property
    def c_gt1(self) -> float:
        return hermite_norms(self)[1]


def hermite_norms(coeffs: HermiteCoeffs) -> tuple[float, float]:
    """Return (c_total, c_{>1}) where c_total^2 = sum_{k>=1} k! c_k^2."""
    c = coeffs.coeffs
    weighted = np.array([math.factorial(k) * c[k] ** 2 for k in range(c.size)])
    total_sq = weighted[1:].sum() if coeffs.variance is None else max(coeffs.variance, weighted[1:].sum())
    return float(np.sqrt(total_sq)), float(np.sqrt(max(total_sq - weighted[1], 0.0)))


@dataclass(frozen=True)
class ActivationSpec:
    """A scalar activation with its derivative and Hermite expansion."""

    name: str
    fn: Callable = field(repr=False)
    derivative: Callable = field(repr=False)
    coeffs: HermiteCoeffs = field(repr=False)
    breakpoints: tuple = ()

    def __call__(self, x):
        return self.fn(x)

    @property
    def c1(self) -> float:
        return self.coeffs.c1

    @property
    def c2(self) -> float:
        return self.coeffs.c2

    @property
    def c_gt1(self) -> float:
        return self.coeffs.c_gt1

    @property
    def c_total(self) -> float:
        return self.coeffs.c_total


def hermite_coeffs(activation, K: int = STUDENT_DEGREE, quad_order: int = DEFAULT_QUAD_ORDER,
                   breakpoints=None) -> HermiteCoeffs:
    """Hermite coefficients c_0..c_K of ``activation`` by Gaussian quadrature.

    ``activation`` may be an ActivationSpec or a plain vectorized callable.
    """
    if not 0 <= K <= MAX_DEGREE:
        raise ValueError(f"K must lie in [0, {MAX_DEGREE}]")
    if quad_order < 2 * K + 8:
        raise ValueError(f"quad_order must be at least 2K+8 = {2 * K + 8}")
    if isinstance(activation, ActivationSpec):
        fn = activation.fn
        if breakpoints is None:
            breakpoints = activation.breakpoints
    else:
        fn = activation
    nodes, weights = gaussian_nodes(quad_order, tuple(breakpoints or ()))
    values = np.asarray(fn(nodes), dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("activation is not finite on the quadrature grid")
    table = hermite_table(K, nodes)
    raw = table @ (weights * values)
    c = raw / np.array([math.factorial(k) for k in range(K + 1)], dtype=float)
    if abs(c[0]) > 1e-8:
        warnings.warn(f"activation has Gaussian mean {c[0]:.3g}; the theory assumes a centered activation",
                      NonCenteredActivationWarning, stacklevel=2)
    variance = float(np.dot(weights, values * values)) - c[0] ** 2
    return HermiteCoeffs(c, variance=variance)


@lru_cache(maxsize=None)
def _hermite_integer_coeffs(i: int) -> tuple[int, ...]:
    """Monomial coefficients of He_i as exact integers (index = power)."""
    prev, cur = [1], [0, 1]
    if i == 0:
        return tuple(prev)
    for j in range(1, i):
        nxt = [0] + cur
        for p, v in enumerate(prev):
            nxt[p] -= j * v
        prev, cur = cur, nxt
    return tuple(cur)


def _gaussian_moment(p: int) -> int:
    """E[Z^p] = (p-1)!! for even p, zero otherwise."""
    if p % 2:
        return 0
    out = 1
    for j in range(p - 1, 0, -2):
        out *= j
    return out


@lru_cache(maxsize=None)
def _xi_exact(L_max: int) -> tuple[tuple[Fraction, ...], ...]:
    rows = []
    for p in range(L_max + 1):
        row = []
        for i in range(L_max + 1):
            moment = sum(c * _gaussian_moment(p + q) for q, c in enumerate(_hermite_integer_coeffs(i)))
            row.append(Fraction(moment, math.factorial(i)))
        rows.append(tuple(row))
    return tuple(rows)


def monomial_to_hermite(L_max: int = MAX_MONOMIAL_DEGREE) -> np.ndarray:
    """Table xi with x^p = sum_i xi[p, i] He_i(x) for 0 <= p, i <= L_max.

    Entries come from exact rational Gaussian moments, so they are exact in
    floating point (they are integers ratios with small denominators).
    """
    if not 0 <= L_max <= MAX_MONOMIAL_DEGREE:
        raise ValueError(f"L_max must lie in [0, {MAX_MONOMIAL_DEGREE}]")
    exact = _xi_exact(L_max)
    return np.array([[float(v) for v in row] for row in exact])


# ---------------------------------------------------------------- activations


def _relu_shifted(x):
    return np.maximum(x, 0.0) - _INV_SQRT_2PI


def _relu_shifted_prime(x):
    # derivative at the kink is taken as zero
    return (np.asarray(x) > 0).astype(float)


def _tanh_prime(x):
    return 1.0 - np.tanh(x) ** 2


def _sigmoid_shifted(x):
    return expit(x) - 0.5


def _sigmoid_prime(x):
    s = expit(x)
    return s * (1.0 - s)


def _identity(x):
    return np.asarray(x, dtype=float)


def _one(x):
    return np.ones_like(np.asarray(x, dtype=float))


_BUILTIN = {
    "relu_shifted": (_relu_shifted, _relu_shifted_prime, (0.0,)),
    "tanh": (np.tanh, _tanh_prime, ()),
    "sigmoid_shifted": (_sigmoid_shifted, _sigmoid_prime, ()),
    "identity": (_identity, _one, ()),
}

ACTIVATION_NAMES = tuple(_BUILTIN) + ("hermite_combo",)


def hermite_combo(coeffs: Sequence[float], name: str = "hermite_combo") -> ActivationSpec:
    """Activation given directly by its Hermite coefficients c_0, c_1, ..."""
    c = np.asarray(coeffs, dtype=float)
    if c.size < 2:
        c = np.concatenate([c, np.zeros(2 - c.size)])
    if abs(c[0]) > 0:
        warnings.warn("hermite_combo with nonzero c_0 is not centered", NonCenteredActivationWarning, stacklevel=2)
    dc = hermite_series_derivative(c)
    return ActivationSpec(
        name=name,
        fn=lambda x, c=c: hermite_series(c, x),
        derivative=lambda x, dc=dc: hermite_series(dc, x),
        coeffs=HermiteCoeffs(c),
    )


@lru_cache(maxsize=64)
def _cached_activation(name: str, coeffs: tuple | None, K: int) -> ActivationSpec:
    if name == "hermite_combo":
        if coeffs is None:
            raise ValueError("hermite_combo needs explicit coefficients")
        return hermite_combo(coeffs)
    if name not in _BUILTIN:
        raise ValueError(f"unknown activation {name!r}; choose from {ACTIVATION_NAMES}")
    fn, dfn, kinks = _BUILTIN[name]
    c = hermite_coeffs(fn, K=K, breakpoints=kinks)
    return ActivationSpec(name=name, fn=fn, derivative=dfn, coeffs=c, breakpoints=kinks)


def get_activation(name: str, coeffs: Sequence[float] | None = None, K: int = STUDENT_DEGREE) -> ActivationSpec:
    """Look up a named activation; ``coeffs`` is required for hermite_combo."""
    key = tuple(float(v) for v in coeffs) if coeffs is not None else None
    return _cached_activation(name, key, K)
