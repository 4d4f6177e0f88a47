"""Deterministic limits: the (m1, m2) fixed point and the loss and risk gaps built on it.

Notation: phi = d/n, psi = d/N, lam is the ridge penalty, c1 and c_gt1 describe
the student activation and b^2 = c*_1^2 + phi (c*^2 + sigma_eps^2) the teacher's
effective signal-plus-noise level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

from .hermite import HermiteCoeffs, monomial_to_hermite

MAX_ELL = 6
RESIDUAL_TOL = 1e-10
MAX_NEWTON_ITER = 1000
FD_REL_STEP = 1e-6
FD_AGREEMENT = 1e-4
CONDITION_LIMIT = 1e12
_COEFF_ZERO = 1e-12


class ConvergenceError(RuntimeError):
    """The fixed-point iteration did not reach the residual tolerance."""


class NegativeBranchError(RuntimeError):
    """Only roots outside the admissible box 0 < m1, m2 <= phi/(lam psi) were found."""


class DerivativeAuditError(RuntimeError):
    """Implicit and finite-difference derivatives disagree."""


class IllConditionedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TheoryInputs:
    phi: float
    psi: float
    lam: float
    sigma_eps: float
    student: HermiteCoeffs
    teacher: HermiteCoeffs

    def __post_init__(self):
        if self.phi <= 0 or self.psi <= 0 or self.lam <= 0:
            raise ValueError("phi, psi and lam must be positive")
        if abs(self.student.c1) < _COEFF_ZERO:
            raise ValueError("the fixed point needs a student with c1 != 0")

    @classmethod
    def from_config(cls, config) -> "TheoryInputs":
        return cls(phi=config.phi, psi=config.psi, lam=config.lam, sigma_eps=config.sigma_eps,
                   student=config.student_activation.coeffs, teacher=config.teacher_activation.coeffs)

    def with_lam(self, lam: float) -> "TheoryInputs":
        return TheoryInputs(self.phi, self.psi, lam, self.sigma_eps, self.student, self.teacher)

    @property
    def c1(self) -> float:
        return self.student.c1

    @property
    def c_gt1(self) -> float:
        return self.student.c_gt1

    @property
    def b_sq(self) -> float:
        t = self.teacher
        return t.c1 ** 2 + self.phi * (t.c_total ** 2 + self.sigma_eps ** 2)


@dataclass(frozen=True)
class FixedPoint:
    """Solution of the coupled equations with its lam-derivatives."""

    m1: float
    m2: float
    residual: tuple
    m1_prime: float
    m2_prime: float
    iterations: int = 0
    method: str = "newton"


# ------------------------------------------------------------------ fixed point


def fixed_point_residual(m1, m2, phi, psi, lam, c1, c_gt1) -> np.ndarray:
    c_sq, g_sq = c1 * c1, c_gt1 * c_gt1
    cross = c_sq * m1 * m2 * (lam * psi * m1 / phi - 1.0)
    first = phi * (m1 - m2) * (g_sq * m1 + c_sq * m2) + cross
    second = (phi / psi) * (c_sq * m1 * m2 + phi * (m2 - m1)) + cross
    return np.array([first, second])


def _jacobian(m1, m2, phi, psi, lam, c1, c_gt1) -> np.ndarray:
    c_sq, g_sq = c1 * c1, c_gt1 * c_gt1
    k = lam * psi / phi
    cross_1 = c_sq * m2 * (2 * k * m1 - 1.0)
    cross_2 = c_sq * m1 * (k * m1 - 1.0)
    return np.array([
        [phi * (g_sq * m1 + c_sq * m2 + g_sq * (m1 - m2)) + cross_1,
         phi * (c_sq * (m1 - m2) - g_sq * m1 - c_sq * m2) + cross_2],
        [(phi / psi) * (c_sq * m2 - phi) + cross_1,
         (phi / psi) * (c_sq * m1 + phi) + cross_2],
    ])


def _residual_scale(m1, m2, phi, psi, lam, c1, c_gt1) -> float:
    # the residual is a difference of terms of this size; normalizing by it
    # makes the tolerance independent of how large m1, m2 are
    c_sq, g_sq = c1 * c1, c_gt1 * c_gt1
    return max(np.finfo(float).tiny, c_sq * m1 * m2 * (1 + lam * psi * m1 / phi), phi * m1 * (g_sq * m1 + c_sq * m2),
               (phi / psi) * (c_sq * m1 * m2 + phi * m1))


def _polish(m, args, steps=4):
    # a few undamped steps past the relative tolerance bring the absolute
    # residual down to rounding level; stop as soon as it no longer shrinks
    best = np.max(np.abs(fixed_point_residual(*m, *args)))
    for _ in range(steps):
        try:
            trial = m + np.linalg.solve(_jacobian(*m, *args), -fixed_point_residual(*m, *args))
        except np.linalg.LinAlgError:
            break
        val = np.max(np.abs(fixed_point_residual(*trial, *args)))
        if not (np.all(trial > 0) and val < best):
            break
        m, best = trial, val
    return m


def _newton(m, phi, psi, lam, c1, c_gt1, max_iter=MAX_NEWTON_ITER):
    upper = phi / (lam * psi)
    args = (phi, psi, lam, c1, c_gt1)
    for it in range(1, max_iter + 1):
        res = fixed_point_residual(*m, *args)
        scaled = np.max(np.abs(res)) / _residual_scale(*m, *args)
        if scaled < RESIDUAL_TOL:
            m = _polish(m, args)
            res = fixed_point_residual(*m, *args)
            return m, it - 1, np.max(np.abs(res)) / _residual_scale(*m, *args)
        try:
            step = np.linalg.solve(_jacobian(*m, *args), -res)
        except np.linalg.LinAlgError:
            return m, it, math.inf
        # damping: halve until the residual drops and the iterate stays positive
        t = 1.0
        base = np.max(np.abs(res))
        while t > 1e-8:
            trial = m + t * step
            if np.all(trial > 0) and np.max(np.abs(fixed_point_residual(*trial, *args))) < base:
                break
            t *= 0.5
        else:
            trial = np.clip(m + step, 1e-14 * upper, None)
        m = trial
    res = fixed_point_residual(*m, *args)
    return m, max_iter, np.max(np.abs(res)) / _residual_scale(*m, *args)


def polynomial_roots(phi, psi, lam, c1, c_gt1) -> list[tuple[float, float]]:
    """All admissible root pairs from the polynomial reduction.

    The second equation is linear in m2, giving m2 = (phi^2/psi) m1 / D(m1).
    The difference of the two equations cancels the lam-dependent term and is
    quadratic in m2. Substituting and clearing D^2 and one factor of m1 leaves
    a polynomial of degree at most five in m1. Its real roots in the box
    0 < m1, m2 <= phi/(lam psi) are returned.
    """
    c_sq, g_sq = c1 * c1, c_gt1 * c_gt1
    k = lam * psi / phi
    upper = phi / (lam * psi)
    m = Polynomial([0.0, 1.0])
    A = phi * phi / psi
    D = (phi / psi) * (c_sq * m + phi) + c_sq * m * (k * m - 1.0)
    qa = -phi * c_sq
    qb = phi * (c_sq - g_sq) * m - (phi / psi) * (c_sq * m + phi)
    qc = phi * g_sq * m + phi * phi / psi
    poly = qa * A * A * m + qb * A * D + qc * D * D
    pairs = []
    for root in poly.roots():
        if abs(root.imag) > 1e-9 * max(1.0, abs(root.real)):
            continue
        m1 = float(root.real)
        denom = float(D(m1))
        if m1 <= 0 or denom == 0:
            continue
        m2 = A * m1 / denom
        if 0 < m2 <= upper * (1 + 1e-8) and m1 <= upper * (1 + 1e-8):
            pairs.append((m1, m2))
    return pairs


def _polynomial_fallback(m, its, scaled, *args):
    candidates = []
    for pair in polynomial_roots(*args):
        polished, extra, res = _newton(np.array(pair), *args, max_iter=50)
        if res < RESIDUAL_TOL and np.all(polished > 0):
            candidates.append((res, polished, extra))
    if not candidates:
        if np.all(np.isfinite(m)) and np.any(m <= 0):
            raise NegativeBranchError(f"no admissible root for arguments {args}")
        raise ConvergenceError(f"fixed point did not converge (residual {scaled:.2e})")
    res, best, extra = min(candidates, key=lambda c: c[0])
    return best, its + extra, res, "polynomial"


def solve_fixed_point(phi: float, psi: float, lam: float, c1: float, c_gt1: float) -> FixedPoint:
    """Positive solution (m1, m2) of the coupled equations.

    Damped Newton from m1 = m2 = phi / (lam psi), which is the exact solution
    in the large-lam limit. If Newton fails, the system is reduced to a
    polynomial in m1 whose admissible roots are polished and filtered by residual.
    """
    if min(phi, psi, lam) <= 0:
        raise ValueError("phi, psi and lam must be positive")
    if abs(c1) < _COEFF_ZERO:
        raise ValueError("c1 must be nonzero")
    upper = phi / (lam * psi)
    args = (phi, psi, lam, c1, c_gt1)
    m, its, scaled = _newton(np.array([upper, upper]), *args)
    method = "newton"
    if not (scaled < RESIDUAL_TOL and np.all(m > 0) and np.all(m <= upper * (1 + 1e-8))):
        m, its, scaled, method = _polynomial_fallback(m, its, scaled, *args)
    if np.any(m <= 0):
        raise NegativeBranchError(f"converged to a non-positive root {m}")
    res = fixed_point_residual(*m, *args)
    dm = _implicit_derivatives(m[0], m[1], *args)
    return FixedPoint(m1=float(m[0]), m2=float(m[1]), residual=(float(res[0]), float(res[1])),
                      m1_prime=dm[0], m2_prime=dm[1], iterations=its, method=method)


def solve(inputs: TheoryInputs) -> FixedPoint:
    return solve_fixed_point(inputs.phi, inputs.psi, inputs.lam, inputs.c1, inputs.c_gt1)


def _implicit_derivatives(m1, m2, phi, psi, lam, c1, c_gt1) -> tuple[float, float]:
    # only the cross term depends on lam: its lam-derivative is c1^2 m1^2 m2 psi / phi
    d_lam = c1 * c1 * m1 * m1 * m2 * psi / phi
    jac = _jacobian(m1, m2, phi, psi, lam, c1, c_gt1)
    try:
        dm = np.linalg.solve(jac, -np.array([d_lam, d_lam]))
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError("singular Jacobian at the fixed point") from exc
    return float(dm[0]), float(dm[1])


def fixed_point_derivatives(fp: FixedPoint | None, phi, psi, lam, c1, c_gt1, audit: bool = True) -> tuple[float, float]:
    """(dm1/dlam, dm2/dlam) by implicit differentiation of the 2x2 system.

    With ``audit`` the result is compared to a central finite difference with
    step 1e-6 lam; a relative disagreement above 1e-4 raises.
    """
    fp = solve_fixed_point(phi, psi, lam, c1, c_gt1) if fp is None else fp
    dm = np.array(_implicit_derivatives(fp.m1, fp.m2, phi, psi, lam, c1, c_gt1))
    if audit:
        h = FD_REL_STEP * lam
        hi = solve_fixed_point(phi, psi, lam + h, c1, c_gt1)
        lo = solve_fixed_point(phi, psi, lam - h, c1, c_gt1)
        fd = np.array([hi.m1 - lo.m1, hi.m2 - lo.m2]) / (2 * h)
        rel = np.abs(fd - dm) / np.maximum(np.abs(dm), 1e-300)
        if np.any(rel > FD_AGREEMENT):
            raise DerivativeAuditError(f"implicit {dm} vs finite difference {fd}")
    return float(dm[0]), float(dm[1])


def derivatives(inputs: TheoryInputs, fp: FixedPoint | None = None, audit: bool = True) -> tuple[float, float]:
    return fixed_point_derivatives(fp, inputs.phi, inputs.psi, inputs.lam, inputs.c1, inputs.c_gt1, audit)


# ------------------------------------------------------------------ closed forms


def alignment_limit(c_star_1: float, c_star: float, sigma_eps: float, phi: float) -> float:
    """Limit of |<top singular vector of G, beta_star>|."""
    return abs(c_star_1) / math.sqrt(c_star_1 ** 2 + phi * (c_star ** 2 + sigma_eps ** 2))


def delta_1(inputs: TheoryInputs, fp: FixedPoint | None = None) -> float:
    """Training-loss gain in the one-spike regime."""
    fp = solve(inputs) if fp is None else fp
    t1 = inputs.teacher.c1
    return float(inputs.psi * inputs.lam * t1 ** 4 * fp.m2 / (inputs.phi * inputs.b_sq))


def delta_2(inputs: TheoryInputs, fp: FixedPoint | None = None) -> float:
    """Training-loss gain in the two-spike regime."""
    fp = solve(inputs) if fp is None else fp
    t1, t2 = inputs.teacher.c1, inputs.teacher.c2
    extra = 4 * inputs.psi * inputs.lam * t1 ** 4 * t2 ** 2 * fp.m1 / (3 * inputs.phi * inputs.b_sq ** 2)
    return float(delta_1(inputs, fp) + extra)


def _spike_overlaps(inputs: TheoryInputs, fp: FixedPoint, ell: int) -> np.ndarray:
    """r_p for p = 1..ell: limits of H_p(X beta_star)^T R0 (X beta_hat)^p."""
    ratio = inputs.teacher.c1 / math.sqrt(inputs.b_sq)
    scale = inputs.psi / inputs.phi
    r = np.array([math.factorial(p) * scale * fp.m1 * ratio ** p for p in range(1, ell + 1)])
    r[0] = scale * fp.m2 * ratio
    return r


def spike_gram_inverse(inputs: TheoryInputs, fp: FixedPoint, ell: int) -> np.ndarray:
    """Limit of the ell x ell matrix (X beta_hat)^{i T} R0 (X beta_hat)^j, i.e. Omega^{-1}."""
    xi = monomial_to_hermite(max(ell, 1))
    b = math.sqrt(inputs.b_sq)
    scale = inputs.psi / inputs.phi
    out = np.empty((ell, ell))
    for i in range(1, ell + 1):
        for j in range(1, ell + 1):
            rest = sum(math.factorial(k) * xi[i, k] * xi[j, k] for k in range(0, min(i, j) + 1) if k != 1)
            out[i - 1, j - 1] = b ** (i + j) * scale * (fp.m2 * xi[i, 1] * xi[j, 1] + fp.m1 * rest)
    return out


def delta_ell_general(inputs: TheoryInputs, ell: int, fp: FixedPoint | None = None) -> float:
    """Training-loss gain with ell spikes, for 1 <= ell <= 6."""
    if not 1 <= ell <= MAX_ELL:
        raise ValueError(f"ell must lie in [1, {MAX_ELL}]")
    zero = [k for k in range(1, ell + 1) if abs(inputs.student[k]) < _COEFF_ZERO]
    if zero:
        raise ValueError(f"student Hermite coefficients c_{zero} vanish; the {ell}-spike formula needs them nonzero")
    fp = solve(inputs) if fp is None else fp
    gram_inv = spike_gram_inverse(inputs, fp, ell)
    cond = np.linalg.cond(gram_inv)
    if not cond < CONDITION_LIMIT:
        raise IllConditionedError(f"spike Gram matrix condition number {cond:.2e} exceeds {CONDITION_LIMIT:.0e}")
    xi = monomial_to_hermite(max(ell, 1))
    b = math.sqrt(inputs.b_sq)
    r = _spike_overlaps(inputs, fp, ell)
    weights = np.array([inputs.teacher[p] for p in range(1, ell + 1)]) * r
    # v_i = b^i sum_p xi[i, p] c*_p r_p, and the gain is lam v^T Omega v
    powers = b ** np.arange(1, ell + 1)
    v = powers * (xi[1:ell + 1, 1:ell + 1] @ weights)
    return float(inputs.lam * v @ np.linalg.solve(gram_inv, v))


CONVENTIONS = ("printed", "rescaled")


def _scaled_derivatives(inputs: TheoryInputs, fp: FixedPoint, convention: str) -> tuple[float, float]:
    """lam-derivatives entering the test-error gains.

    "printed" uses dm/dlam as in the closed forms. "rescaled" uses derivatives
    with respect to lam n / N, i.e. multiplies by phi/psi. Direct simulation
    of the resolvent constants M and M_hat agrees with the rescaled version
    whenever phi != psi; the two coincide when phi == psi.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    k = 1.0 if convention == "printed" else inputs.phi / inputs.psi
    return k * fp.m1_prime, k * fp.m2_prime


def lambda_1(inputs: TheoryInputs, fp: FixedPoint | None = None, convention: str = "printed") -> float:
    """Test-error gain in the one-spike regime, -c*_1^4 m2' / (b^2 m1^2)."""
    fp = solve(inputs) if fp is None else fp
    _, dm2 = _scaled_derivatives(inputs, fp, convention)
    return -inputs.teacher.c1 ** 4 * dm2 / (inputs.b_sq * fp.m1 ** 2)


def lambda_2(inputs: TheoryInputs, fp: FixedPoint | None = None, convention: str = "printed") -> float:
    """Test-error gain in the two-spike regime."""
    fp = solve(inputs) if fp is None else fp
    dm1, _ = _scaled_derivatives(inputs, fp, convention)
    t1, t2 = inputs.teacher.c1, inputs.teacher.c2
    extra = -4 * t1 ** 4 * t2 ** 2 * dm1 / (3 * inputs.b_sq ** 2 * fp.m1 ** 2)
    return lambda_1(inputs, fp, convention) + extra


def risk_constants(inputs: TheoryInputs, fp: FixedPoint, convention: str = "printed") -> dict:
    """The three resolvent limits M, M_bar, M_hat that the test-error gains are built from."""
    dm1, dm2 = _scaled_derivatives(inputs, fp, convention)
    m1, m2 = fp.m1, fp.m2
    return {
        "M": 1 - 2 * m2 / m1 - dm2 / m1 ** 2,
        "M_bar": 1 - m2 / m1,
        "M_hat": -dm1 / m1 ** 2 - 1,
    }


def lambda_gaps_from_constants(inputs: TheoryInputs, fp: FixedPoint, convention: str = "printed") -> tuple[float, float]:
    """(Lambda_1, Lambda_2) assembled from M, M_bar and M_hat before simplification."""
    k = risk_constants(inputs, fp, convention)
    t1, t2 = inputs.teacher.c1, inputs.teacher.c2
    first = t1 ** 4 * (1 + k["M"] - 2 * k["M_bar"]) / inputs.b_sq
    second = 4 * t1 ** 4 * t2 ** 2 * (1 + k["M_hat"]) / (3 * inputs.b_sq ** 2)
    return first, first + second


def limiting_quadratic_forms(inputs: TheoryInputs, fp: FixedPoint | None = None, ell: int = 2) -> dict:
    """Deterministic limits of the quadratic forms in R0 = (F0 F0^T + lam n I)^{-1}.

    Keys:
      beta_hat        (X beta_hat)^T R0 (X beta_hat)
      a_features      a^T F0^T R0 F0 a - ||a||^2
      h2_square       H_2(X beta_star)^T R0 (X beta_hat)^{o2}
      square_square   (X beta_hat)^{o2 T} R0 (X beta_hat)^{o2}
      trace_R0, trace_XRX   tr R0 and tr(X^T R0 X)/d
      gram_inverse    ell x ell matrix of (X beta_hat)^{oi T} R0 (X beta_hat)^{oj}
      overlaps        H_p(X beta_star)^T R0 (X beta_hat)^{op}, p = 1..ell
    """
    fp = solve(inputs) if fp is None else fp
    phi, psi, lam = inputs.phi, inputs.psi, inputs.lam
    s = psi / phi
    t1 = inputs.teacher.c1
    return {
        "beta_hat": inputs.b_sq * s * fp.m2,
        "a_features": -lam * s * s * fp.m1 + s - 1,
        "h2_square": 2 * t1 ** 2 * s * fp.m1,
        "square_square": 3 * s * fp.m1 * inputs.b_sq ** 2,
        "trace_R0": s * fp.m1,
        "trace_XRX": s * fp.m2,
        "gram_inverse": spike_gram_inverse(inputs, fp, ell),
        "overlaps": _spike_overlaps(inputs, fp, ell),
    }


# ------------------------------------------------------------------ bundles


@dataclass(frozen=True)
class TheoryPoint:
    inputs: TheoryInputs
    fp: FixedPoint
    alignment: float
    delta: dict
    lambda_gap: dict
    lambda_gap_rescaled: dict = field(default_factory=dict)

    def row(self) -> dict:
        i = self.inputs
        return {"phi": i.phi, "psi": i.psi, "lambda": i.lam, "m1": self.fp.m1, "m2": self.fp.m2,
                "m1'": self.fp.m1_prime, "m2'": self.fp.m2_prime, "alignment": self.alignment,
                "delta_1": self.delta[1], "delta_2": self.delta[2],
                "lambda_1": self.lambda_gap[1], "lambda_2": self.lambda_gap[2]}


THEORY_COLUMNS = ("phi", "psi", "lambda", "m1", "m2", "m1'", "m2'", "alignment",
                  "delta_1", "delta_2", "lambda_1", "lambda_2")


def evaluate(inputs: TheoryInputs, audit: bool = True, max_ell: int = 2) -> TheoryPoint:
    """Solve once and evaluate every closed form at ``inputs``.

    ``delta`` always holds the closed-form ell = 1, 2 values under keys 1 and 2, and
    general-ell values for 3..max_ell when the student supports them.
    """
    fp = solve(inputs)
    if audit:
        derivatives(inputs, fp, audit=True)
    t = inputs.teacher
    delta = {1: float(delta_1(inputs, fp)), 2: float(delta_2(inputs, fp))}
    for ell in range(3, max_ell + 1):
        try:
            delta[ell] = delta_ell_general(inputs, ell, fp)
        except (ValueError, IllConditionedError):
            delta[ell] = math.nan
    return TheoryPoint(
        inputs=inputs, fp=fp,
        alignment=alignment_limit(t.c1, t.c_total, inputs.sigma_eps, inputs.phi),
        delta=delta,
        lambda_gap={1: lambda_1(inputs, fp), 2: lambda_2(inputs, fp)},
        lambda_gap_rescaled={1: lambda_1(inputs, fp, "rescaled"), 2: lambda_2(inputs, fp, "rescaled")},
    )


def staircase(inputs: TheoryInputs, alphas, max_ell: int = MAX_ELL) -> list[dict]:
    """Limiting training-loss gain as a function of the step-size exponent.

    Each alpha maps to its spike count ell and to delta_ell_general(ell). Points
    on a regime boundary, or with ell beyond what the student supports, get NaN.
    """
    from .spectra import BoundaryError, predicted_ell

    fp = solve(inputs)
    cache: dict[int, float] = {}
    rows = []
    for alpha in alphas:
        try:
            ell = predicted_ell(float(alpha))
        except BoundaryError:
            rows.append({"alpha": float(alpha), "ell": None, "delta": math.nan})
            continue
        if ell not in cache:
            try:
                cache[ell] = delta_ell_general(inputs, ell, fp) if ell <= max_ell else math.nan
            except ValueError:
                cache[ell] = math.nan
        rows.append({"alpha": float(alpha), "ell": ell, "delta": cache[ell]})
    return rows
