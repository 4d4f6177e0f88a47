"""Singular-value spectra of feature matrices: spike detection and alignment."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BOUNDARY_TOL = 1e-9
DEFAULT_MARGIN = 0.1
HISTOGRAM_BINS = 60


class BoundaryError(ValueError):
    """alpha sits exactly on a regime boundary, where the spike count is undetermined."""


class NotOrthonormalError(ValueError):
    pass


def singular_values(M, scaled: bool = True) -> np.ndarray:
    """Singular values in decreasing order, divided by sqrt(rows) when ``scaled``."""
    M = np.asarray(M, dtype=float)
    s = np.linalg.svd(M, compute_uv=False)
    return s / math.sqrt(M.shape[0]) if scaled else s


def predicted_ell(alpha: float) -> int:
    """Number of spikes ell with (ell - 1)/(2 ell) < alpha < ell/(2 ell + 2)."""
    if not 0 <= alpha < 0.5:
        raise ValueError("alpha must lie in [0, 0.5)")
    # invert alpha < ell / (2 ell + 2), i.e. ell > 2 alpha / (1 - 2 alpha)
    ell = math.floor(2 * alpha / (1 - 2 * alpha)) + 1
    for edge in (ell / (2 * ell + 2), (ell - 1) / (2 * ell)):
        if abs(alpha - edge) < BOUNDARY_TOL:
            raise BoundaryError(f"alpha={alpha} lies on the regime boundary {edge}")
    if not (ell - 1) / (2 * ell) < alpha < ell / (2 * ell + 2):
        raise BoundaryError(f"alpha={alpha} is numerically on a regime boundary")
    return ell


def bulk_edge(F0) -> float:
    """Top scaled singular value of the untrained feature matrix."""
    return float(singular_values(F0)[0])


def detect_spikes(svals, edge: float, margin: float = DEFAULT_MARGIN) -> tuple[int, np.ndarray]:
    """Singular values strictly above (1 + margin) * edge, and how many there are."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    svals = np.asarray(svals, dtype=float)
    values = svals[svals > (1 + margin) * edge]
    return int(values.size), values


def _check_orthonormal(U, name, tol=1e-8):
    gram = U.T @ U
    if not np.allclose(gram, np.eye(U.shape[1]), atol=tol):
        raise NotOrthonormalError(f"{name} does not have orthonormal columns")


def principal_angle_distance(U1, U2) -> float:
    """sqrt(2 - 2 s_min(U1^T U2)) for orthonormal bases of equal dimension."""
    U1 = np.atleast_2d(np.asarray(U1, dtype=float))
    U2 = np.atleast_2d(np.asarray(U2, dtype=float))
    if U1.shape[1] == 0 or U1.shape != U2.shape:
        raise ValueError("bases must be non-empty with equal shapes")
    _check_orthonormal(U1, "U1")
    _check_orthonormal(U2, "U2")
    s = np.linalg.svd(U1.T @ U2, compute_uv=False)
    return math.sqrt(max(2.0 - 2.0 * min(float(s.min()), 1.0), 0.0))


def orthonormal_basis(vectors) -> np.ndarray:
    """Orthonormal basis of the column span, via thin QR."""
    Q, _ = np.linalg.qr(np.asarray(vectors, dtype=float))
    return Q


@dataclass(frozen=True)
class SpikeAlignment:
    cosines: tuple
    distance: float


def alignment_from_vectors(U, targets) -> SpikeAlignment:
    """Compare ordered singular vectors (columns of U) with target columns.

    Cosines are |<u_j, t_j>| / ||t_j|| per index and the distance is between
    the two spans.
    """
    U = np.asarray(U, dtype=float)
    T = np.asarray(targets, dtype=float)
    if T.ndim == 1:
        T = T[:, None]
    if U.shape != T.shape:
        raise ValueError("need one target per singular vector")
    cosines = tuple(float(abs(U[:, j] @ T[:, j]) / np.linalg.norm(T[:, j])) for j in range(U.shape[1]))
    return SpikeAlignment(cosines=cosines, distance=principal_angle_distance(U, orthonormal_basis(T)))


def spike_alignment(F, targets, k: int | None = None) -> SpikeAlignment:
    """Top-k left singular vectors of F against target directions.

    ``targets`` is an (n, m) array whose columns are expected spike directions,
    e.g. powers of X beta_hat.
    """
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    k = targets.shape[1] if k is None else k
    U, _, _ = np.linalg.svd(np.asarray(F, dtype=float), full_matrices=False)
    return alignment_from_vectors(U[:, :k], targets[:, :k])


def operator_norm(M, tol: float = 1e-8, maxiter: int = 1000, rng=None) -> float:
    """Largest singular value by power iteration on M^T M."""
    M = np.asarray(M, dtype=float)
    rng = np.random.default_rng(0) if rng is None else rng
    v = rng.standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    prev = 0.0
    for _ in range(maxiter):
        w = M.T @ (M @ v)
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v = w / norm
        est = math.sqrt(norm)
        if abs(est - prev) <= tol * est:
            return est
        prev = est
    return prev


@dataclass(frozen=True)
class SpectrumReport:
    alpha: float
    svals: np.ndarray
    bulk_edge: float
    spike_count: int
    predicted_ell: int | None
    alignment: SpikeAlignment | None


def spectrum_report(F, F0, alpha: float, targets=None, margin: float = DEFAULT_MARGIN) -> SpectrumReport:
    svals = singular_values(F)
    edge = bulk_edge(F0)
    count, _ = detect_spikes(svals, edge, margin)
    try:
        ell = predicted_ell(alpha)
    except BoundaryError:
        ell = None
    alignment = None
    if targets is not None and count > 0:
        targets = np.asarray(targets, dtype=float)
        targets = targets[:, None] if targets.ndim == 1 else targets
        alignment = spike_alignment(F, targets, k=min(count, targets.shape[1]))
    return SpectrumReport(alpha=alpha, svals=svals, bulk_edge=edge, spike_count=count, predicted_ell=ell,
                          alignment=alignment)


def histogram(svals, bins: int = HISTOGRAM_BINS) -> tuple[np.ndarray, np.ndarray]:
    counts, edges = np.histogram(np.asarray(svals), bins=bins)
    return edges, counts
