"""Sigma-geometry of the normalized weight manifold.

Omega = {b : b^T Sigma b = 1}. Points carry their Euclidean coordinates in
R^d; tangent vectors at b satisfy v^T Sigma b = 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ON_OMEGA_TOL = 1e-8
REPROJECT_TOL = 1e-6


class OffManifoldError(ValueError):
    pass


@dataclass(frozen=True)
class ManifoldMetric:
    sigma: np.ndarray
    pinv_tol: float = 1e-10
    sigma_sq: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        s = np.array(self.sigma, dtype=float, copy=True)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError(f"sigma must be square, got shape {s.shape}")
        if np.max(np.abs(s - s.T)) > 1e-12 * max(1.0, np.max(np.abs(s))):
            raise ValueError("sigma is not symmetric")
        eig = np.linalg.eigvalsh(s)
        if eig[0] <= 0:
            raise ValueError(f"sigma is not positive definite (smallest eigenvalue {eig[0]:.3g})")
        s.setflags(write=False)
        sq = s @ s
        sq.setflags(write=False)
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "sigma_sq", sq)

    @property
    def d(self) -> int:
        return self.sigma.shape[0]

    @property
    def lambda_min(self) -> float:
        return float(np.linalg.eigvalsh(self.sigma)[0])


@dataclass(frozen=True)
class TangentVector:
    base: np.ndarray
    vec: np.ndarray


def sigma_norm(b: np.ndarray, metric: ManifoldMetric) -> float:
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        raise ValueError("sigma-norm of the zero vector: BN is undefined at b = 0")
    return float(np.sqrt(b @ metric.sigma @ b))


def sigma_norms(b: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Row-wise sigma-norms of an (m, d) array."""
    return np.sqrt(np.einsum("ki,ij,kj->k", b, sigma, b))


def normalize_to_omega(b: np.ndarray, metric: ManifoldMetric) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    return b / sigma_norm(b, metric)


def check_on_omega(b_bar: np.ndarray, metric: ManifoldMetric, tol: float = ON_OMEGA_TOL) -> None:
    s = sigma_norm(b_bar, metric)
    if abs(s - 1.0) > tol:
        raise OffManifoldError(f"point has sigma-norm {s!r}, off Omega by more than {tol:g}")


def tangent_projection(b_bar: np.ndarray, metric: ManifoldMetric) -> np.ndarray:
    """Euclidean-orthogonal projector onto the tangent space at ``b_bar``."""
    b_bar = np.asarray(b_bar, dtype=float)
    check_on_omega(b_bar, metric)
    n = metric.sigma @ b_bar
    return np.eye(metric.d) - np.outer(n, n) / (n @ n)


def _shape_operator(b_bar: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    # (I - b b^T Sigma)(I - Sigma b b^T) = A A^T with A = I - b b^T Sigma
    A = np.eye(len(b_bar)) - np.outer(b_bar, sigma @ b_bar)
    K = A @ A.T
    return 0.5 * (K + K.T)


def pinv_psd(K: np.ndarray, tol: float) -> np.ndarray:
    """Pseudo-inverse of a symmetric PSD matrix by eigendecomposition.

    Eigenvalues below ``tol * lambda_max`` are treated as zero.
    """
    try:
        w, V = np.linalg.eigh(K)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"eigendecomposition failed: {exc}") from exc
    cutoff = tol * max(w[-1], 0.0)
    inv = np.zeros_like(w)
    keep = w > cutoff
    inv[keep] = 1.0 / w[keep]
    return (V * inv) @ V.T


def metric_matrix(b_bar: np.ndarray, metric: ManifoldMetric) -> np.ndarray:
    """The d x d metric block ``G_b = |b|^-2 P_b K_b^+`` at a point of Omega."""
    b_bar = np.asarray(b_bar, dtype=float)
    P = tangent_projection(b_bar, metric)
    K = _shape_operator(b_bar, metric.sigma)
    return P @ pinv_psd(K, metric.pinv_tol) / (b_bar @ b_bar)


def full_metric_matrix(b_bar: np.ndarray, metric: ManifoldMetric) -> np.ndarray:
    """Metric on R x Omega: block-diag(1, G_b)."""
    d = metric.d
    G = np.zeros((d + 1, d + 1))
    G[0, 0] = 1.0
    G[1:, 1:] = metric_matrix(b_bar, metric)
    return G


def manifold_gradient_batch(b_bar: np.ndarray, euclid_grad: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Row-wise ``|b|^2 (I - b b^T Sigma)(I - Sigma b b^T) g`` for (m, d) inputs.

    No on-manifold check; callers validate the base points.
    """
    sb = b_bar @ sigma  # rows are Sigma b (sigma symmetric)
    u = euclid_grad - sb * np.einsum("kj,kj->k", b_bar, euclid_grad)[:, None]
    v = u - b_bar * np.einsum("kj,kj->k", sb, u)[:, None]
    return np.einsum("kj,kj->k", b_bar, b_bar)[:, None] * v


def manifold_gradient(b_bar: np.ndarray, euclid_grad: np.ndarray, metric: ManifoldMetric) -> TangentVector:
    """Riemannian gradient under G for a Euclidean gradient at ``b_bar``.

    The result solves ``G_b v = P_b g`` inside the tangent space.
    """
    b_bar = np.asarray(b_bar, dtype=float)
    g = np.asarray(euclid_grad, dtype=float)
    check_on_omega(b_bar, metric)
    v = manifold_gradient_batch(b_bar[None, :], g[None, :], metric.sigma)[0]
    return TangentVector(base=b_bar, vec=v)


@dataclass(frozen=True)
class RegularPointResult:
    is_regular: bool
    quadratic_form: float
    manifold_gradient_norm: float


def regular_point_check(
    b_bar: np.ndarray, tangent_grad: TangentVector, metric: ManifoldMetric
) -> RegularPointResult:
    """Evaluate ``v^T (I - Sigma b b^T) v`` for a tangent gradient ``v``.

    For tangent ``v`` the form equals ``|v|^2``, so a nonzero standard gradient
    gives a nonzero gradient under G as well.
    """
    b_bar = np.asarray(b_bar, dtype=float)
    if not np.array_equal(np.asarray(tangent_grad.base, dtype=float), b_bar):
        raise ValueError("tangent vector is based at a different point")
    check_on_omega(b_bar, metric)
    v = np.asarray(tangent_grad.vec, dtype=float)
    sb = metric.sigma @ b_bar
    if abs(v @ sb) > 1e-9 * np.linalg.norm(v) * np.linalg.norm(sb):
        raise ValueError("gradient is not tangent at the base point")
    form = float(v @ v - (v @ sb) * (b_bar @ v))
    mg = manifold_gradient(b_bar, v, metric).vec
    mg_norm = float(np.linalg.norm(mg))
    return RegularPointResult(is_regular=bool(np.any(v)) and mg_norm > 0, quadratic_form=form,
                              manifold_gradient_norm=mg_norm)


def project_to_tangent(b_bar: np.ndarray, v: np.ndarray, metric: ManifoldMetric) -> np.ndarray:
    """Euclidean projection of ``v`` onto the tangent space at ``b_bar``."""
    return tangent_projection(b_bar, metric) @ np.asarray(v, dtype=float)
