import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bnflow.geometry import (
    ManifoldMetric,
    OffManifoldError,
    TangentVector,
    full_metric_matrix,
    manifold_gradient,
    metric_matrix,
    normalize_to_omega,
    project_to_tangent,
    regular_point_check,
    sigma_norm,
    tangent_projection,
)
from bnflow.verify import random_spd

I2 = ManifoldMetric(np.eye(2))
D51 = ManifoldMetric(np.diag([5.0, 1.0]))


def point(seed, d=None, max_cond=1e3):
    rng = np.random.default_rng(seed)
    d = d or int(rng.integers(2, 6))
    metric = ManifoldMetric(random_spd(d, rng, max_cond))
    return rng, metric, normalize_to_omega(rng.standard_normal(d), metric)


seeds = st.integers(0, 2**32 - 1)


def test_metric_caches_square():
    s = random_spd(4, np.random.default_rng(0))
    m = ManifoldMetric(s)
    assert np.max(np.abs(m.sigma_sq - s @ s)) <= 1e-14 * np.max(np.abs(s @ s))


@pytest.mark.parametrize("bad", [np.array([[1.0, 0.1], [0.0, 1.0]]), np.diag([1.0, -1.0]), np.ones(3)])
def test_metric_rejects_bad_sigma(bad):
    with pytest.raises(ValueError):
        ManifoldMetric(bad)


def test_sigma_norm_examples():
    assert sigma_norm(np.array([3.0, 4.0]), I2) == 5.0
    assert sigma_norm(np.array([1.0, 1.0]), D51) == pytest.approx(math.sqrt(6), abs=1e-15)
    assert sigma_norm(np.array([0.0, 1.0]), D51) == 1.0
    with pytest.raises(ValueError):
        sigma_norm(np.zeros(2), I2)


def test_normalize_examples():
    assert np.allclose(normalize_to_omega(np.array([3.0, 4.0]), I2), [0.6, 0.8], atol=1e-16)
    assert np.allclose(normalize_to_omega(np.array([1.0, 0.0]), D51), [1 / math.sqrt(5), 0.0], atol=1e-16)
    with pytest.raises(ValueError):
        normalize_to_omega(np.zeros(2), D51)


@given(seeds)
def test_normalize_idempotent(seed):
    _, metric, b = point(seed)
    assert np.max(np.abs(normalize_to_omega(b, metric) - b)) <= 1e-15 * max(1.0, np.max(np.abs(b))) * 4


def test_projection_examples():
    assert np.array_equal(tangent_projection(np.array([1.0, 0.0, 0.0]), ManifoldMetric(np.eye(3))),
                          np.diag([0.0, 1.0, 1.0]))
    P = tangent_projection(np.array([1 / math.sqrt(5), 0.0]), D51)
    assert np.allclose(P, [[0, 0], [0, 1]], atol=1e-15)


def test_projection_rejects_off_omega():
    with pytest.raises(OffManifoldError):
        tangent_projection(np.array([1.0, 0.0]), D51)


@given(seeds)
def test_projection_fixes_tangent_vectors(seed):
    rng, metric, b = point(seed)
    n = metric.sigma @ b
    alpha = rng.standard_normal(metric.d)
    alpha -= n * (alpha @ n) / (n @ n)  # Gram-Schmidt against Sigma b
    P = tangent_projection(b, metric)
    assert np.allclose(P @ alpha, alpha, atol=1e-12 * np.linalg.norm(alpha))


@given(st.floats(0, 2 * math.pi))
def test_sphere_metric_is_projector(theta):
    b = np.array([math.cos(theta), math.sin(theta)])
    assert np.allclose(metric_matrix(b, I2), np.eye(2) - np.outer(b, b), atol=1e-12)


def test_metric_positive_on_e1_at_e2():
    G = metric_matrix(np.array([0.0, 1.0]), D51)
    e1 = np.array([1.0, 0.0])
    assert e1 @ G @ e1 > 0


def test_full_metric_block():
    b = normalize_to_omega(np.array([1.0, 2.0]), D51)
    F = full_metric_matrix(b, D51)
    assert F[0, 0] == 1.0 and np.all(F[0, 1:] == 0) and np.all(F[1:, 0] == 0)
    assert np.array_equal(F[1:, 1:], metric_matrix(b, D51))


@given(seeds)
def test_metric_symmetric_positive_on_tangent_pairs(seed):
    rng, metric, b = point(seed)
    u = project_to_tangent(b, rng.standard_normal(metric.d), metric)
    v = project_to_tangent(b, rng.standard_normal(metric.d), metric)
    G = metric_matrix(b, metric)
    assert abs(u @ G @ v - v @ G @ u) <= 1e-10 * (1 + np.linalg.norm(u) * np.linalg.norm(v))
    assert u @ G @ u > 0


def test_manifold_gradient_kills_normal_direction():
    _, metric, b = point(3, d=4)
    out = manifold_gradient(b, 2.5 * metric.sigma @ b, metric).vec
    assert np.linalg.norm(out) <= 1e-12


@given(seeds)
def test_manifold_gradient_sphere_case(seed):
    rng = np.random.default_rng(seed)
    metric = ManifoldMetric(np.eye(3))
    b = normalize_to_omega(rng.standard_normal(3), metric)
    g = rng.standard_normal(3)
    assert np.allclose(manifold_gradient(b, g, metric).vec, g - b * (b @ g), atol=1e-13)


@given(seeds)
def test_manifold_gradient_matches_pinv_route(seed):
    rng, metric, b = point(seed, d=4)
    g = rng.standard_normal(4)
    G = metric_matrix(b, metric)
    P = tangent_projection(b, metric)
    oracle = np.linalg.pinv(G, rcond=1e-10, hermitian=True) @ P @ g
    got = manifold_gradient(b, g, metric).vec
    assert np.linalg.norm(got - oracle) <= 1e-8 * max(np.linalg.norm(oracle), 1.0)


@given(seeds)
def test_defining_relation_and_tangency(seed):
    rng, metric, b = point(seed)
    g = rng.standard_normal(metric.d)
    gm = manifold_gradient(b, g, metric).vec
    assert np.linalg.norm(metric_matrix(b, metric) @ gm - tangent_projection(b, metric) @ g) <= 1e-8 * np.linalg.norm(g)
    sb = metric.sigma @ b
    assert abs(gm @ sb) <= 1e-10 * np.linalg.norm(gm) * np.linalg.norm(sb)


def test_manifold_gradient_rejects_off_omega():
    with pytest.raises(OffManifoldError):
        manifold_gradient(np.array([2.0, 0.0]), np.ones(2), D51)


def test_regular_point_zero_gradient():
    b = np.array([1.0, 0.0])
    r = regular_point_check(b, TangentVector(b, np.zeros(2)), I2)
    assert not r.is_regular and r.quadratic_form == 0.0


def test_regular_point_sphere_example():
    b = np.array([1.0, 0.0])
    r = regular_point_check(b, TangentVector(b, np.array([0.0, 1.0])), I2)
    assert r.is_regular and r.quadratic_form == 1.0


@given(seeds)
def test_regular_point_form_equals_norm(seed):
    rng, metric, b = point(seed)
    v = project_to_tangent(b, rng.standard_normal(metric.d), metric)
    r = regular_point_check(b, TangentVector(b, v), metric)
    assert r.is_regular
    assert abs(r.quadratic_form / (v @ v) - 1) <= 1e-10


def test_regular_point_rejects_mismatch():
    b = np.array([1.0, 0.0])
    with pytest.raises(ValueError):
        regular_point_check(b, TangentVector(np.array([0.0, 1.0]), np.array([1.0, 0.0])), I2)
    with pytest.raises(ValueError, match="not tangent"):
        regular_point_check(b, TangentVector(b, np.array([1.0, 0.0])), I2)
