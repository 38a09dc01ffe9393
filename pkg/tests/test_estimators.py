import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rpr.errors import ConfigError, DegenerateInputError
from rpr.estimators import (EstimatorParams, aggregate_blocks, n_blocks, robust_covariance,
                            robust_scalar_mean, stable_filter, stable_mean, top_eigenpair)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


# --- scalar mean -------------------------------------------------------------

def test_scalar_mean_hand_example():
    p = EstimatorParams(epsilon=0.2, delta=0.99)
    assert robust_scalar_mean([1.0, 2.0, 3.0, 100.0], p) == 2.5


def test_scalar_mean_constant_input():
    assert robust_scalar_mean(np.full(50, 3.25), EstimatorParams(epsilon=0.1)) == 3.25


def test_scalar_mean_too_few_values():
    with pytest.raises(DegenerateInputError):
        robust_scalar_mean([1.0, 2.0], EstimatorParams(epsilon=0.2, delta=0.99))
    with pytest.raises(DegenerateInputError):
        robust_scalar_mean([], EstimatorParams())


def test_scalar_mean_of_normals():
    z = np.random.default_rng(0).standard_normal(10**4)
    assert abs(robust_scalar_mean(z, EstimatorParams(epsilon=0.05))) <= 0.05


def test_eps_prime_over_cap_raises():
    with pytest.raises(ConfigError):
        EstimatorParams(epsilon=0.3).eps_prime(1000)
    with pytest.raises(ConfigError):
        robust_scalar_mean(np.arange(5.0), EstimatorParams(delta=0.01))  # log(100)/5 > 0.25


@settings(max_examples=60, deadline=None)
@given(v=arrays(float, st.integers(10, 60), elements=finite), shift=finite, seed=st.integers(0, 99))
def test_scalar_mean_permutation_and_shift(v, shift, seed):
    p = EstimatorParams(epsilon=0.05, delta=0.5)
    base = robust_scalar_mean(v, p)
    perm = np.random.default_rng(seed).permutation(v)
    assert robust_scalar_mean(perm, p) == pytest.approx(base, abs=1e-9)
    assert robust_scalar_mean(v + shift, p) == pytest.approx(base + shift, abs=1e-9)
    assert v.min() - 1e-9 <= base <= v.max() + 1e-9


# --- filtering mean ----------------------------------------------------------

def test_stable_mean_identical_points():
    P = np.tile([1.5, -2.0, 0.25], (40, 1))
    mu, rep = stable_mean(P, EstimatorParams(epsilon=0.1))
    assert np.array_equal(mu, P[0]) and rep.removed_count == 0


def test_stable_mean_hand_example():
    P = np.zeros((10, 2))
    P[-1] = [100.0, 0.0]
    mu, rep = stable_mean(P, EstimatorParams(epsilon=0.1, delta=0.5))
    assert np.array_equal(mu, [0.0, 0.0])
    assert rep.removed_count == 1 and not rep.budget_exhausted


def test_stable_mean_clean_gaussian():
    P = np.random.default_rng(1).standard_normal((10**4, 10))
    mu, _ = stable_mean(P, EstimatorParams())
    assert np.linalg.norm(mu) <= 0.095


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), m=st.integers(20, 200), n=st.integers(1, 5))
def test_stable_mean_in_hull_of_retained(seed, m, n):
    rng = np.random.default_rng(seed)
    P = rng.standard_t(3, size=(m, n))
    P[: m // 10] += 50.0
    keep, mu, rep = stable_filter(P, EstimatorParams(epsilon=0.1, delta=0.5))
    R = P[keep]
    assert np.allclose(mu, R.mean(axis=0))
    assert rep.removed_count == m - keep.sum()
    # a point outside the hull would be separated by some direction
    for u in np.vstack([np.eye(n), rng.standard_normal((20, n))]):
        proj = R @ u
        assert proj.min() - 1e-9 <= mu @ u <= proj.max() + 1e-9


def test_stable_mean_equivariance():
    rng = np.random.default_rng(2)
    P = rng.standard_normal((500, 4))
    P[:25] = 30.0
    p = EstimatorParams(epsilon=0.05)
    mu, _ = stable_mean(P, p)
    # power-of-two scaling is exact in floating point
    mu4, _ = stable_mean(4.0 * P, p)
    assert np.array_equal(mu4, 4.0 * mu)
    Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    muq, _ = stable_mean(P @ Q.T, p)
    assert np.allclose(muq, Q @ mu, atol=1e-10)


def test_stable_mean_breakdown():
    rng = np.random.default_rng(3)
    P = rng.standard_normal((10**4, 10))
    clean, _ = stable_mean(P, EstimatorParams())
    P[:1000] = 1e6 * np.eye(10)[0]
    mu, rep = stable_mean(P, EstimatorParams(epsilon=0.1))
    assert np.linalg.norm(mu - clean) <= 1.0
    assert rep.removed_count >= 1000


def test_stable_mean_budget_respected():
    rng = np.random.default_rng(4)
    P = rng.standard_cauchy((2000, 3))
    p = EstimatorParams(epsilon=0.01)
    _, rep = stable_mean(P, p)
    assert rep.removed_count <= math.floor(4 * p.eps_prime(2000) * 2000 + 1e-9)


# --- covariance --------------------------------------------------------------

@pytest.mark.parametrize("method", ["winsorized", "geometric_median", "medoid"])
def test_covariance_identical_points(method):
    p = np.array([1.0, -2.0, 0.5])
    C = robust_covariance(np.tile(p, (200, 1)), EstimatorParams(cov_method=method))
    assert np.array_equal(C, np.outer(p, p))


@pytest.mark.parametrize("method", ["winsorized", "geometric_median"])
def test_covariance_of_standard_normals(method):
    P = np.random.default_rng(5).standard_normal((10**4, 5))
    C = robust_covariance(P, EstimatorParams(cov_method=method))
    assert np.linalg.norm(C - np.eye(5), 2) <= 0.25


def test_covariance_ignores_planted_direction():
    rng = np.random.default_rng(6)
    P = rng.standard_normal((5000, 6)) * np.array([3.0, 1, 1, 1, 1, 1])
    P[:250] = 40.0 * np.eye(6)[3]
    C = robust_covariance(P, EstimatorParams(epsilon=0.05))
    assert abs(top_eigenpair(C).vector[0]) > 0.99


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 6),
       method=st.sampled_from(["winsorized", "geometric_median", "medoid"]))
def test_covariance_is_psd(seed, n, method):
    P = np.random.default_rng(seed).standard_t(2.5, size=(300, n))
    C = robust_covariance(P, EstimatorParams(cov_method=method, delta=0.1))
    assert np.array_equal(C, C.T)
    assert np.linalg.eigvalsh(C)[0] >= -1e-10 * max(1.0, np.abs(C).max())


@pytest.mark.parametrize("method", ["geometric_median", "medoid"])
def test_aggregate_blocks_majority(method):
    blocks = np.stack([np.eye(3)] * 7 + [100 * np.eye(3)] * 3)
    assert np.allclose(aggregate_blocks(blocks, method), np.eye(3), atol=1e-8)


def test_n_blocks():
    p = EstimatorParams(epsilon=0.01, delta=0.01)
    assert n_blocks(1000, p) == math.ceil(8 * (0.01 * 1000 + 2 * math.log(100)))
    assert n_blocks(10**6, EstimatorParams(delta=0.5)) == 12
    assert n_blocks(10**6, EstimatorParams(delta=0.9)) == 10


# --- top eigenpair -----------------------------------------------------------

def test_top_eigenpair_examples():
    lam, v, ok = top_eigenpair(np.diag([1.0, 5.0, 2.0]))
    assert ok and lam == pytest.approx(5.0) and np.allclose(v, [0, 1, 0], atol=1e-10)
    lam, v, _ = top_eigenpair(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert lam == pytest.approx(3.0) and np.allclose(v, [1 / math.sqrt(2)] * 2, atol=1e-8)
    # algebraically largest, not largest in magnitude
    lam, v, _ = top_eigenpair(np.diag([-10.0, 1.0]))
    assert lam == pytest.approx(1.0) and np.allclose(v, [0, 1], atol=1e-8)


def test_top_eigenpair_sign_convention():
    M = np.outer([-1.0, 2.0, 0.0], [-1.0, 2.0, 0.0])
    _, v, _ = top_eigenpair(M)
    assert v[0] > 0


def test_top_eigenpair_residual():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((8, 8))
    M = A @ A.T + np.diag(np.arange(8.0)) * 3
    lam, v, ok = top_eigenpair(M)
    assert ok
    assert np.linalg.norm(M @ v - lam * v) <= 1e-8 * np.linalg.norm(M)
    assert lam == pytest.approx(np.linalg.eigvalsh(M)[-1], rel=1e-10)


def test_top_eigenpair_rejects_bad_input():
    with pytest.raises(ValueError):
        top_eigenpair(np.array([[1.0, np.nan], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        top_eigenpair(np.ones((2, 3)))
