import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import gaussian_quadrature as gq
from rpr.model import PairedSample, Sample, Signal, draw_clean, NoiseSpec, pair_transform
from rpr.risk import (MomentKind, ModelVariant, batch_grads, dist, grad_cov_bounds,
                      grad_cov_h_form, moment_oracle, pop_grad, pop_hessian, pop_risk,
                      sample_grad)

ZM, PR = ModelVariant.ZERO_MEAN, ModelVariant.PAIRED
vec = st.lists(st.floats(-3, 3), min_size=3, max_size=3).map(np.array)


def _pair(seed, n=3):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(n), rng.standard_normal(n)


# ---- dist --------------------------------------------------------------

def test_dist_examples():
    xs = np.array([0.3, -2.0])
    assert dist(xs, xs) == 0 and dist(-xs, xs) == 0
    assert dist(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(math.sqrt(2), abs=1e-15)
    with pytest.raises(ValueError):
        dist(np.zeros(2), np.zeros(3))


# ---- risk, gradient, Hessian -------------------------------------------

def test_risk_examples():
    xs = np.array([1.0, -0.5])
    assert pop_risk(xs, xs) == 0
    assert pop_risk(np.zeros(1), np.array([1.0])) == 0.75
    assert pop_risk(xs, xs, variant=PR) == 0


@pytest.mark.parametrize("variant", [ZM, PR])
def test_risk_matches_quadrature(variant):
    # independent route: integrate the squared residual exactly; gaussian noise
    # contributes its variance additively
    x, xs = _pair(1)
    sigma = 0.7
    n = x.size
    if variant is ZM:
        r = gq.expect(lambda a: ((a @ x) ** 2 - (a @ xs) ** 2) ** 2, n, 5) / 4 + sigma**2 / 4
    else:
        def f(g):
            b, c = g[:, :n], g[:, n:]
            return ((b @ x) * (c @ x) - (b @ xs) * (c @ xs)) ** 2
        r = gq.expect(f, 2 * n, 4) / 2 + sigma**2 / 4
    assert pop_risk(x, xs, sigma, variant) == pytest.approx(r, rel=1e-12)


def test_gradient_examples():
    assert pop_grad(np.array([2.0]), np.array([1.0]))[0] == 18.0
    xs = np.array([0.2, 1.0, -0.7])
    assert np.array_equal(pop_grad(xs, xs), np.zeros(3))
    assert np.array_equal(pop_grad(xs, xs, PR), np.zeros(3))
    assert np.array_equal(pop_grad(-xs, xs), np.zeros(3))


def test_hessian_examples():
    e1 = np.array([1.0, 0.0])
    assert np.array_equal(pop_hessian(e1, e1), [[6, 0], [0, 2]])
    assert np.array_equal(pop_hessian(e1, e1, PR), [[4, 0], [0, 2]])


def _fd_grad(f, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


@pytest.mark.parametrize("variant", [ZM, PR])
def test_derivatives_match_finite_differences(variant):
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(1, 8))
        x, xs = rng.standard_normal(n), rng.standard_normal(n)
        g = pop_grad(x, xs, variant)
        assert _rel(_fd_grad(lambda z: pop_risk(z, xs, 0.3, variant), x), g) <= 1e-6
        H = pop_hessian(x, xs, variant)
        H_fd = np.column_stack([_fd_grad(lambda z: pop_grad(z, xs, variant)[i], x) for i in range(n)])
        assert _rel(H_fd, H) <= 1e-6


@settings(max_examples=100, deadline=None)
@given(x=vec, xs=vec)
def test_evenness(x, xs):
    if np.linalg.norm(xs) == 0:
        return
    assert pop_risk(x, xs) == pop_risk(-x, xs)
    assert np.array_equal(pop_grad(-x, xs), -pop_grad(x, xs))
    assert np.array_equal(pop_hessian(-x, xs), pop_hessian(x, xs))


def _ball_point(rng, xs, radius):
    h = rng.standard_normal(xs.size)
    return xs + h * radius * rng.uniform() ** (1 / xs.size) / np.linalg.norm(h)


def test_local_geometry_zero_mean():
    rng = np.random.default_rng(3)
    xs = Signal.random(20, 1.7, rng).x_star
    S = xs @ xs
    for _ in range(200):
        w = np.linalg.eigvalsh(pop_hessian(_ball_point(rng, xs, np.sqrt(S) / 9), xs))
        assert w[0] >= S and w[-1] <= 73 / 9 * S


def test_local_geometry_paired():
    rng = np.random.default_rng(4)
    xs = Signal.random(20, 0.8, rng).x_star
    S = xs @ xs
    top = []
    for _ in range(200):
        w = np.linalg.eigvalsh(pop_hessian(_ball_point(rng, xs, np.sqrt(S) / 6), xs, PR))
        assert w[0] >= S
        top.append(w[-1] / S)
    print(f"paired largest Hessian eigenvalue / ||x*||^2 over the ball: max {max(top):.4f}")


# ---- per-sample gradients ------------------------------------------------

def test_sample_grad_examples():
    a = np.array([1.0, 0.0])
    assert np.array_equal(sample_grad(np.array([2.0, 0.0]), Sample(a, 4.0)), [0.0, 0.0])
    assert np.array_equal(sample_grad(np.array([1.0, 0.0]), Sample(a, 0.0)), [1.0, 0.0])
    d = PairedSample(np.array([1.0, 2.0]), np.array([0.5, -1.0]), 0.25)
    x = np.array([1.0, 1.0])
    # b^T x = 3, c^T x = -0.5, residual -1.75
    assert np.allclose(sample_grad(x, d), -1.75 * (d.b * -0.5 + d.c * 3.0))


def test_batch_grads_match_per_sample():
    rng = np.random.default_rng(5)
    sig = Signal.random(4, 1.0, rng)
    raw = draw_clean(20, sig, NoiseSpec("gaussian", 1.0, 0.5), rng)
    x = rng.standard_normal(4)
    G = batch_grads(x, raw)
    assert np.allclose(G, [sample_grad(x, raw[j]) for j in range(raw.m)], rtol=1e-12, atol=0)
    pb = pair_transform(raw)
    G = batch_grads(x, pb)
    assert np.allclose(G, [sample_grad(x, pb[j], PR) for j in range(pb.m)], rtol=1e-12, atol=0)
    with pytest.raises(TypeError):
        batch_grads(x, object())


@pytest.mark.parametrize("variant", [ZM, PR])
def test_sample_gradient_is_unbiased(variant):
    m, n = 10**6, 3
    rng = np.random.default_rng(6)
    sig = Signal.random(n, 1.0, rng)
    x = sig.x_star + 0.3 * rng.standard_normal(n)
    raw = draw_clean(2 * m if variant is PR else m, sig, NoiseSpec("gaussian", 0.0, 0.5), rng)
    G = batch_grads(x, pair_transform(raw) if variant is PR else raw)
    se = G.std(axis=0) / math.sqrt(m)
    assert np.all(np.abs(G.mean(axis=0) - pop_grad(x, sig, variant)) <= 4 * se)


# ---- moment formulas -----------------------------------------------------

def test_moment_examples():
    e1 = np.array([1.0, 0.0])
    assert np.array_equal(moment_oracle("E_y_aat", signal=e1), [[3, 0], [0, 1]])
    assert np.array_equal(moment_oracle("cov_ya", signal=e1, sigma=1.0), [[16, 0], [0, 4]])
    xs = np.array([0.5, 2.0, -1.0])
    assert moment_oracle("E_y", signal=xs) == pytest.approx(5.25)
    assert moment_oracle("Var_y", signal=xs, sigma=2.0) == pytest.approx(2 * 5.25**2 + 4)
    assert np.allclose(moment_oracle("E_grad", x=xs, signal=xs), 0)
    with pytest.raises(ValueError):
        moment_oracle("grad_cov", signal=xs)
    with pytest.raises(ValueError):
        moment_oracle("fifth_moment", signal=xs)


def _quadrature_moment(kind, x, xs, sigma):
    """Exact value of each moment by integrating over (covariates, standard noise)."""
    n = xs.size
    k = MomentKind(kind)
    if k in (MomentKind.E_UPSILON_BCT, MomentKind.COV_UPSILON_CI_B, MomentKind.GRAD_COV_PAIRED):
        def split(g):
            b, c, w = g[:, :n], g[:, n:2 * n], g[:, 2 * n]
            u = (b @ xs) * (c @ xs) + sigma / math.sqrt(2) * w
            return b, c, u
        dim, nodes = 2 * n + 1, 5
        if k is MomentKind.E_UPSILON_BCT:
            def f(g):
                b, c, u = split(g)
                return u[:, None, None] * b[:, :, None] * c[:, None, :]
            return gq.expect(f, dim, nodes)
        if k is MomentKind.COV_UPSILON_CI_B:
            mu = np.outer(xs, xs)
            out = []
            for i in range(n):
                def f(g, i=i):
                    b, c, u = split(g)
                    v = (u * c[:, i])[:, None] * b - mu[:, i]
                    return v[:, :, None] * v[:, None, :]
                out.append(gq.expect(f, dim, nodes))
            return np.stack(out)
        g_mean = pop_grad(x, xs, PR)

        def f(g):
            b, c, u = split(g)
            bx, cx = b @ x, c @ x
            v = (bx * cx - u)[:, None] * (b * cx[:, None] + c * bx[:, None]) - g_mean
            return v[:, :, None] * v[:, None, :]
        return gq.expect(f, dim, nodes)

    def split(g):
        a, w = g[:, :n], g[:, n]
        return a, (a @ xs) ** 2 + sigma * w

    def outer(v):
        return v[:, :, None] * v[:, None, :]

    dim, nodes = n + 1, 8
    if k is MomentKind.E_Y:
        return gq.expect(lambda g: split(g)[1], dim, nodes)
    if k is MomentKind.VAR_Y:
        return gq.expect(lambda g: (split(g)[1] - xs @ xs) ** 2, dim, nodes)
    if k is MomentKind.E_GRAD:
        return gq.expect(lambda g: (((split(g)[0] @ x) ** 2 - split(g)[1]) * (split(g)[0] @ x))[:, None]
                         * split(g)[0], dim, nodes)
    if k is MomentKind.E_Y_AAT:
        return gq.expect(lambda g: split(g)[1][:, None, None] * outer(split(g)[0]), dim, nodes)
    if k is MomentKind.E_X2_XSTAR4_AAT:
        return gq.expect(lambda g: ((g[:, :n] @ x) ** 2 * (g[:, :n] @ xs) ** 4)[:, None, None]
                         * outer(g[:, :n]), dim, nodes)
    if k is MomentKind.COV_YA:
        return gq.expect(lambda g: outer(split(g)[1][:, None] * split(g)[0]), dim, nodes)
    g_mean = pop_grad(x, xs)

    def f(g):
        a, y = split(g)
        ax = a @ x
        return outer(((ax**2 - y) * ax)[:, None] * a - g_mean)
    return gq.expect(f, dim, nodes)


@pytest.mark.parametrize("kind", list(MomentKind))
def test_moments_match_exact_quadrature(kind):
    rng = np.random.default_rng(7)
    xs = rng.standard_normal(3)
    x = rng.standard_normal(3)
    sigma = 0.8
    exact = _quadrature_moment(kind, x, xs, sigma)
    got = np.asarray(moment_oracle(kind, x=x, signal=xs, sigma=sigma))
    assert np.allclose(got, exact, rtol=1e-9, atol=1e-9 * np.max(np.abs(exact)))


def test_gradient_covariance_two_routes_agree():
    rng = np.random.default_rng(8)
    for _ in range(20):
        x, xs = rng.standard_normal(4), rng.standard_normal(4)
        a = moment_oracle(MomentKind.GRAD_COV, x=x, signal=xs, sigma=0.6)
        b = grad_cov_h_form(x, xs, 0.6)
        assert np.allclose(a, b, rtol=1e-10, atol=1e-10 * np.abs(a).max())


@pytest.mark.parametrize("variant,radius", [(ZM, 9), (PR, 6)])
def test_gradient_covariance_bounds_inside_ball(variant, radius):
    rng = np.random.default_rng(9)
    kind = MomentKind.GRAD_COV if variant is ZM else MomentKind.GRAD_COV_PAIRED
    for _ in range(200):
        n = int(rng.integers(1, 10))
        xs = rng.standard_normal(n)
        x = _ball_point(rng, xs, np.linalg.norm(xs) / radius)
        sigma = float(rng.uniform(0, 2))
        C = moment_oracle(kind, x=x, signal=xs, sigma=sigma)
        tb, ob = grad_cov_bounds(x, xs, sigma, variant)
        assert np.trace(C) <= tb and np.linalg.eigvalsh(C)[-1] <= ob


def test_partner_coordinate_in_paired_covariance():
    # the slices really depend on the i-th coordinate of x*, not the first
    xs = np.array([0.2, 1.5, -0.4])
    C = moment_oracle(MomentKind.COV_UPSILON_CI_B, signal=xs, sigma=0.0)
    assert not np.allclose(C[0], C[1])
    exact = _quadrature_moment(MomentKind.COV_UPSILON_CI_B, xs, xs, 0.0)
    assert np.allclose(C, exact, rtol=1e-9, atol=1e-12)
