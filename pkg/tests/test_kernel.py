"""Kernel evaluation, scaling, two-point form, gradient, and Lp norms."""

from fractions import Fraction

import numpy as np
import pytest

from kolmolab.errors import ExponentOutOfRange, NonPositiveTime
from kolmolab.kernel import (
    QuadratureSpec,
    eval_K,
    eval_K_two_point,
    grad_K,
    kernel_context,
    lp_norm_closed_form,
    lp_norm_quadrature,
    p_gradient_cutoff,
    p_kernel_cutoff,
    q_dual_cutoff,
)
from kolmolab.lie_group import covariance, dilation, exp_neg_tB


def test_cutoff_exponents_kinetic(kinetic):
    assert p_kernel_cutoff(kinetic) == Fraction(3, 2)
    assert p_gradient_cutoff(kinetic) == Fraction(6, 5)
    assert q_dual_cutoff(kinetic) == Fraction(3, 1)


def test_cutoff_exponents_chain(chain3):
    q = chain3.Q
    assert p_kernel_cutoff(chain3) == Fraction(q + 2, q)
    assert p_gradient_cutoff(chain3) == Fraction(q + 2, q + 1)
    assert q_dual_cutoff(chain3) == Fraction(q + 2, 2)


def test_cutoff_exponents_parabolic(parabolic2):
    assert p_kernel_cutoff(parabolic2) == Fraction(2, 1)
    assert q_dual_cutoff(parabolic2) == Fraction(2, 1)


def test_kernel_vanishes_at_nonpositive_time(kinetic_ctx):
    assert eval_K(kinetic_ctx, np.array([0.3, 0.3]), 0.0) == 0.0
    assert eval_K(kinetic_ctx, np.array([0.3, 0.3]), -1.0) == 0.0


def test_kernel_positive_and_finite(kinetic_ctx):
    v = eval_K(kinetic_ctx, np.array([0.2, -0.4]), 0.7)
    assert 0 < v < np.inf


def test_normalization_by_quadrature(kinetic, kinetic_ctx):
    t = 0.5
    Sig = 2.0 * covariance(kinetic, t)
    stds = np.sqrt(np.diag(Sig))
    zs, ws = np.polynomial.legendre.leggauss(120)
    axes = [(10.0 * s_) * zs for s_ in stds]
    wts = [(10.0 * s_) * ws for s_ in stds]
    X1, X2 = np.meshgrid(axes[0], axes[1], indexing="ij")
    pts = np.stack([X1.ravel(), X2.ravel()], axis=-1)
    val = float(np.sum(eval_K(kinetic_ctx, pts, t) * np.outer(wts[0], wts[1]).ravel()))
    assert val == pytest.approx(1.0, abs=1e-9)


def test_gaussian_form_matches_covariance(kinetic, kinetic_ctx):
    # K(x, t) equals the centered Gaussian with covariance 2 C(t).
    t = 0.9
    Sig = 2.0 * covariance(kinetic, t)
    Sinv = np.linalg.inv(Sig)
    norm = 1.0 / np.sqrt((2 * np.pi) ** kinetic.N * np.linalg.det(Sig))
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.uniform(-2, 2, kinetic.N)
        expected = norm * np.exp(-0.5 * x @ Sinv @ x)
        assert eval_K(kinetic_ctx, x, t) == pytest.approx(expected, rel=1e-12)


def test_anisotropic_scaling(kinetic, kinetic_ctx):
    rng = np.random.default_rng(31)
    for _ in range(200):
        x = rng.uniform(-3, 3, kinetic.N)
        t = float(rng.uniform(0.05, 5.0))
        r = float(rng.uniform(0.2, 5.0))
        lhs = eval_K(kinetic_ctx, dilation(kinetic, r) @ x, r * r * t)
        rhs = r ** (-kinetic.Q) * eval_K(kinetic_ctx, x, t)
        if rhs > 0:
            assert lhs == pytest.approx(rhs, rel=1e-12)


def test_two_point_reproduction_property(kinetic, kinetic_ctx):
    # Quadrature of K((x,t),(w,s)) K((w,s),(0,0)) over w reproduces K((x,t),(0,0)).
    t = s = 0.5
    Sig_s = 2.0 * covariance(kinetic, s)
    stds = np.sqrt(np.diag(Sig_s))
    zs, ws = np.polynomial.legendre.leggauss(140)
    rng = np.random.default_rng(55)
    L1 = np.linalg.cholesky(2.0 * covariance(kinetic, 1.0))
    for _ in range(5):
        x = 0.9 * (L1 @ rng.standard_normal(kinetic.N))
        xb = exp_neg_tB(kinetic, -t) @ x
        lo = np.minimum(0.0, xb) - 9 * stds
        hi = np.maximum(0.0, xb) + 9 * stds
        axes = [lo[i] + (hi[i] - lo[i]) * (zs + 1) / 2 for i in range(kinetic.N)]
        wts = [(hi[i] - lo[i]) / 2 * ws for i in range(kinetic.N)]
        W1, W2 = np.meshgrid(axes[0], axes[1], indexing="ij")
        wpts = np.stack([W1.ravel(), W2.ravel()], axis=-1)
        k2 = eval_K(kinetic_ctx, wpts, s)
        k1 = eval_K(kinetic_ctx, x[None, :] - wpts @ exp_neg_tB(kinetic, t).T, t)
        integral = float(np.sum(k1 * k2 * np.outer(wts[0], wts[1]).ravel()))
        direct = eval_K_two_point(kinetic_ctx, (x, t + s), (np.zeros(kinetic.N), 0.0))
        assert integral == pytest.approx(direct, abs=1e-3 * max(direct, 1e-3))


def test_two_point_zero_for_backward_times(kinetic_ctx):
    assert eval_K_two_point(kinetic_ctx, (np.zeros(2), 0.3), (np.zeros(2), 0.7)) == 0.0


def test_gradient_closed_form_and_fd(kinetic, kinetic_ctx):
    rng = np.random.default_rng(66)
    checked = 0
    for _ in range(60):
        x = rng.uniform(-2, 2, kinetic.N)
        t = float(rng.uniform(0.1, 3.0))
        k = eval_K(kinetic_ctx, x, t)
        if k < 1e-12:
            continue
        checked += 1
        g = grad_K(kinetic_ctx, x, t)
        y = x * np.array([t**-0.5, t**-1.5])
        analytic = 0.5 * abs((kinetic_ctx.C1_inv @ y)[0])
        assert abs(g[0]) * np.sqrt(t) / k == pytest.approx(analytic, rel=1e-12, abs=1e-12)
        h = 3e-6 * (1 + abs(x[0]))
        xp, xm = x.copy(), x.copy()
        xp[0] += h
        xm[0] -= h
        fd = (eval_K(kinetic_ctx, xp, t) - eval_K(kinetic_ctx, xm, t)) / (2 * h)
        assert fd == pytest.approx(g[0], rel=1e-6, abs=1e-12)
    assert checked >= 30


def test_gradient_rejects_nonpositive_time(kinetic_ctx):
    with pytest.raises(NonPositiveTime):
        grad_K(kinetic_ctx, np.zeros(2), 0.0)


def test_lp_closed_form_vs_quadrature(kinetic_ctx):
    rep_c = lp_norm_closed_form(kinetic_ctx, 1.2, 1.0)
    rep_q = lp_norm_quadrature(kinetic_ctx, 1.2, 1.0)
    assert rep_c.finite and rep_q.finite
    assert rep_q.value == pytest.approx(rep_c.value, rel=1e-3)


def test_lp_norm_p1_is_total_mass_times_T(kinetic_ctx):
    # At p = 1 the space integral is 1 per slice, so the slab norm is T.
    rep = lp_norm_closed_form(kinetic_ctx, 1.0, 0.7)
    assert rep.value == pytest.approx(0.7, rel=1e-12)


def test_lp_divergence_at_cutoff(kinetic_ctx):
    assert not lp_norm_closed_form(kinetic_ctx, 1.5, 1.0).finite
    assert not lp_norm_closed_form(kinetic_ctx, 2.0, 1.0).finite


def test_truncated_quadrature_grows_toward_cutoff(kinetic_ctx):
    values = [
        lp_norm_quadrature(kinetic_ctx, 1.5, 1.0, QuadratureSpec(t_min=tm)).value
        for tm in (1e-2, 1e-3, 1e-4)
    ]
    assert values[0] < values[1] < values[2]


def test_lp_rejects_p_below_one(kinetic_ctx):
    with pytest.raises(ExponentOutOfRange):
        lp_norm_closed_form(kinetic_ctx, 0.5, 1.0)
