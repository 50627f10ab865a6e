"""Monte Carlo samplers: reproducibility, exact law, discretization bias."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kolmolab.errors import BadParameters, NonPositiveTime
from kolmolab.lie_group import covariance, exp_neg_tB
from kolmolab.sde_oracle import (
    SampleBatch,
    covariance_factor,
    density_error,
    euler_maruyama,
    exact_sample,
)

START2 = np.array([0.5, -0.7])


# -- reproducibility -------------------------------------------------------------


def test_exact_sampler_is_bitwise_reproducible(kinetic_ctx):
    a = exact_sample(kinetic_ctx, START2, 0.8, 512, seed=42)
    b = exact_sample(kinetic_ctx, START2, 0.8, 512, seed=42)
    assert np.array_equal(a.points, b.points)
    assert a.method == "exact"


def test_em_sampler_is_bitwise_reproducible(chain3):
    a = euler_maruyama(chain3, np.array([1.0, 0.0, 0.0]), 1.0, 4, 512, seed=7)
    b = euler_maruyama(chain3, np.array([1.0, 0.0, 0.0]), 1.0, 4, 512, seed=7)
    assert np.array_equal(a.points, b.points)


def test_seed_changes_draws(kinetic_ctx):
    a = exact_sample(kinetic_ctx, START2, 0.8, 512, seed=1)
    b = exact_sample(kinetic_ctx, START2, 0.8, 512, seed=2)
    assert not np.array_equal(a.points, b.points)


def test_csv_export_deterministic(tmp_path, kinetic_ctx):
    batch = exact_sample(kinetic_ctx, START2, 0.8, 64, seed=5)
    batch.to_csv(tmp_path / "a.csv")
    batch.to_csv(tmp_path / "b.csv")
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes()
    assert a.decode().splitlines()[0] == "z1,z2"
    assert len(a.decode().splitlines()) == 65


# -- exact law ---------------------------------------------------------------------


def test_exact_sampler_matches_moments(kinetic, kinetic_ctx):
    t = 0.8
    n = 40000
    batch = exact_sample(kinetic_ctx, START2, t, n, seed=12)
    sigma = 2.0 * covariance(kinetic, t)
    mean_theory = exp_neg_tB(kinetic, t) @ START2
    se = np.sqrt(np.diag(sigma) / n)
    assert np.all(np.abs(batch.mean() - mean_theory) < 5 * se)
    # covariance entries fluctuate at the same parametric rate
    assert np.max(np.abs(batch.cov() - sigma)) < 6 * np.max(np.diag(sigma)) / np.sqrt(n)


def test_covariance_factor_squares_to_law(kinetic, chain3):
    for s, t in ((kinetic, 0.37), (chain3, 1.4)):
        L = covariance_factor(s, t)
        np.testing.assert_allclose(L @ L.T, 2.0 * covariance(s, t), rtol=1e-12, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(t=st.floats(0.05, 5.0))
def test_covariance_factor_property(t, chain3):
    L = covariance_factor(chain3, t)
    np.testing.assert_allclose(L @ L.T, 2.0 * covariance(chain3, t), rtol=1e-10, atol=1e-13)


def test_determinant_scaling_identity(kinetic, chain3):
    # det 2C(t) = 2^N t^Q det C(1): the dilation invariance of the covariance
    for s in (kinetic, chain3):
        t = 0.63
        lhs = np.linalg.det(2.0 * covariance(s, t))
        rhs = 2.0**s.N * t**s.Q * np.linalg.det(covariance(s, 1.0))
        assert lhs == pytest.approx(rhs, rel=1e-10)


def test_density_report_accepts_true_law(kinetic_ctx):
    batch = exact_sample(kinetic_ctx, START2, 0.8, 20000, seed=99)
    rep = density_error(batch, kinetic_ctx)
    assert rep.ks_passed
    assert rep.l1_distance < 0.15
    assert rep.ks_critical_95 == pytest.approx(1.358 / np.sqrt(20000))


def test_density_report_rejects_wrong_scale(kinetic_ctx):
    batch = exact_sample(kinetic_ctx, START2, 0.8, 20000, seed=99)
    wrong = SampleBatch(points=1.3 * batch.points, t=batch.t, start=batch.start,
                        seed=batch.seed, method="exact")
    rep = density_error(wrong, kinetic_ctx)
    assert not rep.ks_passed


def test_histogram_field_mass(kinetic_ctx):
    batch = exact_sample(kinetic_ctx, np.zeros(2), 0.5, 5000, seed=3)
    sigma = 2.0 * covariance(kinetic_ctx.s, 0.5)
    box = [(-5 * sd, 5 * sd) for sd in np.sqrt(np.diag(sigma))]
    hist = batch.to_histogram(box, (20, 20))
    cell = np.prod([(hi - lo) / 20 for lo, hi in box])
    mass = hist.values.sum() * cell
    assert 0.98 < mass <= 1.0 + 1e-12


# -- discretization bias --------------------------------------------------------------


def test_em_mean_is_discrete_flow(chain3):
    # Additive noise: the scheme's expected path is exactly (I - dt B)^k start.
    start = np.array([1.0, 0.0, 0.0])
    t, steps, n = 1.0, 4, 60000
    batch = euler_maruyama(chain3, start, t, steps, n, seed=101)
    ds = t / steps
    flow = np.linalg.matrix_power(np.eye(3) - ds * chain3.B, steps) @ start
    se = np.sqrt(np.diag(2.0 * covariance(chain3, t)) / n)
    assert np.all(np.abs(batch.mean() - flow) < 5 * se)


def test_em_bias_vanishes_when_drift_is_nilpotent_of_order_two(kinetic):
    # B^2 = 0 makes (I - dt B)^k equal e^{-t B} exactly: no mean bias at all.
    t, steps = 0.8, 3
    ds = t / steps
    flow = np.linalg.matrix_power(np.eye(2) - ds * kinetic.B, steps)
    np.testing.assert_allclose(flow, exp_neg_tB(kinetic, t), atol=1e-15)


# -- parameter gates ---------------------------------------------------------------


def test_sampler_gates(kinetic, kinetic_ctx):
    with pytest.raises(NonPositiveTime):
        exact_sample(kinetic_ctx, START2, 0.0, 10, seed=0)
    with pytest.raises(BadParameters):
        exact_sample(kinetic_ctx, START2, 0.5, 0, seed=0)
    with pytest.raises(BadParameters):
        exact_sample(kinetic_ctx, np.zeros(3), 0.5, 10, seed=0)
    with pytest.raises(NonPositiveTime):
        euler_maruyama(kinetic, START2, -1.0, 4, 10, seed=0)
    with pytest.raises(BadParameters):
        euler_maruyama(kinetic, START2, 0.5, 0, 10, seed=0)
    with pytest.raises(BadParameters):
        SampleBatch(points=np.zeros(4), t=0.5, start=START2, seed=0, method="exact")
    with pytest.raises(BadParameters):
        density_error(SampleBatch(points=np.zeros((1, 2)), t=0.5, start=START2,
                                  seed=0, method="exact"), kinetic_ctx)
