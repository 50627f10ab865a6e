"""Truncation algebra, exponent arithmetic, and the level-iteration engine."""

import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kolmolab.degiorgi import (
    TruncationParams,
    bootstrap_exponents,
    iteration_lemma,
    phi,
    psi,
    run_level_iteration,
    solve_exponents,
    truncation_inequality_suite,
    undercut,
)
from kolmolab.errors import (
    AuditFailure,
    BadParameters,
    Eps0OutOfRange,
    InvalidQPrime,
    InvalidTruncation,
    QTildeTooSmall,
    ScheduleStall,
)
from kolmolab.group_conv import GridField


# -- truncation algebra -----------------------------------------------------------


def test_ramp_pair_worked_values():
    p = TruncationParams(k=1.0, l=3.0)
    assert (psi(p, 2), psi(p, 5), phi(p, 2), phi(p, 5)) == (2, 4, 1, 12)
    assert psi(p, 0.5) == 0 and phi(p, 0.5) == 0
    assert psi(p, 1.0) == 0 and phi(p, 1.0) == 0


def test_ramp_pair_large_cap_limits():
    # as the cap recedes, phi -> (r-k)^2 and psi -> 2(r-k)
    for big in (10.0, 1e2, 1e4):
        p = TruncationParams(k=1.0, l=big)
        assert phi(p, 4.0) == pytest.approx(9.0, abs=1e-9)
        assert psi(p, 4.0) == pytest.approx(6.0, abs=1e-9)


def test_truncation_requires_gap():
    with pytest.raises(InvalidTruncation):
        TruncationParams(k=2.0, l=2.0)


def test_inequality_suite_random_triples():
    rng = np.random.default_rng(5)
    for _ in range(100):
        k = rng.uniform(0, 5)
        l = k + rng.uniform(1e-3, 10)
        p = TruncationParams(k=k, l=l)
        rep = truncation_inequality_suite(p, rng.uniform(k - 3, l + 5, size=50))
        assert rep.passed, rep


def test_inequality_suite_rejects_empty():
    with pytest.raises(BadParameters):
        truncation_inequality_suite(TruncationParams(k=0.0, l=1.0), [])


@settings(max_examples=200, deadline=None)
@given(k=st.floats(0, 5), w=st.floats(0.001, 10), r=st.floats(-3, 20))
def test_truncation_inequalities_pointwise(k, w, r):
    p = TruncationParams(k=k, l=k + w)
    ps, ph = psi(p, r), phi(p, r)
    dpsi = 2.0 if k < r < k + w else 0.0
    tol = 1e-11 * max(1.0, k, k + w, abs(r)) ** 2
    assert ps * ps <= 4.0 * ph + tol
    assert r * ps <= 2.0 * ph + k * ps + tol
    assert r * dpsi <= ps + 2.0 * k + tol


# -- exponent arithmetic -------------------------------------------------------------


def test_solve_exponents_reference_values():
    b = solve_exponents(4, 0.1)
    assert b.p0 == Fraction(3, 2) and b.p1 == Fraction(6, 5) and b.q0 == Fraction(3)
    assert b.p0_hat == pytest.approx(1.4, abs=1e-12)
    assert b.p1_hat == pytest.approx(7 / 6, abs=1e-12)
    assert b.eps1 == pytest.approx(1.2 - 7 / 6, abs=1e-12)
    b2 = solve_exponents(2, 0.2)
    assert b2.p0_hat == pytest.approx(1.8, abs=1e-12)
    assert b2.p1_hat == pytest.approx(9 / 7, abs=1e-12)


def test_solve_exponents_alpha_values():
    assert solve_exponents(4, 0.05, theta=0.1).alpha == pytest.approx(0.26728, abs=1e-5)
    assert solve_exponents(2, 0.05, theta=0.05).alpha == pytest.approx(0.4418, abs=1e-4)


def test_solve_exponents_couplings_hold_across_sweep():
    for eps0 in (0.05, 0.15, 0.25, 0.35, 0.45):
        b = solve_exponents(4, eps0)
        assert abs(1.0 / b.p0_hat - (2.0 / b.p1_hat - 1.0)) < 1e-12
        assert abs(2.0 * b.p1_hat / (2.0 - b.p1_hat) - 2.0 * b.p0_hat) < 1e-12
        assert 1.0 < b.q_prime < b.p0_hat
        assert b.alpha > 0


def test_solve_exponents_gates():
    with pytest.raises(Eps0OutOfRange):
        solve_exponents(4, 0.6)
    with pytest.raises(Eps0OutOfRange):
        solve_exponents(4, 0.0)
    with pytest.raises(BadParameters):
        solve_exponents(4, 0.1, theta=1.0)
    with pytest.raises(BadParameters):
        solve_exponents(0, 0.1)
    # the endpoint eps0 = p0 - 1 collapses q' to 1 and the companion blows up
    with pytest.raises(InvalidQPrime):
        solve_exponents(4, 0.5)


def test_bundle_json_is_serializable():
    j = solve_exponents(4, 0.1).to_json()
    json.dumps(j)
    assert j["p0"] == "3/2" and j["q0"] == "3"


def test_bootstrap_exact_ladder():
    bs = bootstrap_exponents(4, 4)
    assert bs.rhos == (Fraction(2), Fraction(12, 5), Fraction(3))
    assert bs.tau == 2
    assert all(isinstance(r, Fraction) for r in bs.rhos)
    assert bs.ratio_bound == pytest.approx(1.2)


def test_bootstrap_infinite_integrability():
    bs = bootstrap_exponents(4, math.inf)
    assert bs.rhos == (2.0, 6.0)
    assert bs.tau == 1


def test_bootstrap_gates():
    with pytest.raises(QTildeTooSmall):
        bootstrap_exponents(4, 3)  # must strictly exceed q0 = (Q+2)/2 = 3
    with pytest.raises(BadParameters):
        bootstrap_exponents(0, 4)


@settings(max_examples=50, deadline=None)
@given(Q=st.integers(1, 12), bump=st.fractions(Fraction(1, 100), Fraction(50)))
def test_bootstrap_always_terminates_increasing(Q, bump):
    q_tilde = Fraction(Q + 2, 2) + bump
    bs = bootstrap_exponents(Q, q_tilde)
    rhos = bs.rhos
    assert rhos[0] == 2
    assert all(b > a for a, b in zip(rhos, rhos[1:]))
    assert rhos[-1] >= Fraction(2 * (Q + 2), Q)


# -- iteration lemma ------------------------------------------------------------------


def test_lemma_worked_example():
    t = iteration_lemma(1.0, 2.0, 1.0, 0.5, n_max=10)
    assert t.trajectory[:4] == (0.5, 0.25, 0.125, 0.0625)
    assert t.converges
    assert t.criterion_lhs == pytest.approx(1.0, abs=1e-12)
    assert t.gamma == pytest.approx(2.0)


def test_lemma_divergent_example():
    t = iteration_lemma(1.0, 2.0, 1.0, 0.9, n_max=10)
    assert not t.converges
    assert t.trajectory[2] == pytest.approx(1.3122, abs=1e-10)


def test_lemma_zero_start_stays_zero():
    t = iteration_lemma(1.0, 2.0, 1.0, 0.0, n_max=5)
    assert all(y == 0 for y in t.trajectory)


def test_lemma_random_admissible_draws_decay():
    rng = np.random.default_rng(77)
    for _ in range(25):
        C = rng.uniform(0.1, 10)
        b = rng.uniform(1.5, 4)
        alpha = rng.uniform(0.5, 1.5)
        y0 = rng.uniform(0, 1) * (1.0 / (C * b ** (1 / alpha))) ** (1 / alpha)
        t = iteration_lemma(C, b, alpha, y0)
        assert t.converges
        assert t.trajectory[200] < 1e-10


def test_lemma_gates():
    for bad in ((0.0, 2.0, 1.0, 0.5), (1.0, 1.0, 1.0, 0.5),
                (1.0, 2.0, 0.0, 0.5), (1.0, 2.0, 1.0, -0.1)):
        with pytest.raises(BadParameters):
            iteration_lemma(*bad)


# -- undercut and the iteration engine ---------------------------------------------------


def test_undercut_values():
    u = GridField(box=((0, 1), (0, 1)), t_range=(0, 1), values=np.full((4, 4, 4), 5.0))
    assert np.all(undercut(u, 3.0).values == 2.0)
    assert np.all(undercut(u, 7.0).values == 0.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=12, max_size=12),
       st.floats(-4, 4), st.floats(0, 3))
def test_undercut_monotone_in_level(vals, k, dk):
    u = GridField(box=((0, 1),), t_range=(0, 1), values=np.array(vals).reshape(4, 3))
    assert np.all(undercut(u, k + dk).values <= undercut(u, k).values)


def test_iteration_constant_field_certifies_its_ceiling():
    M = 2.0
    u = GridField(box=((0, 1), (0, 1)), t_range=(0, 1), values=np.full((6, 6, 9), M))
    state = run_level_iteration(u, M, solve_exponents(4, 0.1))
    assert state.certified_bound == M
    assert state.converged
    assert state.slab_bounds == (M, M, M, M)


def _spike_field():
    M, H = 0.5, 1.2
    vals = np.full((7, 7, 5), M)
    vals[3, 3, 2] = M + H
    return GridField(box=((0, 1), (0, 1)), t_range=(0, 1), values=vals), M, H


def test_iteration_spike_bound_is_tight():
    u, M, H = _spike_field()
    bundle = solve_exponents(2, 0.05, theta=0.05)
    state = run_level_iteration(u, M, bundle)
    assert M + H <= state.certified_bound <= M + 2 * H
    assert state.certified_bound >= u.values.max()
    assert state.mode == "l2_to_linf"
    assert state.slab_bounds[-1] == state.certified_bound
    assert all(b <= a for a, b in zip(state.slab_bounds[1:], state.slab_bounds)) or \
        all(a <= b for a, b in zip(state.slab_bounds, state.slab_bounds[1:]))


def test_iteration_spike_data_bound_mode():
    u, M, H = _spike_field()
    state = run_level_iteration(u, M, solve_exponents(2, 0.05, theta=0.05),
                                mode="data_bound")
    assert state.certified_bound >= M + H
    # one-shot rung argument: no slab splitting
    assert len(state.slab_bounds) == 1
    assert state.certified_bound == pytest.approx(2.0)


def test_iteration_audits_boundary_ceiling():
    vals = np.zeros((6, 6, 5))
    vals[0, 2, 2] = 9.0  # boundary node above the claimed ceiling
    u = GridField(box=((0, 1), (0, 1)), t_range=(0, 1), values=vals)
    with pytest.raises(AuditFailure):
        run_level_iteration(u, 1.0, solve_exponents(2, 0.05, theta=0.05))


def test_iteration_stalls_on_hopeless_rung():
    vals = np.zeros((5, 5, 3))
    vals[2, 2, 1] = 1000.0
    u = GridField(box=((0, 1), (0, 1)), t_range=(0, 1), values=vals)
    with pytest.raises(ScheduleStall):
        run_level_iteration(u, 1.0, solve_exponents(2, 0.05, theta=0.05),
                            mode="data_bound", max_doublings=2)


def test_iteration_gates():
    u, M, _ = _spike_field()
    bundle = solve_exponents(2, 0.05, theta=0.05)
    with pytest.raises(BadParameters):
        run_level_iteration(u, M, bundle, mode="banana")
    with pytest.raises(BadParameters):
        run_level_iteration(u, M, bundle, n_subintervals=0)


def test_iteration_exports():
    u, M, _ = _spike_field()
    state = run_level_iteration(u, M, solve_exponents(2, 0.05, theta=0.05))
    json.dumps(state.to_json())
    csv = state.to_csv()
    lines = csv.splitlines()
    assert lines[0] == "n,level,measure,energy"
    assert len(lines) == len(state.schedule) + 1
