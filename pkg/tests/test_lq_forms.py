import numpy as np
import pytest

from conftest import fd_gradient
from varprox.groups import GroupStructure, contiguous_groups, trivial_groups
from varprox.linops import dense
from varprox.lq_forms import (LqSpec, lq_value, lq_variational_check,
                              optimal_eta, optimal_three_factor,
                              optimal_two_factor, three_factor_objective)


def test_lq_value_examples():
    gs2 = trivial_groups(2)
    assert lq_value(np.array([1.0, -2.0]), gs2, 1.0) == pytest.approx(3.0)
    gs1 = trivial_groups(1)
    assert lq_value(np.array([8.0]), gs1, 2 / 3) == pytest.approx(6.0)
    gsg = GroupStructure([[0, 1]], p=2)
    assert lq_value(np.array([3.0, 4.0]), gsg, 2 / 3) == pytest.approx(
        1.5 * 5.0 ** (2 / 3))


def test_lq_spec_validation():
    assert LqSpec(2 / 3, factor_count=3).beta == pytest.approx(1.0)
    assert LqSpec(1.0, factor_count=2).beta == pytest.approx(1.0)
    with pytest.raises(ValueError):
        LqSpec(0.5, factor_count=3)      # needs q > 1/2
    with pytest.raises(ValueError):
        LqSpec(0.6, factor_count=2)      # two factors need q > 2/3
    with pytest.raises(ValueError):
        LqSpec(2.5)


def test_variational_gap_zero_at_zero():
    gs = trivial_groups(3)
    gap = lq_variational_check(np.zeros(3), gs, 2 / 3,
                               factors=(np.zeros(3), np.zeros(3), np.zeros(3)))
    assert abs(gap) < 1e-12


def test_optimal_eta_for_q1_is_group_norm(rng):
    gs = contiguous_groups(8, 2)
    x = rng.standard_normal(8)
    eta = optimal_eta(x, gs, 1.0)
    norms = np.sqrt(np.array([np.sum(x[g] ** 2) for g in gs.groups]))
    assert np.allclose(eta, norms)
    gap = lq_variational_check(x, gs, 1.0, eta=eta)
    assert abs(gap) < 1e-12


def test_eta_gap_nonnegative(rng):
    gs = contiguous_groups(6, 3)
    x = rng.standard_normal(6)
    for _ in range(50):
        eta = rng.uniform(0.1, 3.0, gs.n_groups)
        assert lq_variational_check(x, gs, 0.9, eta=eta) >= -1e-12


def test_three_factor_gap_zero_at_closed_form(rng):
    gs = contiguous_groups(9, 3)
    x = rng.standard_normal(9)
    for q in (0.6, 2 / 3, 0.9):
        u, v, w = optimal_three_factor(x, gs, q)
        gap = lq_variational_check(x, gs, q, factors=(u, v, w))
        assert abs(gap) < 1e-10
    # random suboptimal factors give a strictly positive gap
    u, v, w = optimal_three_factor(x, gs, 2 / 3)
    gap = lq_variational_check(x, gs, 2 / 3,
                               factors=(u / 2.0, v * 2.0, w))
    assert gap > 1e-6


def test_two_factor_matches_lq(rng):
    gs = trivial_groups(7)
    x = rng.standard_normal(7)
    for q in (0.8, 1.0, 1.5):
        beta = LqSpec(q, factor_count=2).beta
        u, v = optimal_two_factor(x, gs, q)
        val = 0.5 * u @ u + np.sum(np.abs(v) ** (2 * beta)) / (2 * beta)
        assert val == pytest.approx(lq_value(x, gs, q), rel=1e-10)


def test_nesting_identity(rng):
    # composing the two-factor split twice with r = beta/(1+beta)
    # reproduces the lq value at q = 2r/(1+r)
    gs = trivial_groups(6)
    x = rng.standard_normal(6)
    beta = 1.0                        # three-factor exponent for q = 2/3
    r = beta / (1.0 + beta)
    q = 2.0 * r / (1.0 + r)
    assert q == pytest.approx(2 / 3)
    # stage 1: x = u . z with penalty |z|^{2r}/(2r);  stage 2 splits z
    u, v, w = optimal_three_factor(x, gs, q)
    z = v * w
    val_stage2 = 0.5 * v @ v + np.sum(np.abs(w) ** (2 * beta)) / (2 * beta)
    val_inner = np.sum(np.abs(z) ** (2 * r)) / (2 * r)
    assert val_stage2 == pytest.approx(val_inner, rel=1e-10)
    total = 0.5 * u @ u + val_stage2
    assert total == pytest.approx(lq_value(x, gs, q), rel=1e-10)


def test_monotone_ladder(rng):
    # at matched q both variational levels equal the lq value
    gs = contiguous_groups(8, 2)
    x = rng.standard_normal(8)
    q = 0.8
    u2, v2 = optimal_two_factor(x, gs, q)
    beta2 = LqSpec(q, factor_count=2).beta
    two = 0.5 * u2 @ u2 + np.sum(np.abs(v2) ** (2 * beta2)) / (2 * beta2)
    u3, v3, w3 = optimal_three_factor(x, gs, q)
    beta3 = LqSpec(q, factor_count=3).beta
    three = (0.5 * u3 @ u3 + 0.5 * v3 @ v3
             + np.sum(np.abs(w3) ** (2 * beta3)) / (2 * beta3))
    ref = lq_value(x, gs, q)
    assert two == pytest.approx(ref, rel=1e-10)
    assert three == pytest.approx(ref, rel=1e-10)


def test_three_factor_objective_at_zero(rng):
    m, n = 5, 6
    A = dense(rng.standard_normal((m, n)))
    y = rng.standard_normal(m)
    gs = trivial_groups(n)
    val, gu, gv, gw = three_factor_objective(np.zeros(n), np.zeros(n),
                                             np.zeros(n), A, y, 0.7, gs)
    assert val == pytest.approx(float(y @ y) / (2 * 0.7))
    assert np.allclose(gu, 0.0) and np.allclose(gv, 0.0) and np.allclose(gw, 0.0)


def test_three_factor_objective_fd(rng):
    m, n = 5, 6
    A = dense(rng.standard_normal((m, n)) / 2)
    y = rng.standard_normal(m)
    gs = contiguous_groups(n, 2)
    u = rng.uniform(0.6, 1.4, n)
    v = rng.uniform(0.6, 1.4, gs.n_groups)
    w = rng.uniform(0.6, 1.4, gs.n_groups)
    val, gu, gv, gw = three_factor_objective(u, v, w, A, y, 0.7, gs)
    fu = fd_gradient(lambda z: three_factor_objective(z, v, w, A, y, 0.7, gs)[0], u)
    fv = fd_gradient(lambda z: three_factor_objective(u, z, w, A, y, 0.7, gs)[0], v)
    fw = fd_gradient(lambda z: three_factor_objective(u, v, z, A, y, 0.7, gs)[0], w)
    for g, gfd in ((gu, fu), (gv, fv), (gw, fw)):
        assert np.abs(g - gfd).max() / np.abs(gfd).max() < 1e-6


def test_three_factor_objective_equals_lq_at_optimal_split(rng):
    m, n = 5, 6
    A = dense(rng.standard_normal((m, n)) / 2)
    gs = trivial_groups(n)
    x = rng.standard_normal(n)
    y = rng.standard_normal(m)
    lam = 0.9
    u, v, w = optimal_three_factor(x, gs, 2 / 3)
    val, *_ = three_factor_objective(u, v, w, A, y, lam, gs)
    expected = lq_value(x, gs, 2 / 3) \
        + np.sum((A.apply(x) - y) ** 2) / (2 * lam)
    assert val == pytest.approx(expected, rel=1e-10)
