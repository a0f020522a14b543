import numpy as np
import pytest

from varprox.baselines import (run_admm, run_irls, run_ista, run_primal_dual,
                               run_reweighted_l1, run_scaled_lasso)
from varprox.groups import GroupStructure, trivial_groups
from varprox.linops import dense, grad2d, identity, tv_group_structure
from varprox.problems import (gen_gaussian_instance, lambda_max,
                              pixel_channel_groups)
from varprox.varpro import (OuterConfig, QuadraticLoss, RobustLoss,
                            VarProProblem, nonsmooth_objective, solve_varpro)


def test_ista_one_dim_lasso():
    A = dense([[1.0]])
    tr = run_ista(A, trivial_groups(1), 1.0, np.array([2.0]), iters=1000)
    assert abs(tr.x[0] - 1.0) < 1e-8


def test_ista_zero_above_lambda_max(rng):
    inst = gen_gaussian_instance(10, 30, s=3, noise_std=0.2, seed=0)
    lam = 1.05 * lambda_max(inst.A, inst.y, "lasso")
    tr = run_ista(inst.A, inst.groups, lam, inst.y, accel="fista", iters=2000)
    assert np.abs(tr.x).max() == 0.0


def test_ista_monotone_at_safe_step(rng):
    inst = gen_gaussian_instance(12, 30, s=4, noise_std=0.1, seed=1)
    lam = 0.2 * lambda_max(inst.A, inst.y, "lasso")
    tr = run_ista(inst.A, inst.groups, lam, inst.y, iters=500)
    assert np.all(np.diff(tr.objective_array()) <= 1e-12)


def test_fista_beats_ista(rng):
    inst = gen_gaussian_instance(15, 45, s=4, noise_std=0.1, seed=2)
    lam = 0.1 * lambda_max(inst.A, inst.y, "lasso")
    plain = run_ista(inst.A, inst.groups, lam, inst.y, iters=500)
    fast = run_ista(inst.A, inst.groups, lam, inst.y, accel="fista", iters=500)
    assert fast.final_objective <= plain.final_objective + 1e-12


def test_admm_tv_denoise_matches_varpro(rng):
    h, w, c = 8, 8, 3
    n = h * w * c
    L = grad2d(h, w, c)
    gs = tv_group_structure(h, w, c)
    img = np.zeros((c, h, w))
    img[:, :4, :] = 1.0
    y = img.ravel() + 0.1 * rng.standard_normal(n)
    lam = 0.3
    prob = VarProProblem(identity(n), L, gs, QuadraticLoss(y=y, lam=lam))
    res = solve_varpro(prob, OuterConfig(max_iter=600, grad_tol=1e-12, seed=0))
    tr = run_admm(identity(n), L, gs, lam, y, tau=1.0, iters=10000)
    f_vp = nonsmooth_objective(prob, res.x)
    f_ad = nonsmooth_objective(prob, tr.x)
    assert abs(f_vp - f_ad) / f_vp < 1e-4
    # primal and dual residuals decrease below 1e-6
    assert tr.grad_norms[-1] < 1e-6
    assert tr.aux["dual_residual"][-1] < 1e-6
    # fixed point carries L x = z
    assert np.abs(tr.aux["z"] - L.apply(tr.x)).max() < 1e-6


def test_admm_z_update_is_shrinkage(rng):
    # one ADMM pass from a controlled state reproduces the blockwise
    # shrinkage of (L x - psi / tau)
    from varprox.groups import group_soft_threshold
    n = 16
    L = grad2d(4, 4)
    gs = tv_group_structure(4, 4)
    y = rng.uniform(0, 1, n)
    tr = run_admm(identity(n), L, gs, 0.5, y, tau=2.0, iters=1)
    x1 = tr.x
    z1 = tr.aux["z"]
    assert np.allclose(z1, group_soft_threshold(L.apply(x1) - 0.0 / 2.0,
                                                1.0 / 2.0, gs), atol=1e-12)


def test_primal_dual_requires_valid_steps(rng):
    n = 9
    L = grad2d(3, 3)
    gs = tv_group_structure(3, 3)
    with pytest.raises(ValueError):
        run_primal_dual("quadratic", identity(n), L, gs, 0.5,
                        rng.uniform(0, 1, n), sigma=10.0, tau=10.0, iters=5)


def test_primal_dual_tvl1_matches_varpro(rng):
    h, w, c = 4, 4, 3
    n = h * w * c
    L = grad2d(h, w, c)
    gs = tv_group_structure(h, w, c)
    gl = pixel_channel_groups(h * w, c)
    y = rng.uniform(0, 1, n)
    lam = 0.8
    prob = VarProProblem(identity(n), L, gs,
                         RobustLoss(y=y, lam=lam, loss_groups=gl))
    res = solve_varpro(prob, OuterConfig(max_iter=2000, grad_tol=1e-12, seed=0))
    tr = run_primal_dual("l1", identity(n), L, gs, lam, y, loss_groups=gl,
                         iters=60000)
    f_vp = nonsmooth_objective(prob, res.x)
    f_pd = nonsmooth_objective(prob, tr.x)
    assert abs(f_vp - f_pd) / f_vp < 1e-3


def test_irls_noiseless_recovery(rng):
    inst = gen_gaussian_instance(8, 32, s=1, noise_std=0.0, seed=3)
    tr = run_irls(inst.A, inst.y, inst.groups, q=0.66, mode="equality",
                  iters=200)
    rel = np.linalg.norm(tr.x - inst.x_true) / np.linalg.norm(inst.x_true)
    assert rel < 0.01


def test_irls_fixed_large_eps_is_ridge(rng):
    inst = gen_gaussian_instance(10, 20, s=3, noise_std=0.1, seed=4)
    lam = 0.5
    eps = 1e8
    tr = run_irls(inst.A, inst.y, inst.groups, q=1.0, mode="penalized",
                  lam=lam, eps0=eps, eps_decay=1.0, eps_floor=eps, iters=3)
    w = eps ** (1.0 / 2.0 - 1.0)
    Ad = inst.A.to_dense()
    ridge = np.linalg.solve(Ad.T @ Ad + lam * w * np.eye(20), Ad.T @ inst.y)
    assert np.abs(tr.x - ridge).max() < 1e-10


def test_irls_weights_constant_for_q2(rng):
    # q = 2: weights (||x||^2 + eps)^0 = 1 regardless of the iterate
    x = rng.standard_normal(12)
    gs = trivial_groups(12)
    from varprox.groups import group_sq_norms
    w = (group_sq_norms(x, gs) + 0.3) ** (2.0 / 2.0 - 1.0)
    assert np.allclose(w, 1.0)


def test_reweighted_l1_first_step_is_plain_bp(rng):
    inst = gen_gaussian_instance(12, 24, s=2, noise_std=0.0, seed=5)
    tr = run_reweighted_l1(inst.A, inst.y, inst.groups, q=0.7,
                           mode="equality", outer_iters=1)
    # uniform initial weights: the first outer step solves the plain
    # interpolation problem
    from varprox.varpro import BasisPursuitLoss, solve_varpro
    prob = VarProProblem(inst.A, identity(24), inst.groups,
                         BasisPursuitLoss(y=inst.y))
    cfg = OuterConfig(max_iter=400, grad_tol=1e-11)
    res = solve_varpro(prob, cfg)
    assert np.abs(tr.x - res.x).max() < 1e-5


def test_reweighted_l1_recovery_and_monotone_surrogate(rng):
    inst = gen_gaussian_instance(10, 32, s=1, noise_std=0.0, seed=6)
    tr = run_reweighted_l1(inst.A, inst.y, inst.groups, q=0.7,
                           mode="equality", outer_iters=6)
    rel = np.linalg.norm(tr.x - inst.x_true) / np.linalg.norm(inst.x_true)
    assert rel < 0.01
    obj = tr.objective_array()
    assert np.all(np.diff(obj) <= 1e-7)


def test_scaled_lasso_zero_above_lambda_max(rng):
    inst = gen_gaussian_instance(12, 30, s=3, noise_std=0.2, seed=7)
    lam = 1.05 * lambda_max(inst.A, inst.y, "sqrt-lasso")
    tr = run_scaled_lasso(inst.A, inst.y, lam, outer_iters=5)
    assert np.linalg.norm(tr.x) < 1e-8


def test_scaled_lasso_matches_varpro_1d():
    A = dense([[1.0], [0.5]])
    y = np.array([2.0, 0.3])
    lam = 0.5 * lambda_max(A, y, "sqrt-lasso")
    m = 2
    gl = GroupStructure([range(m)], p=m)
    prob = VarProProblem(A, identity(1), trivial_groups(1),
                         RobustLoss(y=y, lam=lam * np.sqrt(m), loss_groups=gl))
    res = solve_varpro(prob, OuterConfig(max_iter=800, grad_tol=1e-13, seed=0))
    tr = run_scaled_lasso(A, y, lam, outer_iters=40)
    f_vp = nonsmooth_objective(prob, res.x)
    f_sl = nonsmooth_objective(prob, tr.x)
    assert abs(f_vp - f_sl) / f_vp < 1e-6


def test_scaled_lasso_eta_monotone(rng):
    inst = gen_gaussian_instance(15, 40, s=4, noise_std=0.3, seed=8)
    lam = 0.5 * lambda_max(inst.A, inst.y, "sqrt-lasso")
    tr = run_scaled_lasso(inst.A, inst.y, lam, outer_iters=20)
    etas = np.array(tr.aux["etas"])
    assert np.all(np.diff(etas) <= 1e-10)


def test_common_instance_concordance(rng):
    # group lasso: projected solver, accelerated proximal gradient, ADMM and
    # primal-dual all land on the same objective
    inst = gen_gaussian_instance(20, 60, s=9, group_size=3, noise_std=0.05,
                                 seed=3)
    lam = 0.1 * lambda_max(inst.A, inst.y, "group-lasso", inst.groups)
    prob = VarProProblem(inst.A, inst.L, inst.groups,
                         QuadraticLoss(y=inst.y, lam=lam))
    objs = []
    res = solve_varpro(prob, OuterConfig(max_iter=800, grad_tol=1e-12, seed=0))
    objs.append(nonsmooth_objective(prob, res.x))
    objs.append(nonsmooth_objective(
        prob, run_ista(inst.A, inst.groups, lam, inst.y, accel="fista",
                       iters=30000).x))
    objs.append(nonsmooth_objective(
        prob, run_admm(inst.A, inst.L, inst.groups, lam, inst.y, iters=20000).x))
    objs.append(nonsmooth_objective(
        prob, run_primal_dual("quadratic", inst.A, inst.L, inst.groups, lam,
                              inst.y, iters=30000).x))
    spread = (max(objs) - min(objs)) / min(objs)
    assert spread < 1e-5
