import numpy as np
import pytest

from conftest import fd_gradient
from varprox.groups import (GroupStructure, contiguous_groups, extend,
                            group_sq_norms, trivial_groups)
from varprox.linops import dense, grad2d, identity, tv_group_structure
from varprox.problems import gen_gaussian_instance, lambda_max, pixel_channel_groups
from varprox.baselines import run_ista
from varprox.varpro import (BasisPursuitLoss, MultitaskLoss, OuterConfig,
                            QuadraticLoss, RobustLoss, VarProProblem,
                            eval_f_grad, eval_f_grad_robust, eval_lq_option2,
                            eval_lq_option3, eval_multitask,
                            nonsmooth_objective, recover_x, solve_varpro)


def _lasso_1d(lam=1.0, y=2.0):
    return VarProProblem(dense([[1.0]]), identity(1), trivial_groups(1),
                         QuadraticLoss(y=np.array([y]), lam=lam))


def test_eval_one_dim_stationary():
    prob = _lasso_1d()
    f, g, sol = eval_f_grad(prob, np.array([1.0]))
    # v = 1 is stationary: the lasso solution is x = 1 with eta = |x| = 1
    assert g[0] == pytest.approx(0.0, abs=1e-12)
    assert f == pytest.approx(1.5, abs=1e-12)      # equals Phi(x*) = 1 + 1/2
    assert recover_x(sol)[0] == pytest.approx(1.0, abs=1e-12)


def test_eval_at_zero_v(rng):
    n, m, p = 8, 5, 6
    A = dense(rng.standard_normal((m, n)))
    L = dense(rng.standard_normal((p, n)))
    gs = contiguous_groups(p, 2)
    prob = VarProProblem(A, L, gs, QuadraticLoss(y=rng.standard_normal(m), lam=0.8))
    f, g, sol = eval_f_grad(prob, np.zeros(gs.n_groups))
    assert np.allclose(g, 0.0)
    # f equals the data fit minimized over the kernel of L
    assert np.abs(L.apply(sol.x)).max() < 1e-8


def test_quadratic_gradient_finite_differences(rng):
    n, m, p = 15, 10, 12
    A = dense(rng.standard_normal((m, n)) / 3)
    L = dense(rng.standard_normal((p, n)) / 3)
    gs = contiguous_groups(p, 3)
    prob = VarProProblem(A, L, gs, QuadraticLoss(y=rng.standard_normal(m), lam=0.7))
    v = rng.uniform(0.7, 1.3, gs.n_groups)
    f, g, _ = eval_f_grad(prob, v)
    gfd = fd_gradient(lambda vv: eval_f_grad(prob, vv)[0], v)
    assert np.abs(g - gfd).max() / np.abs(gfd).max() < 1e-6


def test_robust_zero_data_gradients(rng):
    m, n = 6, 5
    A = dense(rng.standard_normal((m, n)))
    gl = trivial_groups(m)
    lam = 0.8
    prob = VarProProblem(A, identity(n), trivial_groups(n),
                         RobustLoss(y=np.zeros(m), lam=lam, loss_groups=gl))
    v = rng.uniform(0.5, 1.5, n)
    w = rng.uniform(0.5, 1.5, m)
    f, gv, gw, _ = eval_f_grad_robust(prob, v, w)
    assert np.allclose(gv, v, atol=1e-10)
    assert np.allclose(gw, w / lam, atol=1e-10)


def test_robust_sqrt_lasso_fd(rng):
    m, n = 4, 3
    A = dense(rng.standard_normal((m, n)))
    gl = GroupStructure([range(m)], p=m)
    prob = VarProProblem(A, identity(n), trivial_groups(n),
                         RobustLoss(y=rng.standard_normal(m),
                                    lam=0.6 * np.sqrt(m), loss_groups=gl))
    v = rng.uniform(0.7, 1.3, n)
    w = rng.uniform(0.7, 1.3, 1)
    _, gv, gw, _ = eval_f_grad_robust(prob, v, w)
    gvfd = fd_gradient(lambda z: eval_f_grad_robust(prob, z, w)[0], v)
    gwfd = fd_gradient(lambda z: eval_f_grad_robust(prob, v, z)[0], w)
    assert np.abs(gv - gvfd).max() / np.abs(gvfd).max() < 1e-6
    assert np.abs(gw - gwfd).max() / np.abs(gwfd).max() < 1e-6


def test_robust_tvl1_fd(rng):
    h, w_, c = 4, 4, 3
    n = h * w_ * c
    L = grad2d(h, w_, c)
    gs = tv_group_structure(h, w_, c)
    gl = pixel_channel_groups(h * w_, c)
    prob = VarProProblem(identity(n), L, gs,
                         RobustLoss(y=rng.uniform(0, 1, n), lam=0.8,
                                    loss_groups=gl))
    v = rng.uniform(0.7, 1.3, gs.n_groups)
    w = rng.uniform(0.7, 1.3, gl.n_groups)
    _, gv, gw, _ = eval_f_grad_robust(prob, v, w)
    gvfd = fd_gradient(lambda z: eval_f_grad_robust(prob, z, w)[0], v)
    gwfd = fd_gradient(lambda z: eval_f_grad_robust(prob, v, z)[0], w)
    assert np.abs(gv - gvfd).max() / np.abs(gvfd).max() < 1e-6
    assert np.abs(gw - gwfd).max() / np.abs(gwfd).max() < 1e-6


def test_option2_decoupled_at_zero_w(rng):
    m, n = 6, 8
    A = dense(rng.standard_normal((m, n)))
    prob = VarProProblem(A, identity(n), trivial_groups(n),
                         QuadraticLoss(y=rng.standard_normal(m), lam=0.5))
    v = rng.uniform(0.5, 1.5, n)
    f, gv, gw, _ = eval_lq_option2(prob, v, np.zeros(n))
    assert np.allclose(gv, v, atol=1e-12)


def test_option2_fd_and_symmetry(rng):
    m, n = 7, 10
    A = dense(rng.standard_normal((m, n)) / 2)
    prob = VarProProblem(A, identity(n), trivial_groups(n),
                         QuadraticLoss(y=rng.standard_normal(m), lam=0.5))
    v = rng.uniform(0.7, 1.3, n)
    w = rng.uniform(0.7, 1.3, n)
    f, gv, gw, _ = eval_lq_option2(prob, v, w)
    gvfd = fd_gradient(lambda z: eval_lq_option2(prob, z, w)[0], v)
    gwfd = fd_gradient(lambda z: eval_lq_option2(prob, v, z)[0], w)
    assert np.abs(gv - gvfd).max() / np.abs(gvfd).max() < 1e-6
    assert np.abs(gw - gwfd).max() / np.abs(gwfd).max() < 1e-6
    # dependence through squares only
    assert eval_lq_option2(prob, -v, w)[0] == pytest.approx(f, abs=1e-12)
    assert eval_lq_option2(prob, v, -w)[0] == pytest.approx(f, abs=1e-12)


def test_option3_zero_v(rng):
    m, n = 5, 6
    A = dense(rng.standard_normal((m, n)))
    y = rng.standard_normal(m)
    prob = VarProProblem(A, identity(n), trivial_groups(n),
                         QuadraticLoss(y=y, lam=0.6))
    f, g, aux = eval_lq_option3(prob, np.zeros(n))
    assert np.allclose(g, 0.0, atol=1e-10)
    assert f == pytest.approx(float(y @ y) / (2 * 0.6), rel=1e-9)


def test_option3_matches_option2_marginalized_1d(rng):
    A = dense([[0.9]])
    prob = VarProProblem(A, identity(1), trivial_groups(1),
                         QuadraticLoss(y=np.array([1.4]), lam=0.5))
    v = np.array([0.8])
    f3, _, _ = eval_lq_option3(prob, v)
    # marginalize the two-factor objective over w by scalar minimization
    import scipy.optimize
    res = scipy.optimize.minimize_scalar(
        lambda w: eval_lq_option2(prob, v, np.array([w]))[0],
        bounds=(1e-4, 5.0), method="bounded",
        options={"xatol": 1e-12})
    assert f3 == pytest.approx(res.fun, abs=1e-6)


def test_option3_fd(rng):
    m, n = 6, 8
    A = dense(rng.standard_normal((m, n)) / 2)
    prob = VarProProblem(A, identity(n), trivial_groups(n),
                         QuadraticLoss(y=rng.standard_normal(m), lam=0.7))
    v = rng.uniform(0.8, 1.2, n)
    f, g, _ = eval_lq_option3(prob, v)
    gfd = fd_gradient(lambda z: eval_lq_option3(prob, z)[0], v)
    assert np.abs(g - gfd).max() / np.abs(gfd).max() < 1e-6


def test_multitask_zero_data_gradients(rng):
    m, n, T = 4, 6, 2
    A = dense(rng.standard_normal((m, n)))
    lam = 0.9
    prob = VarProProblem(A, identity(n), trivial_groups(n),
                         MultitaskLoss(Y=np.zeros((m, T)), lam=lam))
    v = rng.uniform(0.5, 1.5, n)
    W = rng.standard_normal((m, m))
    f, gv, gW, _ = eval_multitask(prob, v, W)
    assert np.allclose(gv, v)
    assert np.allclose(gW, lam * W)


def test_multitask_fd(rng):
    m, n, T = 4, 6, 2
    A = dense(rng.standard_normal((m, n)) / 2)
    prob = VarProProblem(A, identity(n), trivial_groups(n),
                         MultitaskLoss(Y=rng.standard_normal((m, T)), lam=0.8))
    v = rng.uniform(0.7, 1.3, n)
    W = np.eye(m) + 0.1 * rng.standard_normal((m, m))
    f, gv, gW, _ = eval_multitask(prob, v, W)
    gvfd = fd_gradient(lambda z: eval_multitask(prob, z, W)[0], v)
    assert np.abs(gv - gvfd).max() / np.abs(gvfd).max() < 1e-6
    h = 1e-5
    gWfd = np.zeros_like(W)
    for i in range(m):
        for j in range(m):
            E = np.zeros_like(W)
            E[i, j] = h
            gWfd[i, j] = (eval_multitask(prob, v, W + E)[0]
                          - eval_multitask(prob, v, W - E)[0]) / (2 * h)
    assert np.abs(gW - gWfd).max() / np.abs(gWfd).max() < 1e-6


def test_multitask_degenerate_W_floor(rng):
    from varprox.inner import InnerConfig
    m, n = 4, 5
    A = dense(rng.standard_normal((m, n)))
    prob = VarProProblem(A, identity(n), trivial_groups(n),
                         MultitaskLoss(Y=rng.standard_normal((m, 2)), lam=0.8))
    v = rng.uniform(0.7, 1.3, n)
    cfg = InnerConfig(epsilon_floor=1e-10)
    f0, gv0, gW0, _ = eval_multitask(prob, v, np.zeros((m, m)), cfg)
    # compare against an epsilon-perturbed loss factor
    f1, gv1, gW1, _ = eval_multitask(prob, v, 1e-5 * np.eye(m), cfg)
    assert abs(f0 - f1) < 1e-3 * max(1.0, abs(f0))


def test_lbfgs_quadratic_sanity(rng):
    from varprox.optim import MinimizeConfig, minimize_lbfgs
    n = 12
    a = rng.standard_normal(n)

    def fun(v):
        return 0.5 * float((v - a) @ (v - a)), v - a

    x, f, g, trace = minimize_lbfgs(fun, np.zeros(n),
                                    MinimizeConfig(max_iter=n + 5, grad_tol=1e-12))
    assert np.abs(x - a).max() < 1e-10
    assert trace.n_records <= n + 6


def test_lbfgs_one_dim_lasso_from_two():
    prob = _lasso_1d()
    cfg = OuterConfig(max_iter=200, grad_tol=1e-10, init=np.array([2.0]))
    res = solve_varpro(prob, cfg)
    assert res.trace.grad_norms[-1] < 1e-10
    assert res.x[0] == pytest.approx(1.0, abs=1e-8)


def test_group_lasso_matches_long_fista(rng):
    inst = gen_gaussian_instance(20, 60, s=9, group_size=3, noise_std=0.05, seed=3)
    lam = 0.1 * lambda_max(inst.A, inst.y, "group-lasso", inst.groups)
    prob = VarProProblem(inst.A, inst.L, inst.groups, QuadraticLoss(y=inst.y, lam=lam))
    res = solve_varpro(prob, OuterConfig(max_iter=800, grad_tol=1e-12, seed=0))
    oracle = run_ista(inst.A, inst.groups, lam, inst.y, accel="fista",
                      iters=100000)
    f_vp = nonsmooth_objective(prob, res.x)
    f_or = nonsmooth_objective(prob, oracle.x)
    assert abs(f_vp - f_or) / abs(f_or) < 1e-6


def test_sign_symmetry(rng):
    n, m = 10, 6
    A = dense(rng.standard_normal((m, n)))
    prob = VarProProblem(A, identity(n), trivial_groups(n),
                         QuadraticLoss(y=rng.standard_normal(m), lam=0.5))
    v = rng.uniform(0.5, 1.5, n)
    f0 = eval_f_grad(prob, v)[0]
    assert abs(eval_f_grad(prob, -v)[0] - f0) < 1e-12
    assert abs(eval_f_grad(prob, np.abs(v))[0] - f0) < 1e-12


def test_stationarity_alpha_norms(rng):
    inst = gen_gaussian_instance(15, 30, s=6, group_size=3, noise_std=0.1, seed=2)
    lam = 0.2 * lambda_max(inst.A, inst.y, "group-lasso", inst.groups)
    prob = VarProProblem(inst.A, inst.L, inst.groups, QuadraticLoss(y=inst.y, lam=lam))
    res = solve_varpro(prob, OuterConfig(max_iter=800, grad_tol=1e-9, seed=0))
    assert res.trace.grad_norms[-1] < 1e-8
    s = group_sq_norms(res.inner.alpha, inst.groups)
    live = np.abs(res.v) > 1e-3 * np.abs(res.v).max()
    assert np.abs(s[live] - 1.0).max() < 1e-6


def test_bilevel_consistency(rng):
    # f(v) evaluated through the dual equals G(u(v), v) computed from an
    # independent equality-constrained least-squares solve
    n, m, p = 10, 7, 8
    A = dense(rng.standard_normal((m, n)) / 2)
    L = dense(rng.standard_normal((p, n)) / 2)
    gs = contiguous_groups(p, 2)
    lam = 0.6
    y = rng.standard_normal(m)
    prob = VarProProblem(A, L, gs, QuadraticLoss(y=y, lam=lam))
    v = rng.uniform(0.5, 1.5, gs.n_groups)
    f, _, sol = eval_f_grad(prob, v)
    u = extend(v, gs) * sol.alpha
    # min F0(A x) subject to L x = u * v, via stacked least squares KKT
    target = u * extend(v, gs)
    Ad, Ld = A.to_dense(), L.to_dense()
    K = np.block([[Ad.T @ Ad / lam, Ld.T], [Ld, np.zeros((p, p))]])
    rhs = np.concatenate([Ad.T @ y / lam, target])
    sol2 = np.linalg.lstsq(K, rhs, rcond=None)[0]
    x2 = sol2[:n]
    G = (0.5 * u @ u + 0.5 * v @ v
         + np.sum((Ad @ x2 - y) ** 2) / (2 * lam))
    assert abs(f - G) < 1e-8


def test_objective_equivalence_at_stationary_point(rng):
    inst = gen_gaussian_instance(12, 24, s=4, group_size=2, noise_std=0.1, seed=4)
    lam = 0.15 * lambda_max(inst.A, inst.y, "group-lasso", inst.groups)
    prob = VarProProblem(inst.A, inst.L, inst.groups, QuadraticLoss(y=inst.y, lam=lam))
    res = solve_varpro(prob, OuterConfig(max_iter=800, grad_tol=1e-10, seed=0))
    assert abs(res.objective - nonsmooth_objective(prob, res.x)) \
        <= 1e-6 * max(1.0, res.objective)


def test_trace_monotone(rng):
    inst = gen_gaussian_instance(15, 30, s=4, group_size=1, noise_std=0.1, seed=6)
    lam = 0.2 * lambda_max(inst.A, inst.y, "lasso")
    prob = VarProProblem(inst.A, inst.L, inst.groups, QuadraticLoss(y=inst.y, lam=lam))
    res = solve_varpro(prob, OuterConfig(max_iter=300, grad_tol=1e-11, seed=0))
    obj = res.trace.objective_array()
    assert np.all(np.diff(obj) <= 1e-12)


def test_basis_pursuit_gradient_fd(rng):
    m, n = 4, 8
    A = dense(rng.standard_normal((m, n)))
    x_true = np.zeros(n)
    x_true[[1, 5]] = [1.0, -2.0]
    prob = VarProProblem(A, identity(n), trivial_groups(n),
                         BasisPursuitLoss(y=A.apply(x_true)))
    v = rng.uniform(0.7, 1.3, n)
    f, g, _ = eval_f_grad(prob, v)
    gfd = fd_gradient(lambda z: eval_f_grad(prob, z)[0], v)
    assert np.abs(g - gfd).max() / np.abs(gfd).max() < 1e-6


def test_gd_bb_driver(rng):
    inst = gen_gaussian_instance(12, 24, s=3, group_size=1, noise_std=0.1, seed=9)
    lam = 0.2 * lambda_max(inst.A, inst.y, "lasso")
    prob = VarProProblem(inst.A, inst.L, inst.groups,
                         QuadraticLoss(y=inst.y, lam=lam))
    res_bb = solve_varpro(prob, OuterConfig(algorithm="gradient-descent-bb",
                                            max_iter=2000, grad_tol=1e-9, seed=0))
    res_lb = solve_varpro(prob, OuterConfig(max_iter=800, grad_tol=1e-11, seed=0))
    assert abs(nonsmooth_objective(prob, res_bb.x)
               - nonsmooth_objective(prob, res_lb.x)) < 1e-5
    obj = res_bb.trace.objective_array()
    assert np.all(np.diff(obj) <= 1e-12)     # safeguarded: stays monotone


def test_cg_inner_with_warm_start_matches_direct(rng):
    from varprox.inner import InnerConfig
    inst = gen_gaussian_instance(15, 40, s=4, noise_std=0.1, seed=10)
    lam = 0.2 * lambda_max(inst.A, inst.y, "lasso")
    prob = VarProProblem(inst.A, dense(np.eye(40)), trivial_groups(40),
                         QuadraticLoss(y=inst.y, lam=lam))
    cfg_cg = OuterConfig(max_iter=300, grad_tol=1e-9, seed=0,
                         inner=InnerConfig(method="cg"))
    cfg_dr = OuterConfig(max_iter=300, grad_tol=1e-9, seed=0,
                         inner=InnerConfig(method="direct"))
    res_cg = solve_varpro(prob, cfg_cg)
    res_dr = solve_varpro(prob, cfg_dr)
    assert abs(nonsmooth_objective(prob, res_cg.x)
               - nonsmooth_objective(prob, res_dr.x)) < 1e-7
