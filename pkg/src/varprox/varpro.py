"""Projected outer objectives and their gradients, plus the quasi-Newton
driver that minimizes them.

For every problem family the outer function is evaluated by solving the
concave inner dual and reassembling the value from the primal pieces at
the recovered point (the two agree by strong duality, and the primal form
stays valid when entries of the outer variable vanish).  Gradients come
from the envelope formulas:

* quadratic / interpolation loss:  ``grad_g = v_g (1 - ||alpha_g||^2)``
* robust loss:                     plus ``w / lam - lam w ||xi_g||^2``
* two outer factors (lq path):     ``v_g (1 - w_g^2 s_g)``, symmetric in w
* nuclear-norm multitask:          ``v - v s``, ``lam W - alpha alpha^T W / lam``
"""

from dataclasses import dataclass, field

import numpy as np

from . import inner as inner_mod
from .groups import (GroupStructure, extend, group_dots, group_norm_12,
                     group_sq_norms)
from .inner import InnerConfig, InnerSolution, InnerSolveError
from .linops import BlockExtractOperator, DenseOperator, IdentityOperator, LinearOperator
from .optim import MinimizeConfig, minimize_gd_bb, minimize_lbfgs

__all__ = [
    "QuadraticLoss", "RobustLoss", "BasisPursuitLoss", "MultitaskLoss",
    "VarProProblem", "OuterConfig", "VarProResult",
    "eval_f_grad", "eval_f_grad_robust", "eval_lq_option2", "eval_lq_option3",
    "eval_multitask", "solve_varpro", "solve_lq_option2", "solve_lq_option3",
    "recover_x", "nonsmooth_objective",
]


@dataclass(frozen=True)
class QuadraticLoss:
    """``F0(z) = ||z - y||^2 / (2 lam)``."""
    y: np.ndarray
    lam: float


@dataclass(frozen=True)
class RobustLoss:
    """``R2((A x - y)) / lam`` with ``R2`` the group norm over ``loss_groups``.

    For square-root lasso use a single loss group and fold the ``sqrt(m)``
    factor into ``lam``.
    """
    y: np.ndarray
    lam: float
    loss_groups: GroupStructure


@dataclass(frozen=True)
class BasisPursuitLoss:
    """Exact interpolation constraint ``A x = y`` (or ``A X = Y``)."""
    y: np.ndarray


@dataclass(frozen=True)
class MultitaskLoss:
    """Row-sparse multitask with nuclear-norm data fit ``lam ||A X - Y||_*``."""
    Y: np.ndarray
    lam: float


@dataclass
class VarProProblem:
    A: LinearOperator
    L: LinearOperator
    reg_groups: GroupStructure
    loss: object
    lq_exponent: float | None = None

    def __post_init__(self):
        if self.L.cols != self.A.cols:
            raise ValueError("A and L must share their domain dimension")
        if self.reg_groups.mode == "partition" and self.reg_groups.p != self.L.rows:
            raise ValueError("regularizer groups must partition the range of L")


@dataclass
class OuterConfig:
    algorithm: str = "lbfgs"        # lbfgs | gradient-descent-bb
    memory: int = 10
    max_iter: int = 500
    grad_tol: float = 1e-9
    init: str = "random"            # random | ones
    init_scale: tuple = (0.5, 1.5)
    seed: int = 0
    inner: InnerConfig = field(default_factory=InnerConfig)

    def __post_init__(self):
        if self.memory < 1 or self.grad_tol <= 0:
            raise ValueError("memory >= 1 and grad_tol > 0 required")

    def minimizer_config(self):
        return MinimizeConfig(memory=self.memory, max_iter=self.max_iter,
                              grad_tol=self.grad_tol)


@dataclass
class VarProResult:
    v: np.ndarray
    x: np.ndarray
    objective: float
    trace: object
    inner: InnerSolution
    w: np.ndarray | None = None
    W: np.ndarray | None = None


def _dispatch_quadratic(problem, v, lam, y, cfg, warm=None):
    """Pick the cheapest valid inner solver for the quadratic loss."""
    A, L, gs = problem.A, problem.L, problem.reg_groups
    if cfg.method == "general":
        return inner_mod.solve_quadratic_general(A, L, v, gs, lam, y, cfg,
                                                 warm_start=warm)
    if isinstance(L, BlockExtractOperator) and L.source_groups.mode == "overlapping":
        vv = np.asarray(v, dtype=float)
        if np.all(vv != 0.0) and L.source_groups.spans():
            return inner_mod.solve_overlap_woodbury(A, L.source_groups, v, lam, y, cfg)
        return inner_mod.solve_quadratic_general(A, L, v, gs, lam, y, cfg)
    if isinstance(A, IdentityOperator) and not isinstance(L, IdentityOperator):
        return inner_mod.solve_analysis_prox(L, v, gs, lam, y, cfg)
    if isinstance(L, IdentityOperator):
        return inner_mod.solve_grouplasso_dual(A, v, gs, lam, y, cfg)
    return inner_mod.solve_quadratic_general(A, L, v, gs, lam, y, cfg,
                                             warm_start=warm)


def eval_f_grad(problem, v, cfg=None, warm=None):
    """Outer value and gradient for the quadratic or interpolation loss.

    Returns ``(f, grad, inner)``.  ``f`` is reassembled from the primal
    pieces ``||v||^2/2 + ||u||^2/2 + F0(A x)`` with ``u = vbar * alpha``.
    ``warm`` seeds the conjugate-gradient inner path (the solution moves
    slowly between consecutive outer iterations).
    """
    cfg = cfg or InnerConfig()
    v = np.asarray(v, dtype=float)
    gs = problem.reg_groups
    loss = problem.loss
    if isinstance(loss, QuadraticLoss):
        sol = _dispatch_quadratic(problem, v, loss.lam, loss.y, cfg, warm=warm)
        fit = float(np.sum((problem.A.apply(sol.x) - loss.y) ** 2)) / (2 * loss.lam)
    elif isinstance(loss, BasisPursuitLoss):
        sol = inner_mod.solve_basis_pursuit(problem.A, problem.L, v, gs, loss.y, cfg)
        fit = 0.0
    else:
        raise TypeError("eval_f_grad handles quadratic and interpolation losses")
    u = extend(v, gs) * sol.alpha
    f = 0.5 * float(v @ v) + 0.5 * float(u @ u) + fit
    s = group_sq_norms(sol.alpha, gs)
    grad = v * (1.0 - s)
    return f, grad, sol


def eval_f_grad_robust(problem, v, w, cfg=None):
    """Outer value and both gradient blocks for the robust loss."""
    cfg = cfg or InnerConfig()
    loss = problem.loss
    if not isinstance(loss, RobustLoss):
        raise TypeError("robust loss required")
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    gs, gl, lam = problem.reg_groups, loss.loss_groups, loss.lam
    sol = inner_mod.solve_robust(problem.A, problem.L, v, gs, w, gl, lam,
                                 loss.y, cfg)
    u = extend(v, gs) * sol.alpha
    z = lam * extend(w, gl) * sol.xi
    f = (0.5 * float(v @ v) + 0.5 * float(u @ u)
         + float(w @ w) / (2 * lam) + float(z @ z) / (2 * lam))
    s = group_sq_norms(sol.alpha, gs)
    t = group_sq_norms(sol.xi, gl)
    grad_v = v * (1.0 - s)
    grad_w = w / lam - lam * w * t
    return f, grad_v, grad_w, sol


def _option2_inner(problem, vw_bar, cfg):
    """Inner dual for the two-outer-factor path; returns (alpha, G, ok)."""
    A = problem.A
    Ad = A.to_dense()
    loss = problem.loss
    Y = np.asarray(loss.y if not isinstance(loss, MultitaskLoss) else loss.Y,
                   dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if isinstance(loss, QuadraticLoss):
        M = (Ad * vw_bar ** 2) @ Ad.T + loss.lam * np.eye(A.rows)
    elif isinstance(loss, BasisPursuitLoss):
        M = (Ad * vw_bar ** 2) @ Ad.T
    else:
        raise TypeError("two-factor path needs a quadratic or interpolation loss")
    alpha = inner_mod._psd_solve(M, -Y, "two-factor inner system")
    if np.abs(M @ alpha + Y).max(initial=0) > 1e-6 * (1 + np.abs(Y).max()):
        return None, None, False
    return alpha, Ad.T @ alpha, True


def eval_lq_option2(problem, v, w, cfg=None):
    """Value/gradients with two grouped factors kept on the outer problem.

    Represents the grouped l_{2/3} penalty (or its lasso variant) through
    ``x = u * (v w)`` with ``u`` marginalized.  Returns
    ``(f, grad_v, grad_w, aux)`` where ``aux`` carries the recovered ``x``
    and the inner dual variable.  Outside the dual domain (interpolation
    loss with a too-degenerate factor) the value is ``+inf``.
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    gs = problem.reg_groups
    vw_bar = extend(v * w, gs)
    alpha, G, ok = _option2_inner(problem, vw_bar, cfg or InnerConfig())
    if not ok:
        bad = np.full_like(v, np.nan)
        return np.inf, bad, bad, {}
    U = -vw_bar[:, None] * G
    X = vw_bar[:, None] * U
    row_sq = (G * G).sum(axis=1)
    s = np.bincount(gs.group_of, weights=row_sq, minlength=gs.n_groups)
    f = 0.5 * float(v @ v) + 0.5 * float(w @ w) + 0.5 * float(np.sum(U * U))
    loss = problem.loss
    if isinstance(loss, QuadraticLoss):
        Y = np.asarray(loss.y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        R = problem.A.to_dense() @ X - Y
        f += float(np.sum(R * R)) / (2 * loss.lam)
    grad_v = v * (1.0 - w ** 2 * s)
    grad_w = w * (1.0 - v ** 2 * s)
    x = X.ravel() if X.shape[1] == 1 else X
    return f, grad_v, grad_w, {"x": x, "alpha": alpha, "group_sq": s}


def eval_lq_option3(problem, v, cfg=None, nested=None):
    """Value/gradient with a single outer factor and a nested group-lasso
    inner problem (three-level program).

    The inner problem ``min_z ||z||_{1,2} + F0(A (v * z))`` is solved by a
    nested projected run; its primal/dual pair gives
    ``grad = v + (<z_g, (A^T alpha)_g>)_g``.  Quadratic losses only.
    """
    loss = problem.loss
    if not isinstance(loss, QuadraticLoss):
        raise TypeError("single-factor path needs a quadratic loss")
    v = np.asarray(v, dtype=float)
    gs = problem.reg_groups
    nested = nested or OuterConfig(max_iter=400, grad_tol=1e-10, init="ones")
    vbar = extend(v, gs)
    Ad = problem.A.to_dense()
    scaled = DenseOperator(Ad * vbar[None, :])
    sub = VarProProblem(A=scaled, L=IdentityOperator(scaled.cols),
                        reg_groups=gs, loss=QuadraticLoss(y=loss.y, lam=loss.lam))
    res = solve_varpro(sub, nested)
    z = res.x
    alpha = res.inner.xi       # equals grad F0 at the inner optimum
    G = problem.A.adjoint(alpha)
    grad = v + group_dots(z, G, gs)
    f = (0.5 * float(v @ v) + group_norm_12(z, gs)
         + float(np.sum((scaled.apply(z) - loss.y) ** 2)) / (2 * loss.lam))
    return f, grad, {"z": z, "alpha": alpha, "x": vbar * z,
                     "nested_grad_norm": res.trace.grad_norms[-1]}


def eval_multitask(problem, v, W, cfg=None):
    """Value and gradients for the nuclear-norm multitask problem."""
    loss = problem.loss
    if not isinstance(loss, MultitaskLoss):
        raise TypeError("multitask loss required")
    cfg = cfg or InnerConfig()
    v = np.asarray(v, dtype=float)
    W = np.asarray(W, dtype=float)
    sol = inner_mod.solve_multitask_nuclear(problem.A, v, W, loss.lam, loss.Y, cfg)
    alpha = sol.alpha
    G = problem.A.to_dense().T @ alpha
    row_sq = (G * G).sum(axis=1)
    f = (0.5 * float(v @ v) + 0.5 * float(np.sum((v ** 2) * row_sq))
         + 0.5 * loss.lam * float(np.sum(W * W))
         + float(np.sum((W.T @ alpha) ** 2)) / (2 * loss.lam))
    grad_v = v * (1.0 - row_sq)
    grad_W = loss.lam * W - (alpha @ (alpha.T @ W)) / loss.lam
    return f, grad_v, grad_W, sol


def _init_vector(cfg, size, rng):
    if isinstance(cfg.init, np.ndarray):
        return np.asarray(cfg.init, dtype=float).copy()
    if cfg.init == "ones":
        return np.ones(size)
    lo, hi = cfg.init_scale
    return rng.uniform(lo, hi, size)


def _run_minimizer(fun, x0, config, name):
    mcfg = config.minimizer_config()
    if config.algorithm == "lbfgs":
        return minimize_lbfgs(fun, x0, mcfg, method_name=name)
    if config.algorithm == "gradient-descent-bb":
        return minimize_gd_bb(fun, x0, mcfg, method_name=name)
    raise ValueError(f"unknown algorithm {config.algorithm!r}")


def solve_varpro(problem, config=None):
    """Minimize the projected objective for the configured loss family.

    Dispatches on the loss type: a single grouped factor for quadratic and
    interpolation losses, ``(v, w)`` for robust losses, ``(v, W)`` for the
    multitask problem.  Returns a :class:`VarProResult` whose trace records
    every accepted iterate.
    """
    config = config or OuterConfig()
    rng = np.random.default_rng(config.seed)
    gs = problem.reg_groups
    loss = problem.loss
    icfg = config.inner

    if isinstance(loss, (QuadraticLoss, BasisPursuitLoss)):
        holder = {}
        use_warm = icfg.method == "cg"

        def fun(vv):
            warm = holder["sol"].x if (use_warm and "sol" in holder) else None
            try:
                f, g, sol = eval_f_grad(problem, vv, icfg, warm=warm)
            except InnerSolveError:
                return np.inf, np.zeros_like(vv)
            holder["sol"] = sol
            return f, g

        v0 = _init_vector(config, gs.n_groups, rng)
        v, f, g, trace = _run_minimizer(fun, v0, config, "varpro-" + config.algorithm)
        sol = holder.get("sol")
        if sol is None:
            _, _, sol = eval_f_grad(problem, v, icfg)
        return VarProResult(v=v, x=sol.x, objective=f, trace=trace, inner=sol)

    if isinstance(loss, RobustLoss):
        nv, nw = gs.n_groups, loss.loss_groups.n_groups
        holder = {}

        def fun(theta):
            try:
                f, gv, gw, sol = eval_f_grad_robust(problem, theta[:nv],
                                                    theta[nv:], icfg)
            except InnerSolveError:
                return np.inf, np.zeros_like(theta)
            holder["sol"] = sol
            return f, np.concatenate([gv, gw])

        theta0 = np.concatenate([_init_vector(config, nv, rng),
                                 _init_vector(config, nw, rng)])
        theta, f, g, trace = _run_minimizer(fun, theta0, config,
                                            "varpro-robust-" + config.algorithm)
        sol = holder["sol"]
        return VarProResult(v=theta[:nv], w=theta[nv:], x=sol.x, objective=f,
                            trace=trace, inner=sol)

    if isinstance(loss, MultitaskLoss):
        n = problem.A.cols
        m = problem.A.rows
        holder = {}

        def fun(theta):
            v = theta[:n]
            W = theta[n:].reshape(m, m)
            try:
                f, gv, gW, sol = eval_multitask(problem, v, W, icfg)
            except InnerSolveError:
                return np.inf, np.zeros_like(theta)
            holder["sol"] = sol
            return f, np.concatenate([gv, gW.ravel()])

        theta0 = np.concatenate([_init_vector(config, n, rng),
                                 np.eye(m).ravel()])
        theta, f, g, trace = _run_minimizer(fun, theta0, config,
                                            "varpro-multitask-" + config.algorithm)
        sol = holder["sol"]
        return VarProResult(v=theta[:n], W=theta[n:].reshape(m, m), x=sol.x,
                            objective=f, trace=trace, inner=sol)

    raise TypeError(f"unsupported loss {type(loss).__name__}")


def _lq_warm_factors(problem):
    """Closed-form factor magnitudes from a cheap least-squares warm point
    (magnitude roots split evenly across the factors)."""
    A = problem.A
    Ad = A.to_dense()
    loss = problem.loss
    Y = np.asarray(loss.y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    C = Ad @ Ad.T
    if isinstance(loss, QuadraticLoss):
        C = C + loss.lam * np.eye(A.rows)
    try:
        X = Ad.T @ np.linalg.solve(C, Y)
    except np.linalg.LinAlgError:
        X = Ad.T @ np.linalg.lstsq(C, Y, rcond=None)[0]
    gs = problem.reg_groups
    norms = np.sqrt(group_sq_norms(X, gs))
    floor = 1e-3 * max(norms.max(initial=0.0), 1e-12)
    base = np.maximum(norms, floor) ** (1.0 / 3.0)
    return np.concatenate([base, base])


def solve_lq_option2(problem, config=None, restarts=1, warm_start=True):
    """Minimize the two-outer-factor objective, best result over restarts.

    The first start uses the closed-form factor split of a least-squares
    warm point; the remaining ones are random (the nonconvex landscape has
    spurious basins, and restarts are the standard remedy).
    """
    config = config or OuterConfig()
    gs = problem.reg_groups
    nv = gs.n_groups
    inits = []
    if warm_start:
        inits.append(_lq_warm_factors(problem))
    rng = np.random.default_rng(config.seed)
    while len(inits) < max(1, restarts):
        inits.append(np.concatenate([_init_vector(config, nv, rng),
                                     _init_vector(config, nv, rng)]))
    best = None
    for theta0 in inits:
        holder = {}

        def fun(theta):
            f, gv, gw, aux = eval_lq_option2(problem, theta[:nv], theta[nv:],
                                             config.inner)
            if not np.isfinite(f):
                return np.inf, np.zeros_like(theta)
            holder["aux"] = aux
            return f, np.concatenate([gv, gw])

        theta, f, g, trace = _run_minimizer(fun, theta0, config, "varpro-lq2")
        aux = holder.get("aux", {})
        result = VarProResult(v=theta[:nv], w=theta[nv:], x=aux.get("x"),
                              objective=f, trace=trace, inner=None)
        if best is None or result.objective < best.objective:
            best = result
    return best


def solve_lq_option3(problem, config=None, nested=None):
    """Minimize the single-outer-factor objective (nested inner runs).

    The nested runs are solved tighter than the outer tolerance
    (``max(1e-10, 1e-2 * grad_tol)``) so the outer gradients stay
    finite-difference consistent.
    """
    config = config or OuterConfig()
    if nested is None:
        nested = OuterConfig(max_iter=400, init="ones",
                             grad_tol=max(1e-10, 1e-2 * config.grad_tol))
    rng = np.random.default_rng(config.seed)
    gs = problem.reg_groups
    holder = {}

    def fun(vv):
        f, g, aux = eval_lq_option3(problem, vv, config.inner, nested=nested)
        holder["aux"] = aux
        return f, g

    v0 = _init_vector(config, gs.n_groups, rng)
    v, f, g, trace = _run_minimizer(fun, v0, config, "varpro-lq3")
    aux = holder["aux"]
    return VarProResult(v=v, x=aux["x"], objective=f, trace=trace, inner=None)


def recover_x(sol):
    """Primal point carried by an inner solution."""
    return sol.x


def nonsmooth_objective(problem, x):
    """Original non-smooth objective at ``x`` (for cross-solver checks)."""
    x = np.asarray(x, dtype=float).ravel()
    loss = problem.loss
    reg = group_norm_12(problem.L.apply(x), problem.reg_groups)
    if isinstance(loss, QuadraticLoss):
        r = problem.A.apply(x) - loss.y
        return reg + float(r @ r) / (2 * loss.lam)
    if isinstance(loss, RobustLoss):
        r = problem.A.apply(x) - loss.y
        return reg + group_norm_12(r, loss.loss_groups) / loss.lam
    if isinstance(loss, BasisPursuitLoss):
        return reg
    raise TypeError(f"unsupported loss {type(loss).__name__}")
