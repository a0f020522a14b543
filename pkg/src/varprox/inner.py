"""Dual inner solvers.

Each routine maximizes the concave dual of the projected inner problem and
returns the primal/dual triple ``(x, alpha, xi)`` together with a certified
stationarity residual.  Conventions, fixed once and validated by the
finite-difference gradient tests upstream:

* quadratic loss ``F0(z) = ||z - y||^2 / (2 lam)``:
  ``lam * xi = A x - y``, ``L x = vbar^2 * alpha``, ``L^T alpha + A^T xi = 0``;
* robust (variational) loss: ``L x = -vbar^2 * alpha``,
  ``A x = y - lam * wbar^2 * xi``, ``L^T alpha + A^T xi = 0``;
* exact-interpolation loss: ``A x = y``, ``L x = vbar^2 * alpha``,
  ``L^T alpha + A^T xi = 0``.

All solvers work at "desk scale": direct symmetric factorizations by
default, conjugate gradients on the positive definite reduced forms for
larger systems or when requested.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .groups import GroupStructure, extend
from .linops import BlockExtractOperator, IdentityOperator

__all__ = [
    "InnerConfig", "InnerSolution", "InnerSolveError",
    "solve_quadratic_general", "solve_grouplasso_dual", "solve_analysis_prox",
    "solve_overlap_woodbury", "solve_robust", "solve_basis_pursuit",
    "solve_multitask_nuclear",
]


class InnerSolveError(RuntimeError):
    """Raised when an inner linear system cannot be solved reliably."""


@dataclass
class InnerConfig:
    """Linear-algebra knobs for the inner solves.

    ``method`` is ``auto`` (direct below ``direct_size_limit``, CG above),
    ``direct`` or ``cg``.  ``epsilon_floor`` regularizes degenerate diagonal
    blocks (used by the nuclear-norm path when the loss factor vanishes).
    """

    method: str = "auto"
    cg_tol: float = 1e-10
    cg_max_iter: int | None = None
    epsilon_floor: float = 0.0
    direct_size_limit: int = 2000
    zero_threshold: float = 1e-8

    def __post_init__(self):
        if self.cg_tol <= 0 or self.epsilon_floor < 0:
            raise ValueError("cg_tol > 0 and epsilon_floor >= 0 required")
        if self.method not in ("auto", "direct", "cg"):
            raise ValueError(f"unknown method {self.method!r}")

    def use_cg(self, size):
        if self.method == "cg":
            return True
        if self.method == "direct":
            return False
        return size > self.direct_size_limit


@dataclass
class InnerSolution:
    """Primal/dual solution of one inner maximization.

    ``kkt_residual`` is the max norm over the stationarity equations;
    ``system_size`` records the dimension of the linear system factored.
    """

    x: np.ndarray
    alpha: np.ndarray
    xi: np.ndarray | None
    kkt_residual: float
    system_size: int = 0
    method: str = "direct"


DEFAULT = InnerConfig()


def _cg(matvec, b, x0=None, rtol=1e-10, maxiter=None):
    """Plain conjugate gradients for SPD systems; returns (x, ok, relres)."""
    b = np.asarray(b, dtype=float)
    n = b.size
    maxiter = maxiter or 10 * n
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    r = b - matvec(x)
    p = r.copy()
    rs = np.dot(r, r)
    bnorm = max(np.linalg.norm(b), 1e-300)
    for _ in range(maxiter):
        if np.sqrt(rs) <= rtol * bnorm:
            return x, True, np.sqrt(rs) / bnorm
        ap = matvec(p)
        alpha = rs / np.dot(p, ap)
        x += alpha * p
        r -= alpha * ap
        rs_new = np.dot(r, r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, np.sqrt(rs) <= rtol * bnorm, np.sqrt(rs) / bnorm


def _chol_solve(M, b, what, overwrite=False):
    """SPD solve; ``overwrite=True`` lets the factorization consume ``M``."""
    try:
        c, low = scipy.linalg.cho_factor(M, overwrite_a=overwrite,
                                         check_finite=False)
        return scipy.linalg.cho_solve((c, low), b, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        msg = f"{what}: singular system"
        if not overwrite:
            msg += f" (cond~{np.linalg.cond(M):.3e})"
        raise InnerSolveError(msg) from exc


def _psd_solve(M, b, what, jitter=1e-12):
    """Solve a positive semidefinite system that may be (numerically)
    singular but consistent.

    These systems lose rank exactly on the kernel of the adjoint factor,
    where the recovered primal is insensitive to the dual component, so a
    relative diagonal floor after a failed plain factorization returns a
    valid maximizer.  The stationarity residual is always re-checked by the
    caller.
    """
    try:
        c, low = scipy.linalg.cho_factor(M, check_finite=False)
        return scipy.linalg.cho_solve((c, low), b, check_finite=False)
    except scipy.linalg.LinAlgError:
        pass
    p = M.shape[0]
    eps = jitter * max(float(np.abs(M.flat[:: p + 1]).max()), 1e-300)
    Mj = M + eps * np.eye(p)
    try:
        c, low = scipy.linalg.cho_factor(Mj, overwrite_a=True,
                                         check_finite=False)
        return scipy.linalg.cho_solve((c, low), b, check_finite=False)
    except scipy.linalg.LinAlgError:
        return _sym_solve(M, b, what)


def _sym_solve(M, b, what):
    """Symmetric-indefinite solve with a least-squares fallback.

    Ill-conditioning warnings are suppressed: accuracy is certified by the
    stationarity residual the callers attach to every solution.
    """
    import warnings

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            sol = scipy.linalg.solve(M, b, assume_a="sym", check_finite=False)
        if np.all(np.isfinite(sol)):
            return sol
    except (scipy.linalg.LinAlgError, ValueError):
        pass
    sol, _, rank, _ = scipy.linalg.lstsq(M, b, check_finite=False,
                                         lapack_driver="gelsd")
    if sol is None or not np.all(np.isfinite(sol)):
        raise InnerSolveError(f"{what}: factorization produced non-finite values")
    return sol


def _vbar(v, gs):
    v = np.asarray(v, dtype=float)
    if isinstance(gs, GroupStructure):
        return extend(v, gs), gs
    raise TypeError("group structure required")


def _quad_kkt(A, L, vbar, lam, y, x, alpha, xi):
    r1 = lam * xi - (A.apply(x) - y)
    r2 = L.apply(x) - vbar ** 2 * alpha
    r3 = L.adjoint(alpha) + A.adjoint(xi)
    return float(max(np.abs(r1).max(initial=0), np.abs(r2).max(initial=0),
                     np.abs(r3).max(initial=0)))


def solve_quadratic_general(A, L, v, gs, lam, y, cfg=DEFAULT, warm_start=None):
    """Inner solve for the quadratic loss and a general analysis operator.

    Away from zeros of the extension ``vbar`` this solves the reduced
    positive definite system ``(A^T A + lam L^T diag(1/vbar^2) L) x = A^T y``;
    with (near-)zero entries it falls back to the extended saddle system,
    which stays well posed.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    y = np.asarray(y, dtype=float).ravel()
    vbar, gs = _vbar(v, gs)
    m, n, p = A.rows, A.cols, L.rows
    vmax = np.abs(vbar).max(initial=0.0)
    degenerate = vmax == 0.0 or np.abs(vbar).min() < cfg.zero_threshold * vmax

    if degenerate:
        Ad, Ld = A.to_dense(), L.to_dense()
        size = m + p + n
        M = np.zeros((size, size))
        M[:m, :m] = -lam * np.eye(m)
        M[:m, m + p:] = Ad
        M[m:m + p, m:m + p] = -np.diag(vbar ** 2)
        M[m:m + p, m + p:] = Ld
        M[m + p:, :m] = Ad.T
        M[m + p:, m:m + p] = Ld.T
        rhs = np.concatenate([y, np.zeros(p + n)])
        sol = _sym_solve(M, rhs, "extended saddle system")
        xi, alpha, x = sol[:m], sol[m:m + p], sol[m + p:]
        res = _quad_kkt(A, L, vbar, lam, y, x, alpha, xi)
        return InnerSolution(x, alpha, xi, res, system_size=size,
                             method="direct-extended")

    inv_v2 = 1.0 / vbar ** 2
    aty = A.adjoint(y)
    if cfg.use_cg(n):
        def matvec(z):
            return A.adjoint(A.apply(z)) + lam * L.adjoint(inv_v2 * L.apply(z))

        x, ok, relres = _cg(matvec, aty, x0=warm_start, rtol=cfg.cg_tol,
                            maxiter=cfg.cg_max_iter)
        if not ok:
            raise InnerSolveError(f"CG did not converge (relres={relres:.3e})")
        method = "cg"
    else:
        Ld = L.to_dense()
        H = A.gram() + lam * (Ld.T @ (inv_v2[:, None] * Ld))
        x = _psd_solve(H, aty, "reduced system")
        method = "direct"
    alpha = inv_v2 * L.apply(x)
    xi = (A.apply(x) - y) / lam
    res = _quad_kkt(A, L, vbar, lam, y, x, alpha, xi)
    return InnerSolution(x, alpha, xi, res, system_size=n, method=method)


def solve_grouplasso_dual(A, v, gs, lam, y, cfg=DEFAULT, warm_start=None):
    """Group-lasso specialization (``L = Id``): one m-by-m SPD solve."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    y = np.asarray(y, dtype=float).ravel()
    vbar, gs = _vbar(v, gs)
    Ad = A.to_dense()
    m = A.rows
    if cfg.use_cg(m):
        def matvec(z):
            return A.apply(vbar ** 2 * A.adjoint(z)) + lam * z

        g, ok, relres = _cg(matvec, -y, x0=warm_start, rtol=cfg.cg_tol,
                            maxiter=cfg.cg_max_iter)
        if not ok:
            raise InnerSolveError(f"CG did not converge (relres={relres:.3e})")
        method = "cg"
    else:
        M = (Ad * vbar ** 2) @ Ad.T + lam * np.eye(m)
        g = _chol_solve(M, -y, "group dual system", overwrite=True)
        method = "direct"
    alpha = -A.adjoint(g)
    x = vbar ** 2 * alpha
    ident = IdentityOperator(A.cols)
    res = _quad_kkt(A, ident, vbar, lam, y, x, alpha, g)
    return InnerSolution(x, alpha, g, res, system_size=m, method=method)


def solve_analysis_prox(L, v, gs, lam, y, cfg=DEFAULT):
    """Denoising specialization (``A = Id``): one p-by-p SPD solve."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    y = np.asarray(y, dtype=float).ravel()
    vbar, gs = _vbar(v, gs)
    p = L.rows
    M = lam * L.cogram()
    M.flat[::p + 1] += vbar ** 2
    alpha = _psd_solve(M, L.apply(y), "analysis prox system")
    x = y - lam * L.adjoint(alpha)
    xi = -L.adjoint(alpha)
    ident = IdentityOperator(L.cols)
    res = _quad_kkt(ident, L, vbar, lam, y, x, alpha, xi)
    return InnerSolution(x, alpha, xi, res, system_size=p, method="direct")


def solve_overlap_woodbury(A, ogroups, v, lam, y, cfg=DEFAULT):
    """Overlapping-group solve through the m-by-m inverted system.

    Valid when the groups span the index set and every ``v_g`` is nonzero;
    otherwise falls back to the extended saddle system on the lifted
    extractor.  The diagonal ``W_ii = sum_{g contains i} w_g^2 / v_g^2``
    makes the n-by-n reduced system invertible in closed form.
    """
    if ogroups.mode != "overlapping":
        raise ValueError("overlapping group structure required")
    v = np.asarray(v, dtype=float)
    L = BlockExtractOperator(ogroups, A.cols)
    lifted = L.lifted_partition()
    if not ogroups.spans():
        raise InnerSolveError("woodbury path requires groups spanning the index set")
    if np.any(v == 0.0):
        sol = solve_quadratic_general(A, L, v, lifted, lam, y, cfg)
        return sol
    y = np.asarray(y, dtype=float).ravel()
    m = A.rows
    wdiag = np.zeros(A.cols)
    for g, wg, vg in zip(ogroups.groups, L.block_weights, v):
        wdiag[g] += wg ** 2 / vg ** 2
    Ad = A.to_dense()
    b = A.adjoint(y)
    winv_b = b / wdiag
    AW = Ad / wdiag[None, :]
    S = lam * np.eye(m) + AW @ Ad.T
    if cfg.use_cg(m):
        t, ok, relres = _cg(lambda z: S @ z, Ad @ winv_b, rtol=cfg.cg_tol,
                            maxiter=cfg.cg_max_iter)
        if not ok:
            raise InnerSolveError(f"CG did not converge (relres={relres:.3e})")
    else:
        t = _chol_solve(S, Ad @ winv_b, "woodbury system", overwrite=True)
    x = (winv_b - A.adjoint(t) / wdiag) / lam
    vbar = extend(v, lifted)
    alpha = L.apply(x) / vbar ** 2
    xi = (A.apply(x) - y) / lam
    res = _quad_kkt(A, L, vbar, lam, y, x, alpha, xi)
    return InnerSolution(x, alpha, xi, res, system_size=m, method="woodbury")


def _robust_kkt(A, L, vbar, wbar, lam, y, x, alpha, xi):
    r1 = vbar ** 2 * alpha + L.apply(x)
    r2 = lam * wbar ** 2 * xi + A.apply(x) - y
    r3 = L.adjoint(alpha) + A.adjoint(xi)
    return float(max(np.abs(r1).max(initial=0), np.abs(r2).max(initial=0),
                     np.abs(r3).max(initial=0)))


def solve_robust(A, L, v, gs_reg, w, gs_loss, lam, y, cfg=DEFAULT):
    """Inner solve with both regularizer and loss in quadratic variational
    form (covers grouped TV with an l1-type loss and square-root lasso).

    Solves the symmetric saddle system; for ``A = Id`` the smaller
    p-by-p elimination ``(diag(vbar^2) + lam L diag(wbar^2) L^T) alpha = -L y``
    is used instead.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    y = np.asarray(y, dtype=float).ravel()
    vbar, _ = _vbar(v, gs_reg)
    wbar, _ = _vbar(w, gs_loss)
    m, n, p = A.rows, A.cols, L.rows

    if isinstance(A, IdentityOperator):
        Ld = L.to_dense()
        M = np.diag(vbar ** 2) + lam * ((Ld * (wbar ** 2)[None, :]) @ Ld.T)
        alpha = _psd_solve(M, -L.apply(y), "robust prox system")
        xi = -L.adjoint(alpha)
        x = y - lam * wbar ** 2 * xi
        res = _robust_kkt(A, L, vbar, wbar, lam, y, x, alpha, xi)
        return InnerSolution(x, alpha, xi, res, system_size=p, method="direct")

    Ad, Ld = A.to_dense(), L.to_dense()
    size = p + m + n
    M = np.zeros((size, size))
    M[:p, :p] = np.diag(vbar ** 2)
    M[:p, p + m:] = Ld
    M[p:p + m, p:p + m] = lam * np.diag(wbar ** 2)
    M[p:p + m, p + m:] = Ad
    M[p + m:, :p] = Ld.T
    M[p + m:, p:p + m] = Ad.T
    rhs = np.concatenate([np.zeros(p), y, np.zeros(n)])
    sol = _sym_solve(M, rhs, "robust saddle system")
    alpha, xi, x = sol[:p], sol[p:p + m], sol[p + m:]
    res = _robust_kkt(A, L, vbar, wbar, lam, y, x, alpha, xi)
    return InnerSolution(x, alpha, xi, res, system_size=size, method="direct")


def solve_basis_pursuit(A, L, v, gs, y, cfg=DEFAULT, feas_tol=1e-8):
    """Inner solve for exact interpolation ``A x = y``.

    Maximizes ``-||v * alpha||^2 / 2 + <alpha, L x0>`` over the constraint
    ``L^T alpha in range(A^T)`` via the equality-constrained KKT system.
    The support condition on ``v`` is the caller's responsibility; an
    infeasible right-hand side is reported as an error.
    """
    y = np.asarray(y, dtype=float).ravel()
    vbar, gs = _vbar(v, gs)
    if not np.any(vbar):
        raise InnerSolveError("basis pursuit requires v != 0")
    Ad, Ld = A.to_dense(), L.to_dense()
    m, n, p = A.rows, A.cols, L.rows
    size = p + m + n
    M = np.zeros((size, size))
    M[:p, :p] = -np.diag(vbar ** 2)
    M[:p, p + m:] = Ld
    M[p:p + m, p + m:] = Ad
    M[p + m:, :p] = Ld.T
    M[p + m:, p:p + m] = Ad.T
    rhs = np.concatenate([np.zeros(p), y, np.zeros(n)])
    sol = _sym_solve(M, rhs, "basis pursuit KKT system")
    alpha, xi, x = sol[:p], sol[p:p + m], sol[p + m:]
    feas = np.abs(A.apply(x) - y).max(initial=0)
    if feas > feas_tol * (1.0 + np.abs(y).max(initial=0)):
        raise InnerSolveError(f"infeasible data: ||Ax - y||_inf = {feas:.3e}")
    r1 = L.apply(x) - vbar ** 2 * alpha
    r3 = L.adjoint(alpha) + A.adjoint(xi)
    res = float(max(feas, np.abs(r1).max(initial=0), np.abs(r3).max(initial=0)))
    return InnerSolution(x, alpha, xi, res, system_size=size, method="direct")


def solve_multitask_nuclear(A, v, W, lam, Y, cfg=DEFAULT):
    """Row-sparse multitask inner solve with a nuclear-norm loss factor.

    Solves ``(A diag(v^2) A^T + W W^T / lam) alpha = -Y`` column-wise and
    recovers ``X = -diag(v^2) A^T alpha``.  A vanishing ``W`` makes the
    system rank-deficient; ``cfg.epsilon_floor`` adds a diagonal floor.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    v = np.asarray(v, dtype=float)
    W = np.asarray(W, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    Ad = A.to_dense()
    m = A.rows
    M = (Ad * v ** 2) @ Ad.T + (W @ W.T) / lam + cfg.epsilon_floor * np.eye(m)
    alpha = _psd_solve(M, -Y, "multitask system")
    X = -(v ** 2)[:, None] * (Ad.T @ alpha)
    res = float(np.abs(M @ alpha + Y).max(initial=0))
    return InnerSolution(X, alpha, None, res, system_size=m, method="direct")
