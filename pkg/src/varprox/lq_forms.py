"""Quadratic variational forms for grouped lq penalties and the
three-factor machinery that keeps the ``q <= 2/3`` range smooth.

Exponent bookkeeping: the two-factor form ``x = u * v`` with penalty
``||u||^2/2 + sum |v|^(2 beta) / (2 beta)`` represents ``q = 2 beta /
(1 + beta)`` and is smooth for ``q > 2/3``; the three-factor form
``x = u * (v w)`` with ``beta = q / (2 - 2 q)`` extends differentiability
down to ``q > 1/2``.
"""

from dataclasses import dataclass

import numpy as np

from .groups import extend, group_dots, group_sq_norms

__all__ = [
    "LqSpec", "lq_value", "optimal_eta", "optimal_two_factor",
    "optimal_three_factor", "lq_variational_check", "three_factor_objective",
]


@dataclass(frozen=True)
class LqSpec:
    """Exponent data for the factored representation of ``|.|^q``."""

    q: float
    factor_count: int = 3

    def __post_init__(self):
        if not 0.0 < self.q < 2.0:
            raise ValueError("q must lie in (0, 2)")
        if self.factor_count == 3 and self.q <= 0.5:
            raise ValueError("three factors keep q > 1/2 smooth; smaller q "
                             "needs more factors")
        if self.factor_count == 2 and self.q <= 2.0 / 3.0:
            raise ValueError("two smooth factors require q > 2/3")
        if self.factor_count not in (2, 3):
            raise ValueError("factor_count must be 2 or 3")

    @property
    def beta(self):
        if self.factor_count == 3:
            return self.q / (2.0 - 2.0 * self.q)
        return self.q / (2.0 - self.q)


def lq_value(x, gs, q):
    """``sum_g ||x_g||^q / q``."""
    if not 0.0 < q < 2.0:
        raise ValueError("q must lie in (0, 2)")
    norms = np.sqrt(group_sq_norms(x, gs))
    return float(np.sum(norms ** q)) / q


def optimal_eta(x, gs, q):
    """Stationary weights of the eta-form: ``eta_g = ||x_g||^(2-q)``."""
    return np.sqrt(group_sq_norms(x, gs)) ** (2.0 - q)


def optimal_two_factor(x, gs, q):
    """Closed-form minimizing split ``x = u * v`` for the two-factor form."""
    beta = LqSpec(q, factor_count=2).beta
    norms = np.sqrt(group_sq_norms(x, gs))
    v = norms ** (1.0 / (1.0 + beta))
    vbar = extend(v, gs)
    u = np.divide(np.asarray(x, dtype=float), vbar,
                  out=np.zeros(gs.p), where=vbar > 0)
    return u, v


def optimal_three_factor(x, gs, q):
    """Closed-form minimizing split ``x = u * (v w)`` for the three-factor
    form: ``w_g = ||x_g||^(1/(2 beta + 1))`` and ``v_g = w_g^beta``."""
    beta = LqSpec(q, factor_count=3).beta
    norms = np.sqrt(group_sq_norms(x, gs))
    w = norms ** (1.0 / (2.0 * beta + 1.0))
    v = norms ** (beta / (2.0 * beta + 1.0))
    vw = extend(v * w, gs)
    u = np.divide(np.asarray(x, dtype=float), vw,
                  out=np.zeros(gs.p), where=vw > 0)
    return u, v, w


def _eta_form_value(x, gs, q, eta):
    beta = LqSpec(q, factor_count=2).beta
    sq = group_sq_norms(x, gs)
    eta = np.asarray(eta, dtype=float)
    if (eta < 0).any():
        raise ValueError("eta must be nonnegative")
    value = np.sum(eta ** beta) / (2.0 * beta)
    live = eta > 0
    if np.any(sq[~live] > 0):
        return np.inf
    value += 0.5 * float(np.sum(sq[live] / eta[live]))
    return float(value)


def _three_factor_value(x, gs, q, u, v, w, tol=1e-10):
    beta = LqSpec(q, factor_count=3).beta
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    rebuilt = u * extend(v * w, gs)
    if np.abs(rebuilt - np.asarray(x, dtype=float)).max(initial=0) > tol * (
            1.0 + np.abs(x).max(initial=0)):
        raise ValueError("factors do not reproduce x")
    return (0.5 * float(u @ u) + 0.5 * float(v @ v)
            + float(np.sum(np.abs(w) ** (2.0 * beta))) / (2.0 * beta))


def lq_variational_check(x, gs, q, eta=None, factors=None):
    """Variational objective minus the lq value (nonnegative gap).

    Pass either the eta weights of the reweighting form or a three-factor
    tuple ``(u, v, w)``; the gap vanishes exactly at the closed-form
    minimizers.
    """
    if (eta is None) == (factors is None):
        raise ValueError("provide exactly one of eta or factors")
    if eta is not None:
        value = _eta_form_value(x, gs, q, eta)
    else:
        value = _three_factor_value(x, gs, q, *factors)
    return value - lq_value(x, gs, q)


def three_factor_objective(u, v, w, A, y, lam, gs):
    """Joint objective ``(||u||^2 + ||v||^2 + ||w||^2)/2 + F0(A x)`` at
    ``x = u * (v w)`` with the quadratic loss, plus all gradient blocks.

    This is the fully expanded ``q = 2/3`` parameterization (``beta = 1``
    turns the third penalty quadratic).
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    vw_bar = extend(v * w, gs)
    x = u * vw_bar
    r = A.apply(x) - y
    value = (0.5 * (float(u @ u) + float(v @ v) + float(w @ w))
             + float(r @ r) / (2.0 * lam))
    g = A.adjoint(r) / lam
    ug = group_dots(u, g, gs)
    grad_u = u + vw_bar * g
    grad_v = v + w * ug
    grad_w = w + v * ug
    return value, grad_u, grad_v, grad_w
