"""Generator, adjoint, and the barrier conditions as symbolic expressions.

For a model with diffusion matrix ``a`` and drift ``mu``::

    L f   = sum_ij a_ij d_i d_j f + sum_i mu_i d_i f
    L* g  = sum_ij a_ij d_i d_j g - sum_j b_j d_j g + c g
    b_j   = mu_j - 2 sum_i d_i a_ij
    c     = sum_ij d_i d_j a_ij - sum_j d_j mu_j

Every function returns a simplified :class:`~ergodens.expr.Expression`,
so the same objects serve pointwise certification and PDE assembly.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import expr as ex
from .expr import Add, Mul, Const, differentiate as D, simplify


@dataclass(frozen=True)
class AdjointCoefficients:
    b: tuple
    c: ex.Expression


def _sum(terms):
    terms = [t for t in terms if t != ex.ZERO]
    return Add(*terms) if terms else ex.ZERO


def _pairs(n):
    return [(i, j) for i in range(n) for j in range(n)]


def apply_generator(m, f):
    n = m.n
    terms = []
    for i, j in _pairs(n):
        if m.a[i][j] != ex.ZERO:
            terms.append(Mul(m.a[i][j], D(D(f, i + 1), j + 1)))
    terms += [Mul(m.mu[i], D(f, i + 1)) for i in range(n)]
    return simplify(_sum(terms))


def adjoint_coefficients(m):
    n = m.n
    b = tuple(
        simplify(m.mu[j] - 2.0 * _sum(D(m.a[i][j], i + 1) for i in range(n)))
        for j in range(n)
    )
    c = simplify(_sum(D(D(m.a[i][j], i + 1), j + 1) for i, j in _pairs(n))
                 - _sum(D(m.mu[j], j + 1) for j in range(n)))
    return AdjointCoefficients(b, c)


def apply_adjoint(m, g, coeffs=None):
    n = m.n
    ac = coeffs or adjoint_coefficients(m)
    terms = []
    for i, j in _pairs(n):
        if m.a[i][j] != ex.ZERO:
            terms.append(Mul(m.a[i][j], D(D(g, i + 1), j + 1)))
    terms += [Mul(Const(-1.0), ac.b[j], D(g, j + 1)) for j in range(n)]
    terms.append(Mul(ac.c, g))
    return simplify(_sum(terms))


def conservative_adjoint(m, g):
    """sum_ij d_i d_j (a_ij g) - sum_j d_j (mu_j g), expanded symbolically."""
    n = m.n
    second = _sum(D(D(Mul(m.a[i][j], g), i + 1), j + 1) for i, j in _pairs(n))
    first = _sum(D(Mul(m.mu[j], g), j + 1) for j in range(n))
    return simplify(second - first)


def _hess_over_psi(b, i, j):
    # d_i d_j psi / psi = d_i dlog_j + dlog_i dlog_j
    return Add(D(b.dlog[j], i + 1), Mul(b.dlog[i], b.dlog[j]))


def adjoint_ratio_expr(m, b, coeffs=None):
    """L*(psi) / psi, built from the log-gradient so psi never appears."""
    ac = coeffs or adjoint_coefficients(m)
    n = m.n
    terms = [Mul(m.a[i][j], _hess_over_psi(b, i, j)) for i, j in _pairs(n)
             if m.a[i][j] != ex.ZERO]
    terms += [Mul(Const(-1.0), ac.b[j], b.dlog[j]) for j in range(n)]
    terms.append(ac.c)
    return simplify(_sum(terms))


def condition1_expr(m, b):
    """L*(psi) + psi; condition (1) asks for a negative value outside K."""
    return simplify(Add(apply_adjoint(m, b.psi), b.psi))


def condition1_margin_expr(m, b, coeffs=None):
    """(L*(psi) + psi) / psi, the scale-free form used for certification."""
    return simplify(Add(adjoint_ratio_expr(m, b, coeffs), ex.ONE))


def condition2_expr(m, b):
    """-sum d_i d_j a_ij + sum d_i mu_i - 2 sum d_i (a_ij d_j log psi)."""
    n = m.n
    t1 = _sum(D(D(m.a[i][j], i + 1), j + 1) for i, j in _pairs(n))
    t2 = _sum(D(m.mu[i], i + 1) for i in range(n))
    t3 = _sum(D(Mul(m.a[i][j], b.dlog[j]), i + 1) for i, j in _pairs(n)
              if m.a[i][j] != ex.ZERO)
    return simplify(Add(Mul(Const(-1.0), t1), t2, Mul(Const(-2.0), t3)))


def reciprocal_drift_expr(m, b):
    """L(1/psi) + 1/psi, via the generator applied to 1/psi."""
    inv = simplify(ex.Pow(b.psi, -1.0))
    return simplify(Add(apply_generator(m, inv), inv))


def reciprocal_drift_factor(m, b):
    """Bracket B with L(1/psi) + 1/psi = B / psi.

    B = sum a_ij (dlog_i dlog_j - d_i dlog_j) - sum mu_j dlog_j + 1.
    Its sign decides the sign of the reciprocal drift without evaluating
    psi, which overflows as 1/psi in the far field.
    """
    n = m.n
    terms = [Mul(m.a[i][j], Add(Mul(b.dlog[i], b.dlog[j]), Mul(Const(-1.0), D(b.dlog[j], i + 1))))
             for i, j in _pairs(n) if m.a[i][j] != ex.ZERO]
    terms += [Mul(Const(-1.0), m.mu[j], b.dlog[j]) for j in range(n)]
    terms.append(ex.ONE)
    return simplify(_sum(terms))


def combined_condition_expr(m, b):
    """-sum a_ij d_i d_j psi + (2/psi) sum a_ij d_i psi d_j psi - sum mu_j d_j psi.

    This is the sum of conditions (1) and (2) after multiplying (2) by psi;
    it coincides with psi^2 L(1/psi).
    """
    psi = b.psi
    n = m.n
    grad = [D(psi, i + 1) for i in range(n)]
    hess = _sum(Mul(m.a[i][j], D(grad[j], i + 1)) for i, j in _pairs(n) if m.a[i][j] != ex.ZERO)
    quad = _sum(Mul(m.a[i][j], grad[i], grad[j]) for i, j in _pairs(n) if m.a[i][j] != ex.ZERO)
    drift = _sum(Mul(m.mu[j], grad[j]) for j in range(n))
    return simplify(Add(Mul(Const(-1.0), hess), Mul(Const(2.0), ex.Div(quad, psi)),
                        Mul(Const(-1.0), drift)))


@dataclass(frozen=True)
class HEquation:
    """d_t h = sum a_ij d_i d_j h - sum_i drift_i d_i h + potential * h."""

    drift: tuple
    potential: ex.Expression


def h_equation(m, b, coeffs=None):
    """Coefficients of the evolution equation for h = rho / psi."""
    ac = coeffs or adjoint_coefficients(m)
    n = m.n
    drift = tuple(
        simplify(ac.b[i] - 2.0 * _sum(Mul(m.a[i][j], b.dlog[j]) for j in range(n)
                                      if m.a[i][j] != ex.ZERO))
        for i in range(n)
    )
    return HEquation(drift, adjoint_ratio_expr(m, b, ac))


def apply_h_operator(m, heq, h):
    n = m.n
    terms = [Mul(m.a[i][j], D(D(h, i + 1), j + 1)) for i, j in _pairs(n) if m.a[i][j] != ex.ZERO]
    terms += [Mul(Const(-1.0), heq.drift[i], D(h, i + 1)) for i in range(n)]
    terms.append(Mul(heq.potential, h))
    return simplify(_sum(terms))
