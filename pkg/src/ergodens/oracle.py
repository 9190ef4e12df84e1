"""Analytic ground truth for the one-dimensional CIR family, plus quadrature checks.

For dX = (mu0 - mu1 X) dt + sigma sqrt(X) dW the stationary law is
Gamma(shape 2 mu0 / sigma^2, rate 2 mu1 / sigma^2), and the transition
law is a scaled noncentral chi-square.  The transition density is summed
here as a Poisson mixture of Gamma densities (the Bessel series of the
noncentral chi-square), in log space, with a ratio-test bound on the
truncated tail.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gammaln, logsumexp

from . import expr as ex
from . import operators as ops
from .errors import DomainError, ParameterError, PrecisionError


@dataclass(frozen=True)
class CirParams:
    mu0: float
    mu1: float
    sigma: float

    def __post_init__(self):
        if min(self.mu0, self.mu1, self.sigma) <= 0:
            raise ParameterError(f"CIR parameters must be positive, got {self}")

    @property
    def feller(self):
        """True when 2 mu0 > sigma^2 (the origin is not reached)."""
        return 2 * self.mu0 > self.sigma ** 2

    @property
    def shape(self):
        return 2 * self.mu0 / self.sigma ** 2

    @property
    def rate(self):
        return 2 * self.mu1 / self.sigma ** 2

    @property
    def mode(self):
        return max(self.shape - 1.0, 0.0) / self.rate

    @classmethod
    def from_model(cls, m):
        from .model import is_pure_cir
        cir = is_pure_cir(m)
        if cir is None or m.n != 1:
            raise ParameterError("model is not a one-dimensional CIR process")
        return cls(float(cir[0][0]), float(cir[1][0]), float(cir[2][0]))


def _positive(y, label="y"):
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError(f"{label} must be positive")
    return y


def cir_stationary_density(p, y):
    y = _positive(y)
    k, r = p.shape, p.rate
    out = np.exp(k * np.log(r) + (k - 1) * np.log(y) - r * y - math.lgamma(k))
    return float(out) if out.ndim == 0 else out


def cir_transition_density(p, t, x0, y, tol=1e-10, max_terms=200_000):
    """Density of X_t at ``y`` given X_0 = ``x0``.

    The tail after N terms is bounded by term_N * r / (1 - r), where r is
    the (decreasing) ratio of consecutive terms; terms are added until
    that bound drops below ``tol``.  Raises :class:`PrecisionError` if
    ``max_terms`` is not enough.
    """
    if t <= 0:
        raise DomainError("t must be positive")
    _positive(x0, "x0")
    y = _positive(y)
    scalar = y.ndim == 0
    y = np.atleast_1d(y)
    decay = math.exp(-p.mu1 * t)
    c = 2 * p.mu1 / (p.sigma ** 2 * (1 - decay))
    u = c * x0 * decay
    q = p.shape - 1.0
    z = u * c * y

    # log of the i-th mixture term: Poisson(i; u) * Gamma(y; q + 1 + i, c)
    base = -u - c * y + (q + 1) * math.log(c) + q * np.log(y) - math.lgamma(q + 1)

    def log_terms(i):
        i = i[None, :]
        return (base[:, None] + i * np.log(z)[:, None]
                - gammaln(i + 1) - (gammaln(q + 1 + i) - math.lgamma(q + 1)))

    n = 64
    while True:
        # the peak term sits near sqrt(z); start the tail bound past it
        need = int(np.sqrt(z.max())) * 2 + 16
        n = max(n, need)
        if n > max_terms:
            raise PrecisionError(f"transition density needs more than {max_terms} terms")
        idx = np.arange(n, dtype=float)
        lt = log_terms(idx)
        last = n - 1
        ratio = z / ((last + 1) * (last + q + 1 + 1))
        if np.all(ratio < 0.5):
            tail = np.exp(lt[:, -1]) * ratio / (1 - ratio)
            if np.all(tail <= tol):
                break
        n *= 2
    out = np.exp(logsumexp(lt, axis=1))
    return float(out[0]) if scalar else out


def chapman_kolmogorov_residual(p, s, t, x0, y):
    """|int rho(s, x0, z) rho(t, z, y) dz - rho(s + t, x0, y)| by adaptive quadrature."""
    direct = cir_transition_density(p, s + t, x0, y)

    def integrand(zz):
        return cir_transition_density(p, s, x0, zz) * cir_transition_density(p, t, zz, y)

    upper = 10 * (p.mu0 / p.mu1 + x0 + y) + 50 * p.sigma ** 2 / p.mu1
    val, _ = integrate.quad(integrand, 0, upper, limit=400, epsabs=1e-12, epsrel=1e-10,
                            points=sorted({x0, y, p.mu0 / p.mu1}))
    return abs(val - direct), val, direct


def polynomial_bump(lower, upper, power=3, weight=None):
    """prod_j ((x_j - l_j)(u_j - x_j))^power, optionally times ``weight``.

    With power >= 3 the bump vanishes with two derivatives at the box
    faces, which is what the duality check needs.
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    factors = []
    for j, (lo, hi) in enumerate(zip(lower, upper)):
        x = ex.var(j + 1)
        factors.append(ex.Pow(x - lo, float(power)))
        factors.append(ex.Pow(hi - x, float(power)))
    if weight is not None:
        factors.append(weight)
    return ex.simplify(ex.Mul(*factors))


@dataclass(frozen=True)
class QuadSpec:
    lower: tuple
    upper: tuple
    epsabs: float = 1e-13
    epsrel: float = 1e-11
    limit: int = 200


def integrate_box(fn, quad):
    """Adaptive Gauss-Kronrod quadrature of ``fn(x)`` over a 1D or 2D box."""
    lo, hi = np.atleast_1d(quad.lower), np.atleast_1d(quad.upper)
    if lo.size == 1:
        val, _ = integrate.quad(lambda a: fn([a]), lo[0], hi[0], epsabs=quad.epsabs,
                                epsrel=quad.epsrel, limit=quad.limit)
        return val
    if lo.size == 2:
        def inner(a):
            v, _ = integrate.quad(lambda b: fn([a, b]), lo[1], hi[1], epsabs=quad.epsabs,
                                  epsrel=quad.epsrel, limit=quad.limit)
            return v
        val, _ = integrate.quad(inner, lo[0], hi[0], epsabs=quad.epsabs,
                                epsrel=quad.epsrel, limit=quad.limit)
        return val
    raise ParameterError("quadrature boxes are limited to one or two dimensions")


def adjoint_duality_check(m, f, g, quad):
    """|int L(f) g - int f L*(g)| / (1 + |int L(f) g|) over the box of ``quad``.

    ``f`` and ``g`` must vanish together with two derivatives on the box
    faces so the boundary terms of integration by parts drop out.
    """
    lhs_e = ex.simplify(ex.Mul(ops.apply_generator(m, f), g))
    rhs_e = ex.simplify(ex.Mul(f, ops.apply_adjoint(m, g)))
    lhs_f, rhs_f = ex.lambdify(lhs_e, m.n), ex.lambdify(rhs_e, m.n)
    lhs = integrate_box(lambda x: float(lhs_f(x)), quad)
    rhs = integrate_box(lambda x: float(rhs_f(x)), quad)
    return abs(lhs - rhs) / (1 + abs(lhs))
