"""Diffusion models on the open positive orthant.

A model is carried symbolically: drift ``mu[i]`` and volatility
``sigma[i][k]`` are :class:`~ergodens.expr.Expression` objects, and the
diffusion matrix ``a = 1/2 sigma sigma^T`` is formed and simplified once
at construction.  Keeping the coefficients symbolic is what lets the
operators module take exact derivatives of them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import expr as ex
from .errors import ParameterError


@dataclass(frozen=True)
class CompactCube:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi):
            raise ParameterError("cube bounds have different lengths")
        if any(v <= 0 for v in lo):
            raise ParameterError(f"cube must lie in the open orthant, got lower={lo}")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ParameterError(f"cube needs lower < upper, got {lo} / {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n(self):
        return len(self.lower)

    def contains(self, points):
        """Boolean mask for ``points`` of shape (n, ...)."""
        pts = np.asarray(points, dtype=float)
        inside = np.ones(pts.shape[1:], dtype=bool)
        for j in range(self.n):
            inside &= (pts[j] >= self.lower[j]) & (pts[j] <= self.upper[j])
        return inside

    def center(self, geometric=False):
        if geometric:
            return tuple(float(np.sqrt(a * b)) for a, b in zip(self.lower, self.upper))
        return tuple(0.5 * (a + b) for a, b in zip(self.lower, self.upper))

    def to_dict(self):
        return {"lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class DiffusionModel:
    """dX_i = mu_i(X) dt + sum_k sigma_ik(X) dW_k on G = R_+^n."""

    n: int
    mu: tuple
    sigma: tuple
    a: tuple = field(init=False)
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise ParameterError("dimension must be at least 1")
        mu = tuple(ex._coerce(m) for m in self.mu)
        sigma = tuple(tuple(ex._coerce(s) for s in row) for row in self.sigma)
        if len(mu) != n or len(sigma) != n or any(len(r) != n for r in sigma):
            raise ParameterError(f"drift must have {n} entries and sigma must be {n}x{n}")
        for e in mu + tuple(s for r in sigma for s in r):
            if ex.max_var_index(e) > n:
                raise ParameterError(f"coefficient {e} uses a variable beyond x{n}")
        a = [[None] * n for _ in range(n)]
        for i in range(n):
            for j in range(i, n):
                entry = ex.simplify(ex.Mul(ex.Const(0.5), ex.Add(*[
                    ex.Mul(sigma[i][k], sigma[j][k]) for k in range(n)])))
                a[i][j] = a[j][i] = entry
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "mu", tuple(ex.simplify(m) for m in mu))
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "a", tuple(tuple(r) for r in a))

    def drift_at(self, x):
        return np.array([ex.evaluate(m, x) for m in self.mu])

    def diffusion_at(self, x):
        """Matrix a(x) at a single point."""
        return np.array([[ex.evaluate(self.a[i][j], x) for j in range(self.n)]
                         for i in range(self.n)])

    def volatility_at(self, x):
        return np.array([[ex.evaluate(self.sigma[i][k], x) for k in range(self.n)]
                         for i in range(self.n)])

    @property
    def diagonal(self):
        """True when every off-diagonal diffusion entry is identically zero."""
        return all(self.a[i][j] == ex.ZERO
                   for i in range(self.n) for j in range(self.n) if i != j)

    def to_dict(self):
        return {
            "name": self.name,
            "n": self.n,
            "params": {k: np.asarray(v).tolist() for k, v in self.params.items()},
            "mu": [ex.to_text(m) for m in self.mu],
            "sigma": [[ex.to_text(s) for s in row] for row in self.sigma],
        }


def _as_vec(values, n, label):
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 1 and n > 1:
        v = np.full(n, float(v[0]))
    if v.size != n:
        raise ParameterError(f"{label} needs {n} entries, got {v.size}")
    return v


def _check_common(n, mu0, mu_diag, sigma_diag):
    if np.any(sigma_diag <= 0):
        raise ParameterError(f"volatilities must be positive, got {sigma_diag.tolist()}")
    if np.any(mu_diag <= 0):
        raise ParameterError(f"mean-reversion rates must be positive, got {mu_diag.tolist()}")
    if np.any(mu0 <= 0):
        raise ParameterError(f"drift offsets must be positive, got {mu0.tolist()}")


def build_affine(n, mu0, mu_offdiag=None, mu_diag=1.0, sigma_diag=1.0):
    """Affine square-root model.

    mu_i = mu0_i + sum_{j != i} mu_offdiag[i, j] x_j - mu_diag_i x_i,
    sigma = diag(sigma_i sqrt(x_i)), so a_ii = sigma_i^2 x_i / 2.
    """
    n = int(n)
    mu0 = _as_vec(mu0, n, "mu0")
    mu_diag = _as_vec(mu_diag, n, "mu_diag")
    sig = _as_vec(sigma_diag, n, "sigma_diag")
    off = np.zeros((n, n)) if mu_offdiag is None else np.asarray(mu_offdiag, dtype=float).reshape(n, n)
    _check_common(n, mu0, mu_diag, sig)
    offmask = ~np.eye(n, dtype=bool)
    if np.any(off[offmask] < 0):
        raise ParameterError("off-diagonal drift couplings must be nonnegative")
    x = [ex.var(i + 1) for i in range(n)]
    mu = []
    for i in range(n):
        terms = [ex.Const(mu0[i])]
        terms += [off[i, j] * x[j] for j in range(n) if j != i and off[i, j] != 0]
        terms.append(-mu_diag[i] * x[i])
        mu.append(ex.Add(*terms))
    sigma = [[ex.ZERO] * n for _ in range(n)]
    for i in range(n):
        sigma[i][i] = sig[i] * x[i] ** 0.5
    off_clean = np.where(offmask, off, 0.0)
    return DiffusionModel(n, mu, sigma, name="affine", params={
        "mu0": mu0, "mu_offdiag": off_clean, "mu_diag": mu_diag, "sigma_diag": sig})


def build_stochvol_cascade(n, mu0, mu_couplings=None, mu_diag=1.0, sigma_diag=1.0):
    """Stochastic-volatility cascade.

    Component 1 is CIR.  Component i >= 2 has drift
    mu0_i + sum_{j < i} mu_couplings[i, j] x_j - mu_diag_i x_i and volatility
    sigma_i sqrt(x_{i-1} x_i).  Couplings above the diagonal are ignored.
    """
    n = int(n)
    mu0 = _as_vec(mu0, n, "mu0")
    mu_diag = _as_vec(mu_diag, n, "mu_diag")
    sig = _as_vec(sigma_diag, n, "sigma_diag")
    cpl = np.zeros((n, n)) if mu_couplings is None else np.asarray(mu_couplings, dtype=float).reshape(n, n)
    _check_common(n, mu0, mu_diag, sig)
    cpl = np.tril(cpl, -1)
    if np.any(cpl < 0):
        raise ParameterError("drift couplings must be nonnegative")
    if n == 1:
        return build_affine(1, mu0, None, mu_diag, sig)
    x = [ex.var(i + 1) for i in range(n)]
    mu, sigma = [], [[ex.ZERO] * n for _ in range(n)]
    for i in range(n):
        terms = [ex.Const(mu0[i])]
        terms += [cpl[i, j] * x[j] for j in range(i) if cpl[i, j] != 0]
        terms.append(-mu_diag[i] * x[i])
        mu.append(ex.Add(*terms))
        vol = x[i] if i == 0 else x[i - 1] * x[i]
        sigma[i][i] = sig[i] * vol ** 0.5
    return DiffusionModel(n, mu, sigma, name="stochvol_cascade", params={
        "mu0": mu0, "mu_couplings": cpl, "mu_diag": mu_diag, "sigma_diag": sig})


def build_explicit(mu, sigma, name="explicit"):
    """Model from explicit drift and volatility expressions (or their text form)."""
    def coerce(e):
        return ex.parse(e) if isinstance(e, str) else ex._coerce(e)

    mu = [coerce(m) for m in mu]
    sigma = [[coerce(s) for s in row] for row in sigma]
    return DiffusionModel(len(mu), mu, sigma, name=name)


def is_pure_cir(m):
    """(mu0, mu1, sigma) arrays when every component is an uncoupled CIR, else None."""
    if m.name != "affine":
        return None
    if np.any(m.params["mu_offdiag"] != 0):
        return None
    return m.params["mu0"], m.params["mu_diag"], m.params["sigma_diag"]


def sample_points(region, samples, seed=0):
    """Unscrambled Halton points in ``region``, geometric in each coordinate.

    Returns an array of shape (n, samples).  Log-uniform placement puts
    points near the 0-boundary, where the diffusion degenerates.
    """
    lo = np.log(np.asarray(region.lower))
    hi = np.log(np.asarray(region.upper))
    u = qmc.Halton(d=region.n, scramble=False, seed=seed).random(samples + 1)[1:]
    return np.exp(lo + u * (hi - lo)).T


def check_positive_definite(m, region, samples=256):
    """Sample-check that a(x) is positive definite on ``region``.

    Heuristic: tests the leading principal minors at low-discrepancy
    points.  Returns ``(ok, witness)`` where ``witness`` is the first
    failing point (``None`` when all samples pass).
    """
    if samples < 1:
        raise ParameterError("need at least one sample")
    pts = sample_points(region, samples)
    n = m.n
    amat = np.empty((pts.shape[1], n, n))
    for i in range(n):
        for j in range(n):
            amat[:, i, j] = ex.evaluate(m.a[i][j], pts)
    for k in range(1, n + 1):
        minors = np.linalg.det(amat[:, :k, :k])
        bad = np.flatnonzero(~(minors > 0))
        if bad.size:
            return False, tuple(pts[:, bad[0]])
    return True, None
