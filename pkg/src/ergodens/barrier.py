"""Barrier (Lyapunov) functions psi > 0 vanishing at the boundary of the orthant.

Each barrier carries the log-gradient ``dlog[j] = d_j log psi``, built
in closed form per family.  Downstream code works with ``dlog`` rather
than with ``psi`` itself, since psi under- or overflows long before the
normalised conditions do.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import expr as ex
from .errors import ParameterError
from .model import CompactCube

POWER_EXP = "power_exp"
NESTED_ROOT = "nested_root"
CUSTOM = "custom"


@dataclass(frozen=True)
class BarrierFunction:
    n: int
    psi: ex.Expression
    dlog: tuple
    family: str = CUSTOM
    beta: tuple = ()
    gamma: tuple = ()
    strengthened: tuple = ()

    def __call__(self, *x):
        return ex.evaluate(self.psi, x)

    def log_psi(self, x):
        """log psi at points ``x`` (shape (n, ...)), stable where psi underflows."""
        x = [np.asarray(c, dtype=float) for c in x]
        if self.family == CUSTOM:
            return np.log(ex.evaluate(self.psi, x))
        out = sum(b * np.log(c) for b, c in zip(self.beta, x))
        if self.family == POWER_EXP:
            out = out - sum(g * c for g, c in zip(self.gamma, x))
        else:
            out = out - ex.evaluate(nested_root_phi(self.n, self.gamma), x)
        return out

    def describe(self):
        return {
            "family": self.family,
            "n": self.n,
            "beta": list(self.beta),
            "gamma": list(self.gamma),
            "strengthened": [list(p) for p in self.strengthened],
            "psi": ex.to_text(self.psi),
        }


def _params(n, beta, gamma):
    n = int(n)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    if beta.size == 1 and n > 1:
        beta = np.full(n, beta[0])
    if gamma.size == 1 and n > 1:
        gamma = np.full(n, gamma[0])
    if beta.size != n or gamma.size != n:
        raise ParameterError(f"need {n} beta and {n} gamma values")
    if np.any(beta <= 0) or np.any(gamma <= 0):
        raise ParameterError(f"barrier parameters must be positive, got beta={beta.tolist()} gamma={gamma.tolist()}")
    return n, tuple(beta.tolist()), tuple(gamma.tolist())


def _power_part(beta):
    return [ex.var(j + 1) ** b for j, b in enumerate(beta)]


def make_power_exp_barrier(n, beta, gamma):
    """psi = prod x_j^beta_j * exp(-sum gamma_j x_j); dlog_j = beta_j / x_j - gamma_j."""
    n, beta, gamma = _params(n, beta, gamma)
    x = [ex.var(j + 1) for j in range(n)]
    psi = ex.Mul(*_power_part(beta), ex.exp(ex.Add(*[-g * xj for g, xj in zip(gamma, x)])))
    dlog = tuple(ex.simplify(beta[j] * x[j] ** -1 - gamma[j]) for j in range(n))
    return BarrierFunction(n, ex.simplify(psi), dlog, POWER_EXP, beta, gamma)


def nested_root_phi(n, gamma):
    """phi = (1 + sum_j gamma_j x_j^(2^(n-j)))^(1 / 2^(n-1)).

    ``gamma[0]`` multiplies x_1^(2^(n-1)); setting it to 1 gives the unit
    coefficient of the classical family.
    """
    x = [ex.var(j + 1) for j in range(n)]
    inner = ex.Add(ex.ONE, *[gamma[j] * x[j] ** float(2 ** (n - 1 - j)) for j in range(n)])
    return ex.simplify(inner ** (1.0 / 2 ** (n - 1)))


def make_nested_root_barrier(n, beta, gamma):
    """psi = prod x_j^beta_j * exp(-phi(x)) with the nested-root phi."""
    n, beta, gamma = _params(n, beta, gamma)
    x = [ex.var(j + 1) for j in range(n)]
    q = 1.0 / 2 ** (n - 1)
    inner = ex.Add(ex.ONE, *[gamma[j] * x[j] ** float(2 ** (n - 1 - j)) for j in range(n)])
    phi = ex.simplify(inner ** q)
    psi = ex.simplify(ex.Mul(*_power_part(beta), ex.exp(-phi)))
    dlog = []
    for j in range(n):
        k = 2 ** (n - 1 - j)
        dphi = q * gamma[j] * k * inner ** (q - 1.0) * (x[j] ** float(k - 1) if k > 1 else ex.ONE)
        dlog.append(ex.simplify(beta[j] * x[j] ** -1 - dphi))
    return BarrierFunction(n, psi, tuple(dlog), NESTED_ROOT, beta, gamma)


def make_custom_barrier(psi, n=None):
    """Barrier from an arbitrary positive expression; dlog = d_j psi / psi."""
    psi = ex.parse(psi) if isinstance(psi, str) else psi
    n = ex.max_var_index(psi) if n is None else int(n)
    dlog = tuple(ex.simplify(ex.Div(ex.differentiate(psi, j + 1), psi)) for j in range(n))
    return BarrierFunction(n, ex.simplify(psi), dlog, CUSTOM)


def make_barrier(family, n, beta=None, gamma=None, psi=None):
    if family == POWER_EXP:
        return make_power_exp_barrier(n, beta, gamma)
    if family == NESTED_ROOT:
        return make_nested_root_barrier(n, beta, gamma)
    if family == CUSTOM:
        return make_custom_barrier(psi, n)
    raise ParameterError(f"unknown barrier family {family!r}")


def strengthen_barrier(b, i, j):
    """Barrier x_i * x_j * psi (1-based indices; i == j allowed)."""
    if not (1 <= i <= b.n and 1 <= j <= b.n):
        raise ParameterError(f"indices ({i}, {j}) out of range for n={b.n}")
    pair = tuple(sorted((i, j)))
    if b.family in (POWER_EXP, NESTED_ROOT):
        beta = list(b.beta)
        beta[i - 1] += 1.0
        beta[j - 1] += 1.0
        make = make_power_exp_barrier if b.family == POWER_EXP else make_nested_root_barrier
        out = make(b.n, beta, b.gamma)
        return replace(out, strengthened=b.strengthened + (pair,))
    xi, xj = ex.var(i), ex.var(j)
    psi = ex.simplify(xi * xj * b.psi)
    dlog = list(b.dlog)
    dlog[i - 1] = ex.simplify(dlog[i - 1] + xi ** -1)
    dlog[j - 1] = ex.simplify(dlog[j - 1] + xj ** -1)
    return BarrierFunction(b.n, psi, tuple(dlog), CUSTOM, strengthened=b.strengthened + (pair,))


def strengthened_pairs(n):
    return [(i, j) for i in range(1, n + 1) for j in range(i, n + 1)]


def check_boundary_decay(b, cube, near=1e-12, far=1e6, ratio=1e-3, probes=8):
    """Sampled check that psi vanishes along every axis and at infinity.

    For each coordinate, psi is probed along a geometric sequence from the
    cube face out to ``near`` (resp. ``far``), the other coordinates held at
    the cube's geometric centre.  The probes must decrease strictly and the
    last one must fall below ``ratio`` times psi at that centre (on wide
    cubes the arithmetic midpoint already sits in the tail).  Returns
    ``(ok, failures)`` with failures as ``(coordinate, end)`` pairs.
    """
    if not isinstance(cube, CompactCube):
        cube = CompactCube(*cube)
    c = np.asarray(cube.center(geometric=True), dtype=float)
    ref = b.log_psi(c)
    failures = []
    for j in range(b.n):
        lo = max(cube.lower[j], near * 10)
        hi = min(cube.upper[j], far / 10)
        for start, end in ((lo, near), (hi, far)):
            vals = np.geomspace(start, end, probes)
            pts = np.repeat(c[:, None], probes, axis=1)
            pts[j] = vals
            lp = b.log_psi(pts)
            if not (np.all(np.diff(lp) < 0) and lp[-1] < ref + np.log(ratio)):
                failures.append((j + 1, end))
    return not failures, failures
