"""Sampled certification of the barrier conditions outside a compact cube.

Certification is numerical evidence, not proof: the conditions are
evaluated on a dense geometric grid over a hull around K plus far-field
probe points, and every certificate is flagged ``sampled, non-rigorous``.
Geometric spacing concentrates points at the 0-boundary, where the
diffusion degenerates and the conditions are hardest to meet.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import expr as ex
from . import operators as ops
from .barrier import (CUSTOM, POWER_EXP, NESTED_ROOT, make_barrier, strengthen_barrier,
                      strengthened_pairs)
from .errors import DomainError, ParameterError
from .model import CompactCube

RIGOR = "sampled, non-rigorous"
MARGIN_SLACK = 1e-9
C_HEADROOM = 1.1


@dataclass(frozen=True)
class SamplingSpec:
    """Geometric tensor grid on [shell_min, shell_max]^n plus far-field probes.

    ``points`` is the node count per coordinate (default depends on n).
    Probes sit ``probe_decades`` decades beyond each end of the hull.
    """

    shell_min: float = 1e-6
    shell_max: float = 1e4
    points: int | None = None
    probe_decades: int = 4

    def nodes(self, n):
        k = self.points or {1: 400, 2: 160}.get(n, 40)
        return np.geomspace(self.shell_min, self.shell_max, int(k))

    def validate(self, cube):
        if self.shell_min <= 0 or self.shell_max <= self.shell_min:
            raise ParameterError("need 0 < shell_min < shell_max")
        if self.shell_min > 1e-4 * min(cube.lower):
            raise ParameterError(
                f"shell_min={self.shell_min:g} must be <= 1e-4 * K.lower = {1e-4 * min(cube.lower):g}")
        if self.shell_max < 1e2 * max(cube.upper):
            raise ParameterError(
                f"shell_max={self.shell_max:g} must be >= 1e2 * K.upper = {1e2 * max(cube.upper):g}")

    def grid(self, n):
        axes = np.meshgrid(*([self.nodes(n)] * n), indexing="ij")
        return np.stack([a.reshape(-1) for a in axes])

    def probes(self, n):
        """Points with one coordinate beyond the hull, the others on a coarse grid."""
        far = [self.shell_min * 10.0 ** -k for k in range(1, self.probe_decades + 1)]
        far += [self.shell_max * 10.0 ** k for k in range(1, self.probe_decades + 1)]
        coarse = np.geomspace(self.shell_min, self.shell_max, 9)
        cols = []
        for j in range(n):
            others = np.meshgrid(*([coarse] * (n - 1)), indexing="ij") if n > 1 else []
            others = [o.reshape(-1) for o in others]
            m = others[0].size if others else 1
            for v in far:
                block = np.empty((n, m))
                block[j] = v
                rest = [k for k in range(n) if k != j]
                for k, o in zip(rest, others):
                    block[k] = o
                cols.append(block)
        return np.concatenate(cols, axis=1)

    def to_dict(self, n=None):
        d = asdict(self)
        if n is not None:
            d["points"] = int(self.nodes(n).size)
            d["dimension"] = n
        return d


@dataclass
class ConditionResult:
    name: str
    worst: float
    witness: tuple | None
    strict: bool
    satisfied: bool
    note: str = ""

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


@dataclass
class Certificate:
    model: dict
    barrier: dict
    cube: CompactCube
    conditions: dict
    sampling: dict
    gronwall_C: float | None = None
    rigor: str = RIGOR
    error: str | None = None
    search: dict | None = field(default=None)

    @property
    def passed_12(self):
        if self.error:
            return False
        return all(self.conditions[k].satisfied for k in ("condition1", "condition2"))

    @property
    def passed_3(self):
        keys = [k for k in self.conditions if k.startswith("condition3")]
        if not keys:
            return None
        return all(self.conditions[k].satisfied for k in keys)

    @property
    def passed(self):
        """All checked conditions hold."""
        return self.passed_12 and self.passed_3 is not False

    @property
    def status(self):
        if self.passed:
            return "pass"
        return "partial" if self.passed_12 else "fail"

    def worst_failure(self):
        """The violated condition with the largest margin, or None."""
        bad = [c for c in self.conditions.values() if not c.satisfied]
        return max(bad, key=lambda c: c.worst) if bad else None

    def min_margin(self, keys=None):
        """Smallest signed slack -worst over the selected conditions."""
        keys = keys or list(self.conditions)
        return min(-self.conditions[k].worst for k in keys)

    def to_dict(self):
        return {
            "model": self.model,
            "barrier": self.barrier,
            "cube": self.cube.to_dict(),
            "conditions": {k: v.to_dict() for k, v in self.conditions.items()},
            "gronwall_C": self.gronwall_C,
            "status": self.status,
            "passed": self.passed,
            "rigor": self.rigor,
            "sampling": self.sampling,
            "error": self.error,
            "search": self.search,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), indent=2, default=_json_default, **kw)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _values(e, pts):
    """Evaluate on a point cloud; domain errors come back with a witness point."""
    try:
        return ex.evaluate(e, pts), None
    except DomainError as err:
        for k in range(pts.shape[1]):
            try:
                ex.evaluate(e, pts[:, k])
            except DomainError:
                return None, (tuple(float(v) for v in pts[:, k]), str(err))
        raise


def _worst(name, e, pts, strict, slack):
    vals, bad = _values(e, pts)
    if bad is not None:
        return ConditionResult(name, math.inf, bad[0], strict, False, f"domain error: {bad[1]}")
    vals = np.broadcast_to(vals, pts.shape[1:])
    nan = np.flatnonzero(np.isnan(vals))
    if nan.size:
        k = nan[0]
        return ConditionResult(name, math.inf, tuple(pts[:, k].tolist()), strict, False,
                               "non-finite value")
    k = int(np.argmax(vals))  # first index on ties
    worst = float(vals[k])
    ok = worst < -slack if strict else worst <= slack
    return ConditionResult(name, worst, tuple(pts[:, k].tolist()), strict, ok)


def _outside_points(cube, grid):
    pts = np.concatenate([grid.grid(cube.n), grid.probes(cube.n)], axis=1)
    return pts[:, ~cube.contains(pts)]


def condition_results(m, b, cube, grid, slack=MARGIN_SLACK, prefix="", pts=None):
    if pts is None:
        pts = _outside_points(cube, grid)
    coeffs = ops.adjoint_coefficients(m)
    c1 = ops.condition1_margin_expr(m, b, coeffs)
    c2 = ops.condition2_expr(m, b)
    return {
        f"{prefix}condition1": _worst(f"{prefix}condition1", c1, pts, True, slack),
        f"{prefix}condition2": _worst(f"{prefix}condition2", c2, pts, False, slack),
    }


def certify_outside_cube(m, b, cube, grid=None, assumption3=True, slack=MARGIN_SLACK,
                         with_constant=True):
    """Check conditions (1), (2) and optionally (3) on the sampled complement of K.

    Condition (1) is recorded as the largest value of (L*psi + psi)/psi and
    must be < -slack; condition (2) must be <= slack.  Condition (3) repeats
    both checks for each strengthened barrier x_i x_j psi, i <= j.
    """
    grid = grid or SamplingSpec()
    if not isinstance(cube, CompactCube):
        cube = CompactCube(*cube)
    if cube.n != m.n or b.n != m.n:
        raise ParameterError("model, barrier and cube dimensions differ")
    grid.validate(cube)
    pts = _outside_points(cube, grid)
    conditions = condition_results(m, b, cube, grid, slack, pts=pts)
    if assumption3:
        for i, j in strengthened_pairs(m.n):
            sb = strengthen_barrier(b, i, j)
            conditions.update(condition_results(m, sb, cube, grid, slack,
                                                prefix=f"condition3[{i},{j}].", pts=pts))
    cert = Certificate(m.to_dict(), b.describe(), cube, conditions, grid.to_dict(m.n))
    if with_constant and cert.passed_12:
        cert.gronwall_C = extract_constant_C(m, b, grid)
    return cert


def reciprocal_drift_sup(m, b, grid=None):
    """(sup, argmax point) of L(1/psi) + 1/psi over the full sampling grid."""
    grid = grid or SamplingSpec()
    pts = np.concatenate([grid.grid(m.n), grid.probes(m.n)], axis=1)
    factor = ex.evaluate(ops.reciprocal_drift_factor(m, b), pts)
    factor = np.broadcast_to(factor, pts.shape[1:])
    if np.any(np.isnan(factor)):
        raise DomainError("reciprocal drift is not finite on the grid")
    pos = factor > 0
    vals = np.full(factor.shape, -np.inf)
    if np.any(pos):
        vals[pos] = factor[pos] * np.exp(-b.log_psi(pts[:, pos]))
    k = int(np.argmax(vals))
    if not pos.any():
        return 0.0, tuple(pts[:, k].tolist())
    return float(vals[k]), tuple(pts[:, k].tolist())


def extract_constant_C(m, b, grid=None, headroom=C_HEADROOM):
    """C with L(1/psi) <= -1/psi + C on the grid: max(0, sup) times headroom."""
    sup, _ = reciprocal_drift_sup(m, b, grid)
    if not np.isfinite(sup):
        raise DomainError("reciprocal drift is unbounded on the grid")
    return max(0.0, sup) * headroom


def minimal_cube(m, b, grid=None, center=None, assumption3=False, slack=MARGIN_SLACK, iters=50):
    """Smallest cube [c e^-s, c e^s]^n (bisection on s) passing the checks.

    A convenience for choosing K; returns ``None`` if even the largest cube
    inside the hull fails.
    """
    grid = grid or SamplingSpec()
    n = m.n
    c = np.ones(n) if center is None else np.asarray(center, dtype=float)
    pts = np.concatenate([grid.grid(n), grid.probes(n)], axis=1)
    barriers = [b] + ([strengthen_barrier(b, i, j) for i, j in strengthened_pairs(n)]
                      if assumption3 else [])
    c1 = [ex.evaluate(ops.condition1_margin_expr(m, bb), pts) for bb in barriers]
    c2 = [ex.evaluate(ops.condition2_expr(m, bb), pts) for bb in barriers]
    spread = np.max(np.abs(np.log(pts / c[:, None])), axis=0)

    def ok(s):
        out = spread > s
        return all(np.all(np.broadcast_to(v, out.shape)[out] < -slack) for v in c1) and \
            all(np.all(np.broadcast_to(v, out.shape)[out] <= slack) for v in c2)

    s_hi = min(np.log(c.min() / grid.shell_min), np.log(grid.shell_max / c.max())) - np.log(100.0)
    if s_hi <= 0 or not ok(s_hi):
        return None
    s_lo = 0.0
    if ok(s_lo):
        s_hi = s_lo
    for _ in range(iters):
        if s_hi - s_lo < 1e-6:
            break
        mid = 0.5 * (s_lo + s_hi)
        if ok(mid):
            s_hi = mid
        else:
            s_lo = mid
    s = max(s_hi, 1e-9)
    return CompactCube(c * math.exp(-s), c * math.exp(s))


def _score(cert):
    keys12 = ["condition1", "condition2"]
    m12 = cert.min_margin(keys12)
    feasible12 = cert.passed_12
    return (feasible12, cert.min_margin() if feasible12 else m12)


def search_parameters(m, family, ranges, budget=15, cube=None, grid=None, rounds=3,
                      assumption3=True, slack=MARGIN_SLACK):
    """Coordinate-wise grid search over barrier parameters.

    ``ranges`` maps ``"beta"`` and ``"gamma"`` to ``(lo, hi)`` boxes (shared
    by all coordinates, or one pair per coordinate).  Each round sweeps
    ``budget`` equally spaced values of one parameter at a time, keeping the
    best.  Candidates are ranked first by feasibility of conditions (1)-(2),
    then by the smallest margin across every checked condition.  Returns the
    best certificate with a ``search`` record; it fails when nothing is
    feasible.
    """
    if family not in (POWER_EXP, NESTED_ROOT):
        raise ParameterError(f"search supports {POWER_EXP!r} and {NESTED_ROOT!r}, not {family!r}")
    if cube is None:
        raise ParameterError("search needs a cube K")
    n = m.n

    def box(key):
        r = np.asarray(ranges[key], dtype=float)
        r = np.broadcast_to(r, (n, 2)) if r.ndim == 1 else r.reshape(n, 2)
        if np.any(r[:, 0] <= 0) or np.any(r[:, 0] >= r[:, 1]):
            raise ParameterError(f"{key} range must satisfy 0 < lo < hi, got {r.tolist()}")
        return r

    boxes = {"beta": box("beta"), "gamma": box("gamma")}
    current = {k: boxes[k].mean(axis=1).copy() for k in boxes}
    cache = {}

    def evaluate_at(params):
        key = (tuple(params["beta"]), tuple(params["gamma"]))
        if key not in cache:
            b = make_barrier(family, n, params["beta"], params["gamma"])
            cache[key] = certify_outside_cube(m, b, cube, grid, assumption3, slack,
                                              with_constant=False)
        return cache[key]

    best = evaluate_at(current)
    for _ in range(rounds):
        for key in ("beta", "gamma"):
            for j in range(n):
                lo, hi = boxes[key][j]
                for v in np.linspace(lo, hi, int(budget)):
                    trial = {k: current[k].copy() for k in current}
                    trial[key][j] = v
                    cert = evaluate_at(trial)
                    if _score(cert) > _score(best):
                        best, current = cert, trial
    b = make_barrier(family, n, current["beta"], current["gamma"])
    if best.passed_12:
        best.gronwall_C = extract_constant_C(m, b, grid)
    best.search = {
        "family": family,
        "ranges": {k: v.tolist() for k, v in boxes.items()},
        "budget": int(budget),
        "rounds": int(rounds),
        "evaluations": len(cache),
        "best_margin": _score(best)[1],
        "feasible": best.passed_12,
    }
    return best


def barrier_from_certificate(cert):
    d = cert.barrier
    if d["family"] == CUSTOM:
        return make_barrier(CUSTOM, d["n"], psi=ex.parse(d["psi"]))
    return make_barrier(d["family"], d["n"], d["beta"], d["gamma"])
