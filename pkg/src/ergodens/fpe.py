"""Forward Kolmogorov solver on truncated 1D/2D orthant grids.

Finite volumes on a geometric grid: every node owns a cell bounded by the
midpoints to its neighbours, and along each axis the face flux is

    J = mu_face * (rho_k + rho_{k+1}) / 2 - (a_{k+1} rho_{k+1} - a_k rho_k) / h_k

with J = 0 on the outer faces.  Fluxes telescope, so mass is conserved
to rounding.  Time stepping is implicit (backward Euler by default) with
LU factors computed once; in 2D the axes are split (Lie) and any
off-diagonal diffusion enters explicitly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import expr as ex
from .errors import ParameterError, SolverError, UnsupportedDimensionError
from .model import CompactCube
from .operators import adjoint_coefficients

IMPLICIT = "implicit"
CRANK_NICOLSON = "crank_nicolson"
MOSER_POWERS = (2, 4, 8, 16)
MASS_TOL = 1e-6
CLIP_TOL = 1e-8
CENTRAL = "central"
EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class Grid:
    axes: tuple

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        if not 1 <= len(axes) <= 2:
            raise UnsupportedDimensionError(f"grids are limited to 1 or 2 dimensions, got {len(axes)}")
        for a in axes:
            if a.ndim != 1 or a.size < 3 or a[0] <= 0 or np.any(np.diff(a) <= 0):
                raise ParameterError("grid nodes must be positive and strictly increasing")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def geometric(cls, lower, upper, counts):
        lower, upper = np.atleast_1d(lower), np.atleast_1d(upper)
        counts = np.broadcast_to(np.atleast_1d(counts), lower.shape)
        return cls(tuple(np.geomspace(lo, hi, int(c)) for lo, hi, c in zip(lower, upper, counts)))

    @property
    def n(self):
        return len(self.axes)

    @property
    def shape(self):
        return tuple(a.size for a in self.axes)

    @property
    def size(self):
        return int(np.prod(self.shape))

    def widths(self, d):
        y = self.axes[d]
        mid = 0.5 * (y[1:] + y[:-1])
        faces = np.concatenate([[y[0] - (mid[0] - y[0])], mid, [y[-1] + (y[-1] - mid[-1])]])
        return np.diff(faces)

    @property
    def volumes(self):
        v = self.widths(0)
        for d in range(1, self.n):
            v = np.multiply.outer(v, self.widths(d))
        return v

    def mesh(self):
        """Node coordinates as an array of shape (n, *shape)."""
        return np.array(np.meshgrid(*self.axes, indexing="ij"))

    def refine(self):
        """Grid with every interval split at its geometric midpoint."""
        out = []
        for y in self.axes:
            r = np.empty(2 * y.size - 1)
            r[0::2] = y
            r[1::2] = np.sqrt(y[1:] * y[:-1])
            out.append(r)
        return Grid(tuple(out))

    def check_covers(self, cube, y_min=1e-3, factor=10.0):
        if not isinstance(cube, CompactCube):
            cube = CompactCube(*cube)
        for d, y in enumerate(self.axes):
            if y[0] > y_min or y[-1] < factor * cube.upper[d]:
                raise ParameterError(
                    f"axis {d + 1} spans [{y[0]:g}, {y[-1]:g}]; need lower <= {y_min:g} "
                    f"and upper >= {factor * cube.upper[d]:g}")

    def header(self):
        return {f"y{d + 1}": [float(y[0]), float(y[-1]), int(y.size)] for d, y in enumerate(self.axes)}


def grid_for_cube(cube, nodes=400, y_min=1e-3, factor=10.0):
    """Geometric grid from ``y_min`` to ``factor`` times the cube's upper corner."""
    if not isinstance(cube, CompactCube):
        cube = CompactCube(*cube)
    g = Grid.geometric([y_min] * cube.n, factor * np.asarray(cube.upper), nodes)
    g.check_covers(cube, y_min, factor)
    return g


@dataclass
class DensityField:
    grid: Grid
    values: np.ndarray
    time: float = 0.0

    @property
    def mass(self):
        return float(np.sum(self.values * self.grid.volumes))


@dataclass
class DensityTrace:
    """Summaries of h = rho / psi over time.

    ``l1_h`` and ``moser[p]`` are (mean over the grid of h^p)^(1/p) taken
    against the normalized cell-volume measure, so they increase with p
    at each time.  Multiply by ``domain_volume ** (1/p)`` for the plain
    Lebesgue norms.
    """

    times: list = field(default_factory=list)
    sup_h: list = field(default_factory=list)
    argmax: list = field(default_factory=list)
    l1_h: list = field(default_factory=list)
    moser: dict = field(default_factory=lambda: {p: [] for p in MOSER_POWERS})
    mass: list = field(default_factory=list)
    max_clip: list = field(default_factory=list)
    domain_volume: float = 1.0

    def arrays(self):
        out = {"time": np.array(self.times), "sup_h": np.array(self.sup_h),
               "l1_h": np.array(self.l1_h), "mass": np.array(self.mass),
               "max_clip": np.array(self.max_clip)}
        for p in MOSER_POWERS:
            out[f"l{p}_h"] = np.array(self.moser[p])
        return out


@dataclass
class ForwardOperator:
    """Split discrete forward operator: implicit per-axis parts plus an explicit remainder."""

    grid: Grid
    parts: list
    explicit: object = None

    @property
    def matrix(self):
        total = sum(self.parts[1:], self.parts[0])
        return total if self.explicit is None else total + self.explicit

    def apply(self, rho):
        return (self.matrix @ np.ravel(rho)).reshape(self.grid.shape)


def _coef(e, pts):
    f = ex.lambdify(e, pts.shape[0])
    return np.broadcast_to(np.asarray(f(pts), dtype=float), pts.shape[1:]).copy()


def _face_points(grid, d):
    pts = grid.mesh()
    sl = [slice(None)] * (grid.n + 1)
    lo, hi = list(sl), list(sl)
    lo[d + 1] = slice(None, -1)
    hi[d + 1] = slice(1, None)
    fp = pts[tuple(lo)].copy()
    fp[d] = 0.5 * (pts[tuple(lo)][d] + pts[tuple(hi)][d])
    return fp


def _bernoulli(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    with np.errstate(over="ignore"):
        return np.where(small, 1.0 - 0.5 * x, safe / np.expm1(safe))


def _axis_flux_matrix(m, grid, d, flux=CENTRAL):
    idx = np.arange(grid.size).reshape(grid.shape)
    y = grid.axes[d]
    h = np.diff(y)
    w = grid.widths(d)
    pts = grid.mesh()
    a = _coef(m.a[d][d], pts)
    mu_f = _coef(m.mu[d], _face_points(grid, d))
    take = lambda arr, s: np.take(arr, np.arange(arr.shape[d])[s], axis=d)
    a_lo, a_hi = take(a, slice(None, -1)), take(a, slice(1, None))
    shp = [1] * grid.n
    shp[d] = h.size
    hh = h.reshape(shp)
    if flux == CENTRAL:
        alpha = 0.5 * mu_f + a_lo / hh
        beta = 0.5 * mu_f - a_hi / hh
    elif flux == EXPONENTIAL:
        # exact for constant mu / a across the face; upwinds where diffusion degenerates
        peclet = mu_f * hh / (0.5 * (a_lo + a_hi))
        alpha = _bernoulli(-peclet) * a_lo / hh
        beta = -_bernoulli(peclet) * a_hi / hh
    else:
        raise ParameterError(f"unknown flux {flux!r}")
    k = take(idx, slice(None, -1)).ravel()
    k1 = take(idx, slice(1, None)).ravel()
    wshape = [1] * grid.n
    wshape[d] = w.size
    wk = np.broadcast_to(take(w.reshape(wshape), slice(None, -1)), alpha.shape).ravel()
    wk1 = np.broadcast_to(take(w.reshape(wshape), slice(1, None)), alpha.shape).ravel()
    alpha, beta = alpha.ravel(), beta.ravel()
    rows = np.concatenate([k, k, k1, k1])
    cols = np.concatenate([k, k1, k, k1])
    vals = np.concatenate([-alpha / wk, -beta / wk, alpha / wk1, beta / wk1])
    return sp.csc_matrix((vals, (rows, cols)), shape=(grid.size, grid.size))


def _cross_matrix(m, grid):
    # flux along axis d driven by -d_e (a_de rho), centred differences, zero outside
    n = grid.size
    idx = np.arange(n).reshape(grid.shape)
    a12 = _coef(m.a[0][1], grid.mesh()).ravel()
    rows, cols, vals = [], [], []
    for d, e in ((0, 1), (1, 0)):
        yd, ye = grid.axes[d], grid.axes[e]
        wd = grid.widths(d)
        for kd in range(yd.size - 1):
            for ke in range(1, ye.size - 1):
                span = ye[ke + 1] - ye[ke - 1]
                face = []
                for side in (kd, kd + 1):
                    for ee, sign in ((ke + 1, -1.0), (ke - 1, 1.0)):
                        node = (side, ee) if d == 0 else (ee, side)
                        face.append((idx[node], 0.5 * sign / span))
                for target, wsign in ((kd, -1.0), (kd + 1, 1.0)):
                    row = idx[(target, ke) if d == 0 else (ke, target)]
                    for col, coef in face:
                        rows.append(row)
                        cols.append(col)
                        vals.append(wsign * coef * a12[col] / wd[target])
    return sp.csc_matrix((vals, (rows, cols)), shape=(n, n))


def assemble_forward_operator(m, grid, flux=CENTRAL):
    """Conservative discretisation of rho -> sum d_i d_j (a_ij rho) - sum d_j (mu_j rho).

    ``flux="exponential"`` switches the face flux to the Scharfetter-Gummel
    form, which keeps the scheme monotone where a degenerates against mu.
    """
    if m.n > 2:
        raise UnsupportedDimensionError(
            f"the PDE solver handles n <= 2 (got n={m.n}); use Monte Carlo instead")
    if grid.n != m.n:
        raise ParameterError(f"grid has {grid.n} axes, model has {m.n} coordinates")
    parts = [_axis_flux_matrix(m, grid, d, flux) for d in range(m.n)]
    explicit = None if m.diagonal else _cross_matrix(m, grid)
    return ForwardOperator(grid, parts, explicit)


def assemble_expanded_operator(m, grid):
    """Node-wise a d^2 rho - b d rho + c rho with three-point differences.

    Rows next to the outer faces are taken from the conservative operator
    so the two discretisations share their boundary treatment.
    """
    if m.n > 2 or not m.diagonal:
        raise UnsupportedDimensionError("the expanded form is built for diagonal models with n <= 2")
    cons = assemble_forward_operator(m, grid)
    coeffs = adjoint_coefficients(m)
    pts = grid.mesh()
    idx = np.arange(grid.size).reshape(grid.shape)
    rows, cols, vals = [idx.ravel()], [idx.ravel()], [_coef(coeffs.c, pts).ravel()]
    boundary = np.zeros(grid.shape, bool)
    for d in range(m.n):
        take = lambda arr, s: np.take(arr, np.arange(arr.shape[d])[s], axis=d)
        y = grid.axes[d]
        shp = [1] * grid.n
        shp[d] = y.size - 2
        hm = np.diff(y)[:-1].reshape(shp)
        hp = np.diff(y)[1:].reshape(shp)
        ai = take(_coef(m.a[d][d], pts), slice(1, -1))
        bi = take(_coef(coeffs.b[d], pts), slice(1, -1))
        d2 = (2 / (hm * (hm + hp)), -2 / (hm * hp), 2 / (hp * (hm + hp)))
        d1 = (-hp / (hm * (hm + hp)), (hp - hm) / (hm * hp), hm / (hp * (hm + hp)))
        centre = take(idx, slice(1, -1))
        for k, s in enumerate((slice(None, -2), slice(1, -1), slice(2, None))):
            rows.append(centre.ravel())
            cols.append(take(idx, s).ravel())
            vals.append(np.broadcast_to(ai * d2[k] - bi * d1[k], centre.shape).ravel())
        for e in (0, -1):
            edge = [slice(None)] * grid.n
            edge[d] = e
            boundary[tuple(edge)] = True
    mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(grid.size, grid.size))
    keep = sp.diags((~boundary.ravel()).astype(float))
    edge_rows = sp.diags(boundary.ravel().astype(float))
    return ForwardOperator(grid, [sp.csc_matrix(keep @ mat + edge_rows @ cons.matrix)], None)


class _Stepper:
    def __init__(self, op, dt, scheme, split):
        eye = sp.identity(op.grid.size, format="csc")
        if split:
            parts, self.explicit = op.parts, op.explicit
        else:
            parts, self.explicit = [op.matrix], None
        self.dt = dt
        if scheme == IMPLICIT:
            self.solves = [splu(sp.csc_matrix(eye - dt * p)) for p in parts]
            self.rhs = [None] * len(parts)
        elif scheme == CRANK_NICOLSON:
            self.solves = [splu(sp.csc_matrix(eye - 0.5 * dt * p)) for p in parts]
            self.rhs = [sp.csr_matrix(eye + 0.5 * dt * p) for p in parts]
        else:
            raise ParameterError(f"unknown time scheme {scheme!r}")

    def __call__(self, rho):
        if self.explicit is not None:
            rho = rho + self.dt * (self.explicit @ rho)
        for lu, rhs in zip(self.solves, self.rhs):
            rho = lu.solve(rho if rhs is None else rhs @ rho)
        return rho


def h_values(rho, log_psi):
    """rho / psi through logs; psi underflows long before rho / psi does."""
    pos = rho > 0
    h = np.zeros_like(rho, dtype=float)
    with np.errstate(over="ignore", under="ignore"):
        h[pos] = np.exp(np.log(rho[pos]) - log_psi[pos])
    return h


def _h_stats(rho, log_psi, vol, domain):
    h = h_values(rho, log_psi)
    w = vol / domain
    top = float(h.max())
    arg = int(np.argmax(h))
    stats = {"sup": top, "arg": arg, "l1": float(np.sum(w * h))}
    scaled = h / top if top > 0 else h
    for p in MOSER_POWERS:
        stats[p] = top * float(np.sum(w * scaled ** p)) ** (1.0 / p) if top > 0 else 0.0
    return stats


def evolve(op, rho0, dt, T, b, scheme=IMPLICIT, trace_stride=1, mass_tol=MASS_TOL,
           clip_tol=CLIP_TOL, record_times=None, split=True):
    """Step d rho / dt = L* rho from ``rho0`` up to time T.

    Negative undershoots are zeroed each step and the lost mass restored
    by rescaling.  Raises :class:`SolverError` if a solve produces
    non-finite values, a step clips more than ``clip_tol`` of mass, or the
    mass drifts more than ``mass_tol`` from its initial value.  Returns
    ``(trace, final_field)``.

    ``split`` selects per-axis solves with the off-diagonal part stepped
    explicitly; ``split=False`` solves the full operator at once.  Centred
    mixed differences are not monotone, so models with off-diagonal
    diffusion typically clip more than ``clip_tol`` allows.
    """
    grid = op.grid
    if not isinstance(rho0, DensityField):
        rho0 = DensityField(grid, np.asarray(rho0, float))
    if np.any(rho0.values < 0):
        raise ParameterError("initial density must be nonnegative")
    steps = int(round(T / dt))
    if steps < 1:
        raise ParameterError("T must cover at least one step")
    vol = grid.volumes.ravel()
    domain = float(vol.sum())
    log_psi = b.log_psi(grid.mesh()).ravel()
    mesh = grid.mesh().reshape(grid.n, -1)
    stepper = _Stepper(op, dt, scheme, split)
    rho = rho0.values.ravel().copy()
    mass0 = float(rho @ vol)
    tr = DensityTrace(domain_volume=domain)
    marks = None
    if record_times is not None:
        marks = set(np.round(np.asarray(record_times) / dt).astype(int).tolist())

    def record(t, clip):
        s = _h_stats(rho, log_psi, vol, domain)
        tr.times.append(t)
        tr.sup_h.append(s["sup"])
        tr.argmax.append(tuple(mesh[:, s["arg"]].tolist()))
        tr.l1_h.append(s["l1"])
        for p in MOSER_POWERS:
            tr.moser[p].append(s[p])
        tr.mass.append(float(rho @ vol))
        tr.max_clip.append(clip)

    record(rho0.time, 0.0)
    worst_clip = 0.0
    for k in range(1, steps + 1):
        new = stepper(rho)
        if not np.all(np.isfinite(new)):
            raise SolverError("linear solve produced non-finite values", step=k)
        neg = new < 0
        clip = 0.0
        if neg.any():
            clip = float(-(new[neg] @ vol[neg]))
            new[neg] = 0.0
            new *= (rho @ vol) / (new @ vol)
        if clip_tol is not None and clip > clip_tol:
            raise SolverError(f"clipped mass {clip:.3e} exceeds {clip_tol:.1e}", step=k)
        rho = new
        worst_clip = max(worst_clip, clip)
        mass = float(rho @ vol)
        if abs(mass - mass0) > mass_tol:
            raise SolverError(f"mass drifted to {mass!r} from {mass0!r}", step=k)
        due = (k in marks) if marks is not None else (k % trace_stride == 0)
        if due or k == steps:
            record(rho0.time + k * dt, worst_clip)
            worst_clip = 0.0
    return tr, DensityField(grid, rho.reshape(grid.shape), rho0.time + steps * dt)


def barrier_density(grid, b):
    """rho0 = psi / int psi on the grid, so h(0) is the constant 1 / int psi."""
    psi = np.exp(b.log_psi(grid.mesh()))
    return DensityField(grid, psi / np.sum(psi * grid.volumes))


def bump_density(grid, x0, width):
    """Smooth compactly supported bump exp(-1 / (1 - r^2)) in the Euclidean ball of radius ``width``."""
    if not 0 < width <= 1:
        raise ParameterError("bump width must lie in (0, 1]")
    pts = grid.mesh()
    x0 = np.asarray(x0, float).reshape((-1,) + (1,) * grid.n)
    r2 = np.sum((pts - x0) ** 2, axis=0) / width ** 2
    inside = r2 < 1
    vals = np.zeros(grid.shape)
    vals[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    total = np.sum(vals * grid.volumes)
    if total <= 0:
        raise ParameterError("bump support contains no grid node")
    return DensityField(grid, vals / total)


def plateau_ratio(times, values, split=5.0):
    """max over t >= split divided by max over t <= split."""
    times, values = np.asarray(times), np.asarray(values)
    return float(values[times >= split].max() / values[times <= split].max())


def plateau_verdict(trace, split=5.0, factor=1.1):
    """Plateau ratios for sup h and each tracked Moser norm."""
    arr = trace.arrays()
    ratios = {k: plateau_ratio(arr["time"], arr[k], split)
              for k in ["sup_h"] + [f"l{p}_h" for p in MOSER_POWERS]}
    return all(r <= factor for r in ratios.values()), ratios


@dataclass
class ShortTimeReport:
    trace: DensityTrace
    final: DensityField
    scaled: np.ndarray
    median: float
    max_ratio: float
    min_ratio: float
    edge_ratio: float
    passed: bool


def dirac_shorttime_run(op, x0, bump_width, dt, b, T=1.0, window=(0.05, 1.0), factor=3.0,
                        edge_fraction=0.1, scheme=IMPLICIT):
    """Evolve a bump started near ``x0`` and test sup h(t) * t^(n/2) against its median.

    Passes when the scaled sup stays within ``factor`` of its median on
    ``window`` (both directions) and h at every grid face stays below
    ``edge_fraction`` of its maximum at the final time.
    """
    grid = op.grid
    rho0 = bump_density(grid, x0, bump_width)
    tr, final = evolve(op, rho0, dt, T, b, scheme=scheme)
    t = np.asarray(tr.times)
    s = np.asarray(tr.sup_h) * t ** (grid.n / 2.0)
    sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    med = float(np.median(s[sel]))
    hi, lo = float(s[sel].max() / med), float(med / s[sel].min())
    h = h_values(final.values, b.log_psi(grid.mesh()))
    edges = []
    for d in range(grid.n):
        edges += [np.take(h, 0, axis=d).max(), np.take(h, -1, axis=d).max()]
    edge = float(max(edges) / h.max())
    ok = hi <= factor and lo <= factor and edge < edge_fraction
    return ShortTimeReport(tr, final, s, med, hi, lo, edge, ok)


def write_trace_csv(path, trace):
    arr = trace.arrays()
    cols = ["time", "sup_h", "argmax", "l1_h"] + [f"l{p}_h" for p in MOSER_POWERS] + ["mass"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for k in range(len(trace.times)):
            arg = " ".join(repr(v) for v in trace.argmax[k])
            w.writerow([repr(float(arr["time"][k])), repr(float(arr["sup_h"][k])), arg,
                        repr(float(arr["l1_h"][k]))]
                       + [repr(float(arr[f"l{p}_h"][k])) for p in MOSER_POWERS]
                       + [repr(float(arr["mass"][k]))])


def write_field_csv(path, fld, b=None):
    """Final field dump: a commented grid header, then one row per node."""
    grid = fld.grid
    pts = grid.mesh().reshape(grid.n, -1)
    rho = fld.values.ravel()
    h = None if b is None else h_values(rho, b.log_psi(pts))
    with open(path, "w", newline="") as fh:
        for k, (lo, hi, cnt) in grid.header().items():
            fh.write(f"# {k}: geometric {lo!r} .. {hi!r}, {cnt} nodes\n")
        fh.write(f"# time: {fld.time!r}\n")
        w = csv.writer(fh)
        w.writerow([f"y{d + 1}" for d in range(grid.n)] + ["rho"] + ([] if h is None else ["h"]))
        for k in range(rho.size):
            row = [repr(float(v)) for v in pts[:, k]] + [repr(float(rho[k]))]
            if h is not None:
                row.append(repr(float(h[k])))
            w.writerow(row)


def stationary_residual(op, rho):
    """sup |L* rho| of the discrete operator at the nodes, for a sampled density."""
    return float(np.abs(op.matrix @ np.ravel(rho)).max())


def sup_error(fld, reference):
    return float(np.max(np.abs(fld.values - reference)))


def relative_l1_change(trace):
    l1 = np.asarray(trace.l1_h)
    return float(l1.max() / l1[0])


def shorttime_exponent(n):
    """Nash scaling exponent n/2 of the short-time sup bound."""
    return n / 2.0
