"""Monte Carlo path simulation on the open orthant.

Every path owns a Philox stream keyed by ``(seed, path index)``, and
noise is drawn in time order along that stream.  A path therefore sees
the same increments whatever the block size, chunk length, or thread
count, which keeps serial and threaded runs bit-identical.
"""
from __future__ import annotations

import csv
import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .errors import NumericalBlowupError, ParameterError
from .model import is_pure_cir

FLOOR_EPS = 1e-12
EULER = "euler"
LOGNORMAL = "lognormal"
SCHEMES = (EULER, LOGNORMAL)
PLATEAU_FACTOR = 1.1


@dataclass(frozen=True)
class SimConfig:
    x0: tuple
    dt: float
    T: float
    paths: int
    scheme: str = EULER
    seed: int = 0
    antithetic: bool = False
    block: int = 4096
    chunk: int = 1000
    threads: int = 1
    floor_eps: float = FLOOR_EPS

    def __post_init__(self):
        x0 = tuple(float(v) for v in np.atleast_1d(self.x0))
        object.__setattr__(self, "x0", x0)
        if not all(v > 0 for v in x0):
            raise ParameterError(f"x0 must lie in the open orthant, got {x0}")
        if not (self.dt > 0 and self.T > 0 and self.dt <= self.T):
            raise ParameterError(f"need 0 < dt <= T, got dt={self.dt}, T={self.T}")
        if self.paths < 1:
            raise ParameterError("paths must be at least 1")
        if self.antithetic and self.paths % 2:
            raise ParameterError("antithetic runs need an even path count")
        if self.scheme not in SCHEMES:
            raise ParameterError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ParameterError("seed must fit in 64 unsigned bits")

    @property
    def steps(self):
        return int(round(self.T / self.dt))

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class FunctionalTrace:
    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    paths: int
    label: str = ""
    meta: dict = field(default_factory=dict)

    def rows(self):
        return zip(self.times.tolist(), self.mean.tolist(), self.se.tolist())


def default_sample_times(T, dt=None):
    """{0, 0.1, ..., 1} followed by the integers 2..T (and T itself)."""
    fine = np.round(np.arange(11) * 0.1, 12)
    coarse = np.arange(2, math.floor(T) + 1, dtype=float)
    t = np.unique(np.concatenate([fine[fine <= T], coarse, [float(T)]]))
    if dt is not None:
        t = np.unique(np.round(t / dt) * dt)
    return t


class _Stepper:
    def __init__(self, m):
        self.n = m.n
        self.mu = [ex.lambdify(e, m.n) for e in m.mu]
        self.sigma = [[None if s == ex.ZERO else ex.lambdify(s, m.n) for s in row]
                      for row in m.sigma]
        self.cir = is_pure_cir(m)

    def __call__(self, x, dt, z, scheme, floor_eps):
        if scheme == LOGNORMAL:
            out = self._lognormal(x, dt, z)
        else:
            xp = np.maximum(x, 0.0)
            out = np.empty_like(x)
            sq = math.sqrt(dt)
            for i in range(self.n):
                inc = x[i] + self.mu[i](xp) * dt
                for k, s in enumerate(self.sigma[i]):
                    if s is not None:
                        inc = inc + s(xp) * (sq * z[k])
                out[i] = inc
        np.maximum(out, floor_eps, out=out)
        return out

    def _lognormal(self, x, dt, z):
        # moment-matched lognormal step for uncoupled square-root components
        if self.cir is None:
            raise ParameterError("the lognormal scheme needs an uncoupled CIR model")
        mu0, k, s = (np.asarray(v, dtype=float)[:, None] if x.ndim > 1 else np.asarray(v, dtype=float)
                     for v in self.cir)
        theta = mu0 / k
        e = np.exp(-k * dt)
        m = theta + (x - theta) * e
        var = x * s ** 2 * e * (1 - e) / k + theta * s ** 2 * (1 - e) ** 2 / (2 * k)
        w = np.log1p(var / (m * m))
        return m * np.exp(-0.5 * w + np.sqrt(w) * z)


@functools.lru_cache(maxsize=32)
def _stepper(m):
    return _Stepper(m)


def step(m, x, dt, noise, scheme=EULER, floor_eps=FLOOR_EPS):
    """One time step from ``x`` (shape (n,) or (n, paths)) with standard normal ``noise``."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(noise, dtype=float)
    if x.shape[0] != m.n or z.shape != x.shape:
        raise ParameterError(f"state and noise must both have leading dimension {m.n}")
    out = _stepper(m)(x, dt, z, scheme, floor_eps)
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.all(np.isfinite(out.reshape(m.n, -1)), axis=0)).ravel()
        idx = int(bad[0]) if bad.size else None
        state = x if x.ndim == 1 else x[:, idx]
        raise NumericalBlowupError(f"non-finite state after a step from {np.asarray(state).tolist()}",
                                   state=np.asarray(state).copy(), path_index=idx)
    return out


def _compile_functional(f, n):
    if callable(f) and not isinstance(f, ex.Expression):
        return f
    e = ex.parse(f) if isinstance(f, str) else ex._coerce(f)
    g = ex.lambdify(e, n)
    return lambda x: np.broadcast_to(g(x), np.shape(x)[1:])


def _sample_steps(times, cfg):
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0) or times[0] < 0 or times[-1] > cfg.T * (1 + 1e-12):
        raise ParameterError("sample times must increase strictly within [0, T]")
    k = np.round(times / cfg.dt).astype(int)
    if np.any(np.abs(k * cfg.dt - times) > 1e-9 * max(1.0, cfg.T)):
        raise ParameterError("sample times must be multiples of dt")
    return k


def _path_streams(seed, first, count):
    return [np.random.Generator(np.random.Philox(key=np.array([seed, p], dtype=np.uint64)))
            for p in range(first, first + count)]


def _run_block(m, cfg, fn, sample_steps, first, count):
    """Values of ``fn`` at the sample steps for paths [first, first + count)."""
    n = m.n
    anti = cfg.antithetic
    # antithetic pairs share the stream of their even member
    owners = (count + 1) // 2 if anti else count
    gens = _path_streams(int(cfg.seed), first // 2 if anti else first, owners)
    x = np.repeat(np.asarray(cfg.x0)[:, None], count, axis=1)
    out = np.empty((len(sample_steps), count))
    s_idx = 0
    if sample_steps[0] == 0:
        out[0] = fn(x)
        s_idx = 1
    total = cfg.steps
    done = 0
    stepper = _stepper(m)
    while done < total and s_idx < len(sample_steps):
        span = min(cfg.chunk, total - done)
        draws = np.empty((span, n, owners))
        for p, g in enumerate(gens):
            draws[:, :, p] = g.standard_normal((span, n))
        if anti:
            z_all = np.empty((span, n, count))
            z_all[:, :, 0::2] = draws
            z_all[:, :, 1::2] = -draws[:, :, : count // 2]
        else:
            z_all = draws
        for s in range(span):
            x = stepper(x, cfg.dt, z_all[s], cfg.scheme, cfg.floor_eps)
            done += 1
            if s_idx < len(sample_steps) and done == sample_steps[s_idx]:
                if not np.all(np.isfinite(x)):
                    bad = int(np.flatnonzero(~np.all(np.isfinite(x), axis=0))[0])
                    raise NumericalBlowupError(
                        f"non-finite state on path {first + bad} at t={done * cfg.dt:g}",
                        state=x[:, bad].copy(), path_index=first + bad)
                out[s_idx] = fn(x)
                s_idx += 1
    return out


def simulate_paths(m, cfg, f, sample_times=None):
    """Per-path values of ``f(X_t)``, shape (len(sample_times), paths)."""
    if len(cfg.x0) != m.n:
        raise ParameterError(f"x0 has {len(cfg.x0)} coordinates, model has {m.n}")
    times = default_sample_times(cfg.T, cfg.dt) if sample_times is None else np.asarray(sample_times, float)
    ks = _sample_steps(times, cfg)
    fn = _compile_functional(f, m.n)
    block = max(2, cfg.block - cfg.block % 2) if cfg.antithetic else max(1, cfg.block)
    starts = list(range(0, cfg.paths, block))
    jobs = [(s, min(block, cfg.paths - s)) for s in starts]
    if cfg.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            parts = list(pool.map(lambda j: _run_block(m, cfg, fn, ks, *j), jobs))
    else:
        parts = [_run_block(m, cfg, fn, ks, *j) for j in jobs]
    return times, np.concatenate(parts, axis=1)


def summarize(times, values, antithetic=False, label=""):
    """Mean and standard error per time; antithetic pairs count as one sample."""
    v = 0.5 * (values[:, 0::2] + values[:, 1::2]) if antithetic else values
    k = v.shape[1]
    mean = np.mean(v, axis=1)
    se = np.std(v, axis=1, ddof=1) / math.sqrt(k) if k > 1 else np.zeros_like(mean)
    se[np.ptp(v, axis=1) == 0] = 0.0
    mean = np.where(np.ptp(v, axis=1) == 0, v[:, 0], mean)
    return FunctionalTrace(np.asarray(times, float), mean, se, values.shape[1], label)


def simulate_functional(m, cfg, f, sample_times=None, label=""):
    """Monte Carlo mean and standard error of ``f(X_t)`` at each sample time.

    ``f`` may be an expression, its text form, or a vectorised callable on
    arrays of shape (n, paths).
    """
    times, values = simulate_paths(m, cfg, f, sample_times)
    tr = summarize(times, values, cfg.antithetic, label)
    tr.meta = {"config": cfg.to_dict()}
    return tr


def reciprocal_barrier(b):
    """Callable x -> 1/psi(x) evaluated through log psi."""
    return lambda x: np.exp(-b.log_psi(x))


@dataclass
class EnvelopeReport:
    times: np.ndarray
    envelope: np.ndarray
    slack: np.ndarray
    passed: bool
    worst_time: float
    worst_slack: float
    C: float

    def to_dict(self):
        return {"passed": self.passed, "worst_time": self.worst_time,
                "worst_slack": self.worst_slack, "C": self.C}


def check_gronwall_envelope(trace, x0, C, barrier, n_se=3.0):
    """Compare a 1/psi trace with exp(-t)/psi(x0) + C (plus ``n_se`` standard errors)."""
    inv0 = float(np.exp(-barrier.log_psi(np.asarray(x0, float).reshape(-1))))
    env = np.exp(-trace.times) * inv0 + C
    slack = env + n_se * trace.se - trace.mean
    w = int(np.argmin(slack))
    return EnvelopeReport(trace.times, env, slack, bool(np.all(slack >= 0)),
                          float(trace.times[w]), float(slack[w]), float(C))


def assumption3_integrand(m, b):
    """Callable for (1/psi) * (1 + sum_ij a_ij (1 + 1/x_i)(1 + 1/x_j))."""
    n = m.n
    entries = [(i, j, ex.lambdify(m.a[i][j], n)) for i in range(n) for j in range(n)
               if m.a[i][j] != ex.ZERO]

    def f(x):
        x = np.asarray(x, float)
        bracket = np.ones(x.shape[1:])
        for i, j, a in entries:
            bracket = bracket + a(x) * (1 + 1 / x[i]) * (1 + 1 / x[j])
        return bracket * np.exp(-b.log_psi(x))

    return f


def plateau_check(times, values, split=1.0, factor=PLATEAU_FACTOR):
    """max over t >= split <= factor * max over t <= split; returns (ok, ratio)."""
    times, values = np.asarray(times), np.asarray(values)
    early, late = values[times <= split], values[times >= split]
    ratio = float(late.max() / early.max())
    return ratio <= factor, ratio


def assumption3_functional(m, b, cfg, sample_times=None, certified=None):
    """Trace of the assumption-(3) moment with a plateau verdict in ``meta``.

    When ``certified`` is false (condition (3) not established) the
    verdict is advisory only.
    """
    tr = simulate_functional(m, cfg, assumption3_integrand(m, b), sample_times, "assumption3")
    ok, ratio = plateau_check(tr.times, tr.mean)
    tr.meta.update(plateau_ok=ok, plateau_ratio=ratio, advisory=not bool(certified))
    return tr


def write_trace_csv(path, trace, report=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "mean", "se", "envelope", "slack"])
        for k, (t, mu, se) in enumerate(trace.rows()):
            env = "" if report is None else repr(float(report.envelope[k]))
            sl = "" if report is None else repr(float(report.slack[k]))
            w.writerow([repr(t), repr(mu), repr(se), env, sl])
