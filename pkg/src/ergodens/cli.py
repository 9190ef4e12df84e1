"""Config-driven runs: ``ergodens {certify,simulate,fpe,all} --config run.toml``.

Exit codes: 0 when every check passes, 2 when a check fails, 1 on errors
(bad config, evaluation or solver failures).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import platform
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import expr as ex
from . import fpe, sde
from .barrier import CUSTOM, NESTED_ROOT, POWER_EXP, make_barrier
from .certify import (SamplingSpec, barrier_from_certificate, certify_outside_cube,
                      search_parameters)
from .errors import ConfigError, ErgodensError
from .model import CompactCube, build_affine, build_explicit, build_stochvol_cascade, is_pure_cir
from .oracle import CirParams, cir_stationary_density, cir_transition_density

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

INITIAL_KINDS = ("smooth-psi", "stationary", "bump")


# --- config parsing -----------------------------------------------------------

def _key_lines(text):
    """Map dotted key paths to the line where they are defined."""
    lines = {}
    table = ()
    for no, raw in enumerate(text.splitlines(), 1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        m = re.match(r"^\[\s*([A-Za-z0-9_.\- ]+?)\s*\]$", s)
        if m:
            table = tuple(p.strip() for p in m.group(1).split("."))
            lines.setdefault(table, no)
            continue
        m = re.match(r"^([A-Za-z0-9_\-]+)\s*=", s)
        if m:
            lines.setdefault(table + (m.group(1),), no)
    return lines


class _Section:
    """Typed, line-anchored access to one config table; tracks consumed keys."""

    def __init__(self, data, path, lines):
        self.data = data
        self.path = path
        self.lines = lines
        self.used = set()

    def line(self, key=None):
        p = self.path + ((key,) if key else ())
        while p:
            if p in self.lines:
                return self.lines[p]
            p = p[:-1]
        return None

    def _name(self, key):
        return ".".join(self.path + (key,))

    def fail(self, key, msg):
        raise ConfigError(f"{self._name(key)}: {msg}", self.line(key))

    def has(self, key):
        return key in self.data

    def get(self, key, kind, default=..., check=None):
        self.used.add(key)
        if key not in self.data:
            if default is ...:
                raise ConfigError(f"missing required key {self._name(key)!r}", self.line())
            return default
        v = self.data[key]
        try:
            v = kind(v)
        except (TypeError, ValueError) as err:
            self.fail(key, str(err))
        if check is not None and not check(v):
            self.fail(key, f"invalid value {self.data[key]!r}")
        return v

    def section(self, key, required=False):
        self.used.add(key)
        if key not in self.data:
            if required:
                raise ConfigError(f"missing required table [{self._name(key)}]", self.line())
            return None
        if not isinstance(self.data[key], dict):
            self.fail(key, "expected a table")
        return _Section(self.data[key], self.path + (key,), self.lines)

    def finish(self):
        extra = [k for k in self.data if k not in self.used]
        if extra:
            k = extra[0]
            raise ConfigError(f"unknown key {self._name(k)!r}", self.line(k))


def _float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError(f"expected a number, got {v!r}")
    return float(v)


def _int(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise TypeError(f"expected an integer, got {v!r}")
    return int(v)


def _bool(v):
    if not isinstance(v, bool):
        raise TypeError(f"expected true or false, got {v!r}")
    return v


def _str(v):
    if not isinstance(v, str):
        raise TypeError(f"expected a string, got {v!r}")
    return v


def _floats(v):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return [float(v)]
    if not isinstance(v, list):
        raise TypeError(f"expected a list of numbers, got {v!r}")
    return [_float(x) for x in v]


def _matrix(v):
    if not isinstance(v, list) or not all(isinstance(r, list) for r in v):
        raise TypeError(f"expected a list of lists, got {v!r}")
    return [[_float(x) for x in r] for r in v]


def _strings(v):
    if not isinstance(v, list):
        raise TypeError(f"expected a list of strings, got {v!r}")
    return [_str(x) for x in v]


def _positive(v):
    return np.all(np.asarray(v) > 0)


@dataclass
class ExperimentConfig:
    model: object
    barrier: dict
    cube: CompactCube
    sampling: SamplingSpec
    assumption3: bool
    sde: dict | None
    fpe: dict | None
    seed: int
    out: str
    text_hash: str
    source: str = ""
    raw: dict = field(default_factory=dict)


def _parse_model(sec):
    family = sec.get("family", _str, check=lambda s: s in ("affine", "cascade", "explicit"))
    if family == "explicit":
        mu = sec.get("mu", _strings)
        sigma = sec.get("sigma", lambda v: [_strings(r) for r in v])
        try:
            m = build_explicit(mu, sigma, sec.get("name", _str, "explicit"))
        except (ErgodensError, ValueError) as err:
            sec.fail("mu", str(err))
    else:
        n = sec.get("n", _int, check=lambda k: k >= 1)
        mu0 = sec.get("mu0", _floats)
        mu_diag = sec.get("mu_diag", _floats)
        sigma = sec.get("sigma_diag", _floats)
        try:
            if family == "affine":
                m = build_affine(n, mu0, sec.get("mu_offdiag", _matrix, None), mu_diag, sigma)
            else:
                m = build_stochvol_cascade(n, mu0, sec.get("mu_couplings", _matrix, None), mu_diag, sigma)
        except (ErgodensError, ValueError) as err:
            raise ConfigError(f"model: {err}", sec.line()) from None
    sec.finish()
    return m


def _parse_barrier(sec, n):
    family = sec.get("family", _str, check=lambda s: s in (POWER_EXP, NESTED_ROOT, CUSTOM))
    out = {"family": family, "search": sec.get("search", _bool, False)}
    if family == CUSTOM:
        out["psi"] = sec.get("psi", _str)
        try:
            ex.parse(out["psi"])
        except (ErgodensError, ValueError) as err:
            sec.fail("psi", str(err))
        if out["search"]:
            sec.fail("search", "parameter search needs a power_exp or nested_root barrier")
    elif out["search"]:
        rs = sec.section("ranges", required=True)
        out["ranges"] = {"beta": rs.get("beta", _floats), "gamma": rs.get("gamma", _floats)}
        out["budget"] = rs.get("budget", _int, 15, check=lambda k: k >= 2)
        out["rounds"] = rs.get("rounds", _int, 3, check=lambda k: k >= 1)
        rs.finish()
    else:
        out["beta"] = sec.get("beta", _floats, check=_positive)
        out["gamma"] = sec.get("gamma", _floats, check=_positive)
        for k in ("beta", "gamma"):
            if len(out[k]) not in (1, n):
                sec.fail(k, f"need 1 or {n} values")
    sec.finish()
    return out


def _parse_sde(sec, n):
    out = {
        "x0": sec.get("x0", _floats, check=_positive),
        "dt": sec.get("dt", _float, check=lambda v: v > 0),
        "T": sec.get("T", _float, check=lambda v: v > 0),
        "paths": sec.get("paths", _int, check=lambda v: v >= 1),
        "scheme": sec.get("scheme", _str, sde.EULER, check=lambda s: s in sde.SCHEMES),
        "antithetic": sec.get("antithetic", _bool, False),
        "threads": sec.get("threads", _int, 1, check=lambda v: v >= 1),
        "block": sec.get("block", _int, 4096, check=lambda v: v >= 1),
        "assumption3": sec.get("assumption3", _bool, True),
    }
    if len(out["x0"]) != n:
        sec.fail("x0", f"need {n} coordinates")
    if out["dt"] > out["T"]:
        sec.fail("dt", "must not exceed T")
    sec.finish()
    return out


def _parse_fpe(sec, n):
    out = {
        "nodes": sec.get("nodes", lambda v: [_int(x) for x in _floats(v)], [400] if n == 1 else [80]),
        "y_min": sec.get("y_min", _float, 1e-3, check=lambda v: v > 0),
        "y_max": sec.get("y_max", _floats, None, check=_positive),
        "dt": sec.get("dt", _float, check=lambda v: v > 0),
        "T": sec.get("T", _float, check=lambda v: v > 0),
        "initial": sec.get("initial", _str, "smooth-psi", check=lambda s: s in INITIAL_KINDS),
        "x0": sec.get("x0", _floats, None, check=_positive),
        "width": sec.get("width", _float, 0.25, check=lambda v: 0 < v <= 1),
        "flux": sec.get("flux", _str, fpe.CENTRAL, check=lambda s: s in (fpe.CENTRAL, fpe.EXPONENTIAL)),
        "time_scheme": sec.get("time_scheme", _str, fpe.IMPLICIT,
                               check=lambda s: s in (fpe.IMPLICIT, fpe.CRANK_NICOLSON)),
        "trace_stride": sec.get("trace_stride", _int, 1, check=lambda v: v >= 1),
        "plateau_split": sec.get("plateau_split", _float, 5.0, check=lambda v: v > 0),
    }
    if out["initial"] == "bump" and out["x0"] is None:
        raise ConfigError("fpe.x0 is required for a bump initial condition", sec.line())
    if out["x0"] is not None and len(out["x0"]) != n:
        sec.fail("x0", f"need {n} coordinates")
    sec.finish()
    return out


def parse_config(text, source="<string>"):
    """Parse and validate a TOML experiment config; raises :class:`ConfigError`."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        m = re.search(r"line (\d+)", str(err))
        raise ConfigError(f"{source}: {err}", int(m.group(1)) if m else None) from None
    lines = _key_lines(text)
    root = _Section(data, (), lines)
    model = _parse_model(root.section("model", required=True))
    n = model.n
    barrier = _parse_barrier(root.section("barrier", required=True), n)
    cs = root.section("cube", required=True)
    lower, upper = cs.get("lower", _floats, check=_positive), cs.get("upper", _floats, check=_positive)
    try:
        cube = CompactCube(lower, upper)
    except (ErgodensError, ValueError) as err:
        cs.fail("upper", str(err))
    if cube.n != n:
        cs.fail("lower", f"cube has {cube.n} coordinates, model has {n}")
    cs.finish()
    sampling, assumption3 = SamplingSpec(), True
    ss = root.section("certify")
    if ss is not None:
        sampling = SamplingSpec(ss.get("shell_min", _float, 1e-6, check=lambda v: v > 0),
                                ss.get("shell_max", _float, 1e4, check=lambda v: v > 0),
                                ss.get("points", _int, None, check=lambda v: v >= 3),
                                ss.get("probe_decades", _int, 4, check=lambda v: v >= 0))
        assumption3 = ss.get("assumption3", _bool, True)
        try:
            sampling.validate(cube)
        except ErgodensError as err:
            raise ConfigError(f"certify: {err}", ss.line()) from None
        ss.finish()
    sd = root.section("sde")
    fp = root.section("fpe")
    cfg = ExperimentConfig(
        model=model, barrier=barrier, cube=cube, sampling=sampling, assumption3=assumption3,
        sde=_parse_sde(sd, n) if sd is not None else None,
        fpe=_parse_fpe(fp, n) if fp is not None else None,
        seed=root.get("seed", _int, 0, check=lambda v: 0 <= v < 2 ** 64),
        out=root.get("out", _str, "out"),
        text_hash=hashlib.sha256(text.encode()).hexdigest(),
        source=source, raw=data,
    )
    root.finish()
    return cfg


def load_config(path):
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err.strerror}") from None
    return parse_config(text, str(p))


# --- runs ---------------------------------------------------------------------

def _barrier(cfg):
    b = cfg.barrier
    if b["family"] == CUSTOM:
        return make_barrier(CUSTOM, cfg.model.n, psi=ex.parse(b["psi"]))
    return make_barrier(b["family"], cfg.model.n, b["beta"], b["gamma"])


def certify(cfg):
    b = cfg.barrier
    if b.get("search"):
        return search_parameters(cfg.model, b["family"], b["ranges"], b["budget"], cfg.cube,
                                 cfg.sampling, b["rounds"], cfg.assumption3)
    return certify_outside_cube(cfg.model, _barrier(cfg), cfg.cube, cfg.sampling, cfg.assumption3)


def _write_json(path, obj):
    path.write_text(json.dumps(obj, indent=2, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def run_certify(cfg, out, cert=None):
    cert = cert or certify(cfg)
    (out / "certificate.json").write_text(cert.to_json() + "\n")
    print(f"certificate: {cert.status} ({cert.rigor})")
    for name, c in cert.conditions.items():
        flag = "ok  " if c.satisfied else "FAIL"
        print(f"  {flag} {name}: worst {c.worst:.6g} at {c.witness}")
    if cert.gronwall_C is not None:
        print(f"  Gronwall constant C = {cert.gronwall_C:.6g}")
    return (EXIT_PASS if cert.passed else EXIT_FAIL), cert


def run_simulate(cfg, out, threads=None, cert=None):
    if cfg.sde is None:
        raise ConfigError("simulate needs an [sde] table")
    cert = cert or certify(cfg)
    if cert.gronwall_C is None:
        print("simulate: conditions (1)-(2) not certified, no Gronwall constant", file=sys.stderr)
        return EXIT_FAIL, None
    b = barrier_from_certificate(cert)
    s = cfg.sde
    sim = sde.SimConfig(tuple(s["x0"]), s["dt"], s["T"], s["paths"], s["scheme"], cfg.seed,
                        s["antithetic"], s["block"], threads=threads or s["threads"])
    tr = sde.simulate_functional(cfg.model, sim, sde.reciprocal_barrier(b), label="F")
    rep = sde.check_gronwall_envelope(tr, sim.x0, cert.gronwall_C, b)
    sde.write_trace_csv(out / "F_trace.csv", tr, rep)
    report = {"envelope": rep.to_dict()}
    print(f"Gronwall envelope: {'pass' if rep.passed else 'FAIL'} "
          f"(worst slack {rep.worst_slack:.4g} at t={rep.worst_time:g}, C={rep.C:.4g})")
    if s["assumption3"]:
        a3 = sde.assumption3_functional(cfg.model, b, sim, certified=cert.passed_3)
        sde.write_trace_csv(out / "assumption3_trace.csv", a3)
        report["assumption3"] = {k: a3.meta[k] for k in ("plateau_ok", "plateau_ratio", "advisory")}
        print(f"assumption-3 moment: plateau ratio {a3.meta['plateau_ratio']:.4g} "
              f"({'ok' if a3.meta['plateau_ok'] else 'exceeds 1.1'}; advisory)")
    _write_json(out / "simulate_report.json", report)
    return (EXIT_PASS if rep.passed else EXIT_FAIL), report


def _fpe_grid(cfg):
    f = cfg.fpe
    n = cfg.model.n
    upper = f["y_max"] or (10.0 * np.asarray(cfg.cube.upper)).tolist()
    upper = np.broadcast_to(np.asarray(upper, float), (n,))
    nodes = np.broadcast_to(np.asarray(f["nodes"]), (n,))
    g = fpe.Grid.geometric([f["y_min"]] * n, upper, nodes)
    g.check_covers(cfg.cube)
    return g


def run_fpe(cfg, out, cert=None):
    if cfg.fpe is None:
        raise ConfigError("fpe needs an [fpe] table")
    f = cfg.fpe
    m = cfg.model
    b = barrier_from_certificate(cert) if cert is not None else _barrier(cfg)
    grid = _fpe_grid(cfg)
    op = fpe.assemble_forward_operator(m, grid, f["flux"])
    cir = CirParams.from_model(m) if m.n == 1 and is_pure_cir(m) is not None else None
    report = {"initial": f["initial"], "grid": grid.header()}
    ok = True
    if f["initial"] == "bump":
        st = fpe.dirac_shorttime_run(op, f["x0"], f["width"], f["dt"], b, T=f["T"],
                                     scheme=f["time_scheme"])
        tr, final = st.trace, st.final
        report["shorttime"] = {"passed": st.passed, "median": st.median, "max_ratio": st.max_ratio,
                               "min_ratio": st.min_ratio, "edge_ratio": st.edge_ratio}
        ok = st.passed
        if cir is not None:
            ref = cir_transition_density(cir, final.time, f["x0"][0], grid.axes[0])
            report["transition_sup_error"] = fpe.sup_error(final, ref)
        print(f"short-time scaled sup h: {'pass' if st.passed else 'FAIL'} "
              f"(max/median {st.max_ratio:.3g}, median/min {st.min_ratio:.3g}, edge {st.edge_ratio:.2g})")
    else:
        if f["initial"] == "stationary":
            if cir is None:
                raise ConfigError("a stationary initial condition needs a 1D CIR model")
            rho0 = fpe.DensityField(grid, cir_stationary_density(cir, grid.axes[0]))
            rho0 = fpe.DensityField(grid, rho0.values / rho0.mass)
        else:
            rho0 = fpe.barrier_density(grid, b)
        tr, final = fpe.evolve(op, rho0, f["dt"], f["T"], b, f["time_scheme"], f["trace_stride"])
        if f["initial"] == "smooth-psi" and f["T"] > f["plateau_split"]:
            ok, ratios = fpe.plateau_verdict(tr, f["plateau_split"])
            report["plateau"] = {"passed": ok, "ratios": ratios}
            print(f"time-uniform bound on h: {'pass' if ok else 'FAIL'} "
                  + " ".join(f"{k}={v:.4g}" for k, v in ratios.items()))
        report["l1_growth"] = fpe.relative_l1_change(tr)
        if cir is not None:
            ref = cir_stationary_density(cir, grid.axes[0])
            report["stationary_sup_error"] = fpe.sup_error(final, ref)
            print(f"sup |rho(T) - stationary| = {report['stationary_sup_error']:.3g}")
    arr = tr.arrays()
    report["mass_deviation"] = float(np.max(np.abs(arr["mass"] - arr["mass"][0])))
    report["max_clip"] = float(arr["max_clip"].max())
    fpe.write_trace_csv(out / "fpe_trace.csv", tr)
    fpe.write_field_csv(out / "final_field.csv", final, b)
    _write_json(out / "fpe_report.json", report)
    return (EXIT_PASS if ok else EXIT_FAIL), report


def _manifest(cfg, command, seed, wall, outputs):
    return {
        "command": command,
        "config": cfg.source,
        "config_sha256": cfg.text_hash,
        "seed": seed,
        "wall_time_s": wall,
        "versions": {"ergodens": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "outputs": sorted(outputs),
    }


def build_parser():
    p = argparse.ArgumentParser(prog="ergodens", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["certify", "simulate", "fpe", "all"])
    p.add_argument("--config", required=True, help="TOML experiment file")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
    p.add_argument("--threads", type=int, help="worker threads for path simulation")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    stamp = time.time()
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must fit in 64 unsigned bits")
            cfg.seed = args.seed
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        out = Path(args.out or cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        codes = []
        cert = None
        if args.command in ("certify", "all"):
            code, cert = run_certify(cfg, out)
            codes.append(code)
        if args.command == "simulate" or (args.command == "all" and cfg.sde is not None):
            codes.append(run_simulate(cfg, out, args.threads, cert)[0])
        if args.command == "fpe" or (args.command == "all" and cfg.fpe is not None and cfg.model.n <= 2):
            codes.append(run_fpe(cfg, out, cert)[0])
        code = max(codes) if codes else EXIT_PASS
        outputs = [p.name for p in out.iterdir()
                   if p.name != "manifest.json" and p.stat().st_mtime >= stamp - 1e-3]
        _write_json(out / "manifest.json",
                    _manifest(cfg, args.command, cfg.seed, time.perf_counter() - start, outputs))
        return EXIT_FAIL if code == EXIT_FAIL else code
    except (ErgodensError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        state = getattr(err, "state", None)
        if state is not None:
            print(f"  path {err.path_index}, state {np.asarray(state).tolist()}", file=sys.stderr)
        return EXIT_ERROR
