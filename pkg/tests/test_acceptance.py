"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""
import time

import numpy as np
import pytest

from ergodens import expr as ex
from ergodens import operators as ops
from ergodens.barrier import make_nested_root_barrier, make_power_exp_barrier
from ergodens.certify import SamplingSpec, certify_outside_cube, extract_constant_C, minimal_cube
from ergodens.fpe import (Grid, assemble_forward_operator, barrier_density, dirac_shorttime_run,
                          evolve, grid_for_cube, plateau_verdict, sup_error)
from ergodens.model import CompactCube, build_affine, build_stochvol_cascade
from ergodens.oracle import (CirParams, QuadSpec, adjoint_duality_check, chapman_kolmogorov_residual,
                             cir_stationary_density, cir_transition_density, polynomial_bump)
from ergodens.sde import SimConfig, check_gronwall_envelope, reciprocal_barrier, simulate_functional

CIR211 = build_affine(1, [2.0], mu_diag=[1.0], sigma_diag=[1.0])
CIR111 = build_affine(1, [1.0], mu_diag=[1.0], sigma_diag=[1.0])
CASCADE = build_stochvol_cascade(2, [2.0, 1.0], [[0.0, 0.0], [1.0, 0.0]], [1.0, 1.0], [1.0, 1.0])
FLAG_B = make_power_exp_barrier(1, 0.5, 0.5)
CASCADE_B = make_nested_root_barrier(2, [0.5375, 0.05], [0.95625, 0.95625])
FLAG_K = CompactCube([0.1], [12.0])

# mass / clipping of every FPE run below, checked together by criterion 8
_MASS_LOG = {}


def _log_mass(name, trace):
    arr = trace.arrays()
    _MASS_LOG[name] = (float(np.max(np.abs(arr["mass"] - arr["mass"][0]))),
                       float(arr["max_clip"].max()))


def test_c01_operator_identity(verdict):
    rng = np.random.default_rng(1)
    worst = 0.0
    for m, b in [(CIR211, FLAG_B), (CASCADE, CASCADE_B)]:
        inv = ex.Pow(b.psi, -1.0)
        lhs = ex.Mul(b.psi, b.psi, ops.apply_generator(m, inv))
        rhs = ops.combined_condition_expr(m, b)
        pts = np.exp(rng.uniform(np.log(0.05), np.log(20.0), size=(m.n, 100)))
        a, c = ex.evaluate(lhs, pts), ex.evaluate(rhs, pts)
        worst = max(worst, float(np.max(np.abs(a - c) / np.abs(c))))
    assert verdict(1, worst <= 1e-9, f"operator identity, max relative error {worst:.2e} (<= 1e-9)")


def test_c02_adjoint_duality(verdict):
    one_d, two_d = [], []
    weights = [None, "(var 1)", "(exp (mul -1 (var 1)))", "(add 1 (pow (var 1) 2))", "(pow (var 1) 0.5)"]
    boxes = [(0.5, 2.0), (0.2, 3.0), (1.0, 4.0), (0.1, 1.5), (2.0, 6.0)]
    for (lo, hi), w in zip(boxes, weights):
        f = polynomial_bump([lo], [hi])
        g = polynomial_bump([lo], [hi], weight=None if w is None else ex.parse(w))
        one_d.append(adjoint_duality_check(CIR211, f, g, QuadSpec((lo,), (hi,))))
    weights2 = [None, "(var 1)", "(var 2)", "(mul (var 1) (var 2))", "(exp (mul -1 (var 2)))"]
    boxes2 = [((0.5, 0.5), (2.0, 2.0)), ((0.2, 0.3), (1.5, 2.5)), ((1.0, 0.5), (3.0, 1.5)),
              ((0.3, 0.3), (1.2, 1.2)), ((0.5, 1.0), (2.5, 3.0))]
    for (lo, hi), w in zip(boxes2, weights2):
        f = polynomial_bump(lo, hi)
        g = polynomial_bump(lo, hi, weight=None if w is None else ex.parse(w))
        two_d.append(adjoint_duality_check(CASCADE, f, g, QuadSpec(lo, hi, epsabs=1e-10, epsrel=1e-8)))
    ok = max(one_d) <= 1e-6 and max(two_d) <= 1e-4
    assert verdict(2, ok, f"adjoint duality, 1D max {max(one_d):.2e} (<= 1e-6), "
                          f"2D max {max(two_d):.2e} (<= 1e-4)")


def test_c03_condition2_closed_form(verdict):
    pts = SamplingSpec().grid(1)
    worst_dev, worst_std = 0.0, 0.0
    for mu0, mu1, sigma, gamma in [(2, 1, 1, 0.5), (1, 1, 1, 0.5), (3, 0.5, 1.5, 0.2), (0.7, 2, 0.4, 1.3)]:
        m = build_affine(1, [mu0], mu_diag=[mu1], sigma_diag=[sigma])
        e = ops.condition2_expr(m, make_power_exp_barrier(1, 0.5, gamma))
        v = np.broadcast_to(ex.evaluate(e, pts), pts.shape[1:])
        worst_std = max(worst_std, float(np.std(v)))
        worst_dev = max(worst_dev, float(np.max(np.abs(v - (gamma * sigma ** 2 - mu1)))))
    flag = float(np.max(ex.evaluate(ops.condition2_expr(CIR211, FLAG_B), pts)))
    ok = worst_std < 1e-12 and worst_dev < 1e-12 and abs(flag + 0.5) < 1e-12
    assert verdict(3, ok, f"condition-2 constant, std {worst_std:.1e}, deviation {worst_dev:.1e}, "
                          f"flagship margin {flag:.12g}")


def test_c04_stationary_oracle(verdict):
    p = CirParams(1.0, 1.0, 1.0)
    g = Grid.geometric(1e-3, 60.0, 400)
    errs = []
    for level in range(2):
        tr, fld = evolve(assemble_forward_operator(CIR111, g), barrier_density(g, FLAG_B), 0.01, 20.0,
                         FLAG_B, trace_stride=10)
        _log_mass(f"stationary-{level}", tr)
        errs.append(sup_error(fld, cir_stationary_density(p, g.axes[0])))
        g = g.refine()
    gain = errs[0] / errs[1]
    ok = errs[0] <= 1e-2 and gain >= 3
    assert verdict(4, ok, f"stationary Gamma oracle, sup error {errs[0]:.2e} at 400 nodes (<= 1e-2), "
                          f"refinement gain {gain:.2f} (>= 3)")


def test_c05_stationary_residual(verdict):
    dens = ex.parse("(mul 4 (var 1) (exp (mul -2 (var 1))))")
    y = np.geomspace(1e-3, 30.0, 200)[None, :]
    res = float(np.max(np.abs(ex.evaluate(ops.apply_adjoint(CIR111, dens), y))))
    assert verdict(5, res <= 1e-10, f"adjoint on Gamma density, residual {res:.2e} (<= 1e-10)")


@pytest.mark.slow
def test_c06_gronwall_envelope(verdict):
    cert = certify_outside_cube(CIR211, FLAG_B, FLAG_K)
    C = extract_constant_C(CIR211, FLAG_B)
    cfg = SimConfig((1.0,), 1e-3, 10.0, 100_000, seed=20240501)
    t0 = time.perf_counter()
    tr = simulate_functional(CIR211, cfg, reciprocal_barrier(FLAG_B))
    rep = check_gronwall_envelope(tr, (1.0,), C, FLAG_B)
    wall = time.perf_counter() - t0
    ok = rep.passed and cert.gronwall_C == C and wall < 300
    assert verdict(6, ok, f"Gronwall envelope over {len(tr.times)} times, C={C:.4f}, worst slack "
                          f"{rep.worst_slack:.3g} at t={rep.worst_time:g}, {wall:.0f}s")


def test_c07_plateau(verdict):
    g = grid_for_cube(FLAG_K, nodes=400)
    tr, _ = evolve(assemble_forward_operator(CIR211, g), barrier_density(g, FLAG_B), 0.01, 20.0,
                   FLAG_B, trace_stride=10)
    _log_mass("plateau", tr)
    ok, ratios = plateau_verdict(tr, split=5.0, factor=1.1)
    text = ", ".join(f"{k} {v:.3f}" for k, v in ratios.items())
    assert verdict(7, ok, f"time-uniform plateau (<= 1.1): {text}")


def test_c09_shorttime_shape(verdict):
    g = Grid.geometric(1e-3, 120.0, 400)
    rep = dirac_shorttime_run(assemble_forward_operator(CIR211, g), [1.0], 0.25, 1e-3, FLAG_B)
    _log_mass("shorttime", rep.trace)
    err = sup_error(rep.final, cir_transition_density(CirParams(2.0, 1.0, 1.0), 1.0, 1.0, g.axes[0]))
    ok = rep.max_ratio <= 3 and rep.min_ratio <= 3 and err <= 5e-2
    assert verdict(9, ok, f"short-time t^(1/2) sup h, max/median {rep.max_ratio:.2f}, "
                          f"median/min {rep.min_ratio:.2f} (<= 3), t=1 sup error {err:.2e} (<= 5e-2)")


def test_c08_mass_conservation(verdict):
    # runs after criteria 4, 7 and 9 in file order; rerun anything missing
    if "plateau" not in _MASS_LOG:
        test_c07_plateau(lambda *a: True)
    if "shorttime" not in _MASS_LOG:
        test_c09_shorttime_shape(lambda *a: True)
    if "stationary-0" not in _MASS_LOG:
        test_c04_stationary_oracle(lambda *a: True)
    drift = max(v[0] for v in _MASS_LOG.values())
    clip = max(v[1] for v in _MASS_LOG.values())
    ok = drift <= 1e-6 and clip < 1e-8
    assert verdict(8, ok, f"mass over {len(_MASS_LOG)} runs, drift {drift:.1e} (<= 1e-6), "
                          f"per-step clip {clip:.1e} (< 1e-8)")


def test_c10_falsification(verdict):
    low = []
    for beta in (3.0, 3.5, 5.0):
        cert = certify_outside_cube(CIR211, make_power_exp_barrier(1, beta, 0.5), FLAG_K)
        c1 = cert.conditions["condition1"]
        low.append(not c1.satisfied and c1.witness[0] < 1e-3)
    partial = []
    for beta in (0.1, 0.5, 0.9, 1.5, 3.0):
        for gamma in (0.5, 1.0):
            b = make_power_exp_barrier(1, beta, gamma)
            k = minimal_cube(CIR111, b, assumption3=False) if beta < 1 else None
            k = CompactCube([0.01], [20.0]) if k is None else CompactCube([0.9 * k.lower[0]], [1.1 * k.upper[0]])
            cert = certify_outside_cube(CIR111, b, k)
            three = [c.satisfied for name, c in cert.conditions.items() if name.startswith("condition3")]
            partial.append(three and not all(three) and (cert.passed_12 or beta >= 1))
    ok = all(low) and all(partial)
    assert verdict(10, ok, f"falsification, beta above threshold fails (1) at low y: {sum(low)}/{len(low)}; "
                           f"CIR(1,1,1) fails (3): {sum(partial)}/{len(partial)}")


def test_c11_chapman_kolmogorov(verdict):
    p = CirParams(2.0, 1.0, 1.0)
    worst = max(chapman_kolmogorov_residual(p, 0.25, 0.25, x0, y)[0]
                for x0 in (0.5, 1.0, 2.0) for y in (0.3, 1.0, 2.5))
    assert verdict(11, worst <= 1e-4, f"Chapman-Kolmogorov residual {worst:.2e} (<= 1e-4)")
