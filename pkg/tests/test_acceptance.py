"""Acceptance criteria 1-12.

Each test prints (and records for the terminal summary) one line
``CRITERION n: PASS|FAIL  <measured values>`` and then asserts.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from quditlmg.cavity_map import (build_hardware, cavity_elimination_check, check_conditions,
                                 effective_coefficients, rb87_scenario)
from quditlmg.integrate import Controls
from quditlmg.liouville import (SECTORS, assemble_liouvillian, build_sectors, enumerate_basis,
                                gaps, kronecker_liouvillian, kronecker_steady_state,
                                sector_dimensions, steady_state)
from quditlmg.meanfield import (Stability, broken_branch, coherent_state, find_fixed_points,
                                fit_exponent, integrate, integrate_largespin, jacobian,
                                small_rate_prefactors, spin_z_state)
from quditlmg.observables import expand_full, negativity, purity
from quditlmg.spin_core import ModelParams, SpinQuantum, make_dissipator

KINDS = ("spin-ladder", "m-independent")


def report(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------

def test_criterion_01_qubit_closed_form():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst, n_done = 0.0, 0
    while n_done < 200:
        gI, gC = rng.uniform(0, 2, 2)
        if not (gI + gC < 2 and gI > 1e-3 and 2 - gI - gC > 1e-3):
            continue
        p = ModelParams.build(2, 1.0, gI, gC)
        stable = [f.expectations for f in find_fixed_points(p, 10, 5, seed=n_done)
                  if f.classification is Stability.STABLE]
        X = math.sqrt(gI * (2 - gI - gC)) / (2 - gC)
        Z = -gI / (2 - gC)
        expected = sorted([(X, X, Z), (-X, -X, Z)])
        got = sorted(e.as_tuple() for e in stable)
        if len(got) != 2:
            worst = np.inf
        else:
            worst = max(worst, float(np.abs(np.array(got) - np.array(expected)).max()))
        n_done += 1
    worst_above = 0.0
    for k in range(50):
        gI, gC = rng.uniform(0.01, 2, 2)
        if gI + gC <= 2.001:
            gC = 2.5 - gI
        p = ModelParams.build(2, 1.0, gI, gC)
        stable = [f.expectations.as_tuple() for f in find_fixed_points(p, 10, 5, seed=k)
                  if f.classification is Stability.STABLE]
        worst_above = max(worst_above, np.inf if len(stable) != 1 else
                          float(np.abs(np.array(stable[0]) - [0, 0, -1]).max()))
    dt = time.perf_counter() - t0
    ok = worst < 1e-8 and worst_above < 1e-8 and dt < 60
    report(1, ok, f"max dev below threshold {worst:.2e}, above {worst_above:.2e}, {dt:.1f}s")


def test_criterion_02_critical_point():
    worst = 0.0
    for d in range(2, 8):
        for kind in KINDS:
            split = 0.3

            def leading(total):
                p = ModelParams.build(d, 1.0, split * total, (1 - split) * total, kind)
                _, ev = jacobian(p, spin_z_state(p.spin))
                return ev[0].real

            lo, hi = 1.5, 2.5
            assert leading(lo) > 0 > leading(hi)
            while hi - lo > 1e-10:
                mid = 0.5 * (lo + hi)
                lo, hi = (mid, hi) if leading(mid) > 0 else (lo, mid)
            worst = max(worst, abs(0.5 * (lo + hi) - 2.0))
            # analytic pair -(gI+gC) +/- 2V at an arbitrary point
            p = ModelParams.build(d, 1.0, 0.4, 0.9, kind)
            _, ev = jacobian(p, spin_z_state(p.spin))
            for target in (-1.3 + 2.0, -1.3 - 2.0):
                worst = max(worst, float(np.min(np.abs(ev - target))))
    report(2, worst < 1e-6, f"max |flip - 2|V|| or pair mismatch {worst:.2e}")


def _exponents(d):
    p = ModelParams.build(d, 1.0, 1.0, 0.0, "spin-ladder")
    eps = np.geomspace(5e-2, 1e-3, 25)
    values = list(np.linspace(1.0, 1.95, 20)[:-1]) + list(2 - eps)
    rows, _ = broken_branch(p, values, "gammaI")
    g = np.array([v for v, _ in rows])
    X = np.array([fp.expectations.X for _, fp in rows])
    Z = np.array([fp.expectations.Z for _, fp in rows])
    return fit_exponent(2 - g, X, "X").beta, fit_exponent(2 - g, Z, "Z+1").beta


@pytest.mark.slow
def test_criterion_03_critical_exponents():
    t0 = time.perf_counter()
    bX_ref, bZ_ref = [0.50, 0.26, 0.18, 0.14], [1.0, 0.55, 0.40, 0.33]
    bX, bZ, cX = [], [], []
    for d in range(2, 6):
        x, z = _exponents(d)
        bX.append(x)
        bZ.append(z)
        cX.append(small_rate_prefactors(ModelParams.build(d, 1.0, 0.5, 0.0))[0])
    dt = time.perf_counter() - t0
    ok = (all(abs(a - b) <= 0.03 for a, b in zip(bX, bX_ref))
          and all(abs(a - b) <= 0.05 for a, b in zip(bZ, bZ_ref))
          and abs(cX[0] - 1 / math.sqrt(2)) <= 0.01
          and all(np.diff(cX) < 0) and cX[-1] <= 0.55 and dt < 600)
    fmt = lambda xs: "{" + ", ".join(f"{x:.3f}" for x in xs) + "}"
    report(3, ok, f"beta_X={fmt(bX)} beta_Z={fmt(bZ)} c_X={fmt(cX)} {dt:.0f}s")


def _termination(d, kind):
    p = ModelParams.build(d, 1.0, 1.5, 0.0, kind)
    values = list(np.round(np.arange(1.5, 2.5, 0.01), 10))
    _, end = broken_branch(p, values, "gammaI", resolution=1e-4)
    return end


@pytest.mark.slow
def test_criterion_04_bistable_edges():
    t0 = time.perf_counter()
    e4, e5 = _termination(4, "m-independent"), _termination(5, "m-independent")
    others = {(d, k): _termination(d, k) for d in range(2, 6) for k in KINDS
              if not (k == "m-independent" and d >= 4)}
    no_bistab = all(v is not None and v <= 2.0 + 2e-3 for v in others.values())
    dt = time.perf_counter() - t0
    ok = (abs(e4 - 2.05) <= 0.02 and abs(e5 - 2.16) <= 0.02 and no_bistab and dt < 600)
    rest = max(others.values())
    report(4, ok, f"edges d=4 {e4:.4f}, d=5 {e5:.4f}; largest other termination {rest:.4f}; {dt:.0f}s")


def test_criterion_05_sector_dimensions():
    t0 = time.perf_counter()
    a = sorted(sector_dimensions(150, 2).values())
    b = sorted(sector_dimensions(6, 5).values())
    ok = (a == sorted([149226, 143450, 146300, 146300])
          and b == sorted([149535, 147580, 148330, 148330]))
    report(5, ok and time.perf_counter() - t0 < 60, f"(150,2) {a}; (6,5) {b}")


def test_criterion_06_oracle_equivalence():
    rng = np.random.default_rng(6)
    worst_spec, worst_ss = 0.0, 0.0
    for N, d in ((2, 2), (3, 2), (2, 3)):
        for kind in KINDS:
            for _ in range(5):
                gI, gC = rng.uniform(0.1, 2.0, 2)
                V = rng.choice([-1, 1]) * rng.uniform(0.5, 1.5)
                p = ModelParams.build(d, V, gI, gC, kind)
                full = np.linalg.eigvals(kronecker_liouvillian(p, N))
                basis = enumerate_basis(N, d)
                ops = assemble_liouvillian(p, basis)
                for s in SECTORS:
                    ev = np.linalg.eigvals(ops[s].matrix.toarray())
                    dist = np.abs(ev[:, None] - full[None, :]).min(axis=1)
                    worst_spec = max(worst_spec, float(dist.max(initial=0)))
                rho = expand_full(steady_state(p, N, basis))
                worst_ss = max(worst_ss, float(np.abs(rho - kronecker_steady_state(p, N)).max()))
    ok = worst_spec < 1e-8 and worst_ss < 1e-8
    report(6, ok, f"spectral containment {worst_spec:.1e}, steady-state match {worst_ss:.1e}")


def test_criterion_07_uniqueness():
    rng = np.random.default_rng(7)
    worst_second, worst_other = np.inf, -np.inf
    for N, d in ((5, 2), (4, 3), (3, 4)):
        basis = enumerate_basis(N, d)
        sectors = build_sectors(basis)
        for kind in KINDS:
            for _ in range(4):
                gI = rng.uniform(0.05, 3.0)
                gC = rng.uniform(0.0, 3.0)
                p = ModelParams.build(d, 1.0, gI, gC, kind)
                ops = assemble_liouvillian(p, basis, sectors)
                for s, op in ops.items():
                    ev = np.linalg.eigvals(op.matrix.toarray())
                    if s == (1, 1):
                        re = np.sort(np.abs(ev.real))
                        worst_second = min(worst_second, re[1])
                        assert re[0] < 1e-9
                    elif ev.size:
                        worst_other = max(worst_other, ev.real.max())
    ok = worst_second > 1e-6 and worst_other < 0
    report(7, ok, f"min second |Re| in (+1,+1) {worst_second:.3e}; "
                  f"max Re in other sectors {worst_other:.3e}")


@pytest.mark.slow
def test_criterion_08_purity_window():
    low, high = {}, {}
    for N, d in ((5, 2), (7, 2), (5, 3), (5, 4)):
        low[(N, d)] = d ** N * purity(steady_state(ModelParams.build(d, 1.0, 0.35, 0.35), N))
        high[(N, d)] = purity(steady_state(ModelParams.build(d, 1.0, 2.0, 2.0), N))
    ok = all(3.41 <= v <= 14.22 for v in low.values()) and all(v > 0.9 for v in high.values())
    report(8, ok, "d^N P(0.35)=" + ", ".join(f"{k}:{v:.4f}" for k, v in low.items())
           + "; P(2.0)=" + ", ".join(f"{k}:{v:.4f}" for k, v in high.items()))


@pytest.mark.slow
def test_criterion_09_gap_behaviour():
    t0 = time.perf_counter()
    g_mp = [gaps(ModelParams.build(3, 1.0, 0.5, 0.2), N).gaps[(-1, 1)] for N in (3, 6, 9)]
    part1 = g_mp[0] > g_mp[1] > g_mp[2]
    scan = np.round(np.arange(1.0, 2.6001, 0.1), 10)
    g_pp = [gaps(ModelParams.build(3, 1.0, g, 0.2), 6).gaps[(1, 1)] for g in scan]
    g_min = float(scan[int(np.argmin(g_pp))])
    part2 = abs(g_min - 1.8) <= 0.1
    crit = [gaps(ModelParams.build(3, 1.0, 1.8, 0.2), N) for N in (3, 6, 9)]
    g_pm = [r.gaps[(1, -1)] for r in crit]
    g_mm = [r.gaps[(-1, -1)] for r in crit]
    part3 = all(b >= 0.95 * a for seq in (g_pm, g_mm) for a, b in zip(seq, seq[1:]))
    dt = time.perf_counter() - t0
    fmt = lambda xs: "[" + ", ".join(f"{x:.4f}" for x in xs) + "]"
    report(9, part1 and part2 and part3 and dt < 1800,
           f"D(-1,+1) N=3,6,9 {fmt(g_mp)}; argmin D(+1,+1) at {g_min:.1f} "
           f"(min {min(g_pp):.4f}); critical D(+1,-1) {fmt(g_pm)} D(-1,-1) {fmt(g_mm)}; {dt:.0f}s")


@pytest.mark.slow
def test_criterion_10_negativity_structure():
    gC = np.round(np.concatenate([np.arange(0.0, 2.1001, 0.1), [2.15]]), 10)
    curves = {}
    for kind in KINDS:
        curves[kind] = np.array([negativity(steady_state(
            ModelParams.build(4, 1.0, 2.2 - c, c, kind), 2)).negativity for c in gC])
    ladder_up = bool(np.all(np.diff(curves["spin-ladder"]) > 0))
    mi = curves["m-independent"]
    k = int(np.argmin(mi))
    valley = 0 < k < len(mi) - 1 and mi[0] > mi[k] < mi[-1]
    # N=5, d=2 grid
    grid = np.round(np.arange(0.1, 3.0001, 0.1), 10)
    best, where = -1.0, None
    for gI in grid:
        for gc in grid:
            v = negativity(steady_state(ModelParams.build(2, 1.0, gI, gc), 5)).negativity
            if v > best:
                best, where = v, (float(gI), float(gc))
    dist = (where[0] + where[1] - 2.0) / math.sqrt(2)
    side = 0 < dist <= 0.4
    report(10, ladder_up and valley and side,
           f"N=2,d=4 ladder monotone={ladder_up}, m-indep. min at gammaC={gC[k]:.2f} "
           f"(valley={valley}); N=5,d=2 max {best:.4f} at {where}, "
           f"distance to critical line {dist:.3f}")


def test_criterion_11_large_spin():
    t0 = time.perf_counter()
    gI, gC = 0.4, 0.6
    ctrl = Controls(rtol=1e-12, atol=1e-14)
    times = np.linspace(0.0, 100.0, 201)
    theta, phi = 2.0, 0.4
    x0, y0, z0 = math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)
    ls = ModelParams.build(2, 1.0, gI, gC)
    _, traj = integrate_largespin(ls, [x0] * 4, [y0] * 4, [z0] * 4, 100.0, ctrl, t_eval=times)
    mf = ModelParams.build(2, 1.0, 0.0, gI + gC)
    tr = integrate(mf, coherent_state(mf.spin, theta, phi), 100.0, ctrl, n_samples=201)
    dev = float(np.abs(traj.mean(axis=2) - tr.expectations).max())
    spread = float(np.ptp(traj, axis=2).max())
    dt = time.perf_counter() - t0
    report(11, dev < 1e-8 and spread < 1e-12,
           f"max deviation {dev:.2e}, spread among spins {spread:.1e}, {dt:.1f}s")


def test_criterion_12_cavity_map():
    worst_rt = 0.0
    for kind in KINDS:
        for V, gC in ((12.7e3, 25.8e3), (-5e3, 3e4), (2e4, 1e4)):
            hw = build_hardware(5, 10_000, V, gC, kind)
            rep = check_conditions(effective_coefficients(hw), make_dissipator(kind, SpinQuantum(5)),
                                   V=V, gammaC=gC)
            worst_rt = max(worst_rt, rep.max_residual())
    rng = np.random.default_rng(12)
    k1 = cavity_elimination_check(rng.uniform(0.1, 5, 8), rng.normal(0, 5, 8), seed=3).residual.max()
    rb = rb87_scenario().report
    Vabs, gamma = abs(rb.V), rb.gammaC
    rb_ok = (12.7e3 / 1.5 <= Vabs <= 12.7e3 * 1.5 and 25.8e3 / 1.5 <= gamma <= 25.8e3 * 1.5
             and 1.6 <= gamma / Vabs <= 2.6)
    report(12, worst_rt < 1e-10 and k1 < 1e-12 and rb_ok,
           f"round-trip residual {worst_rt:.1e}; ansatz residual {k1:.1e}; "
           f"Rb-87 |V|={Vabs / 1e3:.2f} kHz, gamma_C={gamma / 1e3:.2f} kHz, "
           f"ratio {gamma / Vabs:.2f}")
