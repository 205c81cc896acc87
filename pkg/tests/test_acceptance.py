"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import math

import numpy as np
import pytest

from compatswe.driver.analysis import angular_speed, convergence_study, crest_angle
from compatswe.driver.config import config_from_dict
from compatswe.driver.scenarios import setup
from compatswe.timestepping import (NewtonConfig, StepConfig, SUPGConfig, _StepSystem,
                                    enstrophy_increment, run, step)

from conftest import model
from test_swe import rates

pytestmark = pytest.mark.slow


def kelvin(refinement, **kw):
    data = dict(scenario="kelvin_disk", refinement=refinement, dt=0.02, t_end=1.0)
    data.update(kw)
    return setup(config_from_dict(data))


def orders(errs, dts):
    return [math.log(abs(a) / abs(b)) / math.log(da / db) for a, b, da, db in zip(errs, errs[1:], dts, dts[1:])]


def test_criterion_01_energy_conservation(report):
    s = kelvin(2)
    cfg = StepConfig(0.02, newton=NewtonConfig(rel_tol=1e-12))
    res = run(s.model, s.state, cfg, 200)
    H0 = res.conserved[0].H
    drift = max(abs(c.H - H0) / abs(H0) for c in res.conserved)
    ok = report(1, "energy drift, kelvin level 2, 200 steps", drift <= 1e-9, f"max rel drift {drift:.2e} <= 1e-9")
    assert ok


COMBOS = [(sc, integ, supg) for sc in ("kelvin_disk", "channel_jet", "disk_solid_rotation", "torus_vortex_pair")
          for integ in ("poisson", "picard") for supg in (False, True)]
LEVEL = {"kelvin_disk": 2, "channel_jet": 4, "disk_solid_rotation": 2, "torus_vortex_pair": 8}
PARAMS = {"disk_solid_rotation": dict(omega0=0.5)}


def test_criterion_02_pv_and_mass(report):
    worst_q = worst_m = 0.0
    for sc, integ, supg in COMBOS:
        c = config_from_dict(dict(scenario=sc, refinement=LEVEL[sc], dt=0.02, t_end=0.1, integrator=integ,
                                  supg=dict(enabled=supg), scenario_params=PARAMS.get(sc, {})))
        s = setup(c)
        res = run(s.model, s.state, c.step_config(), c.n_steps)
        c0 = res.conserved[0]
        worst_q = max(worst_q, max(abs(x.Q - c0.Q) / (1 + abs(c0.Q)) for x in res.conserved))
        worst_m = max(worst_m, max(abs(x.M - c0.M) / (1 + abs(c0.M)) for x in res.conserved))
    ok = worst_q <= 1e-10 and worst_m <= 1e-12
    report(2, f"PV and mass, {len(COMBOS)} scenario/integrator/SUPG runs", ok,
           f"max |dQ|/(1+|Q0|) {worst_q:.2e} <= 1e-10, max |dM|/(1+|M0|) {worst_m:.2e} <= 1e-12")
    assert ok


def test_criterion_03_semidiscrete_oracle(report):
    worst_H = worst_Z = 0.0
    naive_max = 0.0
    for seed in range(20):
        for case in (("disk", 2, "prognostic_Z"), ("torus", 4, "no_boundary")):
            m = model(*case, f0=1.0)
            r = rates(m, m.random_state(np.random.default_rng(seed)))
            worst_H = max(worst_H, abs(r["Hdot"]) / r["Hscale"])
            worst_Z = max(worst_Z, abs(r["Zdot"]) / r["Zscale"])
        m = model("disk", 2, "naive", f0=1.0)
        r = rates(m, m.random_state(np.random.default_rng(seed)))
        naive_max = max(naive_max, abs(r["Zdot"]) / r["Zscale"])
    ok = worst_H <= 1e-10 and worst_Z <= 1e-10 and naive_max > 1e-6
    report(3, "semi-discrete rates on 20 random states", ok,
           f"|dH/dt| {worst_H:.2e}, |dZens/dt| {worst_Z:.2e} <= 1e-10; naive max {naive_max:.2e} > 1e-6")
    assert ok


def test_criterion_04_enstrophy_order(report):
    dts = [0.04, 0.02, 0.01]
    summed, direct = [], []
    for dt in dts:
        s = kelvin(2, dt=dt)
        states = []
        res = run(s.model, s.state, StepConfig(dt), int(round(1.0 / dt)), [lambda n, st_, r: states.append(st_)])
        summed.append(sum(enstrophy_increment(s.model, a, b) for a, b in zip(states, states[1:])))
        direct.append(res.conserved[-1].Zens - res.conserved[0].Zens)
    p = orders(summed, dts)
    ok = abs(summed[0]) > abs(summed[1]) > abs(summed[2]) and min(p) >= 1.7
    report(4, "enstrophy error order in dt", ok,
           f"errors {['%.3e' % e for e in summed]} orders {['%.2f' % v for v in p]} >= 1.7; "
           f"direct differences {['%.1e' % e for e in direct]}")
    assert ok


def test_criterion_05_kelvin_speed(report):
    s = kelvin(4, dt=0.05)
    times, argmax, harmonic = [], [], []

    def observe(n, st_, r):
        times.append(st_.t)
        argmax.append(crest_angle(s.model, st_, "argmax"))
        harmonic.append(crest_angle(s.model, st_, "harmonic"))

    run(s.model, s.state, StepConfig(0.05), int(round(math.pi / 0.05)), [observe])
    speed = angular_speed(times, argmax)
    ok = abs(speed - 1.0) <= 0.1
    report(5, "Kelvin crest speed, level 4, T = pi", ok,
           f"argmax speed {speed:.4f} within 10% of 1 (harmonic {angular_speed(times, harmonic):.4f})")
    assert ok


def test_criterion_06_steady_convergence(report):
    c = config_from_dict(dict(scenario="channel_jet", refinement=4, dt=0.05, t_end=1.0))
    rows = convergence_study(c, [4, 8, 16])
    ru = [r.rate_u for r in rows[1:]]
    rD = [r.rate_D for r in rows[1:]]
    tu = [r.tendency_u for r in rows]
    tD = [r.tendency_D for r in rows]
    decreasing = all(b < a for a, b in zip(tu, tu[1:])) and all(b < a for a, b in zip(tD, tD[1:]))
    ok = min(ru) >= 1.7 and min(rD) >= 0.7 and decreasing
    report(6, "channel_jet convergence, 4/8/16 cells, T = 1", ok,
           f"u rates {['%.2f' % v for v in ru]} >= 1.7, D rates {['%.2f' % v for v in rD]} >= 0.7, "
           f"|u_t| {['%.1e' % v for v in tu]}, |D_t| {['%.1e' % v for v in tD]}")
    assert ok


def test_criterion_07_picard_matches_poisson(report):
    s = kelvin(3)
    a = step(s.model, s.state, StepConfig(0.02)).state
    b = step(s.model, s.state, StepConfig(0.02, integrator="picard", picard_iters=50)).state
    diffs = {f: float(np.max(np.abs(getattr(a, f).coefficients - getattr(b, f).coefficients))) for f in "uDZ"}
    ok = max(diffs.values()) <= 1e-10
    report(7, "Picard-50 vs Poisson, one Kelvin step", ok,
           ", ".join(f"{k} {v:.1e}" for k, v in diffs.items()) + " <= 1e-10")
    assert ok


def test_criterion_08_picard_energy_convergence(report):
    dts = [0.04, 0.02, 0.01]
    errs = []
    for dt in dts:
        s = kelvin(2, dt=dt)
        res = run(s.model, s.state, StepConfig(dt, integrator="picard", picard_iters=4), int(round(1.0 / dt)))
        errs.append(abs(res.conserved[-1].H / res.conserved[0].H - 1))
    p = orders(errs, dts)
    ok = errs[0] > errs[1] > errs[2] and min(p) >= 1.0
    report(8, "Picard-4 energy error vs dt", ok,
           f"errors {['%.2e' % e for e in errs]} orders {['%.2f' % v for v in p]} >= 1")
    assert ok


def test_criterion_09_supg(report):
    def go(enabled, tau):
        c = config_from_dict(dict(scenario="torus_vortex_pair", refinement=8, dt=0.01, t_end=5.0,
                                  supg=dict(enabled=enabled, tau=tau)))
        s = setup(c)
        return run(s.model, s.state, c.step_config(), 500)

    upw = go(True, None)
    cons = go(False, None)
    zero = go(True, 0.0)
    z0, z1 = upw.conserved[0].Zens, upw.conserved[-1].Zens
    Q0 = upw.conserved[0].Q
    dq = max(abs(c.Q - Q0) for c in upw.conserved) / (1 + abs(Q0))
    same = all(np.array_equal(getattr(cons.state, f).coefficients, getattr(zero.state, f).coefficients)
               for f in "uDZ")
    ok = z1 <= z0 and dq <= 1e-10 and same
    report(9, "SUPG torus_vortex_pair 8x8, 500 steps", ok,
           f"Zens {z0:.6f} -> {z1:.6f}, PV drift {dq:.1e}, tau=0 bit-identical {same}")
    assert ok


def test_criterion_10_jacobian(report):
    cases = [("disk", 1, "prognostic_Z", 0.0), ("disk", 1, "prognostic_Z", 0.05), ("disk", 1, "naive", 0.05),
             ("torus", 2, "no_boundary", 0.0), ("torus", 2, "prognostic_Z", 0.05)]
    worst = 0.0
    for seed, (kind, level, scheme, tau) in enumerate(cases):
        m = model(kind, level, scheme, f0=2.0)
        s = m.random_state(np.random.default_rng(100 + seed), u_scale=0.5)
        sys = _StepSystem(m, s, StepConfig(0.05, supg=SUPGConfig(tau > 0, tau or None)))
        x = sys.initial_guess(s)
        x = x + 0.01 * np.random.default_rng(seed).uniform(-1, 1, x.size) * np.maximum(1.0, np.abs(x))
        J = sys.jacobian(x).toarray()
        Jfd = sys.fd_jacobian(x).toarray()
        worst = max(worst, np.max(np.abs(J - Jfd)) / np.max(np.abs(J)))
    ok = worst <= 1e-5
    report(10, "analytic vs finite-difference Jacobian, 5 random states", ok, f"max rel discrepancy {worst:.1e} <= 1e-5")
    assert ok
