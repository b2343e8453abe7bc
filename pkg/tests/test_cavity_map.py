import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quditlmg.cavity_map import (A1, A2, B1, B2, HardwareParams, build_hardware,
                                 cavity_elimination_check, check_conditions, clebsch_gordan,
                                 coupling_tables, effective_coefficients, rb87_scenario,
                                 write_residuals_csv)
from quditlmg.errors import ConditionViolation
from quditlmg.spin_core import SpinQuantum, make_dissipator

pytestmark = pytest.mark.filterwarnings("ignore::RuntimeWarning")


def _hw(d=3, N=100, **kw):
    base = dict(N=N, d=d, Delta=np.full(d + 2, 1e9), g0=np.full((2, d), 2e5),
                gp=np.full((2, d), 2e5), gm=np.full((2, d), 2e5),
                omega_minus=np.zeros((2, d - 1)), omega_plus=np.zeros(d - 1),
                omega_down=np.zeros((2, d - 1)), omega_up=np.zeros(d - 1),
                mode_offset=np.array([1e5, 2e5, -1e5, -2e5]), kappa=np.full(4, 1e4),
                ground_offset=np.linspace(0, 1e3, d))
    base.update(kw)
    return HardwareParams(**base)


def test_clebsch_gordan_values():
    assert clebsch_gordan(2, -2, 1, 0, 3, -2) == pytest.approx(math.sqrt(1 / 3))
    assert clebsch_gordan(2, -2, 1, 1, 3, -1) == pytest.approx(math.sqrt(1 / 15))
    assert clebsch_gordan(0.5, 0.5, 0.5, -0.5, 1, 0) == pytest.approx(math.sqrt(0.5))
    # completeness for a j -> j+1 transition: sum over q and m' of |c|^2 = (2j+3)/(2j+1) ... per m
    g0, gp, gm = coupling_tables(5, 1.0, 1.0)
    total = np.abs(g0[0]) ** 2 + np.abs(gp[0]) ** 2 + np.abs(gm[0]) ** 2
    assert np.allclose(total, 7 / 5)


def test_driving_off():
    hw = _hw()
    eff = effective_coefficients(hw)
    assert np.all(eff.alpha == 0) and np.all(eff.beta == 0) and np.all(eff.xi == 0)
    # the ground offsets enter summed over the N atoms
    assert np.allclose(eff.eps, hw.N * hw.ground_offset)
    assert np.allclose(eff.delta, hw.mode_offset - hw.N * eff.delta_plus)


def test_symmetric_inputs_have_no_a_mode_deviation():
    eff = effective_coefficients(_hw())
    assert np.allclose(eff.zeta[[A1, A2]], 0)
    assert eff.delta_plus[A1] == pytest.approx(2e5 ** 2 / 1e9)


def test_single_transition_hand_numbers():
    d = 5
    c = 0.4
    om = np.zeros((2, d - 1))
    om[0, 0] = 6e6
    hw = _hw(d=d, g0=np.full((2, d), 210e3 * c), omega_minus=om)
    eff = effective_coefficients(hw)
    assert eff.alpha[A1, 0] == pytest.approx(630 * c)
    assert eff.beta[A1, 0] == pytest.approx(1j * 630 * c)


def test_beta_equals_i_alpha_for_second_modes():
    rng = np.random.default_rng(2)
    d = 4
    hw = _hw(d=d, omega_minus=rng.normal(size=(2, d - 1)) * 1e6,
             omega_plus=rng.normal(size=d - 1) * 1e6,
             omega_down=rng.normal(size=(2, d - 1)) * 1e6, omega_up=rng.normal(size=d - 1) * 1e6)
    eff = effective_coefficients(hw)
    assert np.allclose(eff.beta[A2], 1j * eff.alpha[A2])
    assert np.allclose(eff.beta[B2], 1j * eff.alpha[B2])
    assert np.allclose(eff.xi_x, 2 * eff.xi.real) and np.allclose(eff.xi_y, -2 * eff.xi.imag)


def test_validation():
    with pytest.raises(ValueError):
        _hw(Delta=np.array([1e9, 1e9, 0.0, 1e9, 1e9]))
    with pytest.raises(ValueError):
        _hw(g0=np.full((2, 3), 1e8))
    with pytest.warns(RuntimeWarning):
        _hw(g0=np.full((2, 3), 4.5e7))


@given(st.sampled_from(["spin-ladder", "m-independent"]), st.integers(2, 6),
       st.floats(-3e4, 3e4).filter(lambda v: abs(v) > 1e3), st.floats(1e3, 6e4))
@settings(max_examples=30, deadline=None)
def test_round_trip(kind, d, V, gC):
    hw = build_hardware(d, 10_000, V, gC, kind, g_a=2e6, g_b=2e6, Delta=1e11)
    diss = make_dissipator(kind, SpinQuantum(d))
    rep = check_conditions(effective_coefficients(hw), diss, V=V, gammaC=gC)
    assert rep.max_residual() < 1e-10
    assert rep.V == pytest.approx(V, rel=1e-10)
    assert rep.gammaC == pytest.approx(gC, rel=1e-10)
    assert rep.gammaC_b2 == pytest.approx(gC, rel=1e-10)
    assert np.allclose(rep.ell, diss.array, rtol=1e-10)


def test_time_unit_rescaling():
    hw = build_hardware(4, 5000, 1e4, 2e4, "m-independent")
    diss = make_dissipator("m-independent", SpinQuantum(4))
    a = check_conditions(effective_coefficients(hw), diss)
    s = 2 * math.pi
    eff_s = effective_coefficients(hw.rescaled(s))
    b = check_conditions(eff_s, diss)
    eff = effective_coefficients(hw)
    for name in ("alpha", "beta", "delta", "delta_plus", "zeta", "eps", "xi"):
        ref = s * getattr(eff, name)
        assert np.allclose(getattr(eff_s, name), ref, rtol=1e-12, atol=1e-9 * s * hw.N * np.abs(eff.delta_plus).max())
    assert b.V == pytest.approx(s * a.V) and b.gammaC == pytest.approx(s * a.gammaC)


def test_condition_five_violation_and_ell_inconsistency():
    hw = build_hardware(3, 1000, 1e4, 2e4, g_a=2e6, g_b=2e6, Delta=1e11)
    off = hw.mode_offset.copy()
    off[B2] += 5e4
    from dataclasses import replace
    rep = check_conditions(effective_coefficients(replace(hw, mode_offset=off)),
                           make_dissipator("spin-ladder", SpinQuantum(3)))
    assert rep.residuals["5:detuning_ratio"] > 0.1
    om = hw.omega_minus.copy()
    om[1, 1] *= 1.5
    with pytest.raises(ConditionViolation) as exc:
        check_conditions(effective_coefficients(replace(hw, omega_minus=om)),
                         make_dissipator("spin-ladder", SpinQuantum(3)))
    assert 0.0 in exc.value.offending


def test_elimination_weights():
    t = cavity_elimination_check([2.0, 1.0], [0.0, 3.0])
    assert t.dissipator_weight[0] == pytest.approx(0.5) and t.hamiltonian_shift[0] == 0
    assert t.hamiltonian_shift[1] == pytest.approx(-0.3)
    big = cavity_elimination_check([1e4], [2.0])
    assert big.dissipator_weight[0] == pytest.approx(1e-4, rel=1e-6)
    assert big.hamiltonian_shift[0] == pytest.approx(-2e-8, rel=1e-6)
    rng = np.random.default_rng(5)
    r = cavity_elimination_check(rng.uniform(0.01, 10, 20), rng.normal(0, 10, 20), seed=9)
    assert r.residual.max() < 1e-12
    with pytest.raises(ValueError):
        cavity_elimination_check([0.0], [0.0])


def test_rb87_scenario_report(tmp_path):
    sc = rb87_scenario()
    rep = sc.report
    # the pinned drives fix omega_c and gamma_C; conditions 3 and 4 are met exactly
    assert rep.residuals["3:alpha_a1"] < 1e-10 and rep.residuals["4:ell_a2"] < 1e-10
    assert sc.hardware.omega_minus[0, 0] == 6e6 and sc.hardware.omega_minus[1, 0] == 50e6
    free = np.abs(np.concatenate([sc.hardware.omega_minus[:, 1:].ravel(), sc.hardware.omega_plus,
                                  sc.hardware.omega_down[:, 1:].ravel(), sc.hardware.omega_up]))
    assert free.min() >= 4e6 * (1 - 1e-9) and free.max() <= 50e6 * (1 + 1e-9)
    assert rep.V < 0 and rep.gammaC > 0
    write_residuals_csv(tmp_path / "r.csv", rep)
    assert "3:alpha_a1" in (tmp_path / "r.csv").read_text()
    assert "gamma_C" in rep.to_text()
