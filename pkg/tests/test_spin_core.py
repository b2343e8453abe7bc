import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from quditlmg.spin_core import (DissipatorKind, ModelParams, SpinQuantum, doubled, jump_operator,
                                ladder_coeff, make_dissipator, single_particle_matrices)


@pytest.mark.parametrize("d", range(2, 8))
def test_commutation_relations(d):
    m = single_particle_matrices(SpinQuantum(d))
    jx, jy, jz = m["jx"], m["jy"], m["jz"]
    comm = lambda a, b: a @ b - b @ a
    assert np.allclose(comm(jx, jy), 1j * jz)
    assert np.allclose(comm(jy, jz), 1j * jx)
    assert np.allclose(comm(jz, jx), 1j * jy)
    assert np.allclose(m["jp"], jx + 1j * jy)
    j = (d - 1) / 2
    assert np.allclose(jx @ jx + jy @ jy + jz @ jz, j * (j + 1) * np.eye(d))


def test_spin_quantum_half_integers():
    s = SpinQuantum.from_j(1.5)
    assert s.d == 4 and s.j == 1.5
    assert np.allclose(s.m_values, [-1.5, -0.5, 0.5, 1.5])
    with pytest.raises(ValueError):
        SpinQuantum(1)
    with pytest.raises(ValueError):
        doubled(0.3)


def test_ladder_coeff_boundaries():
    assert ladder_coeff(1, 1) == 0.0
    assert ladder_coeff(1, -2) == 0.0
    assert ladder_coeff(0.5, -0.5) == pytest.approx(1.0)
    assert ladder_coeff(2, -2) == pytest.approx(2.0)


@pytest.mark.parametrize("d", range(2, 7))
def test_dissipators(d):
    spin = SpinQuantum(d)
    ladder = make_dissipator("spin-ladder", spin)
    flat = make_dissipator("m-independent", spin)
    assert ladder.ell[0] == pytest.approx(math.sqrt(d - 1))
    assert np.allclose(flat.array, math.sqrt(d - 1))
    assert np.allclose(jump_operator(ladder), single_particle_matrices(spin)["jm"])
    if d <= 3:
        assert np.allclose(ladder.array, flat.array)
    else:
        assert not np.allclose(ladder.array, flat.array)


@given(st.lists(st.floats(0.1, 5.0), min_size=3, max_size=3))
def test_custom_dissipator_normalisation(amps):
    spin = SpinQuantum(4)
    spec = make_dissipator("custom", spin, amps)
    assert spec.ell[0] == pytest.approx(math.sqrt(3))
    c = math.sqrt(3) / amps[0]
    assert spec.rate_factor == pytest.approx(c ** -2)
    p = ModelParams.build(4, 1.0, 1.0, 2.0, "custom", amps)
    assert p.gammaI == pytest.approx(spec.rate_factor)


def test_model_params_validation():
    with pytest.raises(ValueError):
        ModelParams.build(3, 1.0, -0.1, 0.0)
    with pytest.raises(ValueError):
        make_dissipator("spiral", SpinQuantum(3))
    assert DissipatorKind.parse("M_Independent") is DissipatorKind.M_INDEPENDENT
    p = ModelParams.build(3, 1.0, 0.5, 0.2).with_rates(gammaC=1.0)
    assert (p.gammaI, p.gammaC) == (0.5, 1.0)
