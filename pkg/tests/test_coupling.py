from math import sqrt

import numpy as np
import pytest
from scipy.special import sph_harm_y

from rotmaster import FieldComponent, FieldConfig, build_coupling, kerr_field
from rotmaster.angmom import build_basis
from rotmaster.coupling import (
    build_H_eff,
    build_H_R,
    build_jumps,
    direction_cosine,
    jump_rate_operator,
)
from rotmaster.errors import ValidationError

from conftest import random_state


def _sphere_grid(n=24):
    x, w = np.polynomial.legendre.leggauss(n)
    theta = np.arccos(x)
    phi = np.linspace(0, 2 * np.pi, 2 * n, endpoint=False)
    T, P = np.meshgrid(theta, phi, indexing="ij")
    W = np.outer(w, np.full(len(phi), 2 * np.pi / len(phi)))
    return T, P, W


def _quad_matrix_element(je, me, j, m, q):
    # <je me| n_q |j m> by quadrature of spherical-harmonic products
    T, P, W = _sphere_grid()
    n_q = {0: np.cos(T), 1: -np.sin(T) * np.exp(1j * P) / sqrt(2), -1: np.sin(T) * np.exp(-1j * P) / sqrt(2)}[q]
    f = np.conj(sph_harm_y(je, me, T, P)) * n_q * sph_harm_y(j, m, T, P)
    return np.sum(f * W)


def test_direction_cosine_ground_to_first():
    g, e = build_basis(3), build_basis(4, "excited")
    n0 = direction_cosine(g, e, 0)
    assert n0[e.index(1, 0), g.index(0, 0)] == pytest.approx(1 / sqrt(3), abs=1e-15)
    assert n0[e.index(1, 0), g.index(1, 0)] == 0.0


def test_direction_cosine_against_quadrature():
    g, e = build_basis(3), build_basis(4, "excited")
    worst = 0.0
    for q in (-1, 0, 1):
        D = direction_cosine(g, e, q)
        for col, (j, m) in enumerate(g.states):
            for row, (je, me) in enumerate(e.states):
                if me != m + q or abs(je - j) != 1:
                    assert D[row, col] == 0.0
                    continue
                ref = _quad_matrix_element(je, me, j, m, q)
                worst = max(worst, abs(D[row, col] - ref))
    assert worst < 1e-12


def test_completeness_interior():
    cs = build_coupling(12, kerr_field())
    g, e = cs.ground, cs.excited
    tot = sum(np.abs(direction_cosine(g, e, q)) ** 2 for q in (-1, 0, 1)).sum(axis=1)
    interior = e.j <= g.j_max - 1
    assert np.abs(tot[interior] - 1.0).max() < 1e-12
    # the truncated top of the ladder is missing partners
    assert tot[e.j == e.j_max].max() < 1.0 - 1e-3


def test_h_r_ground_state_value(kerr):
    H = build_H_R(kerr)
    i0 = kerr.ground.index(0, 0)
    assert H[i0, i0].real == pytest.approx(-0.1 / 3, abs=1e-15)


def test_h_r_zero_and_hermitian(kerr):
    H = build_H_R(kerr)
    assert np.abs(H - H.conj().T).max() < 1e-14
    cs0 = build_coupling(6, kerr_field(0.0, 0.01))
    assert np.abs(build_H_R(cs0)).max() == 0.0


def test_h_r_selection_rules(kerr):
    H = build_H_R(kerr)
    b = kerr.ground
    rows, cols = np.nonzero(np.abs(H) > 1e-15)
    for r, c in zip(rows, cols):
        (j1, m1), (j2, m2) = b.states[r], b.states[c]
        assert abs(j1 - j2) in (0, 2)
        assert abs(m1 - m2) in (0, 2)


def test_red_detuning_flips_light_shift():
    blue = build_H_R(build_coupling(4, kerr_field()))
    red_field = FieldConfig(kerr_field().components, 0.1, 0.01, red_detuned=True)
    red = build_coupling(4, red_field)
    assert np.allclose(build_H_R(red), -blue, atol=0)
    assert np.allclose(build_jumps(red), build_jumps(build_coupling(4, kerr_field())), atol=0)


def test_jumps_vanish_without_dissipation():
    cs = build_coupling(6, kerr_field(0.1, 0.0))
    assert np.abs(build_jumps(cs)).max() == 0.0


def test_jump_rate_of_ground_state(kerr):
    K = jump_rate_operator(kerr)
    i0 = kerr.ground.index(0, 0)
    assert K[i0, i0].real == pytest.approx(0.1 * 0.01 / 3, rel=1e-13)


def _random_field(rng):
    comps = []
    for _ in range(rng.integers(1, 4)):
        pol = rng.normal(size=3) + 1j * rng.normal(size=3)
        comps.append(FieldComponent(complex(rng.normal(), rng.normal()), tuple(pol / np.linalg.norm(pol)), 0.0))
    return FieldConfig(tuple(comps), float(rng.uniform(0.01, 1.0)), float(rng.uniform(0.001, 0.05)))


@pytest.mark.parametrize("j_max", [4, 8, 12])
def test_sum_rule_random_fields(j_max, rng):
    for _ in range(10):
        cs = build_coupling(j_max, _random_field(rng))
        P = cs.interior()
        R = jump_rate_operator(cs) + cs.field.gamma_over_delta * build_H_R(cs)
        assert np.abs(R[np.ix_(P, P)]).max() < 1e-12


def test_h_eff_forms(kerr, rng):
    H = build_H_eff(kerr)
    P = kerr.interior()
    alt = kerr.H_M + (1 + 0.5j * 0.01) * build_H_R(kerr)
    assert np.abs((H - alt)[np.ix_(P, P)]).max() < 1e-14
    for _ in range(20):
        psi = random_state(rng, kerr.dim)
        assert np.vdot(psi, H @ psi).imag <= 1e-16


def test_h_eff_limits():
    cs = build_coupling(4, kerr_field(0.1, 0.0))
    H = build_H_eff(cs)
    assert np.abs(H - H.conj().T).max() < 1e-15
    free = build_H_eff(build_coupling(3, kerr_field(0.0, 0.0)))
    assert np.array_equal(np.diag(free).real[:6], [0, 2, 2, 2, 6, 6])
    assert np.count_nonzero(free - np.diag(np.diag(free))) == 0


def test_time_dependent_field_weights():
    f = FieldConfig(
        (FieldComponent(1.0, "x", 0.0), FieldComponent(1.0, "y", 1.5)), 0.1, 0.01
    )
    assert not f.time_independent
    w = f.weights(2.0)
    assert np.isclose(np.sum(np.abs(w) ** 2), 1.0)
    assert np.isclose(w[1] / w[0], np.exp(-3j))


def test_field_validation():
    with pytest.raises(ValidationError):
        FieldComponent(1.0, (1.0, 1.0, 0.0))
    with pytest.raises(ValidationError):
        FieldComponent(1.0, "diagonal")
    with pytest.raises(ValidationError):
        FieldConfig((), 0.1, 0.01)
    with pytest.raises(ValidationError):
        FieldConfig(kerr_field().components, -0.1, 0.01)
    with pytest.raises(ValidationError):
        FieldConfig(kerr_field().components, 0.1, 1.5)
    with pytest.warns(UserWarning):
        FieldConfig(kerr_field().components, 0.1, 0.2)
