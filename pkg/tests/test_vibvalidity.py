from math import factorial

import numpy as np
import pytest
from scipy.special import eval_genlaguerre

from rotmaster.errors import ValidationError
from rotmaster.vibvalidity import (
    VibRateModel,
    closed_form_moments,
    fc_matrix,
    fc_overlap,
    integrate_rate_eq,
    max_valid_time,
    validity_report,
)


def _hermite_functions(n_max, x):
    # orthonormal oscillator eigenfunctions by the standard three-term recurrence
    out = np.empty((n_max + 1, len(x)))
    out[0] = np.pi**-0.25 * np.exp(-x * x / 2)
    if n_max:
        out[1] = np.sqrt(2) * x * out[0]
    for n in range(2, n_max + 1):
        out[n] = np.sqrt(2 / n) * x * out[n - 1] - np.sqrt((n - 1) / n) * out[n - 2]
    return out


def _quad_fc(m, n, beta):
    x = np.linspace(-25, 25, 20001)
    dx = x[1] - x[0]
    a = _hermite_functions(max(m, n), x)[m]
    b = _hermite_functions(max(m, n), x - np.sqrt(2) * beta)[n]
    return (np.sum(a * b) * dx) ** 2


def _laguerre_fc(m, n, beta):
    lo, hi = min(m, n), max(m, n)
    x = beta * beta
    return factorial(lo) / factorial(hi) * x ** (hi - lo) * np.exp(-x) * eval_genlaguerre(lo, hi - lo, x) ** 2


def test_unshifted_is_identity():
    F = fc_matrix(0.0, 8, 8)
    assert np.array_equal(F, np.eye(8))


@pytest.mark.parametrize("beta", [0.3, 1.0, 1.3, 2.5])
def test_ground_overlap(beta):
    assert fc_overlap(0, 0, beta) == pytest.approx(np.exp(-beta * beta), rel=1e-13)
    assert _quad_fc(0, 0, beta) == pytest.approx(np.exp(-beta * beta), rel=1e-10)


@pytest.mark.parametrize("beta", [0.5, 1.0, 2.0])
def test_against_quadrature(beta):
    for m in range(8):
        for n in range(8):
            assert fc_overlap(m, n, beta) == pytest.approx(_quad_fc(m, n, beta), abs=1e-10)


@pytest.mark.parametrize("beta", [0.25, 1.0, 3.0, 4.3])
def test_against_laguerre_form(beta):
    F = fc_matrix(beta, 30, 30)
    ref = np.array([[_laguerre_fc(m, n, beta) for n in range(30)] for m in range(30)])
    assert np.abs(F - ref).max() < 1e-12


def test_negative_shift_is_symmetric():
    assert np.allclose(fc_matrix(-1.7, 12, 12), fc_matrix(1.7, 12, 12), atol=1e-15)


def test_completeness():
    assert 1 - sum(fc_overlap(m, 0, 1.0) for m in range(31)) < 1e-10
    F = fc_matrix(2.0, 120, 40)
    assert np.abs(F.sum(axis=0) - 1).max() < 1e-12


def test_fc_validation():
    with pytest.raises(ValueError):
        fc_overlap(-1, 0, 1.0)
    with pytest.raises(ValueError):
        fc_overlap(1.5, 0, 1.0)


def test_no_displacement_or_no_rate_is_stationary():
    P0 = np.array([0.2, 0.5, 0.3])
    grid = np.linspace(0.1, 50, 7)
    for model in (VibRateModel(0.0, 0.01, nu_max=10), VibRateModel(1.0, 0.0, nu_max=10)):
        sol = integrate_rate_eq(model, P0, grid)
        assert np.abs(sol.P[:, :3] - P0).max() < 1e-14
        assert np.abs(sol.P[:, 3:]).max() < 1e-14


@pytest.mark.parametrize("eta", [0.5, 1.0, 2.0])
def test_moments_follow_closed_form(eta):
    model = VibRateModel(eta, 0.001)
    grid = np.linspace(0.05, 1.0, 20) / model.g
    sol = integrate_rate_eq(model, [1.0], grid)
    ref = closed_form_moments(model, grid)
    assert np.abs(sol.moments.nu_bar / ref.nu_bar - 1).max() < 0.01
    assert np.abs(sol.moments.var_nu / ref.var_nu - 1).max() < 0.01
    assert np.abs(sol.P.sum(axis=1) - 1).max() < 1e-8


def test_closed_form_values():
    m = VibRateModel(2.0, 0.5)
    assert m.g == pytest.approx(1.0)
    r = closed_form_moments(m, 1.0)
    assert (r.nu_bar, r.var_nu) == (pytest.approx(1.0), pytest.approx(5.0))
    z = closed_form_moments(m, 0.0)
    assert (z.nu_bar, z.var_nu) == (0.0, 0.0)


def test_large_eta_extends_ladder():
    m = VibRateModel(8.6, 1e-3, nu_max=60)
    assert m.nu_max > 60
    assert m.deficit < 1e-8
    with pytest.raises(ValidationError):
        VibRateModel(8.6, 1e-3, nu_max=60, auto_extend=False)


def _model(eta, **kw):
    return VibRateModel(eta, 0.1 * 0.01, omega_nu_over_B=200.0, delta_over_B=1e6, **kw)


def test_bound_scaling():
    a = max_valid_time(_model(1.0)).margin_bound
    b = max_valid_time(_model(2.0)).margin_bound
    assert a / b == pytest.approx(4.0, rel=1e-14)
    r = max_valid_time(_model(3.7)).margin_bound / max_valid_time(_model(8.6)).margin_bound
    assert r == pytest.approx((8.6 / 3.7) ** 2, rel=1e-14)
    assert round(r, 2) == 5.40


@pytest.mark.parametrize("eta", [0.5, 1.0, 3.7, 8.6])
@pytest.mark.parametrize("ratio", [1e2, 1e4, 1e6])
def test_crossing_not_before_margin_bound(eta, ratio):
    m = VibRateModel(eta, 1e-3, omega_nu_over_B=100.0, delta_over_B=100.0 * ratio)
    b = max_valid_time(m)
    assert b.crossing_time >= b.margin_bound


def test_no_heating_means_unbounded():
    assert max_valid_time(_model(0.0)).margin_bound == np.inf


def test_missing_ratios():
    with pytest.raises(ValidationError):
        max_valid_time(VibRateModel(1.0, 1e-3))


def test_report_flags():
    model = _model(3.7)
    bound = max_valid_time(model).margin_bound
    ok = validity_report(model, 0.5 * bound)
    assert ok["status"] == "within validity regime" and "warning" not in ok
    bad = validity_report(model, 2 * bound)
    assert bad["status"] == "outside validity regime"
    assert f"{bound:.6g}" in bad["warning"] and f"{2 * bound:.6g}" in bad["warning"]


@pytest.mark.parametrize("kw", [dict(eta=-1.0), dict(rate_prefactor=-1.0), dict(nu_max=0), dict(omega_nu_over_B=0.0)])
def test_model_validation(kw):
    args = dict(eta=1.0, rate_prefactor=1e-3)
    args.update(kw)
    with pytest.raises(ValidationError):
        VibRateModel(**args)


@pytest.mark.parametrize("eta", [0.25, 1.0, 4.0])
def test_probability_conservation_and_kernel(eta):
    model = VibRateModel(eta, 1e-3)
    assert model.kernel.min() >= 0
    sol = integrate_rate_eq(model, [1.0], np.linspace(0.01, 1.0, 50) / model.g)
    assert np.abs(sol.P.sum(axis=1) - 1).max() < 1e-10


@pytest.mark.parametrize("eta", [0.25, 1.0, 2.0, 4.0])
def test_variance_excess_is_linear_at_short_times(eta):
    model = VibRateModel(eta, 1e-3)
    t = np.linspace(0.001, 0.05, 10) / model.g
    sol = integrate_rate_eq(model, [1.0], t)
    excess = sol.moments.var_nu - (model.g * t) ** 2
    fit = np.polyval(np.polyfit(t, excess, 1), t)
    assert np.abs(fit - excess).max() / np.abs(excess).max() < 1e-6
