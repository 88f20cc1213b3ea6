"""Closed-form cooling, heating and exchange models against oracles."""

import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp

from sympcool import models
from sympcool.constants import COULOMB_E2, EV_IN_J, MASS_AL_U, MASS_CA_U, mass_kg
from sympcool.dynamics import TWO_PI

OMEGA = TWO_PI * 1.0e6


def params_si(e0_ev, m_h=MASS_AL_U, m_c=MASS_CA_U, omega=OMEGA):
    return models.AnalyticModelParams.from_si(m_h, m_c, omega, e0_ev * EV_IN_J)


def equal_params(e0_ev, mass=27.0, omega=OMEGA):
    return models.AnalyticModelParams.from_si(mass, mass, omega, e0_ev * EV_IN_J)


# -------------------------------------------------------------- parameters


def test_params_validation():
    with pytest.raises(ValueError):
        models.AnalyticModelParams.from_si(-1.0, 40.0, OMEGA, EV_IN_J)
    with pytest.raises(ValueError):
        models.AnalyticModelParams.from_si(27.0, 40.0, 0.0, EV_IN_J)
    # the weak-interaction regime requires E0 above the pair energy scale
    with pytest.raises(ValueError):
        models.AnalyticModelParams.from_scaled(27.0, 40.0, OMEGA, 0.5)


def test_params_scaled_round_trip():
    p = models.AnalyticModelParams.from_scaled(27.0, 40.0, OMEGA, 30.0)
    assert p.e0 / p.scales.e_d == pytest.approx(30.0, rel=1e-12)
    assert p.mass_ratio == pytest.approx(40.0 / 27.0, rel=1e-14)
    assert p.tau == pytest.approx(1e-6, rel=1e-12)


# ------------------------------------------------------------ momentum kick


def test_momentum_kick_against_force_quadrature():
    # closed flyby impulse versus direct time integration of the
    # transverse Coulomb force at b = 1 um, v = 100 m/s
    b, v = 1.0e-6, 100.0
    closed = models.momentum_kick(b, v)
    span = 1.0e4 * b / v
    # epsabs must be zeroed: the default would declare any value of this
    # 1e-24-magnitude integral converged
    num, _ = quad(
        lambda t: COULOMB_E2 * b / (b * b + (v * t) ** 2) ** 1.5,
        -span,
        span,
        points=[0.0],
        epsabs=0.0,
        epsrel=1e-10,
        limit=400,
    )
    assert abs(closed - num) < 1e-3 * closed


def test_momentum_kick_scaling_and_errors():
    assert models.momentum_kick(1e-6, 100.0) == pytest.approx(
        2.0 * models.momentum_kick(2e-6, 100.0), rel=1e-14
    )
    with pytest.raises(ValueError):
        models.momentum_kick(0.0, 1.0)
    with pytest.raises(ValueError):
        models.momentum_kick(1e-6, -1.0)


def test_momentum_kick_from_angular_momentum_consistent():
    b, v, m_u = 2.5e-6, 240.0, 27.0
    ell = mass_kg(m_u) * b * v
    direct = models.momentum_kick(b, v)
    via_ell = models.momentum_kick_from_angular_momentum(ell, m_u)
    assert via_ell == pytest.approx(direct, rel=1e-12)
    with pytest.raises(ValueError):
        models.momentum_kick_from_angular_momentum(-1.0, m_u)


# ------------------------------------------------------------ simple model


def test_simple_cooling_time_anchor_values():
    # aluminium hot, calcium cold, 2 pi x 1 MHz
    assert models.simple_cooling_time(params_si(1.0)) == pytest.approx(5.0e3, rel=0.2)
    assert models.simple_cooling_time(params_si(0.1)) == pytest.approx(5.0, rel=0.2)
    # frozen values of this implementation
    assert models.simple_cooling_time(params_si(1.0)) == pytest.approx(5391.84, rel=1e-4)
    assert models.simple_cooling_time(params_si(0.1)) == pytest.approx(5.39184, rel=1e-4)
    assert models.simple_cooling_time(params_si(0.3)) == pytest.approx(145.58, rel=1e-4)


def test_simple_cooling_time_cubic_energy_scaling():
    t1 = models.simple_cooling_time(params_si(0.2))
    t2 = models.simple_cooling_time(params_si(0.4))
    assert t2 / t1 == pytest.approx(8.0, rel=1e-12)


def test_simple_cooling_time_frequency_scaling():
    # doubling every trap frequency shortens the cooling time eightfold
    t1 = models.simple_cooling_time(params_si(1.0, omega=OMEGA))
    t2 = models.simple_cooling_time(params_si(1.0, omega=2.0 * OMEGA))
    assert t1 / t2 == pytest.approx(8.0, rel=1e-12)


def test_simple_rate_and_decay_consistent():
    # the closed-form E(t) solves dE/dt = rate(E)
    p = params_si(0.3)
    t_end = 0.9 * models.simple_cooling_time(p)
    sol = solve_ivp(
        lambda t, e: models.simple_energy_loss_rate(float(e[0]), p),
        (0.0, t_end),
        [p.e0],
        rtol=1e-10,
        atol=1e-30,
        dense_output=True,
    )
    for frac in (0.1, 0.5, 0.9):
        t = frac * t_end
        closed = float(models.simple_energy_at(t, p))
        assert closed == pytest.approx(float(sol.sol(t)[0]), rel=1e-6)


def test_simple_rate_out_of_regime():
    p = params_si(1.0)
    with pytest.raises(models.OutOfRegimeError):
        models.simple_energy_loss_rate(0.5 * p.scales.e_d, p)


def test_phonon_heating_rate_anchor():
    p = params_si(1.0)
    rate = models.phonon_heating_rate(1.0 * EV_IN_J, p)
    assert rate == pytest.approx(3700.0, rel=0.1)
    assert rate == pytest.approx(3690.05, rel=1e-4)
    # inverse square energy dependence
    assert models.phonon_heating_rate(0.5 * EV_IN_J, p) == pytest.approx(
        4.0 * rate, rel=1e-12
    )


# ----------------------------------------------------------- refined model


def test_refined_rate_exceeds_simple_by_log_factor():
    p = params_si(1.0)
    e = 0.2 * EV_IN_J
    simple = models.simple_energy_loss_rate(e, p)
    refined = models.refined_cooling_rate(e, p)
    cutoff = models.LOG_CUTOFF_FACTOR * p.scales.e_d
    assert refined / simple == pytest.approx(1.5 * np.log(e / cutoff), rel=1e-12)


def test_refined_cooling_time_anchor_values():
    assert models.refined_cooling_time(params_si(0.1)) == pytest.approx(0.652674, rel=1e-4)
    assert models.refined_cooling_time(params_si(0.3)) == pytest.approx(14.6816, rel=1e-4)
    assert models.refined_cooling_time(params_si(1.0)) == pytest.approx(459.794, rel=1e-4)


def test_refined_cooling_time_quadrature_regression():
    # frozen against a 400k-knot trapezoid integration of 1/rate
    p = models.AnalyticModelParams.from_scaled(27.0, 40.0, OMEGA, 50.0)
    assert models.refined_cooling_time(p) == pytest.approx(
        0.0015586560911850015, rel=1e-9
    )


def test_refined_below_cutoff_rejected():
    p = params_si(1.0)
    with pytest.raises(models.OutOfRegimeError):
        models.refined_cooling_rate(1.2 * p.scales.e_d, p)
    with pytest.raises(models.OutOfRegimeError):
        models.refined_cooling_time(
            models.AnalyticModelParams.from_scaled(27.0, 40.0, OMEGA, 1.2)
        )


# ---------------------------------------------------------- cooling curves


def test_simple_curve_shape():
    p = params_si(0.3)
    curve = models.simple_cooling_curve(p)
    assert curve.model == "simple"
    assert np.all(np.diff(curve.times) > 0.0)
    assert np.all(np.diff(curve.energies) < 0.0)
    assert curve.energies[0] == pytest.approx(p.e0)
    assert curve.energies[-1] == pytest.approx(p.scales.e_d)
    assert curve.duration == pytest.approx(
        models.simple_cooling_time(p), rel=1e-6
    )


def test_refined_curve_matches_quadrature_time():
    p = params_si(0.3)
    curve = models.refined_cooling_curve(p, n_points=2048)
    assert curve.duration == pytest.approx(models.refined_cooling_time(p), rel=1e-4)
    assert np.all(np.diff(curve.energies) < 0.0)


def test_curve_interpolation_clamps():
    p = params_si(0.3)
    curve = models.simple_cooling_curve(p)
    assert curve.energy_at(-1.0) == pytest.approx(p.e0)
    assert curve.energy_at(curve.duration * 2.0) == pytest.approx(p.scales.e_d)


def test_curve_validation():
    with pytest.raises(ValueError):
        models.CoolingCurve(times=np.array([0.0, 1.0]), energies=np.array([1.0, 2.0]), model="x")
    with pytest.raises(ValueError):
        models.CoolingCurve(times=np.array([0.0, 0.0]), energies=np.array([2.0, 1.0]), model="x")


# ---------------------------------------------------------- exchange model


def test_exchange_time_anchor():
    p = equal_params(1.0, mass=27.0)
    t = models.exchange_time(p)
    assert t == pytest.approx(0.1, rel=0.2)
    assert t == pytest.approx(0.1044689, rel=1e-5)


def test_exchange_requires_equal_masses():
    with pytest.raises(models.OutOfRegimeError):
        models.exchange_time(params_si(1.0))
    with pytest.raises(models.OutOfRegimeError):
        models.exchange_frequency(params_si(1.0), e0=EV_IN_J)


def test_exchange_time_power_law():
    p = equal_params(1.0)
    assert models.exchange_time(p, e0=4.0 * EV_IN_J) / models.exchange_time(
        p, e0=EV_IN_J
    ) == pytest.approx(8.0, rel=1e-12)


def test_exchange_frequency_forms_agree_at_weak_coupling():
    # the full mode-splitting difference approaches the first-order form as
    # the orbit grows and the fractional frequency shift shrinks
    p = equal_params(1.0)
    rels = []
    for e0_ev, tol in ((0.01, 5e-3), (1.0, 5e-6)):
        full = models.exchange_frequency(p, e0=e0_ev * EV_IN_J)
        first = models.exchange_frequency(p, e0=e0_ev * EV_IN_J, small_shift=True)
        assert full == pytest.approx(first, rel=tol)
        rels.append(abs(full - first) / first)
    assert rels[1] < rels[0]


def test_exchange_time_matches_beat_frequency():
    # transfer time is half a beat period of the first-order splitting
    p = equal_params(0.5)
    t_ex = models.exchange_time(p)
    delta = models.exchange_frequency(p, e0=p.e0, small_shift=True)
    assert t_ex == pytest.approx(np.pi / delta, rel=1e-3)


def test_reduced_mode_frequency_regime_guard():
    p = equal_params(1.0)
    with pytest.raises(models.OutOfRegimeError):
        models.reduced_mode_frequency(p, r=0.1 * p.scales.d)
    with pytest.raises(ValueError):
        models.reduced_mode_frequency(p)
    with pytest.raises(ValueError):
        models.reduced_mode_frequency(p, e0=p.e0, r=p.scales.d)


# ----------------------------------------------------------- orbit average


def test_orbit_average_circular_closure():
    # a circular orbit reproduces the single-amplitude closure exactly
    p = equal_params(1.0)
    a = np.sqrt(p.e0 / (mass_kg(27.0) * p.omega**2))
    avg = models.orbit_averaged_inverse_cube(p, axis_ratio=1.0)
    assert avg == pytest.approx(a**-3, rel=1e-9)


@pytest.mark.parametrize(
    "axis_ratio,enhancement",
    [(0.5, 3.08392885), (0.2, 16.71926222), (0.05, 255.8845823)],
)
def test_orbit_average_eccentric_enhancement(axis_ratio, enhancement):
    p = equal_params(1.0)
    a = np.sqrt(p.e0 / (mass_kg(27.0) * p.omega**2))
    avg = models.orbit_averaged_inverse_cube(p, axis_ratio=axis_ratio)
    assert avg * a**3 == pytest.approx(enhancement, rel=1e-7)


def test_orbit_average_validation():
    p = equal_params(1.0)
    with pytest.raises(ValueError):
        models.orbit_averaged_inverse_cube(p, axis_ratio=0.0)
    with pytest.raises(ValueError):
        models.orbit_averaged_inverse_cube(p, axis_ratio=1.5)
    with pytest.raises(models.OutOfRegimeError):
        models.orbit_averaged_inverse_cube(params_si(1.0))


# ------------------------------------------------------------------- files


def test_model_compare_csv(tmp_path):
    path = tmp_path / "compare.csv"
    rows = [
        (10.0, 1.0e-3, 8.0e-4, 9.0e-4, 5.0e-4, 2.0e-3),
        (20.0, 8.0e-3, 6.0e-3, float("nan"), float("nan"), float("nan")),
    ]
    models.write_model_compare_csv(path, rows, metadata={"tool": "unit"})
    lines = path.read_text().splitlines()
    assert lines[0] == "# tool unit"
    assert lines[1].startswith("E0_over_Ed,tau_simple,tau_refined")
    assert len(lines) == 4
    assert float(lines[2].split(",")[0]) == 10.0
