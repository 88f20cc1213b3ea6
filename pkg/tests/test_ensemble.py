"""Tests for Monte Carlo campaigns and the resonant-exchange probe."""

import json

import numpy as np
import pytest
from numpy.random import default_rng

from sympcool.constants import K_BOLTZMANN, MASS_AL_U, MASS_CA_U
from sympcool.dynamics import IonSpec, TrapConfig, derive_scales, total_energy
from sympcool.models import AnalyticModelParams, exchange_time
from sympcool.ensemble import (
    DEFAULT_T_MAX_FACTOR,
    SCATTER_CSV_HEADER,
    VERDICT_KINDS,
    WORKERS_ENV,
    EnsembleSpec,
    TrialResult,
    equal_mass_exchange_probe,
    exchange_half_period_periods,
    predicted_cooling_periods,
    read_scatter_csv,
    resolve_workers,
    run_ensemble,
    sample_initial,
    write_scatter_csv,
    write_summary_json,
)

AL = IonSpec(MASS_AL_U)
CA = IonSpec(MASS_CA_U)


def _small_spec(**overrides):
    kw = dict(
        hot=AL, cold=CA, e0_grid=(6.0,), trials_per_point=4, seed=5,
        t_max_factor=40.0, sample_interval=1.0,
    )
    kw.update(overrides)
    return EnsembleSpec(**kw)


# -- initial-condition sampling ---------------------------------------------


def test_sample_initial_equipartition():
    # per-axis variances follow k_B T / (m omega_i^2) and k_B T / m
    trap = TrapConfig.default()
    scales = derive_scales(AL.mass_u, trap.omega_hot)
    e0 = 30.0 * scales.e_d
    rng = default_rng(42)
    n = 10000
    xs = np.empty((n, 3))
    vs = np.empty((n, 3))
    es = np.empty(n)
    for i in range(n):
        state = sample_initial([AL], trap, rng, e0=e0)
        xs[i] = state.positions[0]
        vs[i] = state.velocities[0]
        es[i] = total_energy(state, [AL], trap)
    w2 = (np.asarray(trap.omega_hot) / scales.omega_ref) ** 2
    var_x = (30.0 / 6.0 / w2) * scales.d**2
    var_v = (30.0 / 6.0) * (scales.d * scales.omega_ref) ** 2
    assert np.all(np.abs(xs.var(axis=0) / var_x - 1.0) < 0.08)
    assert np.all(np.abs(vs.var(axis=0) / var_v - 1.0) < 0.08)
    assert abs(es.mean() / e0 - 1.0) < 0.02


def test_sample_initial_temperature_equivalence():
    trap = TrapConfig.default()
    scales = derive_scales(AL.mass_u, trap.omega_hot)
    e0 = 20.0 * scales.e_d
    a = sample_initial([AL], trap, default_rng(1), e0=e0)
    b = sample_initial([AL], trap, default_rng(1), temperature=e0 / (3.0 * K_BOLTZMANN))
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.velocities, b.velocities)


def test_sample_initial_zero_energy_limit():
    trap = TrapConfig.default()
    state = sample_initial([AL, CA, CA], trap, default_rng(2), e0=0.0)
    assert np.all(state.positions[0] == 0.0)
    assert np.all(state.velocities == 0.0)
    # two refrigerants sit at their symmetric chain equilibrium
    assert np.any(state.positions[1] != 0.0)
    np.testing.assert_allclose(state.positions[1], -state.positions[2], atol=1e-12)


def test_sample_initial_argument_validation():
    trap = TrapConfig.default()
    rng = default_rng(0)
    with pytest.raises(ValueError):
        sample_initial([AL], trap, rng)
    with pytest.raises(ValueError):
        sample_initial([AL], trap, rng, e0=1.0e-23, temperature=300.0)
    with pytest.raises(ValueError):
        sample_initial([AL], trap, rng, temperature=-1.0)
    with pytest.raises(ValueError):
        sample_initial([AL], trap, rng, e0=-1.0)
    with pytest.raises(ValueError):
        sample_initial([AL, CA, AL], trap, rng, e0=1.0e-23)


# -- campaign bookkeeping ---------------------------------------------------


def test_spec_validation():
    with pytest.raises(ValueError):
        EnsembleSpec(hot=AL, cold=CA, e0_grid=())
    with pytest.raises(ValueError):
        EnsembleSpec(hot=AL, cold=CA, e0_grid=(0.5,))
    with pytest.raises(ValueError):
        EnsembleSpec(hot=AL, cold=CA, e0_grid=(10.0,), n_cold=0)
    with pytest.raises(ValueError):
        EnsembleSpec(hot=AL, cold=CA, e0_grid=(10.0,), trials_per_point=0)
    with pytest.raises(ValueError):
        EnsembleSpec(hot=AL, cold=CA, e0_grid=(10.0,), t_max_periods=-1.0)
    with pytest.raises(ValueError):
        EnsembleSpec(hot=AL, cold=CA, e0_grid=(10.0,), t_max_factor=0.0)


def test_prediction_formula():
    assert predicted_cooling_periods(30.0, AL, CA) == pytest.approx(
        (CA.mass_u / AL.mass_u) / 24.0 * 30.0**3, rel=1e-12
    )
    # cubic growth
    assert predicted_cooling_periods(20.0, AL, CA) == pytest.approx(
        8.0 * predicted_cooling_periods(10.0, AL, CA), rel=1e-12
    )


def test_t_max_policy():
    spec = _small_spec()
    assert spec.t_max_for(0) == pytest.approx(
        40.0 * predicted_cooling_periods(6.0, AL, CA)
    )
    fixed = _small_spec(t_max_periods=123.0)
    assert fixed.t_max_for(0) == 123.0
    assert _small_spec(t_max_factor=DEFAULT_T_MAX_FACTOR).ion_list() == [AL, CA]


def test_resolve_workers_policy(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert resolve_workers() == 1
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert resolve_workers() == 3
    assert resolve_workers(2) == 2  # explicit argument wins
    monkeypatch.setenv(WORKERS_ENV, "zero")
    with pytest.raises(ValueError):
        resolve_workers()
    with pytest.raises(ValueError):
        resolve_workers(0)


# -- running campaigns ------------------------------------------------------


def test_run_is_deterministic_for_a_spec():
    spec = _small_spec()
    first = run_ensemble(spec)
    second = run_ensemble(spec)
    assert [t.verdict for t in first.trials] == [t.verdict for t in second.trials]
    assert [t.t_cool_periods for t in first.trials] == [
        t.t_cool_periods for t in second.trials
    ]


def test_worker_pool_matches_serial():
    spec = _small_spec()
    serial = run_ensemble(spec, workers=1)
    pooled = run_ensemble(spec, workers=2)
    assert pooled.trials == serial.trials


def test_resume_skips_completed_trials(monkeypatch):
    from sympcool import ensemble as ens

    spec = _small_spec()
    full = run_ensemble(spec)
    partial = full.trials[:2]

    executed = []
    original = ens._execute_trial

    def counting(spec_, pi, trial):
        executed.append(trial)
        return original(spec_, pi, trial)

    monkeypatch.setattr(ens, "_execute_trial", counting)
    resumed = run_ensemble(spec, existing=partial)
    assert sorted(executed) == [2, 3]
    assert resumed.trials == full.trials


def test_statistics_cover_crystallized_trials_only():
    spec = _small_spec()
    result = run_ensemble(spec)
    point = result.point(6.0)
    times = [t.t_cool_periods for t in result.trials if t.verdict == "crystallized"]
    assert point.n_crystallized == len(times)
    assert point.n_trials == spec.trials_per_point
    assert point.mean_periods == pytest.approx(np.mean(times))
    assert point.p10_periods <= point.mean_periods <= point.p90_periods
    with pytest.raises(KeyError):
        result.point(7.5)


def test_all_timed_out_leaves_statistics_empty():
    spec = _small_spec(trials_per_point=2, t_max_periods=2.0)
    result = run_ensemble(spec)
    point = result.points[0]
    assert point.n_timed_out == 2
    assert point.timed_out_fraction == 1.0
    assert point.mean_periods is None
    assert point.p90_periods is None


def test_summary_dict_structure():
    spec = _small_spec()
    result = run_ensemble(spec)
    summary = result.summary_dict()
    assert summary["spec"]["seed"] == 5
    assert summary["spec"]["e0_grid"] == [6.0]
    assert summary["totals"]["crystallized"] + summary["totals"]["lost"] + summary[
        "totals"
    ]["timed_out"] + summary["totals"]["failed"] == 4
    assert len(summary["points"]) == 1
    assert summary["points"][0]["prediction_periods"] == pytest.approx(
        predicted_cooling_periods(6.0, AL, CA)
    )


# -- scatter files ----------------------------------------------------------


def test_scatter_csv_round_trip(tmp_path):
    spec = _small_spec()
    result = run_ensemble(spec)
    path = tmp_path / "scatter.csv"
    write_scatter_csv(result, path, metadata={"seed": 5})
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed: 5"
    assert lines[1] == SCATTER_CSV_HEADER
    rows = read_scatter_csv(path)
    # repr round trip preserves every float bit-for-bit
    assert tuple(rows) == result.trials


def test_scatter_csv_accepts_bare_rows(tmp_path):
    rows = (
        TrialResult(10.0, 1, 0, "crystallized", 123.456),
        TrialResult(10.0, 1, 1, "timed_out"),
    )
    path = tmp_path / "partial.csv"
    write_scatter_csv(rows, path)
    back = read_scatter_csv(path)
    assert tuple(back) == rows
    assert back[1].t_cool_periods is None


def test_scatter_csv_rejects_corruption(tmp_path):
    bad_header = tmp_path / "a.csv"
    bad_header.write_text("x,y\n")
    with pytest.raises(ValueError):
        read_scatter_csv(bad_header)
    bad_verdict = tmp_path / "b.csv"
    bad_verdict.write_text(SCATTER_CSV_HEADER + "\n10.0,1,0,melted,1.0\n")
    with pytest.raises(ValueError):
        read_scatter_csv(bad_verdict)


def test_summary_json_file(tmp_path):
    spec = _small_spec()
    result = run_ensemble(spec)
    path = tmp_path / "summary.json"
    write_summary_json(result, path, metadata={"note": "unit"})
    payload = json.loads(path.read_text())
    assert payload["metadata"]["note"] == "unit"
    assert payload["spec"]["hot_mass_u"] == pytest.approx(MASS_AL_U)
    assert set(payload["totals"]) == set(VERDICT_KINDS)


# -- resonant exchange probe ------------------------------------------------


def test_exchange_half_period_closed_form():
    assert exchange_half_period_periods(100.0) == pytest.approx(
        100.0**1.5 / np.sqrt(8.0), rel=1e-12
    )
    # consistency with the SI-facing transfer-time model
    trap = TrapConfig.default(gamma_over_omega_z=0.0)
    scales = derive_scales(AL.mass_u, trap.omega_hot)
    params = AnalyticModelParams.from_scaled(
        AL.mass_u, AL.mass_u, scales.omega_ref, 100.0
    )
    assert exchange_half_period_periods(100.0) * scales.tau == pytest.approx(
        exchange_time(params), rel=1e-12
    )


def test_probe_requires_undamped_trap():
    with pytest.raises(ValueError):
        equal_mass_exchange_probe(rng=default_rng(0), trap=TrapConfig.default())


def test_probe_conserves_energy(probe_results):
    for probe in probe_results:
        assert probe.energy_drift < 1e-6


def test_probe_envelope_matches_prediction(probe_results):
    # beat period of the energy exchange against the closed form at the
    # realized total energy, within the factor-2 envelope contract
    for probe in probe_results:
        ratio = probe.measured_half_period / probe.predicted_half_period_total
        assert 0.5 < ratio < 2.0
        # the spectral estimate should corroborate the extremum spacing
        fft_ratio = probe.measured_half_period_fft / probe.predicted_half_period_total
        assert 0.25 < fft_ratio < 4.0


def test_probe_bookkeeping(probe_results):
    probe = probe_results[0]
    lo, hi = probe.segment
    assert 0.0 <= lo < hi <= probe.times[-1]
    assert probe.axis == 2
    assert probe.axis_energy < probe.total_energy
    assert probe.e_hot_axis.shape == probe.times.shape
    assert probe.record.verdict.kind == "timed_out"  # detection disabled


def test_cooling_time_scales_with_trap_frequency():
    # doubling every trap frequency at fixed SI initial energy divides the
    # cubic-law prediction by exactly 8; the simulated mean must follow
    # inside a factor-2 window
    trap_a = TrapConfig.default()
    trap_b = TrapConfig(
        omega_hot=tuple(2.0 * w for w in trap_a.omega_hot), gamma=2.0 * trap_a.gamma
    )
    scales_a = derive_scales(AL.mass_u, trap_a.omega_hot)
    scales_b = derive_scales(AL.mass_u, trap_b.omega_hot)
    e0_si = 30.0 * scales_a.e_d
    e0_b = e0_si / scales_b.e_d
    assert scales_b.e_d / scales_a.e_d == pytest.approx(2.0 ** (2.0 / 3.0), rel=1e-12)

    spec_a = EnsembleSpec(
        hot=AL, cold=CA, e0_grid=(30.0,), trials_per_point=40, seed=424242
    )
    spec_b = EnsembleSpec(
        hot=AL, cold=CA, e0_grid=(e0_b,), trap=trap_b, trials_per_point=40, seed=424242
    )
    mean_a = run_ensemble(spec_a).points[0].mean_periods * scales_a.tau
    mean_b = run_ensemble(spec_b).points[0].mean_periods * scales_b.tau

    predicted = (
        predicted_cooling_periods(30.0, AL, CA)
        * scales_a.tau
        / (predicted_cooling_periods(e0_b, AL, CA) * scales_b.tau)
    )
    assert predicted == pytest.approx(8.0, rel=1e-12)
    assert 4.0 < mean_a / mean_b < 16.0
