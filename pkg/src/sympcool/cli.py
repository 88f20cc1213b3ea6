"""Command-line front end: every pipeline behind one entry point.

Subcommands map onto the library modules: ``simulate`` (single
trajectory), ``ensemble`` (Monte Carlo cooling-time grids),
``models`` (analytic cooling and exchange time tables), ``detect``
(motional-signal synthesis and inversion) and ``velocity``
(ablation-plume velocimetry). Every run is driven by a JSON
configuration validated against a schema before any computation;
unknown keys are rejected with the offending field path. Outputs are
CSV/JSON files in the formats owned by the library modules, each
stamped with the tool version, a configuration hash and the seed, so
that a (config, seed) pair reproduces its outputs byte for byte.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
The worker count for ensembles can be set by ``--workers`` or the
SYMPCOOL_WORKERS environment variable; an interrupted ensemble flushes
the trials completed so far before exiting.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys

import jsonschema
import numpy as np

from . import __version__
from .constants import EV_IN_J
from .dynamics import (
    IntegrationControls,
    SimulationError,
    TWO_PI,
    TrapConfig,
    derive_scales,
    integrate,
    ion_spec,
)
from .ensemble import (
    EnsembleSpec,
    read_scatter_csv,
    run_ensemble,
    sample_initial,
    write_scatter_csv,
    write_summary_json,
)
from .models import (
    AnalyticModelParams,
    OutOfRegimeError,
    exchange_time,
    refined_cooling_time,
    simple_cooling_curve,
    simple_cooling_time,
)
from .readout import (
    DetectionProtocol,
    binned_excitation,
    detect_load_event,
    estimate_energy,
    read_cycles_csv,
    synthesize_signal,
    write_cycles_csv,
    write_estimates_csv,
)
from .velocimetry import (
    BeamGeometry,
    CLOSED_TRANSITION,
    PROMPT_MASK_S,
    PlumeSpec,
    capture_window_filter,
    default_velocity_edges,
    read_photon_csv,
    synthesize_plume_records,
    velocity_distribution,
    write_histogram_csv,
    write_histogram_metadata,
    write_photon_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILURE = 3
EXIT_INTERRUPTED = 130

DEFAULT_OMEGA_HZ = 1.0e6


class ConfigError(Exception):
    """Configuration rejected before any computation ran."""


class RunError(Exception):
    """Computation started but failed numerically."""


# --------------------------------------------------------------------------
# Schemas. additionalProperties is false everywhere so typos surface as
# config errors with a field path instead of being silently ignored.

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_INT0 = {"type": "integer", "minimum": 0}
_BOOL = {"type": "boolean"}
_STR = {"type": "string"}


def _obj(properties, required=()):
    out = {
        "type": "object",
        "additionalProperties": False,
        "properties": properties,
    }
    if required:
        out["required"] = list(required)
    return out


_TRAP_SCHEMA = _obj(
    {
        "freqs_hz": {
            "type": "array",
            "items": _POS,
            "minItems": 3,
            "maxItems": 3,
        },
        "gamma_over_omega_z": _NONNEG,
    }
)

_SPECIES = {"type": "string", "enum": ["Al+", "Ca+"]}

_GEOMETRY_SCHEMA = {
    "oneOf": [
        {"type": "string", "enum": ["aluminum", "calcium"]},
        _obj(
            {"d_target_m": _POS, "angle_deg": _POS, "wavelength_m": _POS},
            required=("angle_deg", "wavelength_m"),
        ),
    ]
}

_PLUME_SCHEMA = {
    "oneOf": [
        {"type": "string", "enum": ["aluminum", "calcium"]},
        _obj(
            {"mass_u": _POS, "drift_m_s": _NONNEG, "t_eff_K": _POS},
            required=("mass_u", "drift_m_s", "t_eff_K"),
        ),
    ]
}

SCHEMAS = {
    "simulate": _obj(
        {
            "seed": _INT0,
            "hot": _SPECIES,
            "cold": _SPECIES,
            "n_cold": {"type": "integer", "minimum": 1, "maximum": 8},
            "e0_over_ed": {"type": "number", "exclusiveMinimum": 1},
            "trap": _TRAP_SCHEMA,
            "t_max_periods": _POS,
            "rel_tol": _POS,
            "sample_interval": _POS,
            "detect_crystallization": _BOOL,
            "conservation_check": _BOOL,
            "drift_tol": _POS,
        },
        required=("e0_over_ed",),
    ),
    "ensemble": _obj(
        {
            "seed": _INT0,
            "hot": _SPECIES,
            "cold": _SPECIES,
            "n_cold": {"type": "integer", "minimum": 1, "maximum": 8},
            "n_cold_list": {
                "type": "array",
                "items": {"type": "integer", "minimum": 1, "maximum": 8},
                "minItems": 1,
            },
            "e0_grid": {
                "type": "array",
                "items": {"type": "number", "exclusiveMinimum": 1},
                "minItems": 1,
            },
            "trials_per_point": {"type": "integer", "minimum": 1},
            "t_max_factor": _POS,
            "t_max_periods": _POS,
            "rel_tol": _POS,
            "sample_interval": _POS,
            "trap": _TRAP_SCHEMA,
        },
        required=("e0_grid",),
    ),
    "models": _obj(
        {
            "hot": _SPECIES,
            "cold": _SPECIES,
            "omega_hz": _POS,
            "e0_ev": {"type": "array", "items": _POS, "minItems": 1},
            "units": {"type": "string", "enum": ["si", "scaled"]},
        },
        required=("e0_ev",),
    ),
    "detect": _obj(
        {
            "mode": {
                "type": "string",
                "enum": ["synthesize", "invert", "round-trip"],
            },
            "seed": _INT0,
            "hot": _SPECIES,
            "cold": _SPECIES,
            "omega_hz": _POS,
            "e0_ev": _POS,
            "eta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "pre_load_s": _NONNEG,
            "post_s": _NONNEG,
            "bin_size": {"type": "integer", "minimum": 50},
            "cycles_csv": _STR,
            "protocol": _obj(
                {
                    "cycles_per_s": _POS,
                    "cool_ms": _NONNEG,
                    "wait_ms": _POS,
                    "control_interleave": _BOOL,
                    "doppler_floor_nbar": _NONNEG,
                    "ambient_quanta_per_s": _NONNEG,
                    "mode_omega_hz": _POS,
                }
            ),
        },
        required=("mode",),
    ),
    "velocity": _obj(
        {
            "source": {"type": "string", "enum": ["generate", "csv"]},
            "seed": _INT0,
            "species_mode": {
                "type": "string",
                "enum": ["OpenTransition", "ClosedTransition"],
            },
            "geometry": _GEOMETRY_SCHEMA,
            "plume": _PLUME_SCHEMA,
            "photon_yield": {
                "type": "string",
                "enum": ["auto", "per_atom", "inverse_v"],
            },
            "n_photons": {"type": "integer", "minimum": 1},
            "background_rate_hz": _NONNEG,
            "pre_span_s": _POS,
            "prompt_mask_s": _NONNEG,
            "photons_csv": _STR,
            "edges": _obj(
                {
                    "v_min": _POS,
                    "v_max": _POS,
                    "n_bins": {"type": "integer", "minimum": 2},
                }
            ),
            "gate": _obj(
                {"tau_delay_s": _NONNEG, "tau_gate_s": _POS},
                required=("tau_gate_s",),
            ),
        },
        required=("species_mode",),
    ),
}


# --------------------------------------------------------------------------
# Presets: stable names for the studies the test suite and docs call.

PRESETS = {
    "simulate": {
        "two-ion": {
            "e0_over_ed": 30.0,
            "hot": "Al+",
            "cold": "Ca+",
            "n_cold": 1,
            "seed": 1,
            "t_max_periods": 2000.0,
        },
    },
    "ensemble": {
        # Hot ion against a heavier refrigerant over the standard grid.
        "unequal-mass": {
            "hot": "Al+",
            "cold": "Ca+",
            "n_cold": 1,
            "e0_grid": [10.0, 20.0, 40.0, 60.0],
            "trials_per_point": 40,
            "seed": 0,
        },
        # Same species twice: resonant exchange instead of friction.
        "equal-mass": {
            "hot": "Al+",
            "cold": "Al+",
            "n_cold": 1,
            "e0_grid": [30.0],
            "trials_per_point": 40,
            "seed": 0,
        },
        # Cooling time versus number of refrigerant ions.
        "refrigerant-scaling": {
            "hot": "Al+",
            "cold": "Ca+",
            "n_cold_list": [1, 2, 3],
            "e0_grid": [30.0],
            "trials_per_point": 40,
            "seed": 0,
        },
    },
    "models": {
        "cooling-table": {
            "hot": "Al+",
            "cold": "Ca+",
            "omega_hz": DEFAULT_OMEGA_HZ,
            "e0_ev": [0.1, 0.3, 1.0],
            "units": "si",
        },
    },
    "detect": {
        "round-trip": {
            "mode": "round-trip",
            "e0_ev": 0.3,
            "eta": 0.1,
            "seed": 20260822,
            "pre_load_s": 20.0,
            "post_s": 30.0,
            "bin_size": 250,
        },
    },
    "velocity": {
        "aluminum-plume": {
            "source": "generate",
            "species_mode": "OpenTransition",
            "geometry": "aluminum",
            "plume": "aluminum",
            "n_photons": 200000,
            "background_rate_hz": 5.0e7,
            "seed": 7,
        },
        "calcium-plume": {
            "source": "generate",
            "species_mode": "ClosedTransition",
            "geometry": "calcium",
            "plume": "calcium",
            "n_photons": 200000,
            "background_rate_hz": 5.0e7,
            "seed": 8,
        },
    },
}


def _deep_merge(base, override):
    """Recursive dict merge; override wins, nested dicts merge."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(subcommand, preset=None, config_path=None, seed=None):
    """Assemble and validate the configuration for one subcommand.

    A preset (if named) is the base; a config file (if given) is merged
    on top; an explicit seed overrides both. Raises ConfigError with a
    field-path diagnostic when validation fails.
    """
    config = {}
    if preset is not None:
        try:
            config = copy.deepcopy(PRESETS[subcommand][preset])
        except KeyError:
            known = ", ".join(sorted(PRESETS.get(subcommand, {})))
            raise ConfigError(
                f"unknown preset {preset!r} for {subcommand} (available: {known})"
            ) from None
    if config_path is not None:
        try:
            with open(config_path) as fh:
                user = json.load(fh)
        except OSError as err:
            raise ConfigError(f"cannot read config file: {err}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from None
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        config = _deep_merge(config, user)
    if seed is not None:
        config["seed"] = seed
    validator = jsonschema.Draft202012Validator(SCHEMAS[subcommand])
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        best = jsonschema.exceptions.best_match(errors)
        raise ConfigError(f"config error at {best.json_path}: {best.message}")
    return config


def config_hash(config):
    """Short SHA-256 of the canonical JSON form of the config."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _metadata(config):
    return {
        "tool": f"sympcool {__version__}",
        "config_sha256": config_hash(config),
        "seed": config.get("seed", 0),
    }


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _make_trap(config):
    block = config.get("trap")
    if block is None:
        return TrapConfig.default()
    freqs = block.get("freqs_hz")
    gamma_ratio = block.get("gamma_over_omega_z", 0.01)
    if freqs is None:
        base = TrapConfig.default(gamma_over_omega_z=gamma_ratio)
        return base
    omega = tuple(TWO_PI * f for f in freqs)
    return TrapConfig(omega_hot=omega, gamma=gamma_ratio * omega[2])


# --------------------------------------------------------------------------
# Subcommands.


def cmd_simulate(config, outdir):
    hot = ion_spec(config.get("hot", "Al+"))
    cold = ion_spec(config.get("cold", "Ca+"))
    n_cold = config.get("n_cold", 1)
    seed = config.get("seed", 0)
    trap = _make_trap(config)
    check = config.get("conservation_check", False)
    if check and trap.gamma != 0.0:
        raise ConfigError(
            "conservation_check requires an undamped trap: set "
            "trap.gamma_over_omega_z to 0"
        )
    specs = [hot] + [cold] * n_cold
    scales = derive_scales(hot.mass_u, trap.omega_hot)
    rng = np.random.default_rng(seed)
    state = sample_initial(specs, trap, rng, e0=config["e0_over_ed"] * scales.e_d)
    controls = IntegrationControls(
        t_max=config.get("t_max_periods", 2000.0),
        rel_tol=config.get("rel_tol", 1e-9),
        sample_interval=config.get("sample_interval", 0.5),
        detect_crystallization=config.get("detect_crystallization", True),
    )
    try:
        record = integrate(state, specs, trap, controls, rng_seed=seed)
    except SimulationError as err:
        raise RunError(f"integration failed: {err}") from None

    meta = _metadata(config)
    csv_path = os.path.join(outdir, "trajectory.csv")
    with open(csv_path, "w") as fh:
        for key, value in meta.items():
            fh.write(f"# {key}: {value}\n")
        fh.write("t_periods,e_total_Ed,e_hot_Ed,e_cold_Ed,r_min_d\n")
        # e_hot/e_cold are stored per axis; the file carries the sums.
        e_hot = record.e_hot.sum(axis=1)
        e_cold = record.e_cold.sum(axis=1)
        for i in range(record.times.size):
            fh.write(
                ",".join(
                    repr(float(x))
                    for x in (
                        record.times[i],
                        record.e_total[i],
                        e_hot[i],
                        e_cold[i],
                        record.r_min[i],
                    )
                )
                + "\n"
            )

    drift = record.energy_drift()
    payload = {
        "metadata": meta,
        "verdict": {"kind": record.verdict.kind, "t_periods": record.verdict.t_periods},
        "energy_drift": drift,
        "n_samples": int(record.times.size),
        "conservation_check": bool(check),
        "scales": {
            "d_m": record.scales.d,
            "e_d_j": record.scales.e_d,
            "e_d_ev": record.scales.e_d / EV_IN_J,
            "tau_s": record.scales.tau,
        },
    }
    _write_json(os.path.join(outdir, "trajectory.json"), payload)
    print(f"simulate: verdict={record.verdict.kind} drift={drift:.3e} -> {csv_path}")
    if check:
        tol = config.get("drift_tol", 1e-6)
        if not np.isfinite(drift) or drift > tol:
            raise RunError(
                f"energy conservation violated: relative drift {drift:.3e} "
                f"exceeds {tol:.1e}"
            )
    return EXIT_OK


def _ensemble_spec(config, n_cold):
    return EnsembleSpec(
        hot=ion_spec(config.get("hot", "Al+")),
        cold=ion_spec(config.get("cold", "Ca+")),
        e0_grid=tuple(config["e0_grid"]),
        n_cold=n_cold,
        trap=_make_trap(config),
        trials_per_point=config.get("trials_per_point", 40),
        seed=config.get("seed", 0),
        t_max_periods=config.get("t_max_periods"),
        t_max_factor=config.get("t_max_factor", 200.0),
        rel_tol=config.get("rel_tol", 1e-9),
        sample_interval=config.get("sample_interval", 0.5),
    )


def cmd_ensemble(config, outdir, workers=None, resume=False):
    if "n_cold" in config and "n_cold_list" in config:
        raise ConfigError("config error at $: give n_cold or n_cold_list, not both")
    n_cold_values = config.get("n_cold_list", [config.get("n_cold", 1)])

    scatter_path = os.path.join(outdir, "scatter.csv")
    existing = []
    if resume and os.path.exists(scatter_path):
        existing = read_scatter_csv(scatter_path)

    meta = _metadata(config)
    completed = list(existing)
    interrupted = False
    results = []
    try:
        for n_cold in n_cold_values:
            spec = _ensemble_spec(config, n_cold)
            result = run_ensemble(
                spec,
                workers=workers,
                existing=existing,
                progress=completed.append,
            )
            results.append(result)
    except KeyboardInterrupt:
        interrupted = True

    if interrupted:
        # Flush what finished so a resumed run picks up from here.
        write_scatter_csv(completed, scatter_path, metadata=meta)
        print(
            f"interrupted: flushed {len(completed)} completed trials -> {scatter_path}",
            file=sys.stderr,
        )
        return EXIT_INTERRUPTED

    all_trials = [row for result in results for row in result.trials]
    write_scatter_csv(all_trials, scatter_path, metadata=meta)
    summary_path = os.path.join(outdir, "summary.json")
    if len(results) == 1:
        write_summary_json(results[0], summary_path, metadata=meta)
    else:
        payload = {
            "metadata": meta,
            "runs": [result.summary_dict() for result in results],
        }
        _write_json(summary_path, payload)
    n_rows = len(all_trials)
    print(f"ensemble: {n_rows} trials over {len(results)} run(s) -> {scatter_path}")
    return EXIT_OK


def cmd_models(config, outdir):
    hot = ion_spec(config.get("hot", "Al+"))
    cold = ion_spec(config.get("cold", "Ca+"))
    omega = TWO_PI * config.get("omega_hz", DEFAULT_OMEGA_HZ)
    units = config.get("units", "si")
    rows = []
    for e0_ev in config["e0_ev"]:
        e0 = e0_ev * EV_IN_J
        try:
            params = AnalyticModelParams.from_si(hot.mass_u, cold.mass_u, omega, e0)
            # Exchange time is defined for the equal-mass counterpart.
            params_eq = AnalyticModelParams.from_si(hot.mass_u, hot.mass_u, omega, e0)
            tau_simple = simple_cooling_time(params)
            tau_refined = refined_cooling_time(params)
            tau_ex = exchange_time(params_eq)
        except (ValueError, OutOfRegimeError) as err:
            raise RunError(f"model evaluation failed at {e0_ev} eV: {err}") from None
        if units == "scaled":
            period = params.tau
            rows.append(
                (
                    e0 / params.scales.e_d,
                    tau_simple / period,
                    tau_refined / period,
                    tau_ex / period,
                )
            )
        else:
            rows.append((e0_ev, tau_simple, tau_refined, tau_ex))

    header = (
        "E0_over_Ed,tau_simple_periods,tau_refined_periods,tau_exchange_periods"
        if units == "scaled"
        else "E0_eV,tau_simple_s,tau_refined_s,tau_exchange_s"
    )
    meta = _metadata(config)
    path = os.path.join(outdir, "models.csv")
    with open(path, "w") as fh:
        for key, value in meta.items():
            fh.write(f"# {key}: {value}\n")
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    print(f"models: {len(rows)} rows ({units}) -> {path}")
    return EXIT_OK


def _protocol(config):
    block = config.get("protocol", {})
    kwargs = {}
    for key in (
        "cycles_per_s",
        "cool_ms",
        "wait_ms",
        "control_interleave",
        "doppler_floor_nbar",
        "ambient_quanta_per_s",
    ):
        if key in block:
            kwargs[key] = block[key]
    if "mode_omega_hz" in block:
        kwargs["mode_omega"] = TWO_PI * block["mode_omega_hz"]
    return DetectionProtocol(**kwargs)


def cmd_detect(config, outdir):
    mode = config["mode"]
    eta = config.get("eta", 0.1)
    seed = config.get("seed", 0)
    protocol = _protocol(config)
    meta = _metadata(config)
    payload = {"metadata": meta, "mode": mode}

    cycles = None
    params = None
    if mode in ("synthesize", "round-trip"):
        hot = ion_spec(config.get("hot", "Al+"))
        cold = ion_spec(config.get("cold", "Ca+"))
        omega = TWO_PI * config.get("omega_hz", DEFAULT_OMEGA_HZ)
        e0_ev = config.get("e0_ev", 0.3)
        try:
            params = AnalyticModelParams.from_si(
                hot.mass_u, cold.mass_u, omega, e0_ev * EV_IN_J
            )
            curve = simple_cooling_curve(params)
        except (ValueError, OutOfRegimeError) as err:
            raise RunError(f"cooling-curve setup failed: {err}") from None
        rng = np.random.default_rng(seed)
        cycles = synthesize_signal(
            curve,
            params,
            protocol,
            eta,
            rng,
            pre_load_s=config.get("pre_load_s", 20.0),
            post_s=config.get("post_s", 30.0),
        )
        write_cycles_csv(cycles, os.path.join(outdir, "cycles.csv"), metadata=meta)
        payload["n_cycles"] = len(cycles)
        payload["event_duration_s"] = curve.duration
        payload["e0_ev"] = e0_ev
    elif "cycles_csv" in config:
        try:
            cycles = read_cycles_csv(config["cycles_csv"])
        except (OSError, ValueError) as err:
            raise RunError(f"cannot read cycle stream: {err}") from None
    else:
        raise ConfigError("config error at $.cycles_csv: invert mode needs a cycle CSV")

    if mode in ("invert", "round-trip"):
        bin_size = config.get("bin_size", 250)
        try:
            estimates = estimate_energy(
                cycles,
                bin_size,
                eta,
                protocol.mode_omega,
                doppler_floor_nbar=protocol.doppler_floor_nbar,
            )
        except ValueError as err:
            raise RunError(f"inversion failed: {err}") from None
        write_estimates_csv(
            estimates, os.path.join(outdir, "estimates.csv"), metadata=meta
        )
        t_bins, p_hat, _ = binned_excitation(cycles, bin_size)
        event = detect_load_event(t_bins, p_hat)
        payload["n_estimates"] = len(estimates)
        payload["load_event"] = event
        if estimates:
            e_max = max(est.e_excess for est in estimates)
            payload["recovered_event_energy_ev"] = e_max / EV_IN_J
            if mode == "round-trip" and "e0_ev" in payload and payload["e0_ev"] > 0:
                payload["recovery_ratio"] = e_max / EV_IN_J / payload["e0_ev"]

    _write_json(os.path.join(outdir, "detect.json"), payload)
    note = ""
    if "recovery_ratio" in payload:
        note = f" recovery_ratio={payload['recovery_ratio']:.3f}"
    print(f"detect: mode={mode}{note} -> {os.path.join(outdir, 'detect.json')}")
    return EXIT_OK


def _geometry(config):
    geo = config.get("geometry", "aluminum")
    if isinstance(geo, str):
        return BeamGeometry.aluminum() if geo == "aluminum" else BeamGeometry.calcium()
    return BeamGeometry(
        d_target=geo.get("d_target_m", BeamGeometry.aluminum().d_target),
        angle=geo["angle_deg"],
        wavelength=geo["wavelength_m"],
    )


def _plume(config):
    plume = config.get("plume", "aluminum")
    if isinstance(plume, str):
        return (
            PlumeSpec.aluminum_like()
            if plume == "aluminum"
            else PlumeSpec.calcium_like()
        )
    return PlumeSpec(
        mass_u=plume["mass_u"], drift=plume["drift_m_s"], t_eff=plume["t_eff_K"]
    )


def cmd_velocity(config, outdir):
    geom = _geometry(config)
    mode = config["species_mode"]
    meta = _metadata(config)
    source = config.get("source", "generate")

    if source == "csv":
        if "photons_csv" not in config:
            raise ConfigError(
                "config error at $.photons_csv: csv source needs an input path"
            )
        try:
            records = read_photon_csv(config["photons_csv"])
        except (OSError, ValueError) as err:
            raise RunError(f"cannot read photon CSV: {err}") from None
    else:
        yield_mode = config.get("photon_yield", "auto")
        if yield_mode == "auto":
            yield_mode = "inverse_v" if mode == CLOSED_TRANSITION else "per_atom"
        rng = np.random.default_rng(config.get("seed", 0))
        records = [
            synthesize_plume_records(
                _plume(config),
                geom,
                config.get("n_photons", 200000),
                rng,
                photon_yield=yield_mode,
                background_rate=config.get("background_rate_hz", 0.0),
                pre_span=config.get("pre_span_s", 2.0e-4),
            )
        ]
        write_photon_csv(os.path.join(outdir, "photons.csv"), records, metadata=meta)

    payload = {"metadata": meta}
    if "gate" in config:
        gate = config["gate"]
        window = capture_window_filter(
            records, gate.get("tau_delay_s", 0.0), gate["tau_gate_s"], geom
        )
        records = list(window.records)
        payload["gate"] = {
            "tau_delay_s": window.tau_delay,
            "tau_gate_s": window.tau_gate,
            "v_floor_m_s": window.v_floor,
            "v_ceiling_m_s": None if np.isinf(window.v_ceiling) else window.v_ceiling,
        }

    edges_cfg = config.get("edges", {})
    edges = default_velocity_edges(
        (edges_cfg.get("v_min", 200.0), edges_cfg.get("v_max", 2.0e4)),
        edges_cfg.get("n_bins", 100),
    )
    try:
        hist = velocity_distribution(
            records,
            geom,
            mode,
            edges=edges,
            prompt_mask=config.get("prompt_mask_s", PROMPT_MASK_S),
        )
    except ValueError as err:
        raise RunError(f"velocity analysis failed: {err}") from None

    write_histogram_csv(os.path.join(outdir, "histogram.csv"), hist, metadata=meta)
    payload["peak_velocity_m_s"] = hist.peak_velocity
    write_histogram_metadata(
        os.path.join(outdir, "histogram.json"), hist, geom, extra=payload
    )
    print(
        f"velocity: {mode} peak={hist.peak_velocity:.0f} m/s -> "
        f"{os.path.join(outdir, 'histogram.csv')}"
    )
    return EXIT_OK


# --------------------------------------------------------------------------
# Argument parsing and dispatch.


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sympcool",
        description="Sympathetic-cooling simulation and analysis pipelines.",
    )
    parser.add_argument("--version", action="version", version=f"sympcool {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    specs = {
        "simulate": "integrate one hot ion plus refrigerant ions",
        "ensemble": "Monte Carlo cooling-time grid",
        "models": "analytic cooling and exchange time table",
        "detect": "motional-signal synthesis and energy inversion",
        "velocity": "ablation-plume velocity distributions",
    }
    for name, help_text in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--preset", help="named built-in configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", default=".", help="output directory")
        if name == "ensemble":
            p.add_argument(
                "--workers",
                type=int,
                help="worker processes (default: SYMPCOOL_WORKERS or 1)",
            )
            p.add_argument(
                "--resume",
                action="store_true",
                help="reuse trials already present in the output scatter file",
            )
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(
            args.subcommand,
            preset=args.preset,
            config_path=args.config,
            seed=args.seed,
        )
        os.makedirs(args.out, exist_ok=True)
        if args.subcommand == "simulate":
            return cmd_simulate(config, args.out)
        if args.subcommand == "ensemble":
            return cmd_ensemble(
                config, args.out, workers=args.workers, resume=args.resume
            )
        if args.subcommand == "models":
            return cmd_models(config, args.out)
        if args.subcommand == "detect":
            return cmd_detect(config, args.out)
        return cmd_velocity(config, args.out)
    except ConfigError as err:
        print(f"sympcool: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except RunError as err:
        print(f"sympcool: {err}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
