"""Trap-ion system setup, scale derivation and trajectory integration.

The physical system is one hot ion held in a static harmonic trap together
with one or more cold ions of a second species. Cold ions feel a linear
velocity damping force -gamma * m * v standing in for laser cooling; the hot
ion is undamped and loses energy only through the Coulomb interaction.

Convention used throughout: ion index 0 is the hot ion, indices >= 1 are the
cold ions. All public interfaces take SI quantities; integration happens in
trap-scaled units (see `derive_scales`).
"""

import json
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.optimize import minimize

from . import backend
from .constants import (
    ATOMIC_MASS_KG,
    COULOMB_E2,
    EV_IN_J,
    MASS_AL_U,
    MASS_CA_U,
    PI,
    SPECIES_MASS_U,
)

TWO_PI = 2.0 * PI

# canonical trap used by the bundled presets: near-degenerate frequencies so
# no axis decouples, softest axis defines the damping rate
DEFAULT_FREQS_HZ = (1.078e6, 1.0563e6, 1.0e6)


class SimulationError(Exception):
    """Base class for integration failures."""


class CloseEncounterError(SimulationError):
    """Two ions came closer than the hard minimum-distance guard.

    Carries the offending state so callers can inspect or dump it.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class StepUnderflowError(SimulationError):
    """The adaptive step size collapsed below the resolvable floor."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class IonSpec:
    """Single ion species: mass in atomic mass units, charge in units of e.

    Only singly charged ions are in scope.
    """

    mass_u: float
    charge: int = 1

    def __post_init__(self):
        if not self.mass_u > 0:
            raise ValueError("ion mass must be positive")
        if self.charge != 1:
            raise ValueError("only charge +1 ions are supported")

    @property
    def mass_kg(self):
        return self.mass_u * ATOMIC_MASS_KG


def ion_spec(name):
    """Look up a bundled species by name, e.g. 'Al+' or 'Ca+'."""
    try:
        return IonSpec(SPECIES_MASS_U[name])
    except KeyError:
        raise ValueError(f"unknown species {name!r}") from None


@dataclass(frozen=True)
class TrapConfig:
    """Static harmonic trap seen by the hot ion, plus cold-ion damping.

    omega_hot are the hot ion's angular frequencies per axis (rad/s). Cold
    ions see the same static potential, so by default their frequencies
    follow omega_cold_i = omega_hot_i * sqrt(m_hot / m_cold); pass an
    explicit omega_cold triple to override. gamma is the velocity damping
    rate applied to every cold ion (1/s).
    """

    omega_hot: tuple
    gamma: float = 0.0
    omega_cold: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "omega_hot", tuple(float(w) for w in self.omega_hot))
        if len(self.omega_hot) != 3 or any(w <= 0 for w in self.omega_hot):
            raise ValueError("omega_hot must be three positive frequencies")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.omega_cold is not None:
            oc = tuple(float(w) for w in self.omega_cold)
            if len(oc) != 3 or any(w <= 0 for w in oc):
                raise ValueError("omega_cold must be three positive frequencies")
            object.__setattr__(self, "omega_cold", oc)

    @classmethod
    def default(cls, gamma_over_omega_z=0.01):
        """Canonical trap: 1.078, 1.0563, 1.0 MHz with damping tied to the z axis."""
        omega = tuple(TWO_PI * f for f in DEFAULT_FREQS_HZ)
        return cls(omega_hot=omega, gamma=gamma_over_omega_z * omega[2])

    def cold_omega(self, mass_ratio_hot_over_cold):
        """Per-axis cold-ion frequencies for a given m_hot / m_cold."""
        if self.omega_cold is not None:
            return np.array(self.omega_cold)
        return np.array(self.omega_hot) * np.sqrt(mass_ratio_hot_over_cold)


@dataclass(frozen=True)
class ScaleSet:
    """Natural scales of the hot ion in its trap.

    d is the distance where the Coulomb energy of an ion pair equals twice
    the trap energy at that displacement, E_d = e^2/(4 pi eps0 d) is the
    energy scale, tau the trap period. omega_ref is the reference angular
    frequency the scales were derived from.
    """

    d: float
    e_d: float
    tau: float
    omega_ref: float

    @property
    def e_d_ev(self):
        return self.e_d / EV_IN_J


def derive_scales(mass_u, omega):
    """Derive the interaction length, energy and time scales of a species.

    Parameters
    ----------
    mass_u : float
        Ion mass in atomic mass units.
    omega : float or sequence of 3 floats
        Trap angular frequency (rad/s). A triple is reduced to its
        geometric mean.
    """
    if mass_u <= 0:
        raise ValueError("mass must be positive")
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if np.any(omega <= 0):
        raise ValueError("omega must be positive")
    omega_ref = float(np.exp(np.mean(np.log(omega))))
    m = mass_u * ATOMIC_MASS_KG
    d = (2.0 * COULOMB_E2 / (m * omega_ref**2)) ** (1.0 / 3.0)
    e_d = COULOMB_E2 / d
    return ScaleSet(d=d, e_d=e_d, tau=TWO_PI / omega_ref, omega_ref=omega_ref)


@dataclass
class SystemState:
    """Instantaneous SI state: positions (N,3) in m, velocities (N,3) in m/s."""

    time: float
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if self.positions.shape != self.velocities.shape or self.positions.shape[1] != 3:
            raise ValueError("positions and velocities must both be (N, 3)")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.velocities))):
            raise ValueError("state contains non-finite entries")

    @property
    def n_ions(self):
        return self.positions.shape[0]


@dataclass(frozen=True)
class Verdict:
    """Outcome of a trajectory: crystallized, lost, or timed_out.

    t_periods is the verdict time in trap periods (None for timed_out).
    """

    kind: str
    t_periods: float = None

    @property
    def is_crystallized(self):
        return self.kind == "crystallized"


@dataclass
class IntegrationControls:
    """Knobs of the adaptive integrator. Times are in trap periods.

    escape_radius (units of d) is optional; None disables the loss check.
    min_distance is the hard guard below which integration aborts with a
    diagnostic error. crystal_threshold (E_d units) and crystal_window
    (periods) define the crystallization criterion.
    """

    t_max: float
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    sample_interval: float = 0.5
    escape_radius: float = None
    min_distance: float = 1e-4
    detect_crystallization: bool = True
    crystal_threshold: float = 0.1
    crystal_window: float = 20.0
    max_samples: int = 65536

    def __post_init__(self):
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.sample_interval <= 0:
            raise ValueError("sample_interval must be positive")


@dataclass
class TrajectoryRecord:
    """Sampled trajectory in scaled units plus the termination verdict.

    times are in trap periods, energies in E_d, distances in d. e_hot and
    e_cold are per-axis energies of the hot ion and of the first cold ion.
    """

    times: np.ndarray
    e_total: np.ndarray
    e_hot: np.ndarray
    e_cold: np.ndarray
    r_min: np.ndarray
    verdict: Verdict
    scales: ScaleSet
    e_ground: float
    rng_seed: object = None
    stats: dict = field(default_factory=dict)

    def energy_drift(self):
        """Max relative drift of total energy over the record."""
        e0 = self.e_total[0]
        return float(np.max(np.abs(self.e_total - e0)) / abs(e0))


def accelerations(state, specs, trap):
    """SI accelerations of every ion: trap, Coulomb and cold-ion damping.

    Raises CloseEncounterError if any two ions coincide.
    """
    n = state.n_ions
    if len(specs) != n:
        raise ValueError("one IonSpec per ion required")
    x = state.positions
    v = state.velocities
    masses = np.array([s.mass_kg for s in specs])
    mass_ratio = specs[0].mass_kg / masses
    omega = np.empty((n, 3))
    omega[0] = trap.omega_hot
    for i in range(1, n):
        omega[i] = trap.cold_omega(specs[0].mass_kg / specs[i].mass_kg)
    a = -(omega**2) * x
    for i in range(1, n):
        a[i] -= trap.gamma * v[i]
    for i in range(n - 1):
        for j in range(i + 1, n):
            dvec = x[i] - x[j]
            r2 = dvec @ dvec
            if r2 == 0.0:
                raise CloseEncounterError(
                    f"ions {i} and {j} are at the same position", state=state
                )
            f = COULOMB_E2 * dvec / r2**1.5
            a[i] += f / masses[i]
            a[j] -= f / masses[j]
    return a


def total_energy(state, specs, trap):
    """SI total energy: kinetic, trap potential and Coulomb pair terms."""
    n = state.n_ions
    x = state.positions
    v = state.velocities
    e = 0.0
    for i in range(n):
        m = specs[i].mass_kg
        omega = np.asarray(trap.omega_hot) if i == 0 else trap.cold_omega(
            specs[0].mass_kg / specs[i].mass_kg
        )
        e += 0.5 * m * (v[i] @ v[i]) + 0.5 * m * np.sum(omega**2 * x[i] ** 2)
    for i in range(n - 1):
        for j in range(i + 1, n):
            dvec = x[i] - x[j]
            e += COULOMB_E2 / np.sqrt(dvec @ dvec)
    return e


def scaled_parameters(specs, trap, scales):
    """Kernel inputs: mass ratios, squared scaled frequencies, scaled damping."""
    n = len(specs)
    mu = np.array([s.mass_u / specs[0].mass_u for s in specs])
    w2 = np.empty((n, 3))
    w2[0] = (np.asarray(trap.omega_hot) / scales.omega_ref) ** 2
    gamma = np.zeros(n)
    for i in range(1, n):
        w2[i] = (trap.cold_omega(1.0 / mu[i]) / scales.omega_ref) ** 2
        gamma[i] = trap.gamma / scales.omega_ref
    return mu, w2, gamma


def scaled_potential_energy(x_scaled, mu, w2):
    """Potential energy (E_d units) of a scaled configuration."""
    x = np.asarray(x_scaled, dtype=float).reshape(len(mu), 3)
    e = float(np.sum(mu[:, None] * w2 * x * x))
    n = len(mu)
    for i in range(n - 1):
        d = x[i + 1 :] - x[i]
        e += float(np.sum(np.einsum("ij,ij->i", d, d) ** -0.5))
    return e


def _potential_and_grad(flat, mu, w2):
    n = len(mu)
    x = flat.reshape(n, 3)
    g = 2.0 * mu[:, None] * w2 * x
    e = float(np.sum(mu[:, None] * w2 * x * x))
    for i in range(n - 1):
        for j in range(i + 1, n):
            d = x[i] - x[j]
            r2 = d @ d
            r = np.sqrt(r2)
            e += 1.0 / r
            dg = d / (r2 * r)
            g[i] -= dg
            g[j] += dg
    return e, g.ravel()


def ground_configuration(specs, trap, n_starts=8):
    """Minimum-energy T=0 configuration of the full ion set, scaled units.

    Multi-start quasi-Newton minimization: a linear chain along the softest
    axis seeds the search, plus deterministic perturbed restarts so planar
    minima are found when the chain is unstable.

    Returns (positions_scaled, energy_in_E_d).
    """
    scales = derive_scales(specs[0].mass_u, trap.omega_hot)
    mu, w2, _ = scaled_parameters(specs, trap, scales)
    n = len(specs)
    if n == 1:
        return np.zeros((1, 3)), 0.0
    axis = int(np.argmin(w2[0]))
    spacing = w2[0, axis] ** (-1.0 / 3.0)
    base = np.zeros((n, 3))
    base[:, axis] = spacing * (np.arange(n) - 0.5 * (n - 1))
    rng = np.random.default_rng(20211201)
    best_e = np.inf
    best_x = None
    for k in range(n_starts):
        x0 = base.copy()
        if k > 0:
            x0 += 0.15 * spacing * rng.standard_normal((n, 3))
        res = minimize(
            _potential_and_grad,
            x0.ravel(),
            args=(mu, w2),
            jac=True,
            method="L-BFGS-B",
            options={"gtol": 1e-13, "ftol": 1e-16, "maxiter": 2000},
        )
        if res.fun < best_e:
            best_e = float(res.fun)
            best_x = res.x.reshape(n, 3)
    return best_x, best_e


def cold_chain_positions(n_cold, cold_spec, trap, hot_spec):
    """T=0 linear-chain equilibrium of the cold ions alone, in metres.

    The chain lies along the softest trap axis with the hot ion absent;
    positions are constrained to that axis even where a zigzag would be
    lower, matching the convention that the refrigerant is loaded as a
    linear crystal.
    """
    scales = derive_scales(hot_spec.mass_u, trap.omega_hot)
    mu_c = cold_spec.mass_u / hot_spec.mass_u
    w2_c = (trap.cold_omega(1.0 / mu_c) / scales.omega_ref) ** 2
    axis = int(np.argmin(w2_c))
    if n_cold == 1:
        return np.zeros((1, 3))
    k_ax = mu_c * w2_c[axis]

    def chain_energy(z):
        e = k_ax * np.sum(z * z)
        g = 2.0 * k_ax * z
        for i in range(n_cold - 1):
            for j in range(i + 1, n_cold):
                dz = z[i] - z[j]
                e += 1.0 / abs(dz)
                gg = -np.sign(dz) / dz**2
                g[i] += gg
                g[j] -= gg
        return e, g

    spacing = k_ax ** (-1.0 / 3.0)
    z0 = spacing * (np.arange(n_cold) - 0.5 * (n_cold - 1))
    res = minimize(chain_energy, z0, jac=True, method="L-BFGS-B",
                   options={"gtol": 1e-13, "ftol": 1e-16})
    pos = np.zeros((n_cold, 3))
    pos[:, axis] = np.sort(res.x)
    return pos * scales.d


def integrate(state, specs, trap, controls, rng_seed=None):
    """Integrate a system forward and classify the outcome.

    Parameters
    ----------
    state : SystemState
        SI initial conditions; ion 0 is the hot ion.
    specs : sequence of IonSpec
    trap : TrapConfig
    controls : IntegrationControls
    rng_seed : optional
        Recorded in the trajectory for provenance; not used by the
        deterministic integration itself.

    Returns
    -------
    TrajectoryRecord

    Raises
    ------
    CloseEncounterError
        If two ions approach closer than controls.min_distance * d.
    StepUnderflowError
        If the adaptive step collapses entirely.
    """
    n = state.n_ions
    if len(specs) != n:
        raise ValueError("one IonSpec per ion required")
    scales = derive_scales(specs[0].mass_u, trap.omega_hot)
    mu, w2, gamma = scaled_parameters(specs, trap, scales)

    y0 = np.empty(6 * n)
    y0[: 3 * n] = (state.positions / scales.d).ravel()
    y0[3 * n :] = (state.velocities / (scales.d * scales.omega_ref)).ravel()

    if controls.detect_crystallization and n > 1:
        _, e_ground = ground_configuration(specs, trap)
        threshold = controls.crystal_threshold
    else:
        e_ground = np.nan
        threshold = -1.0

    escape_r2 = np.inf
    if controls.escape_radius is not None:
        escape_r2 = float(controls.escape_radius) ** 2

    status, t_event, samples, y_fin, t_fin, nacc, nrej, neval = backend.integrate_scaled(
        y0,
        mu,
        w2,
        gamma,
        controls.rel_tol,
        controls.abs_tol,
        controls.t_max * TWO_PI,
        controls.sample_interval * TWO_PI,
        e_ground,
        threshold,
        controls.crystal_window * TWO_PI,
        escape_r2,
        controls.min_distance,
        controls.max_samples,
    )

    if status in (backend.STATUS_CLOSE_ENCOUNTER, backend.STATUS_STEP_UNDERFLOW):
        bad = SystemState(
            time=state.time + t_fin / scales.omega_ref,
            positions=y_fin[: 3 * n].reshape(n, 3) * scales.d,
            velocities=y_fin[3 * n :].reshape(n, 3) * scales.d * scales.omega_ref,
        )
        if status == backend.STATUS_CLOSE_ENCOUNTER:
            raise CloseEncounterError(
                f"ion pair distance fell below {controls.min_distance:g} d "
                f"at t = {t_fin / TWO_PI:.3f} periods",
                state=bad,
            )
        raise StepUnderflowError(
            f"step size underflow at t = {t_fin / TWO_PI:.3f} periods", state=bad
        )

    if status == backend.STATUS_CRYSTALLIZED:
        verdict = Verdict("crystallized", t_event / TWO_PI)
    elif status == backend.STATUS_LOST:
        verdict = Verdict("lost", t_event / TWO_PI)
    else:
        verdict = Verdict("timed_out", None)

    return TrajectoryRecord(
        times=samples[:, 0] / TWO_PI,
        e_total=samples[:, 1],
        e_hot=samples[:, 2:5],
        e_cold=samples[:, 5:8],
        r_min=samples[:, 8],
        verdict=verdict,
        scales=scales,
        e_ground=float(e_ground),
        rng_seed=rng_seed,
        stats={
            "n_accepted": int(nacc),
            "n_rejected": int(nrej),
            "n_rhs_evals": int(neval),
            "backend": backend.BACKEND_NAME,
            "t_final_periods": t_fin / TWO_PI,
        },
    )


def classify_record(times_periods, e_total, e_ground, threshold=0.1, window_periods=20.0):
    """Re-run the crystallization classification on recorded samples.

    Crystallized once E_total - E_ground stays below threshold (E_d units)
    for a full window; the verdict time is the start of that window. A
    record that never sustains the condition is timed_out. Loss cannot be
    re-derived from energy samples and is judged online by the integrator.
    """
    below_since = None
    for t, e in zip(times_periods, e_total):
        if e - e_ground < threshold:
            if below_since is None:
                below_since = t
            if t - below_since >= window_periods * (1.0 - 1e-12):
                return Verdict("crystallized", below_since)
        else:
            below_since = None
    return Verdict("timed_out", None)


TRAJECTORY_CSV_HEADER = "t,E_total,E_x,E_y,E_z,r_min"


def write_trajectory_csv(record, path, metadata=None):
    """Write sampled trajectory to CSV (scaled units, time in trap periods)."""
    with open(path, "w") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}: {value}\n")
        fh.write(TRAJECTORY_CSV_HEADER + "\n")
        for i in range(len(record.times)):
            row = [
                record.times[i],
                record.e_total[i],
                record.e_hot[i, 0],
                record.e_hot[i, 1],
                record.e_hot[i, 2],
                record.r_min[i],
            ]
            fh.write(",".join(f"{v:.12g}" for v in row) + "\n")


def write_trajectory_sidecar(record, path, metadata=None):
    """JSON sidecar with the verdict, seed and physical scales."""
    payload = {
        "verdict": {"kind": record.verdict.kind, "t_periods": record.verdict.t_periods},
        "rng_seed": record.rng_seed,
        "e_ground_over_Ed": record.e_ground if np.isfinite(record.e_ground) else None,
        "scales": {
            "d_m": record.scales.d,
            "E_d_J": record.scales.e_d,
            "E_d_eV": record.scales.e_d_ev,
            "tau_s": record.scales.tau,
            "omega_ref_rad_s": record.scales.omega_ref,
        },
        "units": {"time": "trap periods", "energy": "E_d", "length": "d"},
        "stats": record.stats,
    }
    if metadata:
        payload["metadata"] = metadata
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
