"""Closed-form models for sympathetic cooling and coherent energy exchange.

Three levels of description for a hot ion losing energy to a laser-cooled
one in a common harmonic well:

* a collisional random-walk model for unequal masses, with an energy loss
  rate falling as 1/E^2 and a cooling time growing as E^3,
* a log-corrected variant of the same model obtained from a state-density
  average of the inverse squared angular momentum with physical cutoffs,
* a mean-field exchange model for equal masses, where Coulomb coupling
  splits the common-mode and stretch-mode frequencies and energy sloshes
  between the ions at the difference frequency.

All public functions take SI inputs (J, s, rad/s) unless noted; the
parameter container can be built from either SI or dimensionless energies.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .constants import COULOMB_E2, PLANCK_H, mass_kg
from .dynamics import ScaleSet, TWO_PI, derive_scales

# Log-corrected rate is valid above this multiple of the pair energy scale.
LOG_CUTOFF_FACTOR = 2.0 ** (1.0 / 3.0)


class OutOfRegimeError(ValueError):
    """Raised when a model is evaluated outside its validity range."""


@dataclass(frozen=True)
class AnalyticModelParams:
    """Inputs shared by all analytic models.

    Masses in atomic mass units, omega in rad/s, e0 in joules. The derived
    scale set (length d, pair energy e_d, trap period tau) is computed from
    the hot mass and omega; models assume a single isotropic frequency.
    """

    m_h_u: float
    m_c_u: float
    omega: float
    e0: float
    scales: ScaleSet = field(init=False)

    def __post_init__(self):
        if self.m_h_u <= 0.0 or self.m_c_u <= 0.0:
            raise ValueError("masses must be positive")
        if self.omega <= 0.0:
            raise ValueError("omega must be positive")
        object.__setattr__(
            self, "scales", derive_scales(self.m_h_u, (self.omega,) * 3)
        )
        if self.e0 <= self.scales.e_d:
            raise ValueError(
                "initial energy must exceed the pair energy scale; the models "
                "assume the weak-interaction regime"
            )

    @classmethod
    def from_si(cls, m_h_u, m_c_u, omega, e0_j):
        return cls(m_h_u, m_c_u, omega, e0_j)

    @classmethod
    def from_scaled(cls, m_h_u, m_c_u, omega, e0_over_ed):
        e_d = derive_scales(m_h_u, (omega,) * 3).e_d
        return cls(m_h_u, m_c_u, omega, e0_over_ed * e_d)

    @property
    def mass_ratio(self):
        """Cold over hot mass."""
        return self.m_c_u / self.m_h_u

    @property
    def tau(self):
        """Trap oscillation period, s."""
        return TWO_PI / self.omega

    def require_equal_masses(self):
        if abs(self.m_h_u - self.m_c_u) > 1e-9 * self.m_h_u:
            raise OutOfRegimeError(
                "exchange model requires equal masses, got "
                f"{self.m_h_u} u and {self.m_c_u} u"
            )


def momentum_kick(b, v):
    """Momentum transferred to a resting charge by a fast passing charge.

    A straight-line flyby at speed v and closest distance b delivers the
    time integral of the transverse Coulomb force. Inputs in m and m/s,
    result in kg m/s.
    """
    if b <= 0.0 or v <= 0.0:
        raise ValueError("impact parameter and speed must be positive")
    return COULOMB_E2 * 2.0 / (b * v)


def momentum_kick_from_angular_momentum(ell, m_u):
    """Same kick expressed through the flyby angular momentum L = m b v."""
    if ell <= 0.0:
        raise ValueError("angular momentum must be positive")
    return COULOMB_E2 * 2.0 * mass_kg(m_u) / ell


def simple_energy_loss_rate(e, params):
    """Energy loss rate of the hot ion, W (negative).

    Incoherent accumulation of collisional kicks, two passes per trap
    period, with the inverse squared angular momentum replaced by its
    rough uniform-distribution average.
    """
    e_d = params.scales.e_d
    if e <= e_d:
        raise OutOfRegimeError("rate is only valid for energies above e_d")
    return -(params.omega / TWO_PI) * (8.0 / params.mass_ratio) * e_d**3 / e**2


def phonon_heating_rate(e, params):
    """Phonons per second gained by the cold ion, from the simple loss rate.

    The commonly quoted per-second form 4 e_d^3 / (3 h E^2); about
    3.7e3 /s for a 1 eV hot ion at the aluminium scales used here.
    """
    e_d = params.scales.e_d
    if e <= e_d:
        raise OutOfRegimeError("rate is only valid for energies above e_d")
    return 4.0 * e_d**3 / (3.0 * PLANCK_H * e**2)


def simple_cooling_time(params):
    """Time for the simple model to extract all initial energy, s."""
    e_ratio = params.e0 / params.scales.e_d
    return params.mass_ratio / 24.0 * e_ratio**3 * params.tau


def simple_energy_at(t, params):
    """Closed-form energy decay of the simple model, J.

    Valid until the energy reaches e_d; later times return e_d.
    """
    e_d = params.scales.e_d
    drain = (t / params.tau) * (24.0 / params.mass_ratio) * e_d**3
    cubed = params.e0**3 - drain
    return np.where(cubed > e_d**3, np.cbrt(np.maximum(cubed, 0.0)), e_d)


def refined_cooling_rate(e, params):
    """Log-corrected energy loss rate, W (negative).

    State-density average of 1/L^2 between a small-angle cutoff and the
    maximum angular momentum; exceeds the simple rate by (3/2) log(E / cutoff).
    """
    e_d = params.scales.e_d
    cutoff = LOG_CUTOFF_FACTOR * e_d
    if e <= cutoff:
        raise OutOfRegimeError(
            "log-corrected rate is only valid above the angular-momentum cutoff"
        )
    base = (params.omega / TWO_PI) * (12.0 / params.mass_ratio) * e_d**3 / e**2
    return -base * np.log(e / cutoff)


def refined_cooling_time(params, rel_margin=0.01):
    """Cooling time of the log-corrected model by quadrature, s.

    Integrates dt = dE / |rate| from the initial energy down to just above
    the validity cutoff; the remaining energy there is of order e_d and
    contributes no further model time.
    """
    e_low = LOG_CUTOFF_FACTOR * params.scales.e_d * (1.0 + rel_margin)
    if params.e0 <= e_low:
        raise OutOfRegimeError("initial energy is below the model cutoff")

    def inverse_rate(e):
        return 1.0 / abs(refined_cooling_rate(e, params))

    t, _ = quad(inverse_rate, e_low, params.e0, epsabs=0.0, epsrel=1e-10,
                limit=200)
    return t


@dataclass(frozen=True)
class CoolingCurve:
    """Sampled energy-versus-time decay of one cooling model.

    times in s, energies in J, both strictly monotone (t up, E down).
    """

    times: np.ndarray
    energies: np.ndarray
    model: str

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        e = np.asarray(self.energies, dtype=float)
        if t.shape != e.shape or t.ndim != 1 or t.size < 2:
            raise ValueError("times and energies must be matching 1-d arrays")
        if np.any(np.diff(t) <= 0.0):
            raise ValueError("times must be strictly increasing")
        if np.any(np.diff(e) >= 0.0):
            raise ValueError("energies must be strictly decreasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "energies", e)

    def energy_at(self, t):
        """Interpolated energy, clamped to the tabulated ends."""
        return np.interp(t, self.times, self.energies)

    @property
    def duration(self):
        return float(self.times[-1])


def simple_cooling_curve(params, n_points=256):
    """Closed-form decay sampled to the point where the energy reaches e_d."""
    e_d = params.scales.e_d
    t_end = simple_cooling_time(params) * (1.0 - (e_d / params.e0) ** 3)
    t = np.linspace(0.0, t_end, n_points)
    e = simple_energy_at(t, params)
    # exact terminal value; np.where above already pins it
    e[-1] = e_d
    return CoolingCurve(times=t, energies=e, model="simple")


def refined_cooling_curve(params, n_points=256, rel_margin=0.01):
    """Numerical decay of the log-corrected model down to its cutoff.

    The separable rate equation is integrated as t(E) on a log-spaced
    energy grid; accuracy is set by the cumulative-quadrature step.
    """
    e_low = LOG_CUTOFF_FACTOR * params.scales.e_d * (1.0 + rel_margin)
    if params.e0 <= e_low:
        raise OutOfRegimeError("initial energy is below the model cutoff")
    e_grid = np.geomspace(params.e0, e_low, n_points)
    inv = 1.0 / np.abs([refined_cooling_rate(e, params) for e in e_grid])
    seg = -np.diff(e_grid) * 0.5 * (inv[:-1] + inv[1:])
    t = np.concatenate([[0.0], np.cumsum(seg)])
    return CoolingCurve(times=t, energies=e_grid, model="refined")


def _separation_from_energy(e, params):
    # mean-field closure: a single amplitude set by E = m omega^2 r^2
    return np.sqrt(e / (mass_kg(params.m_h_u) * params.omega**2))


def reduced_mode_frequency(params, e0=None, r=None):
    """Stretch-mode frequency lowered by Coulomb repulsion, rad/s.

    Equal masses only. The coupling enters through the mean inverse cubed
    separation, evaluated at a single amplitude from either the energy or
    an explicit separation.
    """
    params.require_equal_masses()
    if (e0 is None) == (r is None):
        raise ValueError("give exactly one of e0 or r")
    if r is None:
        r = _separation_from_energy(e0 if e0 is not None else params.e0, params)
    shift_sq = params.omega**2 - 2.0 * COULOMB_E2 / (mass_kg(params.m_h_u) * r**3)
    if shift_sq <= 0.0:
        raise OutOfRegimeError(
            "ions closer than the mean-field description allows"
        )
    return np.sqrt(shift_sq)


def exchange_frequency(params, e0=None, r=None, small_shift=False):
    """Beat frequency of the equal-mass energy exchange, rad/s.

    With small_shift=True, uses the first-order form (omega/2)(d/r)^3;
    otherwise the full frequency difference of the two normal modes.
    """
    params.require_equal_masses()
    if small_shift:
        if (e0 is None) == (r is None):
            raise ValueError("give exactly one of e0 or r")
        if r is None:
            r = _separation_from_energy(e0, params)
        return 0.5 * params.omega * (params.scales.d / r) ** 3
    return params.omega - reduced_mode_frequency(params, e0=e0, r=r)


def exchange_time(params, e0=None):
    """Hot-to-cold energy transfer time of the exchange model, s."""
    params.require_equal_masses()
    e = params.e0 if e0 is None else e0
    return params.tau / np.sqrt(8.0) * (e / params.scales.e_d) ** 1.5


def orbit_averaged_inverse_cube(params, e_rel=None, axis_ratio=1.0):
    """Time-averaged 1/r^3 over one period of an elliptical relative orbit.

    Extension beyond the single-amplitude closure: the relative coordinate
    of two equal-mass trapped ions traces a closed ellipse per trap period,
    and the mean-field coupling is the time average of 1/r^3 around it. The
    semi-major axis is fixed by the single-amplitude closure; axis_ratio
    (minor over major, in (0, 1]) sets the orbit shape. At axis_ratio = 1
    the orbit is circular and the closure value 1/r^3 is recovered exactly;
    eccentric orbits give a larger average. Result in 1/m^3.
    """
    params.require_equal_masses()
    if not 0.0 < axis_ratio <= 1.0:
        raise ValueError("axis_ratio must lie in (0, 1]")
    e = params.e0 if e_rel is None else e_rel
    a = _separation_from_energy(e, params)
    b = axis_ratio * a
    # x = a cos(wt), y = b sin(wt): uniform phase is uniform time
    avg, _ = quad(
        lambda th: (a**2 * np.cos(th) ** 2 + b**2 * np.sin(th) ** 2) ** -1.5,
        0.0, 0.5 * np.pi, epsabs=0.0, epsrel=1e-10, limit=200,
    )
    return avg / (0.5 * np.pi)


def write_model_compare_csv(path, rows, metadata=None):
    """Write the model-versus-simulation comparison table.

    rows: iterables of (e0_over_ed, tau_simple, tau_refined, tau_sim_mean,
    tau_sim_p10, tau_sim_p90); simulation columns may be nan when no
    ensemble data is supplied. Times in s.
    """
    lines = []
    for key, value in (metadata or {}).items():
        lines.append(f"# {key} {value}")
    lines.append("E0_over_Ed,tau_simple,tau_refined,tau_sim_mean,tau_sim_p10,tau_sim_p90")
    for row in rows:
        lines.append(",".join(f"{x:.10g}" for x in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
