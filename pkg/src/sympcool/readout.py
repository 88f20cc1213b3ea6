"""Carrier-coupling mathematics and the pulsed motional-state detector.

A hot ion in the trap heats a Doppler-cooled readout ion; outside the
Lamb-Dicke regime the heated motion weakens the carrier Rabi coupling,
so the excitation probability of a pi-pulse encodes the mean phonon
number. This module provides the coupling formulas (Fock-state Laguerre
form, thermal averages in closed form and by direct summation), the
pi-pulse excitation probability and its inverse, forward synthesis of a
pulsed detection signal from a cooling curve, and the binned inversion
that recovers the hot ion's excess energy from the cycle outcomes.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import i0e

from .constants import EV_IN_J, HBAR, PI
from .dynamics import TWO_PI, TrajectoryRecord
from .models import CoolingCurve, OutOfRegimeError, simple_energy_loss_rate

DIRECT_SUM_TAIL = 1e-12
DEFAULT_NBAR_BRACKET = (0.0, 1e6)
NBAR_BISECTION_TOL = 1e-3

FORM_EXACT = "exact"
FORM_APPROX = "approx"
FORM_DIRECT_SUM = "direct_sum"

CYCLES_CSV_HEADER = "t,wait_ms,outcome,control"
ESTIMATES_CSV_HEADER = "t,p_hat,p_lo,p_hi,nbar,E_excess_eV"


@dataclass(frozen=True)
class ThermalMotionalState:
    """Thermal phonon occupation read out through Lamb-Dicke parameter eta."""

    nbar: float
    eta: float

    def __post_init__(self):
        if self.nbar < 0:
            raise ValueError("nbar must be non-negative")
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")

    @property
    def z(self):
        """Boltzmann weight ratio nbar / (nbar + 1) of the thermal state."""
        return self.nbar / (self.nbar + 1.0)


def carrier_rabi(n, eta):
    """Carrier Rabi coupling of Fock state n, in units of the n = 0 coupling.

    Equals L_n(eta^2), evaluated by the stable upward recurrence
    (k+1) L_{k+1}(x) = (2k + 1 - x) L_k(x) - k L_{k-1}(x).
    """
    if n < 0 or n != int(n):
        raise ValueError("n must be a non-negative integer")
    n = int(n)
    x = float(eta) ** 2
    prev, cur = 1.0, 1.0 - x
    if n == 0:
        return prev
    for k in range(1, n):
        prev, cur = cur, ((2.0 * k + 1.0 - x) * cur - k * prev) / (k + 1.0)
    return cur


def thermal_mean_sq_rabi(state, form=FORM_EXACT):
    """Thermal mean squared carrier coupling, in units of the n = 0 value.

    form selects the evaluation: "exact" is the closed form
    exp(-2 eta^2 nbar) I0(2 eta^2 nbar sqrt(1 + 1/nbar)) obtained from
    the Laguerre generating function, "approx" drops the sqrt factor,
    "direct_sum" sums (1 - z) z^n L_n(eta^2)^2 until the tail bound
    z^{n+1} e^{eta^2} falls below 1e-12. Closed forms use the scaled
    Bessel function so large nbar cannot overflow.
    """
    form = str(form).lower()
    x = state.eta**2
    nbar = state.nbar
    if form == FORM_EXACT:
        if nbar == 0.0:
            return 1.0
        a = 2.0 * x * nbar
        b = 2.0 * x * np.sqrt(nbar * (nbar + 1.0))
        return float(i0e(b) * np.exp(b - a))
    if form == FORM_APPROX:
        return float(i0e(2.0 * x * nbar))
    if form == FORM_DIRECT_SUM:
        z = state.z
        total = 0.0
        prev, cur = 1.0, 1.0 - x
        weight = 1.0 - z
        tail = np.exp(x)
        n = 0
        lag = prev
        while True:
            total += weight * lag * lag
            if weight / (1.0 - z) * z * tail < DIRECT_SUM_TAIL:
                return total
            if n == 0:
                lag = cur
            else:
                prev, cur = cur, ((2.0 * n + 1.0 - x) * cur - n * prev) / (n + 1.0)
                lag = cur
            weight *= z
            n += 1
    raise ValueError(f"unknown form {form!r}")


def pi_pulse_excitation(state):
    """Excitation probability of a pi-pulse on a thermal ion (rms form).

    Applies sin^2((pi/2) u) to the root-mean-square coupling
    u = sqrt(<Omega^2>)/Omega_0 from the exact closed form. This tracks
    the exact thermal average of sin^2 to better than 0.02 whenever
    eta^2 (2 nbar + 1) <= 0.18; beyond that the gap grows roughly
    linearly in the same variance parameter (0.054 by eta^2 (2 nbar+1)
    = 0.39).
    """
    u = np.sqrt(thermal_mean_sq_rabi(state, FORM_EXACT))
    return float(np.sin(0.5 * PI * u) ** 2)


def pi_pulse_excitation_exact(state):
    """Thermal average of sin^2(pi L_n(eta^2) / 2) by truncated summation."""
    x = state.eta**2
    z = state.z
    total = 0.0
    weight = 1.0 - z
    prev, cur = 1.0, 1.0 - x
    n = 0
    lag = prev
    while True:
        total += weight * np.sin(0.5 * PI * lag) ** 2
        if weight / (1.0 - z) * z < DIRECT_SUM_TAIL:
            return float(total)
        if n == 0:
            lag = cur
        else:
            prev, cur = cur, ((2.0 * n + 1.0 - x) * cur - n * prev) / (n + 1.0)
            lag = cur
        weight *= z
        n += 1


def invert_excitation(p, eta, bracket=DEFAULT_NBAR_BRACKET):
    """Recover nbar from a pi-pulse excitation probability.

    The excitation is strictly decreasing in nbar, so bisection on the
    bracket converges to |delta nbar| < 1e-3. Returns (nbar, saturated);
    saturated is True when p lies below the excitation at the bracket
    top, where the value returned is the bracket top itself, a floor on
    the true occupation rather than an estimate of it.
    """
    lo, hi = bracket
    if lo < 0 or hi <= lo:
        raise ValueError("bracket must satisfy 0 <= lo < hi")
    p_lo_end = pi_pulse_excitation(ThermalMotionalState(lo, eta))
    p_hi_end = pi_pulse_excitation(ThermalMotionalState(hi, eta))
    if p >= p_lo_end:
        return float(lo), False
    if p <= p_hi_end:
        return float(hi), True
    while hi - lo > NBAR_BISECTION_TOL:
        mid = 0.5 * (lo + hi)
        if pi_pulse_excitation(ThermalMotionalState(mid, eta)) > p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), False


# -- pulsed detection protocol ----------------------------------------------


@dataclass(frozen=True)
class DetectionProtocol:
    """Timing and environment of the pulsed measurement cycle.

    Each cycle Doppler-cools the readout ion to doppler_floor_nbar,
    waits while the hot ion (if present) heats it, applies a pi-pulse
    and detects the electronic state. With control_interleave every
    second cycle omits the waiting time as an in-situ consistency
    check. mode_omega is the angular frequency of the readout mode the
    heating is converted into; ambient_quanta_per_s adds trap heating
    that exists with or without a hot ion.
    """

    cycles_per_s: float = 50.0
    cool_ms: float = 5.0
    wait_ms: float = 10.0
    control_interleave: bool = False
    doppler_floor_nbar: float = 10.0
    ambient_quanta_per_s: float = 0.0
    mode_omega: float = TWO_PI * 0.4e6

    def __post_init__(self):
        if self.cycles_per_s <= 0:
            raise ValueError("cycles_per_s must be positive")
        if self.cool_ms < 0 or self.wait_ms < 0:
            raise ValueError("cycle timings must be non-negative")
        if self.doppler_floor_nbar < 0:
            raise ValueError("doppler_floor_nbar must be non-negative")
        if self.ambient_quanta_per_s < 0:
            raise ValueError("ambient_quanta_per_s must be non-negative")
        if self.mode_omega <= 0:
            raise ValueError("mode_omega must be positive")


@dataclass(frozen=True)
class DetectionCycleRecord:
    """One measurement cycle: timestamp, waiting time, detected bit."""

    t: float
    wait: float
    outcome: int
    control: bool = False

    def __post_init__(self):
        if self.wait < 0:
            raise ValueError("wait must be non-negative")
        if self.outcome not in (0, 1):
            raise ValueError("outcome must be 0 or 1")


@dataclass(frozen=True)
class EnergyEstimate:
    """Excess energy above the crystallization point for one cycle bin.

    e_excess and its band are in joules. saturated marks estimates whose
    reverse-time integral crosses at least one saturated bin, making the
    value a lower bound.
    """

    t: float
    p_hat: float
    p_lo: float
    p_hi: float
    nbar: float
    nbar_lo: float
    nbar_hi: float
    e_excess: float
    e_excess_lo: float
    e_excess_hi: float
    saturated: bool


def _excess_energy_profile(curve, params):
    """Normalize a cooling input to (energy_at(t_s) in J, duration_s).

    CoolingCurve inputs are used as-is. Trajectory records are mapped
    through their physical scales with the crystallization point pinned
    to E_d, so the analytic rate model sees the same endpoint.
    """
    if isinstance(curve, CoolingCurve):
        return curve.energy_at, curve.duration
    if isinstance(curve, TrajectoryRecord):
        scales = curve.scales
        t_s = curve.times * scales.tau
        e_j = (curve.e_total - curve.e_ground) * scales.e_d + scales.e_d

        def energy_at(t):
            return np.interp(t, t_s, e_j)

        return energy_at, float(t_s[-1])
    raise TypeError("curve must be a CoolingCurve or TrajectoryRecord")


def _loss_rate(e, params):
    """|dE/dt| of the hot ion, zero at or below the crystallization scale."""
    if e <= params.scales.e_d:
        return 0.0
    try:
        return abs(simple_energy_loss_rate(e, params))
    except OutOfRegimeError:
        return 0.0


def synthesize_signal(
    curve,
    params,
    protocol,
    eta,
    rng,
    pre_load_s=0.0,
    post_s=0.0,
):
    """Generate detection-cycle outcomes for a sympathetic-cooling event.

    The hot ion appears at t = pre_load_s with the energy history given
    by `curve` (a CoolingCurve or a TrajectoryRecord); before that, and
    for post_s after the curve ends, only ambient heating acts. Per
    cycle the readout ion starts at the Doppler floor, gains
    |dE/dt| * wait / (3 hbar mode_omega) quanta during the wait (the
    hot ion's loss rate split isotropically over three modes), plus
    ambient heating, and the pi-pulse outcome is drawn Bernoulli with
    the resulting excitation probability. With control interleaving,
    odd-numbered cycles have zero wait.

    Parameters
    ----------
    curve : CoolingCurve or TrajectoryRecord or None
        None synthesizes a baseline stream with no hot ion.
    params : AnalyticModelParams
        Hot/cold pair and trap the loss rate is evaluated with.
    protocol : DetectionProtocol
    eta : float
        Lamb-Dicke parameter of the readout mode.
    rng : numpy.random.Generator
    pre_load_s, post_s : float
        Padding before the load and after the end of the curve.

    Returns
    -------
    list of DetectionCycleRecord
    """
    if curve is None:
        energy_at, duration = (lambda t: 0.0), 0.0
    else:
        energy_at, duration = _excess_energy_profile(curve, params)
    wait_s = protocol.wait_ms * 1e-3
    spacing = 1.0 / protocol.cycles_per_s
    n_cycles = int(round((pre_load_s + duration + post_s) / spacing))
    quanta_scale = wait_s / (3.0 * HBAR * protocol.mode_omega)

    cycles = []
    for i in range(n_cycles):
        t = i * spacing
        control = protocol.control_interleave and (i % 2 == 1)
        wait = 0.0 if control else wait_s
        nbar = protocol.doppler_floor_nbar + protocol.ambient_quanta_per_s * wait
        if wait > 0.0 and 0.0 <= t - pre_load_s < duration:
            rate = _loss_rate(float(energy_at(t - pre_load_s)), params)
            nbar += rate * quanta_scale
        p = pi_pulse_excitation(ThermalMotionalState(nbar, eta))
        outcome = int(rng.random() < p)
        cycles.append(DetectionCycleRecord(t=t, wait=wait, outcome=outcome, control=control))
    return cycles


def binned_excitation(cycles, bin_size, control=False):
    """Mean outcome over consecutive bins of one cycle stream.

    Selects cycles with the given control flag, groups them into full
    bins of bin_size (a trailing partial bin is dropped) and returns
    (bin centre times, excitation fractions, bin count).
    """
    chosen = [c for c in cycles if c.control == control]
    n_bins = len(chosen) // bin_size
    t = np.empty(n_bins)
    p = np.empty(n_bins)
    for j in range(n_bins):
        block = chosen[j * bin_size : (j + 1) * bin_size]
        t[j] = 0.5 * (block[0].t + block[-1].t)
        p[j] = np.mean([c.outcome for c in block])
    return t, p, n_bins


def _wilson_interval(p_hat, n, z):
    """Wilson score interval for a binomial fraction."""
    denom = 1.0 + z * z / n
    centre = (p_hat + z * z / (2.0 * n)) / denom
    half = z * np.sqrt(p_hat * (1.0 - p_hat) / n + z * z / (4.0 * n * n)) / denom
    return max(centre - half, 0.0), min(centre + half, 1.0)


def estimate_energy(
    cycles,
    bin_size,
    eta,
    mode_omega,
    doppler_floor_nbar=10.0,
    bracket=DEFAULT_NBAR_BRACKET,
    z_score=1.0,
):
    """Invert binned cycle outcomes into the hot ion's excess energy.

    Non-control cycles are binned, each bin's excitation fraction is
    inverted to a mean phonon number, the occupation gained over the
    waiting time becomes a heating rate, and the hot ion's energy loss
    rate (three modes, isotropic) is integrated backwards in time: the
    excess energy at a bin is the energy still to be dissipated between
    that bin and the end of the record. Binomial uncertainty is carried
    through the monotone inversion by interval mapping (Wilson score at
    z_score standard errors). Saturated bins, where the excitation is
    below the invertible floor of the bracket, contribute nothing to
    the integral; every estimate whose integral spans one is flagged as
    a lower bound.

    Parameters
    ----------
    cycles : list of DetectionCycleRecord
    bin_size : int
        At least 50 cycles per bin.
    eta, mode_omega : float
    doppler_floor_nbar : float
        Occupation the readout ion is reset to each cycle.
    bracket : (float, float)
        nbar search range of the inversion.
    z_score : float
        Width of the binomial confidence band.

    Returns
    -------
    list of EnergyEstimate, one per full bin, in time order.
    """
    if bin_size < 50:
        raise ValueError("bin_size must be at least 50")
    signal = [c for c in cycles if not c.control]
    n_bins = len(signal) // bin_size
    if n_bins == 0:
        return []

    t_bin = np.empty(n_bins)
    p_hat = np.empty(n_bins)
    p_lo = np.empty(n_bins)
    p_hi = np.empty(n_bins)
    nbar = np.empty(n_bins)
    nbar_lo = np.empty(n_bins)
    nbar_hi = np.empty(n_bins)
    saturated = np.zeros(n_bins, dtype=bool)
    wait = np.empty(n_bins)
    t_start = np.empty(n_bins)
    t_end = np.empty(n_bins)

    for j in range(n_bins):
        block = signal[j * bin_size : (j + 1) * bin_size]
        outcomes = [c.outcome for c in block]
        t_bin[j] = 0.5 * (block[0].t + block[-1].t)
        t_start[j] = block[0].t
        t_end[j] = block[-1].t
        wait[j] = float(np.median([c.wait for c in block]))
        p_hat[j] = np.mean(outcomes)
        p_lo[j], p_hi[j] = _wilson_interval(p_hat[j], len(outcomes), z_score)
        nbar[j], saturated[j] = invert_excitation(p_hat[j], eta, bracket)
        # p decreasing in nbar: upper p maps to lower nbar and vice versa
        nbar_lo[j], _ = invert_excitation(p_hi[j], eta, bracket)
        nbar_hi[j], _ = invert_excitation(p_lo[j], eta, bracket)

    # wall-clock span of each bin; the last one extends by a cycle spacing
    spans = np.empty(n_bins)
    spans[:-1] = t_start[1:] - t_start[:-1]
    if n_bins > 1:
        spans[-1] = t_end[-1] - t_start[-1] + np.median(spans[:-1]) / bin_size
    else:
        spans[-1] = t_end[-1] - t_start[-1]

    def excess(nbar_values):
        gained = np.maximum(nbar_values - doppler_floor_nbar, 0.0)
        rate = np.where(wait > 0.0, gained / np.where(wait > 0.0, wait, 1.0), 0.0)
        power = 3.0 * HBAR * mode_omega * rate
        power = np.where(saturated, 0.0, power)
        return np.cumsum((power * spans)[::-1])[::-1]

    e_excess = excess(nbar)
    e_lo = excess(nbar_lo)
    e_hi = excess(nbar_hi)
    floor_flag = np.cumsum(saturated[::-1])[::-1] > 0

    return [
        EnergyEstimate(
            t=float(t_bin[j]),
            p_hat=float(p_hat[j]),
            p_lo=float(p_lo[j]),
            p_hi=float(p_hi[j]),
            nbar=float(nbar[j]),
            nbar_lo=float(nbar_lo[j]),
            nbar_hi=float(nbar_hi[j]),
            e_excess=float(e_excess[j]),
            e_excess_lo=float(e_lo[j]),
            e_excess_hi=float(e_hi[j]),
            saturated=bool(floor_flag[j]),
        )
        for j in range(n_bins)
    ]


def detect_load_event(t, p_hat, drop_fraction=0.5):
    """Locate the load drop and crystallization recovery in a binned trace.

    The baseline is the first bin's excitation. A load is the first bin
    falling below baseline times drop_fraction; the recovery is the
    first later bin returning above that threshold. Returns a dict with
    t_drop and t_recover (None where not found).
    """
    t = np.asarray(t, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    if len(t) == 0:
        return {"t_drop": None, "t_recover": None}
    threshold = p_hat[0] * drop_fraction
    below = np.flatnonzero(p_hat < threshold)
    if below.size == 0:
        return {"t_drop": None, "t_recover": None}
    i_drop = below[0]
    after = np.flatnonzero(p_hat[i_drop:] >= threshold)
    i_rec = i_drop + after[after > 0][0] if after[after > 0].size else None
    return {
        "t_drop": float(t[i_drop]),
        "t_recover": None if i_rec is None else float(t[i_rec]),
    }


def write_cycles_csv(cycles, path, metadata=None):
    """One row per measurement cycle: t,wait_ms,outcome,control."""
    with open(path, "w") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}: {value}\n")
        fh.write(CYCLES_CSV_HEADER + "\n")
        for c in cycles:
            fh.write(f"{c.t:.9g},{c.wait * 1e3:.9g},{c.outcome},{int(c.control)}\n")


def read_cycles_csv(path):
    """Parse a cycle stream written by write_cycles_csv."""
    cycles = []
    with open(path) as fh:
        header = None
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                if line != CYCLES_CSV_HEADER:
                    raise ValueError(f"unexpected cycle header {line!r}")
                header = line
                continue
            t, wait_ms, outcome, control = line.split(",")
            cycles.append(
                DetectionCycleRecord(
                    t=float(t),
                    wait=float(wait_ms) * 1e-3,
                    outcome=int(outcome),
                    control=bool(int(control)),
                )
            )
    return cycles


def write_estimates_csv(estimates, path, metadata=None):
    """One row per bin: t,p_hat,p_lo,p_hi,nbar,E_excess_eV."""
    with open(path, "w") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}: {value}\n")
        fh.write(ESTIMATES_CSV_HEADER + "\n")
        for e in estimates:
            fh.write(
                f"{e.t:.9g},{e.p_hat:.9g},{e.p_lo:.9g},{e.p_hi:.9g},"
                f"{e.nbar:.9g},{e.e_excess / EV_IN_J:.9g}\n"
            )
