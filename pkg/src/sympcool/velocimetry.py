"""Ablation-plume velocimetry from time-resolved fluorescence records.

Photons detected at time tau after the ablation trigger tag atoms of
velocity v = d/tau, where d is the target-to-detection distance. This
module turns per-detuning photon arrival records into background
subtracted arrival-time and velocity histograms, handles the Doppler
geometry of the probe beam, applies the 1/v flux correction needed for
closed transitions, and provides a synthetic plume generator with known
ground truth for end-to-end checks.

Weighting conventions:

* ``OpenTransition``: every atom scatters about one photon while
  crossing the probe beam, so photon counts sample the atomic flux
  directly and each photon contributes one count.
* ``ClosedTransition``: the photon number per atom scales as 1/v (slow
  atoms spend longer in the beam), so each photon is weighted
  proportionally to its velocity to recover the flux distribution.

All times are seconds relative to the ablation trigger; negative
arrival times are pre-trigger background used to estimate the detector
dark rate.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .constants import K_BOLTZMANN, MASS_AL_U, MASS_CA_U, mass_kg

OPEN_TRANSITION = "OpenTransition"
CLOSED_TRANSITION = "ClosedTransition"
WEIGHTING_KINDS = (OPEN_TRANSITION, CLOSED_TRANSITION)

# Prompt photon burst mask: a trigger-correlated flash of unknown origin
# occupies the first ~500 ns and carries no velocity information.
PROMPT_MASK_S = 5.0e-7

DEFAULT_TARGET_DISTANCE = 26.0e-3
WAVELENGTH_AL = 394.0e-9
WAVELENGTH_CA = 423.0e-9

# 1/tau maps linear time bins onto a wildly nonuniform velocity grid,
# so velocity histograms default to log-spaced bins.
DEFAULT_VELOCITY_RANGE = (200.0, 2.0e4)
DEFAULT_VELOCITY_BINS = 100

PHOTON_CSV_HEADER = "detuning_Hz,arrival_s"
HISTOGRAM_CSV_HEADER = "v_lo_m_s,v_hi_m_s,value"


@dataclass(frozen=True)
class PhotonRecord:
    """Photon arrival times collected at one probe-laser detuning.

    Parameters
    ----------
    detuning : float
        Probe laser offset from the line reference, Hz.
    arrivals : array_like
        Arrival times in seconds relative to the ablation trigger,
        sorted ascending. Negative times are pre-trigger background.
    pre_span : float, optional
        Length of the pre-trigger observation window in seconds. When
        zero, the window is inferred from the earliest arrival.
    grid_step : float or None, optional
        Detuning step of the scan this record belongs to, Hz.
    """

    detuning: float
    arrivals: np.ndarray
    pre_span: float = 0.0
    grid_step: float | None = None

    def __post_init__(self):
        arr = np.asarray(self.arrivals, dtype=float)
        if arr.ndim != 1:
            raise ValueError("arrivals must be one-dimensional")
        if arr.size > 1 and np.any(np.diff(arr) < 0.0):
            raise ValueError("arrivals must be sorted ascending")
        if self.pre_span < 0.0:
            raise ValueError("pre_span must be >= 0")
        object.__setattr__(self, "arrivals", arr)
        object.__setattr__(self, "detuning", float(self.detuning))
        object.__setattr__(self, "pre_span", float(self.pre_span))

    @property
    def n_photons(self):
        return int(self.arrivals.size)


@dataclass(frozen=True)
class BeamGeometry:
    """Geometry linking arrival times and Doppler shifts to velocities.

    Parameters
    ----------
    d_target : float
        Distance from the ablation target to the detection region, m.
    angle : float
        Angle between the atomic beam and the probe beam in degrees,
        0 < angle < 180. 90 degrees means perpendicular illumination
        and zero first-order Doppler shift.
    wavelength : float
        Probe transition wavelength, m.
    """

    d_target: float = DEFAULT_TARGET_DISTANCE
    angle: float = 90.0
    wavelength: float = WAVELENGTH_AL

    def __post_init__(self):
        if self.d_target <= 0.0:
            raise ValueError("d_target must be positive")
        if not 0.0 < self.angle < 180.0:
            raise ValueError("angle must lie strictly between 0 and 180 degrees")
        if self.wavelength <= 0.0:
            raise ValueError("wavelength must be positive")

    @classmethod
    def aluminum(cls):
        """Al probe: 394 nm beam 2.3 degrees off perpendicular."""
        return cls(d_target=DEFAULT_TARGET_DISTANCE, angle=87.7, wavelength=WAVELENGTH_AL)

    @classmethod
    def calcium(cls):
        """Ca probe: 423 nm beam 6 degrees off perpendicular."""
        return cls(d_target=DEFAULT_TARGET_DISTANCE, angle=84.0, wavelength=WAVELENGTH_CA)


def arrival_to_velocity(tau, geom):
    """Convert arrival time(s) tau > 0 to velocity d/tau in m/s."""
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr <= 0.0):
        raise ValueError("arrival times must be positive for velocity conversion")
    out = geom.d_target / tau_arr
    if np.isscalar(tau) or tau_arr.ndim == 0:
        return float(out)
    return out


def doppler_resonance(v, geom, line_offset=0.0):
    """First-order Doppler shift of the resonance for velocity v.

    shift = v cos(angle) / wavelength + line_offset, in Hz. Linear in v
    and zero at perpendicular illumination. ``line_offset`` places the
    transition (for instance one hyperfine component) relative to the
    detuning reference.
    """
    v_arr = np.asarray(v, dtype=float)
    shift = v_arr * math.cos(math.radians(geom.angle)) / geom.wavelength + line_offset
    if np.isscalar(v) or v_arr.ndim == 0:
        return float(shift)
    return shift


@dataclass(frozen=True)
class BackgroundEstimate:
    """Detector background rate from pre-trigger counts.

    rate = n_pre / pre_span in counts/s for the pooled photon stream.
    """

    rate: float
    pre_span: float
    n_pre: int


def estimate_background(records):
    """Estimate the pooled background rate from pre-trigger arrivals.

    The pre-trigger window length is the largest of the records'
    declared ``pre_span`` values and the earliest observed arrival.
    Raises ValueError when no pre-trigger information exists at all.
    """
    n_pre = 0
    span = 0.0
    for rec in records:
        span = max(span, rec.pre_span)
        if rec.arrivals.size:
            n_pre += int(np.sum(rec.arrivals < 0.0))
            span = max(span, -float(rec.arrivals[0]))
    if span <= 0.0:
        raise ValueError(
            "no pre-trigger data: records declare no pre_span and contain "
            "no negative arrival times, so the background rate is undefined"
        )
    return BackgroundEstimate(rate=n_pre / span, pre_span=span, n_pre=n_pre)


def _check_pre_span(background, analysis_span):
    if background.pre_span < analysis_span:
        raise ValueError(
            "pre-trigger span %.3g s is shorter than the analysis span %.3g s; "
            "the background estimate would not cover the histogram window"
            % (background.pre_span, analysis_span)
        )


def _subtract_and_clip(raw, expected):
    """Clip negative residuals to zero, returning (values, clip_mass).

    values = max(raw - expected, 0) bin by bin; clip_mass is the mass
    added back by clipping, so that sum(values) equals
    sum(raw) - sum(expected) + clip_mass identically.
    """
    corrected = raw - expected
    values = np.maximum(corrected, 0.0)
    clip_mass = float(np.sum(values - corrected))
    return values, clip_mass


@dataclass(frozen=True)
class ArrivalHistogram:
    """Background-subtracted arrival-time histogram.

    ``raw`` holds the observed counts per bin, ``expected`` the
    background expectation per bin, and ``values`` the clipped
    difference. ``clip_mass`` is the total mass restored by clipping
    negative residuals to zero.
    """

    edges: np.ndarray
    values: np.ndarray
    raw: np.ndarray
    expected: np.ndarray
    background: BackgroundEstimate
    clip_mass: float
    prompt_mask: float

    @property
    def centers(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def n_binned(self):
        return float(np.sum(self.raw))


def subtract_background(records, edges=None, prompt_mask=PROMPT_MASK_S, n_bins=200):
    """Histogram post-trigger arrivals and subtract the dark-count floor.

    The background rate comes from pre-trigger counts; the expected
    background per bin is rate times bin width. Arrivals inside the
    configurable prompt-burst mask are excluded. Raises ValueError when
    the records carry no pre-trigger information or the pre-trigger
    span is shorter than the analysis span.
    """
    background = estimate_background(records)
    arrivals = np.concatenate([rec.arrivals for rec in records]) if records else np.empty(0)
    post = arrivals[arrivals > prompt_mask]
    if edges is None:
        if post.size == 0:
            raise ValueError("no post-trigger arrivals outside the prompt mask")
        edges = np.linspace(prompt_mask, float(post.max()), n_bins + 1)
    edges = np.asarray(edges, dtype=float)
    if edges[0] < prompt_mask:
        raise ValueError("histogram edges must not reach into the prompt mask")
    _check_pre_span(background, float(edges[-1] - edges[0]))
    raw, _ = np.histogram(post, bins=edges)
    raw = raw.astype(float)
    expected = background.rate * np.diff(edges)
    values, clip_mass = _subtract_and_clip(raw, expected)
    return ArrivalHistogram(
        edges=edges,
        values=values,
        raw=raw,
        expected=expected,
        background=background,
        clip_mass=clip_mass,
        prompt_mask=float(prompt_mask),
    )


@dataclass(frozen=True)
class VelocityHistogram:
    """Velocity distribution with its weighting convention recorded.

    ``values`` are background-subtracted and clipped to be
    non-negative: raw counts (``OpenTransition``) or velocity-weighted
    counts (``ClosedTransition``) minus the per-bin background
    expectation. ``n_input`` counts the post-mask photons offered to
    the binning; photons mapping outside the edge range are dropped
    from ``raw`` but not from ``n_input``.
    """

    edges: np.ndarray
    values: np.ndarray
    weighting: str
    raw: np.ndarray
    expected: np.ndarray
    background: BackgroundEstimate
    clip_mass: float
    prompt_mask: float
    n_input: int

    def __post_init__(self):
        if self.weighting not in WEIGHTING_KINDS:
            raise ValueError("unknown weighting %r" % (self.weighting,))
        if np.any(self.values < 0.0):
            raise ValueError("histogram values must be non-negative after clipping")

    @property
    def centers(self):
        """Geometric bin centers, natural for log-spaced edges."""
        return np.sqrt(self.edges[:-1] * self.edges[1:])

    @property
    def background_rate(self):
        return self.background.rate

    @property
    def densities(self):
        """Values per unit velocity; log bins make this differ from values."""
        return self.values / np.diff(self.edges)

    @property
    def peak_velocity(self):
        """Center of the bin where the density peaks.

        Uses values per bin width, not raw bin contents: with
        log-spaced bins the widths grow with v and the most populated
        bin sits above the density maximum.
        """
        return float(self.centers[int(np.argmax(self.densities))])


def default_velocity_edges(
    v_range=DEFAULT_VELOCITY_RANGE, n_bins=DEFAULT_VELOCITY_BINS
):
    """Log-spaced velocity bin edges, 100 bins over [200, 2e4] m/s."""
    return np.geomspace(v_range[0], v_range[1], n_bins + 1)


def velocity_distribution(
    records, geom, species_mode, edges=None, prompt_mask=PROMPT_MASK_S
):
    """Build a background-subtracted velocity histogram from records.

    Each post-mask photon at arrival time tau contributes at
    v = d/tau: one count for ``OpenTransition``, a weight equal to v
    for ``ClosedTransition`` (flux correction for photon yield
    proportional to 1/v). The background expectation per velocity bin
    is the dark rate times the bin's arrival-time width (times the bin
    center velocity in the weighted mode), subtracted and clipped at
    zero. Records taken at different detunings are merged by bin-wise
    addition.
    """
    if species_mode not in WEIGHTING_KINDS:
        raise ValueError("unknown species_mode %r" % (species_mode,))
    if edges is None:
        edges = default_velocity_edges()
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0.0):
        raise ValueError("edges must be a strictly increasing 1-d array")
    if edges[0] <= 0.0:
        raise ValueError("velocity edges must be positive")

    background = estimate_background(records)
    # Arrival-time window probed by the velocity bins: fast edge first.
    tau_lo = geom.d_target / edges[-1]
    tau_hi = geom.d_target / edges[0]
    _check_pre_span(background, tau_hi - max(tau_lo, prompt_mask))

    arrivals = np.concatenate([rec.arrivals for rec in records]) if records else np.empty(0)
    post = arrivals[arrivals > prompt_mask]
    velocities = geom.d_target / post if post.size else np.empty(0)
    if species_mode == OPEN_TRANSITION:
        weights = None
    else:
        weights = velocities
    raw, _ = np.histogram(velocities, bins=edges, weights=weights)
    raw = raw.astype(float)

    # Background expectation: uniform in arrival time, mapped bin-wise.
    tau_left = np.maximum(geom.d_target / edges[1:], prompt_mask)
    tau_right = np.maximum(geom.d_target / edges[:-1], prompt_mask)
    expected = background.rate * (tau_right - tau_left)
    if species_mode == CLOSED_TRANSITION:
        expected = expected * np.sqrt(edges[:-1] * edges[1:])

    values, clip_mass = _subtract_and_clip(raw, expected)
    return VelocityHistogram(
        edges=edges,
        values=values,
        weighting=species_mode,
        raw=raw,
        expected=expected,
        background=background,
        clip_mass=clip_mass,
        prompt_mask=float(prompt_mask),
        n_input=int(post.size),
    )


@dataclass(frozen=True)
class CaptureWindow:
    """Records gated to one photo-ionization window, with the implied
    velocity acceptance [v_floor, v_ceiling]."""

    records: tuple
    tau_delay: float
    tau_gate: float
    v_floor: float
    v_ceiling: float


def capture_window_filter(records, tau_delay, tau_gate, geom):
    """Keep post-trigger arrivals inside [tau_delay, tau_delay + tau_gate].

    Models pulsing the photo-ionization light on only during the
    window: atoms arriving outside it cannot be ionized. The implied
    velocity acceptance is [d/(tau_delay + tau_gate), d/tau_delay],
    with an infinite ceiling at zero delay and a zero floor for an
    unbounded gate. Pre-trigger arrivals pass through untouched so the
    background estimate survives the gating.
    """
    if tau_delay < 0.0:
        raise ValueError("tau_delay must be >= 0")
    if not tau_gate > 0.0:
        raise ValueError("tau_gate must be positive")
    t_close = tau_delay + tau_gate
    out = []
    for rec in records:
        arr = rec.arrivals
        keep = (arr < 0.0) | ((arr >= tau_delay) & (arr <= t_close))
        out.append(
            PhotonRecord(
                detuning=rec.detuning,
                arrivals=arr[keep],
                pre_span=rec.pre_span,
                grid_step=rec.grid_step,
            )
        )
    v_ceiling = math.inf if tau_delay == 0.0 else geom.d_target / tau_delay
    v_floor = 0.0 if math.isinf(t_close) else geom.d_target / t_close
    return CaptureWindow(
        records=tuple(out),
        tau_delay=float(tau_delay),
        tau_gate=float(tau_gate),
        v_floor=v_floor,
        v_ceiling=v_ceiling,
    )


# --------------------------------------------------------------------------
# Synthetic plume generator.


@dataclass(frozen=True)
class PlumeSpec:
    """Ablation-plume velocity model with configurable drift.

    The atomic flux density is A v^3 exp(-m (v - u)^2 / (2 k_B T_eff))
    on [v_min, v_max]: a drifting modified Maxwell-Boltzmann flux. The
    drift u and effective temperature are free generator parameters
    chosen to place the modal velocity, not physics claims about the
    ablation process.
    """

    mass_u: float
    drift: float
    t_eff: float
    v_min: float = 50.0
    v_max: float = 2.0e4
    n_grid: int = 4096

    def __post_init__(self):
        if self.mass_u <= 0.0 or self.t_eff <= 0.0:
            raise ValueError("mass_u and t_eff must be positive")
        if not 0.0 < self.v_min < self.v_max:
            raise ValueError("need 0 < v_min < v_max")
        if self.n_grid < 16:
            raise ValueError("n_grid too small for the inverse-CDF tables")

    @classmethod
    def aluminum_like(cls):
        """Fast plume peaking near 4.5 km/s (flux mode)."""
        return cls(mass_u=MASS_AL_U, drift=3500.0, t_eff=4900.0)

    @classmethod
    def calcium_like(cls):
        """Slow plume peaking near 1.6 km/s (flux mode)."""
        return cls(mass_u=MASS_CA_U, drift=1200.0, t_eff=1025.0)


def plume_flux_density(v, spec):
    """Unnormalized atomic flux density of the plume model."""
    v_arr = np.asarray(v, dtype=float)
    m = mass_kg(spec.mass_u)
    arg = -m * (v_arr - spec.drift) ** 2 / (2.0 * K_BOLTZMANN * spec.t_eff)
    return v_arr**3 * np.exp(arg)


def _photon_density(grid, spec, photon_yield):
    dens = plume_flux_density(grid, spec)
    if photon_yield == "inverse_v":
        dens = dens / grid
    elif photon_yield != "per_atom":
        raise ValueError("photon_yield must be 'per_atom' or 'inverse_v'")
    return dens


def plume_modal_velocity(spec, photon_yield="per_atom"):
    """Velocity at which the generator's photon density peaks."""
    grid = np.linspace(spec.v_min, spec.v_max, spec.n_grid)
    dens = _photon_density(grid, spec, photon_yield)
    return float(grid[int(np.argmax(dens))])


def sample_plume_velocities(spec, n, rng, photon_yield="per_atom"):
    """Draw n velocities by inverse-CDF lookup on a trapezoid table.

    ``photon_yield`` selects the density photons sample: ``per_atom``
    (open transition, one photon per atom, density = flux) or
    ``inverse_v`` (closed transition, photon number per atom
    proportional to 1/v).
    """
    grid = np.linspace(spec.v_min, spec.v_max, spec.n_grid)
    dens = _photon_density(grid, spec, photon_yield)
    cdf = cumulative_trapezoid(dens, grid, initial=0.0)
    if cdf[-1] <= 0.0:
        raise ValueError("plume density vanishes on the velocity grid")
    cdf = cdf / cdf[-1]
    # Keep only strictly increasing CDF knots so interpolation is valid.
    keep = np.diff(cdf, prepend=-1.0) > 0.0
    u = rng.uniform(0.0, 1.0, size=int(n))
    return np.interp(u, cdf[keep], grid[keep])


def synthesize_plume_records(
    spec,
    geom,
    n_photons,
    rng,
    photon_yield="per_atom",
    background_rate=0.0,
    pre_span=2.0e-4,
    t_max=None,
    n_prompt=0,
    detuning=0.0,
):
    """Generate one photon record of plume signal plus uniform background.

    Signal arrivals are tau = d/v for velocities drawn from the plume
    density. Background counts are Poisson with the given rate, uniform
    over [-pre_span, t_max]; t_max defaults to the arrival time of the
    slowest representable atom, d/v_min. ``n_prompt`` optionally adds a
    trigger-correlated burst inside the first 500 ns.
    """
    if pre_span <= 0.0:
        raise ValueError("pre_span must be positive")
    v = sample_plume_velocities(spec, n_photons, rng, photon_yield=photon_yield)
    arrivals = geom.d_target / v
    if t_max is None:
        t_max = geom.d_target / spec.v_min
    parts = [arrivals[arrivals <= t_max]]
    if background_rate > 0.0:
        n_bg = rng.poisson(background_rate * (pre_span + t_max))
        parts.append(rng.uniform(-pre_span, t_max, size=n_bg))
    if n_prompt:
        parts.append(rng.uniform(0.0, PROMPT_MASK_S, size=int(n_prompt)))
    allt = np.sort(np.concatenate(parts))
    return PhotonRecord(detuning=detuning, arrivals=allt, pre_span=pre_span)


def synthesize_detuning_scan(
    spec,
    geom,
    detunings,
    n_photons,
    rng,
    line_offsets=(0.0,),
    linewidth=40.0e6,
    photon_yield="per_atom",
    background_rate=0.0,
    pre_span=2.0e-4,
    t_max=None,
):
    """Generate a scan of photon records over a detuning grid.

    Each photon gets a velocity from the plume density and a hyperfine
    line drawn uniformly from ``line_offsets``; its apparent detuning
    is the Doppler resonance plus Lorentzian (Cauchy) noise of FWHM
    ``linewidth``, snapped to the nearest grid detuning. Photons
    falling outside the grid by more than half a step are dropped.
    Background counts are spread uniformly over the records.
    """
    detunings = np.sort(np.asarray(detunings, dtype=float))
    if detunings.size < 2:
        raise ValueError("need at least two detunings for a scan")
    step = float(np.min(np.diff(detunings)))
    if t_max is None:
        t_max = geom.d_target / spec.v_min

    v = sample_plume_velocities(spec, n_photons, rng, photon_yield=photon_yield)
    arrivals = geom.d_target / v
    offsets = rng.choice(np.asarray(line_offsets, dtype=float), size=v.size)
    observed = doppler_resonance(v, geom) + offsets
    observed = observed + 0.5 * linewidth * rng.standard_cauchy(size=v.size)
    idx = np.searchsorted(detunings, observed)
    idx = np.clip(idx, 1, detunings.size - 1)
    left = detunings[idx - 1]
    right = detunings[idx]
    nearest = np.where(observed - left <= right - observed, idx - 1, idx)
    dist = np.abs(observed - detunings[nearest])
    ok = (dist <= 0.5 * step) & (arrivals <= t_max)

    records = []
    for j, det in enumerate(detunings):
        sel = ok & (nearest == j)
        times = arrivals[sel]
        if background_rate > 0.0:
            n_bg = rng.poisson(background_rate * (pre_span + t_max) / detunings.size)
            times = np.concatenate([times, rng.uniform(-pre_span, t_max, size=n_bg)])
        records.append(
            PhotonRecord(
                detuning=det,
                arrivals=np.sort(times),
                pre_span=pre_span,
                grid_step=step,
            )
        )
    return records


def sum_along_resonance(records, geom, line_offset=0.0, half_width=None):
    """Pool a scan's photons lying on one hyperfine resonance curve.

    For each record at detuning delta, keeps post-trigger photons whose
    arrival time is Doppler-consistent with the chosen line:
    |delta - shift(d/tau) - line_offset| <= half_width. Summing in
    frequency space this way removes the velocity selection a single
    detuning imposes. Pre-trigger arrivals from all records are pooled
    for the background estimate; the estimate treats the pooled stream
    as uniformly exposed, which holds when the background is small or
    subtracted upstream. half_width defaults to half the recorded grid
    step.
    """
    if half_width is None:
        steps = [rec.grid_step for rec in records if rec.grid_step]
        if not steps:
            raise ValueError("half_width not given and records carry no grid step")
        half_width = 0.5 * float(min(steps))
    kept = []
    pre_span = 0.0
    for rec in records:
        arr = rec.arrivals
        pre_span = max(pre_span, rec.pre_span)
        if arr.size:
            pre_span = max(pre_span, -float(arr[0]))
        pre = arr[arr < 0.0]
        post = arr[arr > 0.0]
        shift = doppler_resonance(geom.d_target / post, geom, line_offset)
        on_line = np.abs(rec.detuning - shift) <= half_width
        kept.append(pre)
        kept.append(post[on_line])
    merged = np.sort(np.concatenate(kept)) if kept else np.empty(0)
    return PhotonRecord(detuning=0.0, arrivals=merged, pre_span=pre_span)


# --------------------------------------------------------------------------
# File formats: one CSV row per photon; histograms as CSV plus JSON
# metadata carrying geometry, masks, and the background estimate.


def write_photon_csv(path, records, metadata=None):
    """Write records as CSV rows ``detuning_Hz,arrival_s``, one per photon."""
    with open(path, "w", newline="") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.writer(fh)
        writer.writerow(PHOTON_CSV_HEADER.split(","))
        for rec in records:
            for t in rec.arrivals:
                writer.writerow([repr(float(rec.detuning)), repr(float(t))])


def read_photon_csv(path):
    """Read photon CSV back into records grouped by detuning.

    The pre-trigger span of each record is inferred from its earliest
    arrival; grid step from the detuning grid when it has at least two
    values.
    """
    by_detuning = {}
    with open(path, newline="") as fh:
        header = None
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if header is None:
                header = ",".join(row)
                if header != PHOTON_CSV_HEADER:
                    raise ValueError(
                        "expected photon CSV header %r" % (PHOTON_CSV_HEADER,)
                    )
                continue
            det = float(row[0])
            by_detuning.setdefault(det, []).append(float(row[1]))
    detunings = sorted(by_detuning)
    step = None
    if len(detunings) > 1:
        step = float(np.min(np.diff(np.asarray(detunings))))
    return [
        PhotonRecord(
            detuning=det,
            arrivals=np.sort(np.asarray(by_detuning[det])),
            grid_step=step,
        )
        for det in detunings
    ]


def write_histogram_csv(path, hist, metadata=None):
    """Write a velocity histogram as ``v_lo_m_s,v_hi_m_s,value`` rows."""
    with open(path, "w", newline="") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.writer(fh)
        writer.writerow(HISTOGRAM_CSV_HEADER.split(","))
        for lo, hi, val in zip(hist.edges[:-1], hist.edges[1:], hist.values):
            writer.writerow([repr(float(lo)), repr(float(hi)), repr(float(val))])


def write_histogram_metadata(path, hist, geom, extra=None):
    """Write the JSON sidecar: geometry, masks, background, clipping."""
    meta = {
        "geometry": {
            "d_target_m": geom.d_target,
            "angle_deg": geom.angle,
            "wavelength_m": geom.wavelength,
        },
        "weighting": hist.weighting,
        "prompt_mask_s": hist.prompt_mask,
        "background_rate_hz": hist.background.rate,
        "background_pre_span_s": hist.background.pre_span,
        "background_pre_counts": hist.background.n_pre,
        "clip_mass": hist.clip_mass,
        "n_input_photons": hist.n_input,
        "edges_m_s": [float(e) for e in hist.edges],
    }
    if extra:
        meta.update(extra)
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
