"""Pure NumPy integration kernel, the fallback twin of the compiled core.

Everything here works in trap-scaled units: lengths in the interaction scale
d, time in 1/omega_ref (so one trap period is 2*pi), energies in the scale
energy E_d, masses in units of the hot-ion mass. In these units the Coulomb
coupling carries a fixed coefficient 1/2 and the equations of motion read

    x_i'' = -w2_i * x_i - gamma_i * x_i' + (1/(2 mu_i)) sum_j (x_i - x_j)/|x_i - x_j|^3

with w2_i the squared per-axis trap frequency of ion i in omega_ref units.

The stepper is an embedded Dormand-Prince 5(4) pair with PI step-size control
and the first-same-as-last optimization. Samples are recorded on a fixed
time grid; if the buffer fills, the grid stride doubles in place so memory
stays bounded on long runs. Termination conditions (crystallization window,
escape radius, minimum-distance guard, step underflow) are evaluated inside
the loop so long trajectories stop as soon as a verdict is available.

This module must stay semantically identical to the compiled kernel: both
implement the same algorithm with the same constants and the same event
ordering, so either backend can serve every caller.
"""

import math

import numpy as np

# integration outcome codes shared by both backends
STATUS_TIMED_OUT = 0
STATUS_CRYSTALLIZED = 1
STATUS_LOST = 2
STATUS_CLOSE_ENCOUNTER = 3
STATUS_STEP_UNDERFLOW = 4

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
# error weights: 5th order minus embedded 4th order
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)

_SAFETY = 0.9
_BETA = 0.04
_EXPO = 0.2 - 0.75 * _BETA
_FAC_MIN = 0.2
_FAC_MAX = 10.0

N_SAMPLE_COLS = 9  # t, E_tot, hot Ex Ey Ez, cold0 Ex Ey Ez, r_min


def _rhs(y, n, mu, w2, gamma, out):
    # Elementwise vector ops round identically to the compiled loops; the
    # pair interaction runs over scalars in the same order and with the
    # same expression shape as the compiled kernel so both backends stay
    # bitwise interchangeable.
    x = y[: 3 * n].reshape(n, 3)
    v = y[3 * n :].reshape(n, 3)
    out[: 3 * n] = y[3 * n :]
    a = out[3 * n :].reshape(n, 3)
    np.multiply(w2, x, out=a)
    np.negative(a, out=a)
    a -= gamma[:, None] * v
    if n > 1:
        xs = y[: 3 * n].tolist()
        acc = out[3 * n :].tolist()
        mus = mu.tolist()
        for i in range(n - 1):
            for j in range(i + 1, n):
                dx = xs[3 * i] - xs[3 * j]
                dy = xs[3 * i + 1] - xs[3 * j + 1]
                dz = xs[3 * i + 2] - xs[3 * j + 2]
                r2 = dx * dx + dy * dy + dz * dz
                inv_r3 = 1.0 / (r2 * math.sqrt(r2))
                ci = 0.5 / mus[i] * inv_r3
                cj = 0.5 / mus[j] * inv_r3
                acc[3 * i] += ci * dx
                acc[3 * i + 1] += ci * dy
                acc[3 * i + 2] += ci * dz
                acc[3 * j] -= cj * dx
                acc[3 * j + 1] -= cj * dy
                acc[3 * j + 2] -= cj * dz
        out[3 * n :] = acc
    return out


def _min_pair_distance(y, n):
    xs = y[: 3 * n].tolist()
    best = np.inf
    for i in range(n - 1):
        for j in range(i + 1, n):
            dx = xs[3 * i] - xs[3 * j]
            dy = xs[3 * i + 1] - xs[3 * j + 1]
            dz = xs[3 * i + 2] - xs[3 * j + 2]
            r2 = dx * dx + dy * dy + dz * dz
            if r2 < best:
                best = r2
    return math.sqrt(best)


def _energies(y, n, mu, w2, out_row):
    """Fill E_tot plus per-axis energies of ion 0 and ion 1 into out_row[1:8]."""
    xs = y.tolist()
    w2s = w2.ravel().tolist()
    mus = mu.tolist()
    base = 3 * n
    out_row[2:8] = 0.0
    e_tot = 0.0
    for i in range(n):
        for ax in range(3):
            e_ax = mus[i] * (
                xs[base + 3 * i + ax] * xs[base + 3 * i + ax]
                + w2s[3 * i + ax] * xs[3 * i + ax] * xs[3 * i + ax]
            )
            e_tot += e_ax
            if i == 0:
                out_row[2 + ax] = e_ax
            elif i == 1:
                out_row[5 + ax] = e_ax
    for i in range(n - 1):
        for j in range(i + 1, n):
            dx = xs[3 * i] - xs[3 * j]
            dy = xs[3 * i + 1] - xs[3 * j + 1]
            dz = xs[3 * i + 2] - xs[3 * j + 2]
            e_tot += 1.0 / math.sqrt(dx * dx + dy * dy + dz * dz)
    out_row[1] = e_tot
    return e_tot


def _seq_sum(values):
    """Sequential left-to-right accumulation, the compiled kernel's order."""
    total = 0.0
    for v in values.tolist():
        total += v
    return total


def _initial_step(y0, f0, n, mu, w2, gamma, rtol, atol, t_end):
    dim = y0.shape[0]
    sc = atol + rtol * np.abs(y0)
    d0 = math.sqrt(_seq_sum((y0 / sc) ** 2) / dim)
    d1 = math.sqrt(_seq_sum((f0 / sc) ** 2) / dim)
    h0 = 1e-6 if (d1 < 1e-10 or d0 < 1e-10) else 0.01 * d0 / d1
    h0 = min(h0, t_end)
    y1 = y0 + h0 * f0
    f1 = _rhs(y1, n, mu, w2, gamma, np.empty_like(y0))
    d2 = math.sqrt(_seq_sum(((f1 - f0) / sc) ** 2) / dim) / h0
    dm = max(d1, d2)
    h1 = max(1e-6, h0 * 1e-3) if dm <= 1e-15 else (0.01 / dm) ** 0.2
    return min(100.0 * h0, h1, t_end)


def integrate_scaled(
    y0,
    mu,
    w2,
    gamma,
    rtol,
    atol,
    t_end,
    sample_dt,
    e_ground,
    crys_threshold,
    crys_window,
    escape_r2,
    min_dist,
    max_samples,
):
    """Integrate the scaled N-ion equations of motion.

    Parameters
    ----------
    y0 : ndarray, shape (6N,)
        Initial positions then velocities, flattened, scaled units.
    mu : ndarray, shape (N,)
        Masses in units of the hot-ion mass (mu[0] == 1).
    w2 : ndarray, shape (N, 3)
        Squared per-axis trap frequencies in omega_ref units.
    gamma : ndarray, shape (N,)
        Per-ion velocity damping rate in omega_ref units.
    rtol, atol : float
        Local error tolerances for the embedded pair.
    t_end : float
        Final time in scaled units (one trap period is 2*pi).
    sample_dt : float
        Initial sample grid spacing in scaled units.
    e_ground : float
        Ground-configuration energy (E_d units) for the crystallization test.
    crys_threshold : float
        Energy excess below which the system counts as crystallized, E_d
        units. Pass a non-positive value to disable the check.
    crys_window : float
        Time the excess must stay below threshold before the verdict, scaled
        units.
    escape_r2 : float
        Squared escape radius in d units (inf disables the check).
    min_dist : float
        Hard minimum pair distance; going below aborts with a diagnostic.
    max_samples : int
        Sample buffer capacity (even); the grid stride doubles when full.

    Returns
    -------
    status, t_event, samples, y_final, t_final, n_accept, n_reject, n_eval
    """
    y0 = np.asarray(y0, dtype=float)
    mu = np.asarray(mu, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    n = mu.shape[0]
    dim = 6 * n
    if y0.shape[0] != dim:
        raise ValueError("state length does not match ion count")
    if max_samples % 2:
        max_samples += 1

    crys_enabled = crys_threshold > 0.0 and np.isfinite(e_ground)

    samples = np.empty((max_samples, N_SAMPLE_COLS))
    n_rec = 0
    # termination checks run on the fixed sample_dt grid; the record keeps
    # every record_stride-th check point and decimates in place when full,
    # so the crystallization window resolution never degrades on long runs
    record_stride = 1
    check_index = 0

    y = y0.copy()
    t = 0.0
    ks = np.empty((7, dim))
    ytmp = np.empty(dim)
    acc = np.empty(dim)
    scratch_row = np.empty(N_SAMPLE_COLS)
    _rhs(y, n, mu, w2, gamma, ks[0])
    n_eval = 1
    h = _initial_step(y, ks[0], n, mu, w2, gamma, rtol, atol, t_end)
    n_eval += 1

    status = STATUS_TIMED_OUT
    t_event = np.nan
    n_accept = 0
    n_reject = 0
    facold = 1e-4
    reject_prev = False
    below_since = -1.0

    dist_now = _min_pair_distance(y, n) if n > 1 else np.inf
    cur_min = dist_now

    # sample at t = 0
    samples[0, 0] = 0.0
    _energies(y, n, mu, w2, samples[0])
    samples[0, 8] = cur_min
    e_now = samples[0, 1]
    if crys_enabled and e_now - e_ground < crys_threshold:
        below_since = 0.0
    n_rec = 1
    next_sample = sample_dt
    cur_min = dist_now

    while t < t_end:
        boundary = min(next_sample, t_end)
        gap = boundary - t
        if gap <= 1e-12 * max(1.0, boundary):
            # degenerate gap left over by float accumulation of the sample
            # grid: snap across it, the state change over ~1 ulp is nil
            t = boundary
            at_boundary = True
        else:
            h_try = h
            capped = False
            if h_try >= gap:
                h_try = gap
                capped = True
            if h_try < 1e-13 * max(1.0, abs(t)):
                status = STATUS_STEP_UNDERFLOW
                t_event = t
                break

            # stages 2..7 (k1 is fresh or inherited via FSAL); the stage
            # sums accumulate over j in fixed order, matching the compiled
            # kernel's rounding exactly
            for s in range(1, 7):
                acc.fill(0.0)
                for j in range(s):
                    acc += _A[s][j] * ks[j]
                np.multiply(acc, h_try, out=ytmp)
                ytmp += y
                if s < 6:
                    _rhs(ytmp, n, mu, w2, gamma, ks[s])
                else:
                    ynew = ytmp.copy()
                    _rhs(ynew, n, mu, w2, gamma, ks[6])
            n_eval += 6

            acc.fill(0.0)
            for j in range(7):
                acc += _E[j] * ks[j]
            err = acc * h_try
            sc = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
            err_norm = math.sqrt(_seq_sum((err / sc) ** 2) / dim)

            if err_norm > 1.0:
                n_reject += 1
                reject_prev = True
                factor = max(_FAC_MIN, _SAFETY * err_norm**-_EXPO)
                h = h_try * factor
                continue

            t = boundary if capped else t + h_try
            at_boundary = capped
            y[:] = ynew
            ks[0] = ks[6]
            n_accept += 1

            en = max(err_norm, 1e-10)
            factor = _SAFETY * en**-_EXPO * facold**_BETA
            factor = min(_FAC_MAX, max(_FAC_MIN, factor))
            if reject_prev:
                factor = min(1.0, factor)
            h_cand = h_try * factor
            h = max(h, h_cand) if capped else h_cand
            facold = max(err_norm, 1e-4)
            reject_prev = False

            if n > 1:
                dist_now = _min_pair_distance(y, n)
                if dist_now < cur_min:
                    cur_min = dist_now
                if dist_now < min_dist:
                    status = STATUS_CLOSE_ENCOUNTER
                    t_event = t
                    break

        if at_boundary and boundary == next_sample:
            check_index += 1
            next_sample += sample_dt
            e_now = _energies(y, n, mu, w2, scratch_row)
            if check_index % record_stride == 0:
                if n_rec == max_samples:
                    # fold the buffer: keep every other sample, merge r_min
                    half = max_samples // 2
                    for j in range(1, half):
                        keep = 2 * j
                        rm = min(samples[keep - 1, 8], samples[keep, 8])
                        samples[j] = samples[keep]
                        samples[j, 8] = rm
                    n_rec = half
                    record_stride *= 2
                row = samples[n_rec]
                row[:] = scratch_row
                row[0] = t
                row[8] = cur_min
                cur_min = dist_now
                n_rec += 1

            xs = y[: 3 * n].tolist()
            worst = 0.0
            for i in range(n):
                r2 = (
                    xs[3 * i] * xs[3 * i]
                    + xs[3 * i + 1] * xs[3 * i + 1]
                    + xs[3 * i + 2] * xs[3 * i + 2]
                )
                if r2 > worst:
                    worst = r2
            if worst > escape_r2:
                status = STATUS_LOST
                t_event = t
                break
            if crys_enabled:
                if e_now - e_ground < crys_threshold:
                    if below_since < 0.0:
                        below_since = t
                    if t - below_since >= crys_window * (1.0 - 1e-12):
                        status = STATUS_CRYSTALLIZED
                        t_event = below_since
                        break
                else:
                    below_since = -1.0

    return status, t_event, samples[:n_rec].copy(), y, t, n_accept, n_reject, n_eval
