# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled integration kernel.

Semantically identical to `_kernel_py`: the same Dormand-Prince 5(4) pair,
PI step control, sample grid with in-place stride doubling, and in-loop
termination checks, written with plain C loops for speed. See the Python
twin for the full algorithm description; any behavioral change must be made
in both places.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, NAN, fabs, fmax, fmin, isfinite, pow, sqrt

STATUS_TIMED_OUT = 0
STATUS_CRYSTALLIZED = 1
STATUS_LOST = 2
STATUS_CLOSE_ENCOUNTER = 3
STATUS_STEP_UNDERFLOW = 4

DEF MAXDIM = 96  # up to 16 ions; far beyond anything this package runs

cdef double[7][6] A_TAB
cdef double[7] E_TAB

# float literals throughout: cdivision would constant-fold integer literal
# quotients with C semantics and silently zero out the small entries
_A_ROWS = [
    [],
    [1.0 / 5.0],
    [3.0 / 40.0, 9.0 / 40.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
]
_E_ROW = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
]

cdef int _ti, _tj
for _ti in range(7):
    for _tj in range(6):
        A_TAB[_ti][_tj] = _A_ROWS[_ti][_tj] if _tj < len(_A_ROWS[_ti]) else 0.0
    E_TAB[_ti] = _E_ROW[_ti]


def _tableau():
    """Debug view of the Butcher tableau actually loaded into the C arrays."""
    return (
        [[A_TAB[s][j] for j in range(6)] for s in range(7)],
        [E_TAB[s] for s in range(7)],
    )

cdef double SAFETY = 0.9
cdef double BETA = 0.04
cdef double EXPO = 0.2 - 0.75 * 0.04
cdef double FAC_MIN = 0.2
cdef double FAC_MAX = 10.0


cdef void _rhs(double* y, int n, double* mu, double* w2, double* gam,
               double* out) noexcept nogil:
    cdef int i, j, ax, base
    cdef double dx, dy, dz, r2, inv_r3, ci, cj
    base = 3 * n
    for i in range(base):
        out[i] = y[base + i]
    for i in range(n):
        for ax in range(3):
            out[base + 3 * i + ax] = (
                -w2[3 * i + ax] * y[3 * i + ax] - gam[i] * y[base + 3 * i + ax]
            )
    for i in range(n - 1):
        for j in range(i + 1, n):
            dx = y[3 * i] - y[3 * j]
            dy = y[3 * i + 1] - y[3 * j + 1]
            dz = y[3 * i + 2] - y[3 * j + 2]
            r2 = dx * dx + dy * dy + dz * dz
            inv_r3 = 1.0 / (r2 * sqrt(r2))
            ci = 0.5 / mu[i] * inv_r3
            cj = 0.5 / mu[j] * inv_r3
            out[base + 3 * i] += ci * dx
            out[base + 3 * i + 1] += ci * dy
            out[base + 3 * i + 2] += ci * dz
            out[base + 3 * j] -= cj * dx
            out[base + 3 * j + 1] -= cj * dy
            out[base + 3 * j + 2] -= cj * dz


cdef double _min_pair_distance(double* y, int n) noexcept nogil:
    cdef int i, j
    cdef double dx, dy, dz, r2, best = INFINITY
    for i in range(n - 1):
        for j in range(i + 1, n):
            dx = y[3 * i] - y[3 * j]
            dy = y[3 * i + 1] - y[3 * j + 1]
            dz = y[3 * i + 2] - y[3 * j + 2]
            r2 = dx * dx + dy * dy + dz * dz
            if r2 < best:
                best = r2
    return sqrt(best)


cdef double _energies(double* y, int n, double* mu, double* w2,
                      double* row) noexcept nogil:
    # fills row[1..7]: E_tot, hot per-axis, first-cold per-axis
    cdef int i, j, ax, base
    cdef double e_tot = 0.0, e_ax
    cdef double dx, dy, dz
    base = 3 * n
    for ax in range(3):
        row[2 + ax] = 0.0
        row[5 + ax] = 0.0
    for i in range(n):
        for ax in range(3):
            e_ax = mu[i] * (
                y[base + 3 * i + ax] * y[base + 3 * i + ax]
                + w2[3 * i + ax] * y[3 * i + ax] * y[3 * i + ax]
            )
            e_tot += e_ax
            if i == 0:
                row[2 + ax] = e_ax
            elif i == 1:
                row[5 + ax] = e_ax
    for i in range(n - 1):
        for j in range(i + 1, n):
            dx = y[3 * i] - y[3 * j]
            dy = y[3 * i + 1] - y[3 * j + 1]
            dz = y[3 * i + 2] - y[3 * j + 2]
            e_tot += 1.0 / sqrt(dx * dx + dy * dy + dz * dz)
    row[1] = e_tot
    return e_tot


def integrate_scaled(
    object y0_in,
    object mu_in,
    object w2_in,
    object gamma_in,
    double rtol,
    double atol,
    double t_end,
    double sample_dt,
    double e_ground,
    double crys_threshold,
    double crys_window,
    double escape_r2,
    double min_dist,
    int max_samples,
):
    """Compiled twin of `_kernel_py.integrate_scaled`; same contract."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y0 = np.ascontiguousarray(y0_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mu_a = np.ascontiguousarray(mu_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w2_a = np.ascontiguousarray(
        np.asarray(w2_in, dtype=np.float64).ravel()
    )
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gam_a = np.ascontiguousarray(gamma_in, dtype=np.float64)
    cdef int n = mu_a.shape[0]
    cdef int dim = 6 * n
    if y0.shape[0] != dim:
        raise ValueError("state length does not match ion count")
    if dim > MAXDIM:
        raise ValueError("too many ions for the compiled kernel")
    if max_samples % 2:
        max_samples += 1

    cdef cnp.ndarray[cnp.float64_t, ndim=2] samples_a = np.empty((max_samples, 9))
    cdef double[:, ::1] samples = samples_a
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y_a = y0.copy()
    cdef double* y = <double*> y_a.data
    cdef double* mu = <double*> mu_a.data
    cdef double* w2 = <double*> w2_a.data
    cdef double* gam = <double*> gam_a.data

    cdef double[MAXDIM] ytmp
    cdef double[MAXDIM] ynew
    cdef double[7][MAXDIM] ks
    cdef double[9] scratch_row
    # checks run on the fixed sample_dt grid; the record keeps every
    # record_stride-th check and decimates in place when the buffer fills,
    # so crystallization-window resolution never degrades on long runs
    cdef long record_stride = 1
    cdef long check_index = 0

    cdef bint crys_enabled = crys_threshold > 0.0 and isfinite(e_ground)
    cdef int n_rec = 0, n_accept = 0, n_reject = 0, n_eval = 0
    cdef int status = STATUS_TIMED_OUT
    cdef double t = 0.0, t_event = NAN
    cdef double facold = 1e-4
    cdef bint reject_prev = False
    cdef double below_since = -1.0
    cdef double h, h_try, boundary, err_norm, en, factor, h_cand
    cdef double acc, sc, e_sum, d0, d1, d2, dm, h0, h1
    cdef double dist_now, cur_min, e_now, rr
    cdef bint capped
    cdef int i, j, s, comp, half, keep

    _rhs(y, n, mu, w2, gam, &ks[0][0])
    n_eval = 1

    # initial step size, Hairer-style two-phase guess
    d0 = 0.0
    d1 = 0.0
    for comp in range(dim):
        sc = atol + rtol * fabs(y[comp])
        d0 += (y[comp] / sc) * (y[comp] / sc)
        d1 += (ks[0][comp] / sc) * (ks[0][comp] / sc)
    d0 = sqrt(d0 / dim)
    d1 = sqrt(d1 / dim)
    if d1 < 1e-10 or d0 < 1e-10:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = fmin(h0, t_end)
    for comp in range(dim):
        ytmp[comp] = y[comp] + h0 * ks[0][comp]
    _rhs(&ytmp[0], n, mu, w2, gam, &ks[1][0])
    n_eval += 1
    d2 = 0.0
    for comp in range(dim):
        sc = atol + rtol * fabs(y[comp])
        d2 += ((ks[1][comp] - ks[0][comp]) / sc) ** 2
    d2 = sqrt(d2 / dim) / h0
    dm = fmax(d1, d2)
    if dm <= 1e-15:
        h1 = fmax(1e-6, h0 * 1e-3)
    else:
        h1 = pow(0.01 / dm, 0.2)
    h = fmin(fmin(100.0 * h0, h1), t_end)

    if n > 1:
        dist_now = _min_pair_distance(y, n)
    else:
        dist_now = INFINITY
    cur_min = dist_now

    samples[0, 0] = 0.0
    e_now = _energies(y, n, mu, w2, &samples[0, 0])
    samples[0, 8] = cur_min
    if crys_enabled and e_now - e_ground < crys_threshold:
        below_since = 0.0
    n_rec = 1
    cdef double next_sample = sample_dt

    cdef double gap
    cdef bint at_boundary
    while t < t_end:
        boundary = fmin(next_sample, t_end)
        gap = boundary - t
        if gap <= 1e-12 * fmax(1.0, boundary):
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
            if h_try < 1e-13 * fmax(1.0, fabs(t)):
                status = STATUS_STEP_UNDERFLOW
                t_event = t
                break

            for s in range(1, 7):
                if s < 6:
                    for comp in range(dim):
                        acc = 0.0
                        for j in range(s):
                            acc += A_TAB[s][j] * ks[j][comp]
                        ytmp[comp] = y[comp] + h_try * acc
                    _rhs(&ytmp[0], n, mu, w2, gam, &ks[s][0])
                else:
                    for comp in range(dim):
                        acc = 0.0
                        for j in range(6):
                            acc += A_TAB[6][j] * ks[j][comp]
                        ynew[comp] = y[comp] + h_try * acc
                    _rhs(&ynew[0], n, mu, w2, gam, &ks[6][0])
            n_eval += 6

            err_norm = 0.0
            for comp in range(dim):
                acc = 0.0
                for j in range(7):
                    acc += E_TAB[j] * ks[j][comp]
                acc *= h_try
                sc = atol + rtol * fmax(fabs(y[comp]), fabs(ynew[comp]))
                err_norm += (acc / sc) * (acc / sc)
            err_norm = sqrt(err_norm / dim)

            if err_norm > 1.0:
                n_reject += 1
                reject_prev = True
                factor = fmax(FAC_MIN, SAFETY * pow(err_norm, -EXPO))
                h = h_try * factor
                continue

            t = boundary if capped else t + h_try
            at_boundary = capped
            for comp in range(dim):
                y[comp] = ynew[comp]
                ks[0][comp] = ks[6][comp]
            n_accept += 1

            en = fmax(err_norm, 1e-10)
            factor = SAFETY * pow(en, -EXPO) * pow(facold, BETA)
            factor = fmin(FAC_MAX, fmax(FAC_MIN, factor))
            if reject_prev:
                factor = fmin(1.0, factor)
            h_cand = h_try * factor
            h = fmax(h, h_cand) if capped else h_cand
            facold = fmax(err_norm, 1e-4)
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
            e_now = _energies(y, n, mu, w2, &scratch_row[0])
            if check_index % record_stride == 0:
                if n_rec == max_samples:
                    half = max_samples // 2
                    for j in range(1, half):
                        keep = 2 * j
                        rr = fmin(samples[keep - 1, 8], samples[keep, 8])
                        for i in range(9):
                            samples[j, i] = samples[keep, i]
                        samples[j, 8] = rr
                    n_rec = half
                    record_stride *= 2
                for i in range(9):
                    samples[n_rec, i] = scratch_row[i]
                samples[n_rec, 0] = t
                samples[n_rec, 8] = cur_min
                cur_min = dist_now
                n_rec += 1

            rr = 0.0
            for i in range(n):
                acc = (
                    y[3 * i] * y[3 * i]
                    + y[3 * i + 1] * y[3 * i + 1]
                    + y[3 * i + 2] * y[3 * i + 2]
                )
                if acc > rr:
                    rr = acc
            if rr > escape_r2:
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

    return (
        status,
        t_event,
        samples_a[:n_rec].copy(),
        y_a,
        t,
        n_accept,
        n_reject,
        n_eval,
    )
