"""Compiled inner loops: force evaluation, Langevin substeps, detection and the LQG update.

Array layouts
-------------
pot : [alpha, beta, delta0, delta1, w00x, w00y, w01x, w01y, z00, z01]
rec row : see ``RECORD_COLUMNS`` in dynamics.py (apex column filled in Python)
"""

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_LOST = 1


@njit(cache=True)
def force(x, y, z, pot, d0, d1, out):
    a = pot[0]
    b8 = 0.125 * pot[1]
    w00x, w00y, w01x, w01y, zr0, zr1 = pot[4], pot[5], pot[6], pot[7], pot[8], pot[9]
    L0 = zr0 * zr0 / (z * z + zr0 * zr0)
    L1 = zr1 * zr1 / (z * z + zr1 * zr1)
    dL0 = -2.0 * z * L0 * L0 / (zr0 * zr0)
    dL1 = -2.0 * z * L1 * L1 / (zr1 * zr1)
    sx0 = x - d0
    sx1 = x - d1
    E0 = y * y / (w00y * w00y) + sx0 * sx0 / (w00x * w00x)
    X1 = sx1 * sx1 / (w01x * w01x)
    E1 = y * y / (w01y * w01y) + X1
    e0 = np.exp(-2.0 * L0 * E0)
    fx = a * (-4.0 * L0 * L0 * e0 * sx0 / (w00x * w00x))
    fy = a * (-4.0 * L0 * L0 * e0 * y / (w00y * w00y))
    fz = a * (dL0 * e0 * (1.0 - 2.0 * L0 * E0))
    if b8 != 0.0:
        e1 = np.exp(-2.0 * L1 * E1)
        fx += b8 * (16.0 * L1 * L1 * e1 * sx1 / (w01x * w01x) * (1.0 - 2.0 * L1 * X1))
        fy += b8 * (-32.0 * L1 * L1 * L1 * X1 * e1 * y / (w01y * w01y))
        fz += b8 * (16.0 * X1 * e1 * L1 * dL1 * (1.0 - L1 * E1))
    out[0] = -fx
    out[1] = -fy
    out[2] = -fz


@njit(cache=True)
def _accel(q, v, pot, d0, d1, inv_m, gamma, fu, out, fbuf):
    force(q[0], q[1], q[2], pot, d0, d1, fbuf)
    for i in range(3):
        out[i] = (fbuf[i] - gamma * v[i] + fu[i]) * inv_m


@njit(cache=True)
def substep(q, v, pot, d0, d1, inv_m, gamma, fu, dt, kick, scratch):
    """One RK4 step of the deterministic flow followed by the thermal velocity kick.

    ``fu`` is the electrode force (held over the step), ``kick`` the velocity
    increment of the stochastic force.  ``scratch`` is a (12, 3) work array.
    """
    k1v = scratch[0]
    k2v = scratch[1]
    k3v = scratch[2]
    k4v = scratch[3]
    qt = scratch[4]
    vt = scratch[5]
    fbuf = scratch[6]
    k1q = scratch[7]
    k2q = scratch[8]
    k3q = scratch[9]
    k4q = scratch[10]
    h = 0.5 * dt
    for i in range(3):
        k1q[i] = v[i]
    _accel(q, v, pot, d0, d1, inv_m, gamma, fu, k1v, fbuf)
    for i in range(3):
        qt[i] = q[i] + h * k1q[i]
        vt[i] = v[i] + h * k1v[i]
        k2q[i] = vt[i]
    _accel(qt, vt, pot, d0, d1, inv_m, gamma, fu, k2v, fbuf)
    for i in range(3):
        qt[i] = q[i] + h * k2q[i]
        vt[i] = v[i] + h * k2v[i]
        k3q[i] = vt[i]
    _accel(qt, vt, pot, d0, d1, inv_m, gamma, fu, k3v, fbuf)
    for i in range(3):
        qt[i] = q[i] + dt * k3q[i]
        vt[i] = v[i] + dt * k3v[i]
        k4q[i] = vt[i]
    _accel(qt, vt, pot, d0, d1, inv_m, gamma, fu, k4v, fbuf)
    s = dt / 6.0
    for i in range(3):
        q[i] += s * (k1q[i] + 2.0 * k2q[i] + 2.0 * k3q[i] + k4q[i])
        v[i] += s * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]) + kick[i]


@njit(cache=True)
def detect(q, C, x_nl, dchi, noise, out):
    g = 1.0
    if x_nl > 0.0:
        r = q[0] / x_nl
        r2 = r * r
        g = np.exp(-r2 * r2)
    out[0] = g * (C[0, 0] * q[0] + C[0, 1] * q[1] + C[0, 2] * q[2]) + dchi + noise[0]
    out[1] = C[1, 0] * q[0] + C[1, 1] * q[1] + C[1, 2] * q[2] + noise[1]


@njit(cache=True)
def lqg_update(Ad, Bd, L, C, kaug, apex_idx, apex_max, xhat, buf, head, u_applied, y, predict, work):
    """One controller sample: predict, correct, project, feedback, delay.

    ``buf`` holds the ``d`` pending commands; ``head[0]`` points at the oldest.
    ``u_applied[0]`` is the command that acted on the plant over the last
    interval and is replaced by the one acting over the next.
    Returns 1 if the measurement was non-finite (update skipped, input held).
    """
    n = xhat.shape[0]
    p = y.shape[0]
    for j in range(p):
        if not np.isfinite(y[j]):
            return 1
    xp = work[0]
    xe = work[1]
    for i in range(n):
        acc = Bd[i] * u_applied[0]
        for j in range(n):
            acc += Ad[i, j] * xhat[j]
        xp[i] = acc
    for i in range(n):
        xhat[i] = xp[i]
    for r in range(p):
        innov = y[r]
        for j in range(n):
            innov -= C[r, j] * xp[j]
        for i in range(n):
            xhat[i] += L[i, r] * innov
    if apex_idx >= 0:
        if xhat[apex_idx] > apex_max:
            xhat[apex_idx] = apex_max
        elif xhat[apex_idx] < -apex_max:
            xhat[apex_idx] = -apex_max
    for i in range(n):
        xe[i] = xhat[i]
    d = buf.shape[0]
    if predict and d > 0:
        xt = work[2]
        for s in range(d):
            uk = buf[(head[0] + s) % d]
            for i in range(n):
                acc = Bd[i] * uk
                for j in range(n):
                    acc += Ad[i, j] * xe[j]
                xt[i] = acc
            for i in range(n):
                xe[i] = xt[i]
    u_new = 0.0
    for i in range(n):
        u_new += kaug[i] * xe[i]
    if d == 0:
        u_applied[0] = u_new
    else:
        u_applied[0] = buf[head[0]]
        buf[head[0]] = u_new
        head[0] = (head[0] + 1) % d
    return 0


@njit(cache=True)
def run_block(
    q, v, pot, d0a, d1a, dchia, inv_m, gamma, cf, dt, nsub, thermal, kick_scale, meas,
    C, x_nl, has_ctrl, Ad, Bd, L, Cm, kaug, apex_idx, apex_max, xhat, buf, head, u_applied,
    ysel, predict, uext, decim, counter, rec, rec_pos, escape, faults, est_map,
):
    """Advance ``len(d0a)`` controller samples.

    ``uext`` is an open-loop voltage added to the controller output (bias, drive tones).

    Returns (samples done, record rows written, status).
    """
    n = d0a.shape[0]
    scratch = np.zeros((12, 3))
    fu = np.zeros(3)
    kick = np.zeros(3)
    chi = np.zeros(2)
    noise = np.zeros(2)
    y = np.zeros(ysel.shape[0])
    work = np.zeros((3, xhat.shape[0]))
    rows = 0
    for k in range(n):
        u = u_applied[0] + uext[k]
        for i in range(3):
            fu[i] = cf[i] * u
        d0 = d0a[k]
        d1 = d1a[k]
        for s in range(nsub):
            for i in range(3):
                kick[i] = kick_scale[i] * thermal[k, s, i]
            substep(q, v, pot, d0, d1, inv_m, gamma, fu, dt, kick, scratch)
        if not (np.isfinite(q[0]) and np.isfinite(q[1]) and np.isfinite(q[2])) or abs(q[0]) > escape:
            return k, rows, STATUS_LOST
        noise[0] = meas[k, 0]
        noise[1] = meas[k, 1]
        detect(q, C, x_nl, dchia[k], noise, chi)
        u_before = u_applied[0]
        if has_ctrl:
            for j in range(ysel.shape[0]):
                y[j] = chi[ysel[j]]
            faults[0] += lqg_update(Ad, Bd, L, Cm, kaug, apex_idx, apex_max, xhat, buf, head, u_applied, y, predict, work)
        counter[0] += 1
        if counter[0] % decim == 0:
            r = rec_pos + rows
            rec[r, 0] = counter[0] * dt * nsub
            for i in range(3):
                rec[r, 1 + i] = q[i]
                rec[r, 4 + i] = v[i]
            rec[r, 7] = chi[0]
            rec[r, 8] = chi[1]
            # command acting on the plant over the interval that ends at this sample
            rec[r, 9] = u_before + uext[k]
            for i in range(5):
                j = est_map[i]
                rec[r, 10 + i] = xhat[j] if j >= 0 else np.nan
            rec[r, 15] = d0
            rec[r, 16] = d1
            rec[r, 17] = dchia[k]
            rows += 1
    return n, rows, STATUS_OK
