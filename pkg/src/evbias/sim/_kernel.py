"""Compiled per-pixel DVS update loop."""

import math

import numpy as np
from numba import njit

from evbias.sim.scene import BAR, EDGE, GRATING, TEXTURE, UNIFORM


@njit(cache=True)
def tick_params(kinds, params, tables, shift, out):
    """Per-tick layer constants: wrapped table offset for gratings, integer
    offsets and fractions for textures, raw shift otherwise."""
    n_tab = tables.shape[1]
    for i in range(kinds.shape[0]):
        k = kinds[i]
        if k == GRATING:
            out[i, 0] = (-shift[i, 0] * n_tab) % n_tab
        elif k == TEXTURE:
            w = params[i, 1]
            h = params[i, 2]
            fx = math.floor(shift[i, 0])
            fy = math.floor(shift[i, 1])
            out[i, 0] = fx % w
            out[i, 1] = shift[i, 0] - fx
            out[i, 2] = fy % h
            out[i, 3] = shift[i, 1] - fy
        else:
            out[i, 0] = shift[i, 0]


@njit(cache=True, inline="always")
def _wrap(i, n):
    while i >= n:
        i -= n
    return i


@njit(cache=True, inline="always")
def _log_lum(x, y, pix, kinds, params, tp, gphase, tables, tex, log_b, log_floor):
    """Log luminance at one pixel; every layer contributes additively."""
    v = log_b
    n_tab = tables.shape[1]
    gi = 0
    for i in range(kinds.shape[0]):
        k = kinds[i]
        if k == UNIFORM:
            v += params[i, 0]
        elif k == GRATING:
            u = gphase[gi, pix] + tp[i, 0]
            if u >= n_tab:
                u -= n_tab
            j = int(u)
            f = u - j
            j1 = j + 1
            if j1 >= n_tab:
                j1 = 0
            ti = int(params[i, 0])
            v += tables[ti, j] + (tables[ti, j1] - tables[ti, j]) * f
            gi += 1
        elif k == EDGE:
            if x * params[i, 1] + y * params[i, 2] < tp[i, 0]:
                v += params[i, 0]
        elif k == BAR:
            if abs(x * params[i, 1] + y * params[i, 2] - tp[i, 0]) < params[i, 3]:
                v += params[i, 0]
        elif k == TEXTURE:
            ti = int(params[i, 0])
            w = int(params[i, 1])
            h = int(params[i, 2])
            i0 = _wrap(x + int(tp[i, 0]), w)
            i1 = _wrap(i0 + 1, w)
            j0 = _wrap(y + int(tp[i, 2]), h)
            fu = tp[i, 1]
            fv = tp[i, 3]
            a = tex[ti, j0, i0] + (tex[ti, j0, i1] - tex[ti, j0, i0]) * fu
            if fv != 0.0:
                j1 = _wrap(j0 + 1, h)
                b = tex[ti, j1, i0] + (tex[ti, j1, i1] - tex[ti, j1, i0]) * fu
                a += (b - a) * fv
            v += a
    if v < log_floor:
        v = log_floor
    return v


@njit(cache=True)
def log_luminance_frame(width, height, kinds, params, shift, gphase, tables, tex, log_b,
                        log_floor):
    out = np.empty((height, width))
    tp = np.zeros((kinds.shape[0], 4))
    tick_params(kinds, params, tables, shift, tp)
    pix = 0
    for y in range(height):
        for x in range(width):
            out[y, x] = _log_lum(x, y, pix, kinds, params, tp, gphase, tables, tex, log_b,
                                 log_floor)
            pix += 1
    return out


@njit(cache=True)
def fill_target(kinds, params, tp, gphase, tables, tex, log_b, log_floor, width, out):
    """Log luminance of every pixel for one tick, accumulated layer by layer."""
    n_pix = out.shape[0]
    height = n_pix // width
    n_tab = tables.shape[1]
    out[:] = log_b
    gi = 0
    for i in range(kinds.shape[0]):
        k = kinds[i]
        if k == UNIFORM:
            c = params[i, 0]
            for p in range(n_pix):
                out[p] += c
        elif k == GRATING:
            ti = int(params[i, 0])
            off = tp[i, 0]
            for p in range(n_pix):
                u = gphase[gi, p] + off
                if u >= n_tab:
                    u -= n_tab
                j = int(u)
                f = u - j
                j1 = j + 1
                if j1 >= n_tab:
                    j1 = 0
                out[p] += tables[ti, j] + (tables[ti, j1] - tables[ti, j]) * f
            gi += 1
        elif k == EDGE or k == BAR:
            pix = 0
            for y in range(height):
                for x in range(width):
                    s = x * params[i, 1] + y * params[i, 2] - tp[i, 0]
                    if (k == EDGE and s < 0) or (k == BAR and abs(s) < params[i, 3]):
                        out[pix] += params[i, 0]
                    pix += 1
        elif k == TEXTURE:
            ti = int(params[i, 0])
            w = int(params[i, 1])
            h = int(params[i, 2])
            fu = tp[i, 1]
            fv = tp[i, 3]
            x0 = int(tp[i, 0])
            for y in range(height):
                j0 = _wrap(y + int(tp[i, 2]), h)
                j1 = _wrap(j0 + 1, h)
                base = y * width
                if x0 + width + 1 <= w:
                    row = tex[ti, j0, x0:x0 + width + 1]
                    if fv == 0.0:
                        for x in range(width):
                            out[base + x] += row[x] + (row[x + 1] - row[x]) * fu
                    else:
                        row1 = tex[ti, j1, x0:x0 + width + 1]
                        for x in range(width):
                            a = row[x] + (row[x + 1] - row[x]) * fu
                            b = row1[x] + (row1[x + 1] - row1[x]) * fu
                            out[base + x] += a + (b - a) * fv
                else:
                    for x in range(width):
                        i0 = _wrap(x0 + x, w)
                        i1 = _wrap(i0 + 1, w)
                        a = tex[ti, j0, i0] + (tex[ti, j0, i1] - tex[ti, j0, i0]) * fu
                        if fv != 0.0:
                            b = tex[ti, j1, i0] + (tex[ti, j1, i1] - tex[ti, j1, i0]) * fu
                            a += (b - a) * fv
                        out[base + x] += a
    for p in range(n_pix):
        if out[p] < log_floor:
            out[p] = log_floor


@njit(cache=True)
def counting_argsort(keys, n_keys):
    """Stable argsort of integer keys in ``[0, n_keys)``."""
    counts = np.zeros(n_keys + 1, np.int64)
    for i in range(keys.shape[0]):
        counts[keys[i] + 1] += 1
    for k in range(n_keys):
        counts[k + 1] += counts[k]
    order = np.empty(keys.shape[0], np.int64)
    for i in range(keys.shape[0]):
        k = keys[i]
        order[counts[k]] = i
        counts[k] += 1
    return order


@njit(cache=True)
def run_ticks(tick_t, dt, alpha, log_b, shifts, kinds, params, gphase, tables, tex, log_floor,
              width, theta_on, theta_off, refr_len,
              v_lp, v_mem, refr_until,
              noise_t, noise_pix, noise_p, noise_pos,
              out_t, out_x, out_y, out_p):
    """Advance all pixels through ``tick_t`` until done or the output buffer is full.

    ``refr_len`` is the dead time of each pixel in microseconds.
    Returns ``(ticks_done, n_out, noise_pos)``. A tick is only started if the
    buffer can hold one event per pixel plus every noise event of that tick.
    """
    n_pix = v_lp.shape[0]
    cap = out_t.shape[0]
    n = 0
    n_noise = noise_t.shape[0]
    tp = np.zeros((kinds.shape[0], 4))
    target = np.empty(n_pix)
    for k in range(tick_t.shape[0]):
        t = tick_t[k]
        j = noise_pos
        while j < n_noise and noise_t[j] < t + dt:
            j += 1
        if n + n_pix + (j - noise_pos) > cap:
            return k, n, noise_pos
        a = alpha[k]
        tick_params(kinds, params, tables, shifts[k], tp)
        fill_target(kinds, params, tp, gphase, tables, tex, log_b[k], log_floor, width, target)
        for pix in range(n_pix):
            v = v_lp[pix] + a * (target[pix] - v_lp[pix])
            v_lp[pix] = v
            if t >= refr_until[pix]:
                d = v - v_mem[pix]
                if d >= theta_on or -d >= theta_off:
                    v_mem[pix] = v
                    refr_until[pix] = t + refr_len[pix]
                    y = pix // width
                    out_t[n] = t
                    out_x[n] = pix - y * width
                    out_y[n] = y
                    out_p[n] = 1 if d >= theta_on else -1
                    n += 1
        while noise_pos < j:
            pix = noise_pix[noise_pos]
            tn = noise_t[noise_pos]
            if tn >= refr_until[pix]:
                refr_until[pix] = tn + refr_len[pix]
                y = pix // width
                out_t[n] = tn
                out_x[n] = pix - y * width
                out_y[n] = y
                out_p[n] = noise_p[noise_pos]
                n += 1
            noise_pos += 1
    return tick_t.shape[0], n, noise_pos
