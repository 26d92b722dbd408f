"""Numba-jitted hot kernels: stride-1 grouped 2-D convolution (forward and
both gradients) and the selective state-space scan (forward and backward).

Signatures match kernels_numpy exactly; dtype specialization is left to
numba's lazy compilation so the float64 shadow path used by the gradient
checker compiles its own variants. fastmath stays off: run-to-run
determinism matters more here than the last few percent of speed.
"""

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def _conv2d_fwd(x, kern, padding, groups, out):
    b, c, h, w = x.shape
    cout, cin_g, k, _ = kern.shape
    ho, wo = out.shape[2], out.shape[3]
    og = cout // groups
    for bi in range(b):
        for co in range(cout):
            g = co // og
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cin_g):
                        cc = g * cin_g + ci
                        for ki in range(k):
                            yy = i + ki - padding
                            if yy < 0 or yy >= h:
                                continue
                            for kj in range(k):
                                xx = j + kj - padding
                                if 0 <= xx < w:
                                    acc += x[bi, cc, yy, xx] * kern[co, ci, ki, kj]
                    out[bi, co, i, j] = acc


def conv2d_fwd(x, kern, padding, groups):
    b, c, h, w = x.shape
    cout, cin_g, k, _ = kern.shape
    out = np.empty((b, cout, h + 2 * padding - k + 1, w + 2 * padding - k + 1), dtype=x.dtype)
    _conv2d_fwd(x, kern, padding, groups, out)
    return out


@njit(cache=True)
def _conv2d_bwd_x(gy, kern, padding, groups, dx):
    b, cout, ho, wo = gy.shape
    _, cin_g, k, _ = kern.shape
    h, w = dx.shape[2], dx.shape[3]
    og = cout // groups
    for bi in range(b):
        for cc in range(dx.shape[1]):
            g = cc // cin_g
            ci = cc - g * cin_g
            for yy in range(h):
                for xx in range(w):
                    acc = 0.0
                    for co in range(g * og, (g + 1) * og):
                        for ki in range(k):
                            i = yy + padding - ki
                            if i < 0 or i >= ho:
                                continue
                            for kj in range(k):
                                j = xx + padding - kj
                                if 0 <= j < wo:
                                    acc += gy[bi, co, i, j] * kern[co, ci, ki, kj]
                    dx[bi, cc, yy, xx] = acc


def conv2d_bwd_x(gy, kern, padding, groups, h, w):
    b = gy.shape[0]
    cout, cin_g, k, _ = kern.shape
    dx = np.empty((b, cin_g * groups, h, w), dtype=gy.dtype)
    _conv2d_bwd_x(gy, kern, padding, groups, dx)
    return dx


@njit(cache=True)
def _conv2d_bwd_k(gy, x, padding, groups, dk):
    b, cout, ho, wo = gy.shape
    _, cin_g, k, _ = dk.shape
    h, w = x.shape[2], x.shape[3]
    og = cout // groups
    for co in range(cout):
        g = co // og
        for ci in range(cin_g):
            cc = g * cin_g + ci
            for ki in range(k):
                for kj in range(k):
                    acc = 0.0
                    for bi in range(b):
                        for i in range(ho):
                            yy = i + ki - padding
                            if yy < 0 or yy >= h:
                                continue
                            for j in range(wo):
                                xx = j + kj - padding
                                if 0 <= xx < w:
                                    acc += gy[bi, co, i, j] * x[bi, cc, yy, xx]
                    dk[co, ci, ki, kj] = acc


def conv2d_bwd_k(gy, x, padding, groups, cout, cin_g, k):
    dk = np.empty((cout, cin_g, k, k), dtype=x.dtype)
    _conv2d_bwd_k(gy, x, padding, groups, dk)
    return dk


@njit(cache=True)
def _scan_fwd(x, dt, bp, cp, a, y, h):
    bsz, length, c = x.shape
    n = a.shape[1]
    for bi in range(bsz):
        for l in range(length):
            for ci in range(c):
                acc = 0.0
                dtv = dt[bi, l, ci]
                xv = x[bi, l, ci]
                for ni in range(n):
                    abar = np.exp(dtv * a[ci, ni])
                    hprev = h[bi, l - 1, ci, ni] if l > 0 else 0.0
                    hv = abar * hprev + dtv * bp[bi, l, ni] * xv
                    h[bi, l, ci, ni] = hv
                    acc += cp[bi, l, ni] * hv
                y[bi, l, ci] = acc


def scan_fwd(x, dt, bp, cp, a):
    bsz, length, c = x.shape
    n = a.shape[1]
    y = np.empty((bsz, length, c), dtype=x.dtype)
    h = np.empty((bsz, length, c, n), dtype=x.dtype)
    _scan_fwd(x, dt, bp, cp, a, y, h)
    return y, h


@njit(cache=True)
def _scan_bwd(gy, x, dt, bp, cp, a, h, dx, ddt, dbp, dcp, da, dh):
    bsz, length, c = x.shape
    n = a.shape[1]
    for bi in range(bsz):
        dh[:, :] = 0.0
        for l in range(length - 1, -1, -1):
            for ci in range(c):
                dtv = dt[bi, l, ci]
                xv = x[bi, l, ci]
                gyv = gy[bi, l, ci]
                ddt_acc = 0.0
                dx_acc = 0.0
                for ni in range(n):
                    dhv = dh[ci, ni] + gyv * cp[bi, l, ni]
                    dcp[bi, l, ni] += gyv * h[bi, l, ci, ni]
                    abar = np.exp(dtv * a[ci, ni])
                    hprev = h[bi, l - 1, ci, ni] if l > 0 else 0.0
                    dabar = dhv * hprev
                    ddt_acc += dabar * abar * a[ci, ni] + dhv * bp[bi, l, ni] * xv
                    da[ci, ni] += dabar * abar * dtv
                    dbp[bi, l, ni] += dhv * dtv * xv
                    dx_acc += dhv * bp[bi, l, ni]
                    dh[ci, ni] = dhv * abar
                ddt[bi, l, ci] = ddt_acc
                dx[bi, l, ci] = dx_acc * dtv


def scan_bwd(gy, x, dt, bp, cp, a, h):
    dx = np.zeros_like(x)
    ddt = np.zeros_like(dt)
    dbp = np.zeros_like(bp)
    dcp = np.zeros_like(cp)
    da = np.zeros_like(a)
    dh = np.zeros((x.shape[2], a.shape[1]), dtype=x.dtype)
    _scan_bwd(gy, x, dt, bp, cp, a, h, dx, ddt, dbp, dcp, da, dh)
    return dx, ddt, dbp, dcp, da
