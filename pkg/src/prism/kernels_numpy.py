"""Pure-numpy implementations of the hot kernels (2-D convolution and the
selective state-space scan), used as the fallback backend when numba is
disabled or unavailable.

All convolutions are stride-1 cross-correlations with zero padding. The scan
is the sequential recurrence; only the step loop is Python, everything inside
a step is vectorized over batch/channel/state.
"""

import numpy as np

NAME = "numpy"


def _windows(xp, k):
    # [B, C, Ho, Wo, k, k] view over the zero-padded input
    return np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))


def conv2d_fwd(x, kern, padding, groups):
    b, c, h, w = x.shape
    cout, cin_g, k, _ = kern.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _windows(xp, k)
    og = cout // groups
    out = np.empty((b, cout, h + 2 * padding - k + 1, w + 2 * padding - k + 1), dtype=x.dtype)
    for g in range(groups):
        wg = win[:, g * cin_g:(g + 1) * cin_g]
        kg = kern[g * og:(g + 1) * og]
        out[:, g * og:(g + 1) * og] = np.einsum("bchwij,ocij->bohw", wg, kg, optimize=True)
    return out


def conv2d_bwd_x(gy, kern, padding, groups, h, w):
    # gradient w.r.t. the input: full correlation with the spatially flipped,
    # in/out-transposed kernel, pad = k - 1 - padding
    cout, cin_g, k, _ = kern.shape
    og = cout // groups
    kf = kern[:, :, ::-1, ::-1]
    parts = []
    for g in range(groups):
        kt = np.ascontiguousarray(kf[g * og:(g + 1) * og].transpose(1, 0, 2, 3))
        parts.append(conv2d_fwd(gy[:, g * og:(g + 1) * og], kt, k - 1 - padding, 1))
    return np.concatenate(parts, axis=1)


def conv2d_bwd_k(gy, x, padding, groups, cout, cin_g, k):
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _windows(xp, k)
    og = cout // groups
    dk = np.empty((cout, cin_g, k, k), dtype=x.dtype)
    for g in range(groups):
        wg = win[:, g * cin_g:(g + 1) * cin_g]
        gg = gy[:, g * og:(g + 1) * og]
        dk[g * og:(g + 1) * og] = np.einsum("bchwij,bohw->ocij", wg, gg, optimize=True)
    return dk


def scan_fwd(x, dt, bp, cp, a):
    """Recurrence h_l = exp(dt*a) * h_{l-1} + dt * b_l * x_l, y_l = <c_l, h_l>.

    x, dt: [B, L, C]; bp, cp: [B, L, N]; a: [C, N].
    Returns y [B, L, C] and the hidden states h [B, L, C, N] for backward.
    """
    bsz, length, c = x.shape
    n = a.shape[1]
    h = np.empty((bsz, length, c, n), dtype=x.dtype)
    y = np.empty((bsz, length, c), dtype=x.dtype)
    hcur = np.zeros((bsz, c, n), dtype=x.dtype)
    for l in range(length):
        abar = np.exp(dt[:, l, :, None] * a[None])
        hcur = abar * hcur + (dt[:, l] * x[:, l])[:, :, None] * bp[:, l, None, :]
        h[:, l] = hcur
        y[:, l] = np.einsum("bcn,bn->bc", hcur, cp[:, l])
    return y, h


def scan_bwd(gy, x, dt, bp, cp, a, h):
    bsz, length, c = x.shape
    n = a.shape[1]
    dx = np.zeros_like(x)
    ddt = np.zeros_like(dt)
    dbp = np.zeros_like(bp)
    dcp = np.zeros_like(cp)
    da = np.zeros_like(a)
    dh = np.zeros((bsz, c, n), dtype=x.dtype)
    for l in range(length - 1, -1, -1):
        dh = dh + gy[:, l, :, None] * cp[:, l, None, :]
        dcp[:, l] = np.einsum("bc,bcn->bn", gy[:, l], h[:, l])
        abar = np.exp(dt[:, l, :, None] * a[None])
        hprev = h[:, l - 1] if l > 0 else np.zeros_like(dh)
        dabar = dh * hprev
        ddt[:, l] = np.einsum("bcn,cn->bc", dabar * abar, a) \
            + np.einsum("bcn,bn->bc", dh, bp[:, l]) * x[:, l]
        da += np.einsum("bcn,bc->cn", dabar * abar, dt[:, l])
        dbp[:, l] = np.einsum("bcn,bc->bn", dh, dt[:, l] * x[:, l])
        dx[:, l] = np.einsum("bcn,bn->bc", dh, bp[:, l]) * dt[:, l]
        dh = dh * abar
    return dx, ddt, dbp, dcp, da
