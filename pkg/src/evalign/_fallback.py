"""Pure-numpy versions of the hot kernels.

Each function mirrors the one in ``_core.pyx`` argument for argument and
accumulates in the same per-event order, so the voxel and splat kernels agree
bitwise with the compiled backend.
"""
import numpy as np


def voxel_deposit(tb, x, y, p, nbins, height, width):
    tb = np.asarray(tb, dtype=np.float64)
    n = tb.shape[0]
    grid = np.zeros(nbins * height * width, dtype=np.float64)
    if n == 0:
        return grid.reshape(nbins, height, width)
    b0 = np.floor(tb)
    w1 = tb - b0
    w0 = 1.0 - w1
    b0 = b0.astype(np.int64)
    pix = np.asarray(y, dtype=np.int64) * width + np.asarray(x, dtype=np.int64)
    p = np.asarray(p, dtype=np.float64)

    bins = np.stack([b0, b0 + 1], axis=1)
    vals = np.stack([p * w0, p * w1], axis=1)
    ok = (bins >= 0) & (bins < nbins)
    idx = bins * (height * width) + pix[:, None]
    grid += np.bincount(idx[ok], weights=vals[ok], minlength=grid.size)
    return grid.reshape(nbins, height, width)


def _neighbours(xw, yw, height, width):
    x0 = np.floor(xw)
    y0 = np.floor(yw)
    fx = xw - x0
    fy = yw - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    nx = np.stack([x0, x0 + 1, x0, x0 + 1], axis=1)
    ny = np.stack([y0, y0, y0 + 1, y0 + 1], axis=1)
    ok = (nx >= 0) & (nx < width) & (ny >= 0) & (ny < height)
    flat = np.where(ok, ny * width + nx, 0)
    return fx, fy, ok, flat


def splat(xw, yw, vals, height, width):
    xw = np.asarray(xw, dtype=np.float64)
    yw = np.asarray(yw, dtype=np.float64)
    vals = np.asarray(vals, dtype=np.float64)
    if xw.shape[0] == 0:
        return np.zeros((height, width), dtype=np.float64)
    fx, fy, ok, flat = _neighbours(xw, yw, height, width)
    gx = 1.0 - fx
    gy = 1.0 - fy
    w = np.stack([gx * gy, fx * gy, gx * fy, fx * fy], axis=1)
    contrib = vals[:, None] * w
    img = np.bincount(flat[ok], weights=contrib[ok], minlength=height * width)
    return img.reshape(height, width)


def splat_grad(xw, yw, coef, ga, gb):
    """Pull per-pixel sensitivities back to warped event positions.

    For an objective whose per-pixel inputs are ``num = splat(coef)`` and
    ``den = splat(1)``, with ``ga = dL/dnum`` and ``gb = dL/dden``, returns
    ``dL/dxw`` and ``dL/dyw`` per event.
    """
    xw = np.asarray(xw, dtype=np.float64)
    yw = np.asarray(yw, dtype=np.float64)
    coef = np.asarray(coef, dtype=np.float64)
    height, width = ga.shape
    if xw.shape[0] == 0:
        return np.zeros(0), np.zeros(0)
    fx, fy, ok, flat = _neighbours(xw, yw, height, width)
    s = ga.ravel()[flat] * coef[:, None] + gb.ravel()[flat]
    s = np.where(ok, s, 0.0)
    gx = 1.0 - fx
    gy = 1.0 - fy
    dx = 0.0 - gy * s[:, 0]
    dx = dx + gy * s[:, 1]
    dx = dx - fy * s[:, 2]
    dx = dx + fy * s[:, 3]
    dy = 0.0 - gx * s[:, 0]
    dy = dy - fx * s[:, 1]
    dy = dy + gx * s[:, 2]
    dy = dy + fx * s[:, 3]
    return dx, dy


def scan_diag(abar, bx, cmat, h0):
    """Diagonal linear recurrence ``h_t = abar_t*h_{t-1} + bx_t``, ``y_t = sum_n c*h_t``.

    abar, bx: (L, channels, N); cmat, h0: (channels, N).
    """
    length = abar.shape[0]
    h = np.array(h0, dtype=np.float64, copy=True)
    y = np.empty((length, h.shape[0]), dtype=np.float64)
    for t in range(length):
        h = abar[t] * h + bx[t]
        acc = np.zeros(h.shape[0])
        for n in range(h.shape[1]):
            acc = acc + cmat[:, n] * h[:, n]
        y[t] = acc
    return y, h
