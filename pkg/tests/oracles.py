"""Brute-force reference implementations, written independently of the package."""
import math

import numpy as np

from evalign import EventStream, FlowField
from evalign.cmm import layer_norm
from evalign.events import normalize_timestamps
from evalign.motion import ecm_loss_grad
from evalign.ssm import selective_scan


def voxel_bruteforce(t_norm, xs, ys, ps, bins, height, width):
    grid = np.zeros((bins, height, width))
    for t, x, y, p in zip(t_norm, xs, ys, ps):
        for b in range(bins):
            grid[b, y, x] += p * max(0.0, 1.0 - abs(b - t * (bins - 1)))
    return grid


def splat_bruteforce(xw, yw, vals, height, width):
    img = np.zeros((height, width))
    for x, y, v in zip(xw, yw, vals):
        for r in range(height):
            ky = max(0.0, 1.0 - abs(r - y))
            if ky == 0.0:
                continue
            for c in range(width):
                img[r, c] += v * ky * max(0.0, 1.0 - abs(c - x))
    return img


def bilinear_bruteforce(control, height, width):
    """Align-corners bilinear upsampling evaluated point by point."""
    _, gh, gw = control.shape
    out = np.zeros((2, height, width))
    for r in range(height):
        py = r * (gh - 1) / (height - 1) if height > 1 and gh > 1 else 0.0
        for c in range(width):
            px = c * (gw - 1) / (width - 1) if width > 1 and gw > 1 else 0.0
            for i in range(gh):
                wy = max(0.0, 1.0 - abs(i - py))
                for j in range(gw):
                    wx = max(0.0, 1.0 - abs(j - px))
                    out[:, r, c] += wy * wx * control[:, i, j]
    return out


def central_difference(f, x, h=1e-4):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def transposed_conv_direct(x, weight, stride, padding, output_padding):
    c_in, h, w = x.shape
    _, c_out, k, _ = weight.shape
    oh = (h - 1) * stride - 2 * padding + k + output_padding
    ow = (w - 1) * stride - 2 * padding + k + output_padding
    out = np.zeros((c_out, oh, ow))
    for c in range(c_in):
        for i in range(h):
            for j in range(w):
                for o in range(c_out):
                    for a in range(k):
                        for b in range(k):
                            r = i * stride - padding + a
                            s = j * stride - padding + b
                            if 0 <= r < oh and 0 <= s < ow:
                                out[o, r, s] += x[c, i, j] * weight[c, o, a, b]
    return out


def ssm_convolution(a, b, c, d, delta, x):
    """Single-channel LTI SSM via its impulse response; a, b, c are (N,) arrays."""
    length = len(x)
    da = delta * a
    abar = np.exp(da)
    bbar = np.array([(math.expm1(v) / v if v != 0 else 1.0) for v in da]) * delta * b
    kernel = np.array([np.sum(c * abar**k * bbar) for k in range(length)])
    kernel[0] += d
    return np.array([sum(kernel[t - s] * x[s] for s in range(t + 1)) for t in range(length)])


def _interp_weights(n_out, n_in):
    pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1) if n_out > 1 else 0.0)
    return np.maximum(0.0, 1.0 - np.abs(pos[:, None] - np.arange(n_in)[None, :]))


def ecm_terms(xs, ys, t_norm, ps, control, height, width, lambda1, eps, eps_char):
    """Every additive term of the ECM objective as a flat vector.

    Splatting uses dense tent-kernel weights over all pixels, so nothing here
    shares code with the package's neighbor-based kernels.
    """
    ry = _interp_weights(height, control.shape[1])
    rx = _interp_weights(width, control.shape[2])
    xi = np.asarray(xs, dtype=np.int64)
    yi = np.asarray(ys, dtype=np.int64)
    u = (ry @ control[0] @ rx.T)[yi, xi]
    v = (ry @ control[1] @ rx.T)[yi, xi]
    xs = xi.astype(np.float64)
    ys = yi.astype(np.float64)
    rows = np.arange(height, dtype=np.float64)
    cols = np.arange(width, dtype=np.float64)
    terms = []
    for t_ref in (1.0, 0.0):
        xw = xs + (t_ref - t_norm) * u
        yw = ys + (t_ref - t_norm) * v
        ky = np.maximum(0.0, 1.0 - np.abs(rows[None, :] - yw[:, None]))
        kx = np.maximum(0.0, 1.0 - np.abs(cols[None, :] - xw[:, None]))
        for sign in (1, -1):
            m = ps == sign
            wts = ky[m][:, :, None] * kx[m][:, None, :]
            num = np.einsum("k,kij->ij", t_norm[m], wts)
            den = wts.sum(axis=0)
            terms.append(((num / (den + eps)) ** 2).ravel())
    for axis in (1, 2):
        d = np.diff(control, axis=axis)
        terms.append(lambda1 * np.sqrt(d * d + eps_char**2).ravel())
    return np.concatenate(terms)


def termwise_central_difference(terms, x, h=1e-4):
    """Central difference of ``sum(terms(x))``, differenced term by term."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = terms(x)
        flat[i] = orig - h
        fm = terms(x)
        flat[i] = orig
        gf[i] = np.sum(fp - fm) / (2 * h)
    return g


def fd_instance(seed, n=40, size=16, grid=4, margin=0.01, min_gap=0.05):
    """Random small problem away from the kinks of the objective.

    The objective is piecewise smooth: it bends where a warped coordinate
    crosses an integer (tent kernel) and where neighboring control values
    coincide (Charbonnier at a scale of 1e-3). Instances whose FD stencil
    would straddle either kink are redrawn.
    """
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        t = np.sort(rng.integers(0, 10_000, n))
        t[0], t[-1] = 0, 10_000
        s = EventStream(t, rng.integers(0, size, n), rng.integers(0, size, n), rng.choice([-1, 1], n), size, size)
        f = FlowField(rng.normal(0, 2, (2, grid, grid)), size, size)
        t = normalize_timestamps(s)
        d = f.dense()
        ok = min(np.abs(np.diff(f.control, axis=a)).min() for a in (1, 2)) >= min_gap
        for t_ref in (0.0, 1.0):
            dt = t_ref - t
            moving = dt != 0
            for c, base in ((0, s.x), (1, s.y)):
                w = (base + dt * d[c][s.y, s.x])[moving]
                if w.size and np.abs(w - np.rint(w)).min() < margin:
                    ok = False
        if ok:
            return s, f
    raise RuntimeError("no valid instance")


def fd_relative_error(stream, flow, h=1e-4):
    """Worst elementwise relative error and the number of elements compared."""
    analytic = ecm_loss_grad(stream, flow)
    t = normalize_timestamps(stream)
    terms = lambda c: ecm_terms(stream.x, stream.y, t, stream.p, c, stream.height, stream.width, 1.0, 1e-9, 1e-3)
    numeric = termwise_central_difference(terms, flow.control, h)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    m = scale > 1e-6
    return float((np.abs(analytic - numeric)[m] / scale[m]).max()), int(m.sum())


def cmm_reference(f_e, f_r, p):
    """Straight-line evaluation of the fusion chain, one step per line."""
    c, h, w = f_e.shape
    z_e = f_e * p.scale_e[:, None, None] + p.offset_e[:, None, None]
    z_r = f_r * p.scale_r[:, None, None] + p.offset_r[:, None, None]
    z_f = np.empty((c, h, 2 * w))
    for j in range(w):
        z_f[:, :, 2 * j] = z_e[:, :, j]
        z_f[:, :, 2 * j + 1] = z_r[:, :, j]
    seq = np.stack([z_f[ch].reshape(-1) for ch in range(c)], axis=1)
    weight_map = selective_scan(p.ssm, seq).T.reshape(c, h, 2 * w)
    gated = weight_map * z_f
    mixed = np.einsum("oc,chw->ohw", p.lin_weight, gated) + p.lin_bias[:, None, None]
    enhanced = layer_norm(mixed, p.ln_gamma, p.ln_beta, p.ln_eps)
    ze = enhanced[:, :, [2 * j for j in range(w)]]
    zr = enhanced[:, :, [2 * j + 1 for j in range(w)]]
    return (f_e + ze) + (f_r + zr)
