"""Zero-order-hold discretization and the diagonal selective scan."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import NonPositiveDelta, ShapeMismatch, ValidationError

SERIES_THRESHOLD = 1e-6


def discretize(a, b, delta):
    """ZOH discretization of a diagonal system, elementwise.

    Returns ``(abar, bbar)`` with ``abar = exp(delta*a)`` and
    ``bbar = (exp(delta*a) - 1) / (delta*a) * delta*b``. For
    ``|delta*a| < 1e-6`` the three-term series of the second factor is used.
    Inputs broadcast against each other.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(~(delta > 0)):
        raise NonPositiveDelta("delta must be strictly positive")
    da = delta * a
    abar = np.exp(da)
    small = np.abs(da) < SERIES_THRESHOLD
    safe = np.where(small, 1.0, da)
    factor = np.where(small, 1.0 + da / 2.0 + da * da / 6.0, np.expm1(safe) / safe)
    return abar, factor * (delta * b)


@dataclass(frozen=True, eq=False)
class SSMParams:
    """Diagonal SSM shared by ``channels`` independent lanes.

    a: (N,) or (channels, N) continuous-time diagonal; b, c: (channels, N);
    d: (channels,); delta: scalar, or (L,) for per-position timescales.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    delta: object = 1.0

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.b, dtype=np.float64))
        c = np.atleast_2d(np.asarray(self.c, dtype=np.float64))
        a = np.asarray(self.a, dtype=np.float64)
        d = np.atleast_1d(np.asarray(self.d, dtype=np.float64))
        delta = np.asarray(self.delta, dtype=np.float64)
        if b.shape != c.shape:
            raise ShapeMismatch(f"b {b.shape} and c {c.shape} must match")
        channels, n = b.shape
        if a.shape not in ((n,), (channels, n)):
            raise ShapeMismatch(f"a must be ({n},) or ({channels}, {n}), got {a.shape}")
        if d.shape != (channels,):
            raise ShapeMismatch(f"d must be ({channels},), got {d.shape}")
        if delta.ndim > 1:
            raise ShapeMismatch("delta must be a scalar or one value per position")
        if np.any(~(delta > 0)):
            raise NonPositiveDelta("delta must be strictly positive")
        for name, arr in (("a", a), ("b", b), ("c", c), ("d", d), ("delta", delta)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} must be finite")
        object.__setattr__(self, "a", np.broadcast_to(a, (channels, n)).copy())
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "delta", delta)

    @property
    def channels(self):
        return self.b.shape[0]

    @property
    def state_size(self):
        return self.b.shape[1]

    def check_stable(self):
        if np.any(self.a > 0):
            raise ValidationError("state matrix has positive entries")
        return self

    def with_delta(self, delta):
        return SSMParams(self.a, self.b, self.c, self.d, delta)


def zero_state(params):
    return np.zeros((params.channels, params.state_size))


def selective_scan(params, x, h0=None, return_state=False):
    """Run ``h_t = abar_t*h_{t-1} + bbar_t*x_t``, ``y_t = c.h_t + d*x_t`` per channel.

    ``x`` is (L, channels). ``h0`` (channels, N) carries state in from a
    previous chunk; with ``return_state`` the final state is returned too, so
    scanning chunks in order reproduces a one-shot scan exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1 and params.channels == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != params.channels:
        raise ShapeMismatch(f"x must be (L, {params.channels}), got {x.shape}")
    length = x.shape[0]
    delta = params.delta
    if delta.ndim == 1 and delta.shape[0] != length:
        raise ShapeMismatch(f"delta has {delta.shape[0]} positions, x has {length}")
    h = zero_state(params) if h0 is None else np.asarray(h0, dtype=np.float64)
    if h.shape != (params.channels, params.state_size):
        raise ShapeMismatch(f"state must be {(params.channels, params.state_size)}, got {h.shape}")

    dt = np.broadcast_to(delta.reshape(-1, 1, 1), (length, 1, 1)) if delta.ndim else delta
    abar, bbar = discretize(params.a[None], params.b[None], dt)
    abar = np.broadcast_to(abar, (length,) + params.a.shape)
    bx = bbar * x[:, :, None]
    y, h = kernels.scan_diag(abar, bx, params.c, h)
    y = y + params.d * x
    return (y, h) if return_state else y


def scan_chunked(params, x, chunk):
    """Scan ``x`` in pieces of ``chunk`` positions, carrying the state across."""
    if chunk < 1:
        raise ValidationError("chunk must be at least 1")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    h = zero_state(params)
    out = []
    for start in range(0, x.shape[0], chunk):
        piece = params
        if params.delta.ndim:
            piece = params.with_delta(params.delta[start:start + chunk])
        y, h = selective_scan(piece, x[start:start + chunk], h, return_state=True)
        out.append(y)
    return np.concatenate(out) if out else np.zeros((0, params.channels))
