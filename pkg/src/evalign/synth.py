"""Synthetic event streams from the log-intensity threshold model.

A pattern is rendered with exact box-filter antialiasing at fine time steps;
each pixel fires an event whenever its log intensity moves a full contrast
threshold away from the level at its previous event. Crossing times are
interpolated linearly inside a step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpec
from .events import EventStream
from .motion import FlowField

PATTERNS = ("translating-bar", "translating-checker", "two-object")
ALIASES = {"bar": "translating-bar", "checker": "translating-checker", "two": "two-object"}
LUMA_DARK = 0.1
LUMA_BRIGHT = 1.0
STEPS = 1000


@dataclass(frozen=True)
class SceneSpec:
    """Scene description. ``flow_gt`` is in pixels per window.

    For ``two-object`` it is a pair of (u, v) tuples, one per object.
    """

    width: int = 64
    height: int = 64
    pattern: str = "translating-bar"
    flow_gt: tuple = (8.0, 0.0)
    contrast_threshold: float = 0.3
    duration: int = 50_000
    noise_rate: float = 0.0
    bar_size: tuple = (8, 32)
    object_size: int = 12
    checker_size: int = 8

    def validate(self):
        pattern = ALIASES.get(self.pattern, self.pattern)
        if pattern not in PATTERNS:
            raise InvalidSpec(f"unknown pattern {self.pattern!r}; choose from {', '.join(PATTERNS)}")
        if self.width <= 0 or self.height <= 0:
            raise InvalidSpec("frame size must be positive")
        if not self.contrast_threshold > 0:
            raise InvalidSpec("contrast threshold must be > 0")
        if not self.duration > 0:
            raise InvalidSpec("duration must be > 0")
        if not self.noise_rate >= 0:
            raise InvalidSpec("noise rate must be >= 0")
        flows = self.object_flows()
        for rect, (u, v) in zip(self._initial_rects(), flows):
            for s in (0.0, 1.0):
                x0, x1, y0, y1 = _shift(rect, u * s, v * s)
                if x0 < -0.5 or y0 < -0.5 or x1 > self.width - 0.5 or y1 > self.height - 0.5:
                    raise InvalidSpec("pattern leaves the frame during the window")
        if pattern == "two-object":
            a, b = (_swept(r, f) for r, f in zip(self._initial_rects(), flows))
            if a[0] < b[1] and b[0] < a[1] and a[2] < b[3] and b[2] < a[3]:
                raise InvalidSpec("the two objects overlap during the window")
        return pattern

    def object_flows(self):
        pattern = ALIASES.get(self.pattern, self.pattern)
        try:
            if pattern == "two-object":
                flows = [tuple(float(c) for c in f) for f in self.flow_gt]
                if len(flows) != 2 or any(len(f) != 2 for f in flows):
                    raise ValueError
            else:
                u, v = self.flow_gt
                flows = [(float(u), float(v))]
        except (TypeError, ValueError):
            raise InvalidSpec(f"bad flow_gt {self.flow_gt!r} for pattern {pattern!r}") from None
        if not all(np.isfinite(c) for f in flows for c in f):
            raise InvalidSpec("flow_gt must be finite")
        return flows

    def _initial_rects(self):
        """Rectangles (x0, x1, y0, y1) in pixel-edge coordinates at s = 0."""
        pattern = ALIASES.get(self.pattern, self.pattern)
        flows = self.object_flows()
        if pattern == "translating-checker":
            return []
        if pattern == "translating-bar":
            bw, bh = self.bar_size
            centers = [(self.width / 2, self.height / 2)]
            sizes = [(bw, bh)]
        else:
            s = self.object_size
            centers = [(self.width / 4, self.height / 2), (3 * self.width / 4, self.height / 2)]
            sizes = [(s, s), (s, s)]
        rects = []
        for (cx, cy), (sw, sh), (u, v) in zip(centers, sizes, flows):
            # start so the sweep is centred; snap edges to pixel boundaries
            x0 = np.floor(cx - u / 2 - sw / 2) - 0.5
            y0 = np.floor(cy - v / 2 - sh / 2) - 0.5
            rects.append((x0, x0 + sw, y0, y0 + sh))
        return rects


def _shift(rect, dx, dy):
    return rect[0] + dx, rect[1] + dx, rect[2] + dy, rect[3] + dy


def _swept(rect, flow):
    a = _shift(rect, 0, 0)
    b = _shift(rect, *flow)
    return min(a[0], b[0]), max(a[1], b[1]), min(a[2], b[2]), max(a[3], b[3])


def _overlap_1d(lo, hi, n):
    c = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(hi, c + 0.5) - np.maximum(lo, c - 0.5), 0.0, 1.0)


def _square_wave_integral(x, period):
    m = np.mod(x, 2 * period)
    return period - np.abs(m - period)


def _square_wave_mean(n, shift, period):
    """Mean over each pixel footprint of +1/-1 stripes of width ``period``."""
    c = np.arange(n, dtype=np.float64) - shift
    return _square_wave_integral(c + 0.5, period) - _square_wave_integral(c - 0.5, period)


class _Renderer:
    def __init__(self, spec, pattern):
        self.spec = spec
        self.pattern = pattern
        self.flows = spec.object_flows()
        self.rects = spec._initial_rects()

    def coverage(self, s):
        sp = self.spec
        if self.pattern == "translating-checker":
            u, v = self.flows[0]
            sx = _square_wave_mean(sp.width, u * s, sp.checker_size)
            sy = _square_wave_mean(sp.height, v * s, sp.checker_size)
            return 0.5 + 0.5 * np.outer(sy, sx)
        cov = np.zeros((sp.height, sp.width))
        for rect, (u, v) in zip(self.rects, self.flows):
            x0, x1, y0, y1 = _shift(rect, u * s, v * s)
            cov += np.outer(_overlap_1d(y0, y1, sp.height), _overlap_1d(x0, x1, sp.width))
        return np.minimum(cov, 1.0)

    def log_intensity(self, s):
        return np.log(LUMA_DARK + (LUMA_BRIGHT - LUMA_DARK) * self.coverage(s))


def _edge_events(renderer, spec):
    c = spec.contrast_threshold
    ref = renderer.log_intensity(0.0)
    prev = ref.copy()
    ts, xs, ys, ps = [], [], [], []
    for k in range(1, STEPS + 1):
        s0 = (k - 1) / STEPS
        cur = renderer.log_intensity(k / STEPS)
        diff = cur - ref
        count = np.floor(np.abs(diff) / c).astype(np.int64)
        hit = np.flatnonzero(count)
        if hit.size:
            n = count.ravel()[hit]
            sign = np.sign(diff.ravel()[hit])
            pix = np.repeat(hit, n)
            sgn = np.repeat(sign, n)
            j = np.arange(pix.size) - np.repeat(np.cumsum(n) - n, n) + 1
            level = ref.ravel()[pix] + sgn * j * c
            lp = prev.ravel()[pix]
            lc = cur.ravel()[pix]
            frac = np.clip((level - lp) / (lc - lp), 0.0, 1.0)
            ts.append(s0 + frac / STEPS)
            ys.append(pix // spec.width)
            xs.append(pix % spec.width)
            ps.append(sgn.astype(np.int8))
            ref.ravel()[hit] += sign * n * c
        prev = cur
    if not ts:
        return np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int8)
    return np.concatenate(ts), np.concatenate(xs), np.concatenate(ys), np.concatenate(ps)


def _gt_flow(renderer, spec, scale):
    h, w = spec.height, spec.width
    if renderer.pattern != "two-object":
        # the static background emits no events, so one global motion is exact
        u, v = renderer.flows[0]
        return FlowField.constant(u * scale, v * scale, h, w, grid=(h, w))
    dense = np.zeros((2, h, w))
    cols = np.arange(w)
    rows = np.arange(h)
    for rect, (u, v) in zip(renderer.rects, renderer.flows):
        x0, x1, y0, y1 = _swept(rect, (u, v))
        mx = (cols >= np.floor(x0 + 0.5) - 1) & (cols <= np.ceil(x1 - 0.5) + 1)
        my = (rows >= np.floor(y0 + 0.5) - 1) & (rows <= np.ceil(y1 - 0.5) + 1)
        m = np.outer(my, mx)
        dense[0][m] = u * scale
        dense[1][m] = v * scale
    return FlowField(dense, h, w)


def generate(spec, seed=0):
    """Render ``spec`` and return ``(stream, flow_gt)``; see :func:`generate_labeled`."""
    stream, flow, _ = generate_labeled(spec, seed)
    return stream, flow


def generate_labeled(spec, seed=0):
    """Render ``spec`` and return ``(stream, flow_gt, is_signal)``.

    ``flow_gt`` is dense (control grid == pixel grid) and expressed per unit
    of the stream's normalized time, so warping with it aligns the edges
    exactly even when the first/last events do not sit on the window bounds.
    ``is_signal`` flags the events that came from the pattern (not noise).
    """
    pattern = spec.validate()
    rng = np.random.default_rng(seed)
    renderer = _Renderer(spec, pattern)
    s, x, y, p = _edge_events(renderer, spec)
    t = np.rint(s * spec.duration).astype(np.int64)

    n_noise = rng.poisson(spec.noise_rate * spec.width * spec.height * spec.duration * 1e-6)
    tn = rng.integers(0, spec.duration + 1, size=n_noise)
    xn = rng.integers(0, spec.width, size=n_noise)
    yn = rng.integers(0, spec.height, size=n_noise)
    pn = np.where(rng.random(n_noise) < 0.5, 1, -1).astype(np.int8)

    t = np.concatenate([t, tn])
    x = np.concatenate([x, xn])
    y = np.concatenate([y, yn])
    p = np.concatenate([p, pn])
    signal = np.concatenate([np.ones(s.size, bool), np.zeros(n_noise, bool)])
    order = np.lexsort((~signal, p, x, y, t))
    stream = EventStream(t[order], x[order], y[order], p[order], spec.width, spec.height, 0, spec.duration)

    scale = 1.0
    if len(stream) > 1 and stream.t[-1] > stream.t[0]:
        scale = float(int(stream.t[-1]) - int(stream.t[0])) / spec.duration
    return stream, _gt_flow(renderer, spec, scale), signal[order]
