"""Motion compensation by contrast maximization.

Events are warped along a flow field to a reference time, splatted
bilinearly, and scored with the per-polarity average-timestamp images at
both ends of the window. The flow is a coarse control grid bilinearly
upsampled to pixels, and the objective's gradient with respect to the grid
is computed analytically.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .errors import EmptyStream, NonFiniteLoss, ShapeMismatch, ValidationError
from .events import normalize_timestamps

EPS_TIMESTAMP = 1e-9
EPS_CHARBONNIER = 1e-3
LAMBDA_SMOOTH = 1.0


def interp_matrix(n_out, n_in):
    """Row-stochastic (n_out, n_in) matrix for align-corners linear interpolation."""
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    for i in range(n_out):
        pos = i * (n_in - 1) / (n_out - 1) if n_out > 1 else 0.0
        i0 = min(int(np.floor(pos)), n_in - 2)
        f = pos - i0
        m[i, i0] = 1.0 - f
        m[i, i0 + 1] = f
    return m


@dataclass(frozen=True, eq=False)
class FlowField:
    """Flow in pixels per unit normalized time, on a 2 x Gh x Gw control grid.

    Channel 0 is u (along x / columns), channel 1 is v (along y / rows).
    """

    control: np.ndarray
    height: int
    width: int
    _ry: np.ndarray = field(init=False, repr=False)
    _rx: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        control = np.array(self.control, dtype=np.float64, copy=True)
        if control.ndim != 3 or control.shape[0] != 2:
            raise ShapeMismatch(f"control grid must be 2 x Gh x Gw, got {control.shape}")
        if not np.all(np.isfinite(control)):
            raise ValidationError("flow control grid must be finite")
        if self.height <= 0 or self.width <= 0:
            raise ValidationError("flow field size must be positive")
        control.setflags(write=False)
        object.__setattr__(self, "control", control)
        object.__setattr__(self, "_ry", interp_matrix(self.height, control.shape[1]))
        object.__setattr__(self, "_rx", interp_matrix(self.width, control.shape[2]))

    @classmethod
    def zeros(cls, height, width, grid=(8, 8)):
        gh, gw = min(grid[0], height), min(grid[1], width)
        return cls(np.zeros((2, gh, gw)), height, width)

    @classmethod
    def constant(cls, u, v, height, width, grid=(1, 1)):
        c = np.empty((2,) + tuple(grid))
        c[0], c[1] = u, v
        return cls(c, height, width)

    @property
    def grid_shape(self):
        return self.control.shape[1:]

    def with_control(self, control):
        return FlowField(control, self.height, self.width)

    def dense(self):
        """Per-pixel flow, shape (2, H, W)."""
        return np.stack([self._ry @ c @ self._rx.T for c in self.control])

    def pullback(self, dense_grad):
        """Adjoint of :meth:`dense`: map a (2, H, W) gradient onto the control grid."""
        return np.stack([self._ry.T @ g @ self._rx for g in dense_grad])


@dataclass(frozen=True, eq=False)
class WarpedStream:
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    t_ref: float


@dataclass(frozen=True, eq=False)
class TimestampImages:
    t_plus: np.ndarray
    t_minus: np.ndarray


def _check_flow(stream, flow):
    if (flow.height, flow.width) != (stream.height, stream.width):
        raise ShapeMismatch(
            f"flow is {flow.height}x{flow.width}, stream sensor is {stream.height}x{stream.width}"
        )


def _event_flow(stream, flow):
    dense = flow.dense()
    return dense[0, stream.y, stream.x], dense[1, stream.y, stream.x]


def _times(stream):
    return normalize_timestamps(stream) if len(stream) else np.zeros(0)


def warp_events(stream, flow, t_ref=1.0, t_norm=None):
    """Move each event along the flow sampled at its original pixel to ``t_ref``."""
    _check_flow(stream, flow)
    if t_ref not in (0, 1):
        raise ValidationError("t_ref must be 0 or 1")
    t = _times(stream) if t_norm is None else t_norm
    u, v = _event_flow(stream, flow)
    dt = float(t_ref) - t
    xs = stream.x.astype(np.float64)
    ys = stream.y.astype(np.float64)
    return WarpedStream(xs + dt * u, ys + dt * v, t, stream.p.astype(np.float64), float(t_ref))


def unwarped(stream):
    t = _times(stream)
    return WarpedStream(stream.x.astype(np.float64), stream.y.astype(np.float64), t,
                        stream.p.astype(np.float64), 1.0)


def splat_iwe(warped, height, width):
    """Signed image of warped events; only in-bounds neighbor weights are kept."""
    return kernels.splat(warped.x, warped.y, warped.p, height, width)


def deposited_mass(warped, height, width):
    """Total bilinear weight that lands inside the image (one unit per event at most)."""
    return float(kernels.splat(warped.x, warped.y, np.ones_like(warped.x), height, width).sum())


def render_iwe_rgb(iwe):
    """Red for positive, blue for negative mass, white background; uint8 H x W x 3."""
    scale = float(np.abs(iwe).max()) or 1.0
    pos = np.clip(iwe / scale, 0.0, 1.0)
    neg = np.clip(-iwe / scale, 0.0, 1.0)
    rgb = np.ones(iwe.shape + (3,))
    rgb[..., 0] -= neg
    rgb[..., 1] -= pos + neg
    rgb[..., 2] -= pos
    return np.rint(np.clip(rgb, 0.0, 1.0) * 255).astype(np.uint8)


def timestamp_images(warped, height, width, eps=EPS_TIMESTAMP):
    out = []
    for sign in (1.0, -1.0):
        m = warped.p == sign
        xw, yw, t = warped.x[m], warped.y[m], warped.t[m]
        num = kernels.splat(xw, yw, t, height, width)
        den = kernels.splat(xw, yw, np.ones_like(t), height, width)
        out.append(num / (den + eps))
    return TimestampImages(*out)


def _contrast_terms(stream, flow, eps, want_grad):
    """Contrast loss and, optionally, its gradient per event wrt (u, v)."""
    h, w = stream.height, stream.width
    t = _times(stream)
    u, v = _event_flow(stream, flow)
    xs = stream.x.astype(np.float64)
    ys = stream.y.astype(np.float64)
    pol = stream.p
    loss = 0.0
    gu = np.zeros(len(stream))
    gv = np.zeros(len(stream))
    for t_ref in (1.0, 0.0):
        dt = t_ref - t
        xw = xs + dt * u
        yw = ys + dt * v
        for sign in (1, -1):
            m = pol == sign
            if not m.any():
                continue
            tm = t[m]
            num = kernels.splat(xw[m], yw[m], tm, h, w)
            den = kernels.splat(xw[m], yw[m], np.ones_like(tm), h, w) + eps
            img = num / den
            loss += float(np.sum(img * img))
            if want_grad:
                ga = 2.0 * img / den
                gb = -ga * img
                dx, dy = kernels.splat_grad(xw[m], yw[m], tm, ga, gb)
                gu[m] += dx * dt[m]
                gv[m] += dy * dt[m]
    return loss, gu, gv


def contrast_loss(stream, flow, eps=EPS_TIMESTAMP):
    """Sum of squared per-polarity average-timestamp images at t_ref = 1 and 0."""
    _check_flow(stream, flow)
    if len(stream) == 0:
        return 0.0
    return _contrast_terms(stream, flow, eps, False)[0]


def _smooth_terms(control, eps_char):
    loss = 0.0
    grad = np.zeros_like(control)
    for axis in (1, 2):
        d = np.diff(control, axis=axis)
        r = np.sqrt(d * d + eps_char * eps_char)
        loss += float(r.sum())
        g = np.divide(d, r, out=np.zeros_like(d), where=r > 0)
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        grad[tuple(hi)] += g
        grad[tuple(lo)] -= g
    return loss, grad


def smoothness_loss(flow, eps_char=EPS_CHARBONNIER):
    """Charbonnier penalty over each 4-neighbor pair of the control grid, counted once."""
    gh, gw = flow.grid_shape
    if gh < 2 or gw < 2:
        raise ValidationError("smoothness needs a control grid of at least 2x2")
    return _smooth_terms(flow.control, eps_char)[0]


def ecm_loss(stream, flow, lambda1=LAMBDA_SMOOTH, eps=EPS_TIMESTAMP, eps_char=EPS_CHARBONNIER):
    total = contrast_loss(stream, flow, eps)
    if lambda1:
        total += lambda1 * smoothness_loss(flow, eps_char)
    return total


def ecm_loss_and_grad(stream, flow, lambda1=LAMBDA_SMOOTH, eps=EPS_TIMESTAMP, eps_char=EPS_CHARBONNIER):
    """Returns ``(loss, grad)`` with ``grad`` shaped like ``flow.control``."""
    _check_flow(stream, flow)
    h, w = stream.height, stream.width
    if len(stream):
        loss, gu, gv = _contrast_terms(stream, flow, eps, True)
        pix = stream.y * w + stream.x
        dense = np.stack([
            np.bincount(pix, weights=gu, minlength=h * w).reshape(h, w),
            np.bincount(pix, weights=gv, minlength=h * w).reshape(h, w),
        ])
        grad = flow.pullback(dense)
    else:
        loss, grad = 0.0, np.zeros_like(flow.control)
    if lambda1:
        gh, gw = flow.grid_shape
        if gh < 2 or gw < 2:
            raise ValidationError("smoothness needs a control grid of at least 2x2")
        s_loss, s_grad = _smooth_terms(flow.control, eps_char)
        loss += lambda1 * s_loss
        grad = grad + lambda1 * s_grad
    return loss, grad


def ecm_loss_grad(stream, flow, lambda1=LAMBDA_SMOOTH, eps=EPS_TIMESTAMP, eps_char=EPS_CHARBONNIER):
    return ecm_loss_and_grad(stream, flow, lambda1, eps, eps_char)[1]


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for :func:`optimize_flow`.

    The objective is minimized by momentum gradient descent with steps
    normalized to ``lr`` pixels (max-norm). Because the exact objective is
    nearly piecewise constant in the flow, earlier stages descend on the same
    loss with a larger ``eps`` (``continuation``) and average gradients over
    ``jitter_samples`` jittered copies of the grid; the last stage uses the
    exact ``eps``. With ``coarse_to_fine`` the earlier stages also run on
    coarser control grids (2x2, 4x4, ... up to ``grid``). Iterates are scored
    with the exact loss at full grid resolution and the best one is returned.
    """

    grid: tuple = (8, 8)
    lr: float = 0.5
    momentum: float = 0.9
    iterations: int = 300
    tol: float = 1e-6
    patience: int = 10
    lambda1: float = LAMBDA_SMOOTH
    eps: float = EPS_TIMESTAMP
    eps_char: float = EPS_CHARBONNIER
    continuation: tuple = (1.0, 0.1, 0.01)
    jitter: float = 0.5
    jitter_samples: int = 4
    coarse_to_fine: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValidationError("iterations must be >= 0")
        if self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ValidationError("need lr > 0 and 0 <= momentum < 1")
        if self.eps <= 0 or self.eps_char < 0 or self.lambda1 < 0:
            raise ValidationError("eps must be > 0; eps_char and lambda1 must be >= 0")
        if min(self.grid) < 2:
            raise ValidationError("control grid must be at least 2x2")
        if any(e <= 0 for e in self.continuation) or self.jitter < 0 or self.jitter_samples < 1:
            raise ValidationError("continuation eps must be > 0, jitter >= 0, jitter_samples >= 1")


@dataclass
class OptimizationTrace:
    losses: list = field(default_factory=list)
    stage_eps: list = field(default_factory=list)
    best_iteration: int = 0
    converged: bool = False

    @property
    def initial(self):
        return self.losses[0]

    @property
    def final(self):
        return min(self.losses)

    @property
    def iterations(self):
        return len(self.losses) - 1


def _stage_lengths(total, stages):
    base, extra = divmod(total, stages)
    return [base + (1 if i < extra else 0) for i in range(stages)]


def _stage_grids(target, stages, coarse_to_fine):
    if not coarse_to_fine:
        return [tuple(target)] * stages
    return [tuple(min(2 ** (k + 1), g) for g in target) for k in range(stages - 1)] + [tuple(target)]


def _prolong(control, grid):
    """Resample a control grid onto a finer one by align-corners interpolation."""
    ry = interp_matrix(grid[0], control.shape[1])
    rx = interp_matrix(grid[1], control.shape[2])
    return np.stack([ry @ c @ rx.T for c in control])


def optimize_flow(stream, config=None):
    """Fit a control-grid flow to ``stream`` starting from zero flow.

    Returns ``(flow, trace)``; ``trace.losses[k]`` is the exact objective after
    iteration k (index 0 is the zero-flow start) and the returned flow is the
    best iterate, so its loss never exceeds the initial one.
    """
    cfg = config or OptimizerConfig()
    if len(stream) == 0:
        raise EmptyStream("cannot estimate flow from an empty stream")
    rng = np.random.default_rng(cfg.seed)
    flow = FlowField.zeros(stream.height, stream.width, cfg.grid)
    if min(flow.grid_shape) < 2:
        raise ValidationError("sensor too small for a 2x2 control grid")
    target = flow.grid_shape

    def exact(control):
        if not np.all(np.isfinite(control)):
            raise NonFiniteLoss("flow diverged to non-finite values; lower the learning rate")
        value = ecm_loss(stream, flow.with_control(control), cfg.lambda1, cfg.eps, cfg.eps_char)
        if not np.isfinite(value):
            raise NonFiniteLoss(f"objective is {value} (max |flow| = {np.abs(control).max():.3g})")
        return value

    trace = OptimizationTrace()
    best = flow.control.copy()
    best_loss = exact(best)
    trace.losses.append(best_loss)
    trace.stage_eps.append(None)

    stages = tuple(cfg.continuation) + (cfg.eps,)
    grids = _stage_grids(target, len(stages), cfg.coarse_to_fine)
    lengths = _stage_lengths(cfg.iterations, len(stages))
    control = np.zeros((2,) + grids[0])
    jitter = cfg.jitter
    for stage, (eps, grid, length) in enumerate(zip(stages, grids, lengths)):
        final_stage = stage == len(stages) - 1
        control = _prolong(control, grid)
        velocity = np.zeros_like(control)
        level = FlowField(control, stream.height, stream.width)
        samples = 1 if final_stage or jitter == 0 else cfg.jitter_samples
        for k in range(length):
            grad = np.zeros_like(control)
            for _ in range(samples):
                probe = control
                if samples > 1:
                    probe = control + jitter * rng.standard_normal(control.shape)
                grad += ecm_loss_and_grad(stream, level.with_control(probe), cfg.lambda1, eps, cfg.eps_char)[1]
            if not np.all(np.isfinite(grad)):
                raise NonFiniteLoss(f"non-finite gradient at stage {stage}, step {k}")
            scale = np.abs(grad).max()
            if scale > 0:
                grad /= scale
            step = cfg.lr * (1.0 - k / length)
            velocity = cfg.momentum * velocity - step * grad
            control = control + velocity
            full = control if grid == target else _prolong(control, target)
            value = exact(full)
            trace.losses.append(value)
            trace.stage_eps.append(eps)
            if value < best_loss:
                best_loss, best = value, full.copy()
                trace.best_iteration = len(trace.losses) - 1
            if final_stage and k >= cfg.patience:
                ref = trace.losses[-1 - cfg.patience]
                if abs(value - ref) <= cfg.tol * abs(ref):
                    trace.converged = True
                    break
        jitter *= 0.5
    return flow.with_control(best), trace


def endpoint_error(flow, reference, mask=None):
    """Per-pixel Euclidean flow difference; mean over ``mask`` when given."""
    d = flow.dense() - reference.dense()
    err = np.hypot(d[0], d[1])
    if mask is None:
        return err
    return float(err[mask].mean()) if np.any(mask) else float("nan")


def event_mask(stream):
    mask = np.zeros((stream.height, stream.width), dtype=bool)
    mask[stream.y, stream.x] = True
    return mask
