"""Event dynamic upsampling: input-modulated transposed convolution with RGB spatial attention."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, ValidationError

ATTENTION_KERNEL = 7


def _as_chw(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 4:
        if x.shape[0] != 1:
            raise ShapeMismatch(f"{name}: only batch size 1 is supported")
        x = x[0]
    if x.ndim != 3 or min(x.shape) <= 0:
        raise ShapeMismatch(f"{name} must be C x H x W, got {x.shape}")
    return x


def transposed_output_size(n, kernel, stride, padding, output_padding):
    return (n - 1) * stride - 2 * padding + kernel + output_padding


def transposed_conv2d(x, weight, stride=2, padding=1, output_padding=1, bias=None):
    """2-D transposed convolution; ``weight`` is (C_in, C_out, k, k).

    Input pixel (i, j) scatters ``x[c, i, j] * weight[c, o]`` onto output
    rows ``i*stride - padding + a`` and columns ``j*stride - padding + b``.
    """
    x = _as_chw(x, "input")
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim != 4 or weight.shape[0] != x.shape[0] or weight.shape[2] != weight.shape[3]:
        raise ShapeMismatch(f"kernel must be ({x.shape[0]}, C_out, k, k), got {weight.shape}")
    if stride < 1 or padding < 0 or not 0 <= output_padding < max(stride, 1):
        raise ValidationError("need stride >= 1, padding >= 0, 0 <= output_padding < stride")
    c_in, h, w = x.shape
    c_out, k = weight.shape[1], weight.shape[2]
    oh = transposed_output_size(h, k, stride, padding, output_padding)
    ow = transposed_output_size(w, k, stride, padding, output_padding)
    if oh <= 0 or ow <= 0:
        raise ShapeMismatch("transposed convolution output would be empty")
    span_h = (h - 1) * stride + k
    span_w = (w - 1) * stride + k
    full = np.zeros((c_out, max(span_h, padding + oh), max(span_w, padding + ow)))
    for a in range(k):
        for b in range(k):
            tap = np.einsum("cij,co->oij", x, weight[:, :, a, b])
            full[:, a:a + (h - 1) * stride + 1:stride, b:b + (w - 1) * stride + 1:stride] += tap
    out = full[:, padding:padding + oh, padding:padding + ow]
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[:, None, None]
    return np.ascontiguousarray(out)


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation with ``weight`` (C_out, C_in, k, k) and zero padding."""
    x = _as_chw(x, "input")
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim != 4 or weight.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"kernel must be (C_out, {x.shape[0]}, kh, kw), got {weight.shape}")
    c_out, _, kh, kw = weight.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    oh = (xp.shape[1] - kh) // stride + 1
    ow = (xp.shape[2] - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeMismatch("convolution output would be empty")
    out = np.zeros((c_out, oh, ow))
    for a in range(kh):
        for b in range(kw):
            patch = xp[:, a:a + (oh - 1) * stride + 1:stride, b:b + (ow - 1) * stride + 1:stride]
            out += np.einsum("cij,oc->oij", patch, weight[:, :, a, b])
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[:, None, None]
    return out


def global_average_pool(x):
    return _as_chw(x, "input").mean(axis=(1, 2))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True, eq=False)
class EdumParams:
    kernel: np.ndarray          # (C, C, 3, 3) base transposed-conv kernel
    mod_weight: np.ndarray      # (C, C) 1x1 conv on the pooled descriptor
    mod_bias: np.ndarray        # (C,)
    att_weight: np.ndarray      # (1, 2, 7, 7) over [mean, max] of the RGB features
    att_bias: float = 0.0

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        c = k.shape[0]
        if k.shape != (c, c, 3, 3):
            raise ShapeMismatch(f"kernel must be (C, C, 3, 3), got {k.shape}")
        shapes = {
            "mod_weight": (c, c),
            "mod_bias": (c,),
            "att_weight": (1, 2, ATTENTION_KERNEL, ATTENTION_KERNEL),
        }
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ShapeMismatch(f"{name} must be {shape}, got {arr.shape}")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "att_bias", float(self.att_bias))

    @property
    def channels(self):
        return self.kernel.shape[0]

    @classmethod
    def init(cls, channels, seed=0):
        """Random base kernels, identity modulation (weights 0, bias 1)."""
        rng = np.random.default_rng(seed)
        std = 1.0 / np.sqrt(channels * 9)
        return cls(
            kernel=rng.normal(0.0, std, (channels, channels, 3, 3)),
            mod_weight=np.zeros((channels, channels)),
            mod_bias=np.ones(channels),
            att_weight=rng.normal(0.0, 1.0 / np.sqrt(2 * 49), (1, 2, ATTENTION_KERNEL, ATTENTION_KERNEL)),
            att_bias=0.0,
        )

    def tensors(self, prefix="edum."):
        return {
            prefix + "kernel": self.kernel,
            prefix + "mod_weight": self.mod_weight,
            prefix + "mod_bias": self.mod_bias,
            prefix + "att_weight": self.att_weight,
            prefix + "att_bias": np.array([self.att_bias]),
        }

    @classmethod
    def from_tensors(cls, tensors, prefix="edum."):
        return cls(
            kernel=tensors[prefix + "kernel"],
            mod_weight=tensors[prefix + "mod_weight"],
            mod_bias=tensors[prefix + "mod_bias"],
            att_weight=tensors[prefix + "att_weight"],
            att_bias=float(np.asarray(tensors[prefix + "att_bias"]).reshape(-1)[0]),
        )


def modulated_kernel(event_feat, params):
    """Scale each input-channel slice of the base kernel by its modulation weight."""
    pooled = global_average_pool(event_feat)
    m = params.mod_weight @ pooled + params.mod_bias
    return params.kernel * m[:, None, None, None]


def spatial_attention(rgb_feat, params):
    rgb = _as_chw(rgb_feat, "rgb_feat")
    stats = np.stack([rgb.mean(axis=0), rgb.max(axis=0)])
    pad = ATTENTION_KERNEL // 2
    return sigmoid(conv2d(stats, params.att_weight, np.array([params.att_bias]), padding=pad)[0])


def edum_forward(event_feat, rgb_feat, params):
    """Upsample ``event_feat`` (C, H, W) to (C, 2H, 2W), gated by RGB attention."""
    ev = _as_chw(event_feat, "event_feat")
    rgb = _as_chw(rgb_feat, "rgb_feat")
    c, h, w = ev.shape
    if rgb.shape != (c, 2 * h, 2 * w):
        raise ShapeMismatch(f"rgb_feat must be {(c, 2 * h, 2 * w)}, got {rgb.shape}")
    if params.channels != c:
        raise ShapeMismatch(f"parameters are for {params.channels} channels, features have {c}")
    up = transposed_conv2d(ev, modulated_kernel(ev, params), stride=2, padding=1, output_padding=1)
    att = spatial_attention(rgb, params)
    return up + up * att[None]
