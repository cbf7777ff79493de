"""Cross-modal fusion: per-modality affine, column interlacing, selective scan,
linear + layer-norm refinement, decoupling and residual addition."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, ValidationError
from .ssm import SSMParams, selective_scan

EPS_LAYERNORM = 1e-5


def _chw(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeMismatch(f"{name} must be C x H x W, got {x.shape}")
    return x


def modality_affine(feat, scale, offset):
    feat = _chw(feat, "feat")
    scale = np.asarray(scale, dtype=np.float64)
    offset = np.asarray(offset, dtype=np.float64)
    c = feat.shape[0]
    if scale.shape != (c,) or offset.shape != (c,):
        raise ShapeMismatch(f"scale and offset must have shape ({c},)")
    return feat * scale[:, None, None] + offset[:, None, None]


def interlace_concat(z_e, z_r):
    """Interleave columns: output column 2j is ``z_e[..., j]``, 2j+1 is ``z_r[..., j]``."""
    z_e = _chw(z_e, "z_e")
    z_r = _chw(z_r, "z_r")
    if z_e.shape != z_r.shape:
        raise ShapeMismatch(f"modalities differ in shape: {z_e.shape} vs {z_r.shape}")
    c, h, w = z_e.shape
    out = np.empty((c, h, 2 * w))
    out[:, :, 0::2] = z_e
    out[:, :, 1::2] = z_r
    return out


def decouple(z_f):
    z_f = _chw(z_f, "z_f")
    if z_f.shape[2] % 2:
        raise ShapeMismatch("interlaced width must be even")
    return z_f[:, :, 0::2].copy(), z_f[:, :, 1::2].copy()


def layer_norm(x, gamma, beta, eps=EPS_LAYERNORM):
    """Normalize over the channel axis (axis 0) at every position."""
    mean = x.mean(axis=0, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=0, keepdims=True)
    return centered / np.sqrt(var + eps) * gamma[:, None, None] + beta[:, None, None]


@dataclass(frozen=True, eq=False)
class CmmParams:
    scale_e: np.ndarray
    offset_e: np.ndarray
    scale_r: np.ndarray
    offset_r: np.ndarray
    ssm: SSMParams
    lin_weight: np.ndarray      # (C, C), applied per position
    lin_bias: np.ndarray        # (C,)
    ln_gamma: np.ndarray
    ln_beta: np.ndarray
    ln_eps: float = EPS_LAYERNORM

    def __post_init__(self):
        c = np.asarray(self.lin_weight).shape[0]
        for name in ("scale_e", "offset_e", "scale_r", "offset_r", "lin_bias", "ln_gamma", "ln_beta"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (c,):
                raise ShapeMismatch(f"{name} must be ({c},), got {arr.shape}")
            object.__setattr__(self, name, arr)
        w = np.asarray(self.lin_weight, dtype=np.float64)
        if w.shape != (c, c):
            raise ShapeMismatch(f"lin_weight must be ({c}, {c}), got {w.shape}")
        object.__setattr__(self, "lin_weight", w)
        if self.ssm.channels != c:
            raise ShapeMismatch(f"SSM has {self.ssm.channels} channels, expected {c}")
        if not self.ln_eps > 0:
            raise ValidationError("ln_eps must be > 0")

    @property
    def channels(self):
        return self.lin_weight.shape[0]

    @classmethod
    def init(cls, channels, state_size=4, seed=0, delta=1.0):
        rng = np.random.default_rng(seed)
        c, n = channels, state_size
        ssm = SSMParams(
            a=-np.exp(rng.normal(0.0, 0.5, (c, n))),
            b=rng.normal(0.0, 1.0 / np.sqrt(n), (c, n)),
            c=rng.normal(0.0, 1.0 / np.sqrt(n), (c, n)),
            d=np.ones(c),
            delta=delta,
        )
        return cls(
            scale_e=np.ones(c), offset_e=np.zeros(c),
            scale_r=np.ones(c), offset_r=np.zeros(c),
            ssm=ssm,
            lin_weight=rng.normal(0.0, 1.0 / np.sqrt(c), (c, c)),
            lin_bias=np.zeros(c),
            ln_gamma=np.ones(c), ln_beta=np.zeros(c),
        )

    def tensors(self, prefix="cmm."):
        out = {prefix + k: getattr(self, k) for k in
               ("scale_e", "offset_e", "scale_r", "offset_r", "lin_weight", "lin_bias", "ln_gamma", "ln_beta")}
        out[prefix + "ln_eps"] = np.array([self.ln_eps])
        for k in ("a", "b", "c", "d"):
            out[prefix + "ssm_" + k] = getattr(self.ssm, k)
        out[prefix + "ssm_delta"] = np.atleast_1d(self.ssm.delta)
        return out

    @classmethod
    def from_tensors(cls, tensors, prefix="cmm."):
        delta = tensors[prefix + "ssm_delta"]
        ssm = SSMParams(*(tensors[prefix + "ssm_" + k] for k in ("a", "b", "c", "d")),
                        delta=float(delta[0]) if delta.size == 1 else delta)
        kw = {k: tensors[prefix + k] for k in
              ("scale_e", "offset_e", "scale_r", "offset_r", "lin_weight", "lin_bias", "ln_gamma", "ln_beta")}
        return cls(ssm=ssm, ln_eps=float(tensors[prefix + "ln_eps"][0]), **kw)


def cmm_scan(z_f, params, delta=None):
    """Raster-scan every channel of ``z_f`` as one sequence and reshape back.

    ``delta`` optionally overrides the SSM timescale per scan position.
    """
    z_f = _chw(z_f, "z_f")
    c, h, w = z_f.shape
    ssm = params.ssm if delta is None else params.ssm.with_delta(delta)
    seq = z_f.reshape(c, h * w).T
    return selective_scan(ssm, seq).T.reshape(c, h, w)


def cmm_refine(weight_map, z_f, params):
    weight_map = _chw(weight_map, "weight_map")
    z_f = _chw(z_f, "z_f")
    if weight_map.shape != z_f.shape:
        raise ShapeMismatch(f"weight map {weight_map.shape} does not match features {z_f.shape}")
    gated = weight_map * z_f
    mixed = np.einsum("oc,chw->ohw", params.lin_weight, gated) + params.lin_bias[:, None, None]
    return layer_norm(mixed, params.ln_gamma, params.ln_beta, params.ln_eps)


def cmm_forward(f_e, f_r, params, delta=None):
    """Fuse two same-shaped feature maps into one (C, H, W) map."""
    f_e = _chw(f_e, "f_e")
    f_r = _chw(f_r, "f_r")
    if f_e.shape != f_r.shape:
        raise ShapeMismatch(f"modalities differ in shape: {f_e.shape} vs {f_r.shape}")
    if f_e.shape[0] != params.channels:
        raise ShapeMismatch(f"parameters are for {params.channels} channels, features have {f_e.shape[0]}")
    z_e = modality_affine(f_e, params.scale_e, params.offset_e)
    z_r = modality_affine(f_r, params.scale_r, params.offset_r)
    z_f = interlace_concat(z_e, z_r)
    enhanced = cmm_refine(cmm_scan(z_f, params, delta), z_f, params)
    ze, zr = decouple(enhanced)
    return (f_e + ze) + (f_r + zr)
