"""Convolutional spatial mixer with hand-written reverse mode.

Layout: conv(4->F) -> groupnorm -> relu -> conv(F->F) -> groupnorm -> relu -> conv(F->2),
all kernels k x k with zero "same" padding. Arrays are (batch, channel, H, W) float64.
"""
from dataclasses import dataclass

import numpy as np

GN_EPS = 1e-5

PARAM_NAMES = (
    "conv1.w", "conv1.b", "gn1.gamma", "gn1.beta",
    "conv2.w", "conv2.b", "gn2.gamma", "gn2.beta",
    "conv3.w", "conv3.b",
)


class NonFiniteActivation(FloatingPointError):
    pass


@dataclass(frozen=True)
class MixerConfig:
    in_channels: int = 4
    out_channels: int = 2
    features: int = 16
    groups: int = 4
    kernel: int = 5

    def __post_init__(self):
        if self.kernel % 2 != 1:
            raise ValueError("kernel size must be odd for same padding")
        if self.features % self.groups:
            raise ValueError("features must be divisible by groups")

    def shapes(self):
        F, k = self.features, self.kernel
        return {
            "conv1.w": (F, self.in_channels, k, k), "conv1.b": (F,),
            "gn1.gamma": (F,), "gn1.beta": (F,),
            "conv2.w": (F, F, k, k), "conv2.b": (F,),
            "gn2.gamma": (F,), "gn2.beta": (F,),
            "conv3.w": (self.out_channels, F, k, k), "conv3.b": (self.out_channels,),
        }


def init_params(cfg, rng, zero_final=True):
    """He-normal convolutions, unit/zero norm affine, zero last layer (identity block)."""
    p = {}
    for name, shape in cfg.shapes().items():
        if name.endswith(".w"):
            fan_in = shape[1] * shape[2] * shape[3]
            p[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        elif name.endswith("gamma"):
            p[name] = np.ones(shape)
        else:
            p[name] = np.zeros(shape)
    if zero_final:
        p["conv3.w"] = np.zeros(p["conv3.w"].shape)
        p["conv3.b"] = np.zeros(p["conv3.b"].shape)
    return p


def copy_params(p):
    return {k: v.copy() for k, v in p.items()}


# layers ----------------------------------------------------------------------
# Internally activations are channel-major (C, B, H, W) so that every
# convolution is a single (O, C*k*k) @ (C*k*k, B*H*W) product.

def _im2col(x, k):
    """(C, B, H, W) -> (C * k * k, B * H * W) patch matrix for zero "same" padding."""
    C, B, H, W = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((C, k, k, B, H, W))
    for u in range(k):
        for v in range(k):
            cols[:, u, v] = xp[:, :, u:u + H, v:v + W]
    return cols.reshape(C * k * k, B * H * W)


def conv2d(x, w, b, cols=None):
    """Same-padded cross-correlation of channel-major ``x``; returns ``(y, cols)``."""
    C, B, H, W = x.shape
    if cols is None:
        cols = _im2col(x, w.shape[-1])
    y = w.reshape(w.shape[0], -1) @ cols + b[:, None]
    return y.reshape(w.shape[0], B, H, W), cols


def conv2d_backward(cols, w, gy):
    O = w.shape[0]
    g2 = gy.reshape(O, -1)
    gw = (g2 @ cols.T).reshape(w.shape)
    gb = g2.sum(axis=1)
    # input gradient: correlation with the spatially flipped, channel-transposed kernel
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    gx, _ = conv2d(gy, wt, np.zeros(wt.shape[0]))
    return gx, gw, gb


def group_norm(x, gamma, beta, groups):
    C, B, H, W = x.shape
    xg = x.reshape(groups, C // groups, B, H * W)
    mean = xg.mean(axis=(1, 3), keepdims=True)
    var = xg.var(axis=(1, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + GN_EPS)
    xhat = ((xg - mean) * inv).reshape(x.shape)
    return xhat * gamma[:, None, None, None] + beta[:, None, None, None], (xhat, inv)


def group_norm_backward(cache, gamma, gy, groups):
    xhat, inv = cache
    C, B, H, W = gy.shape
    ggamma = np.sum(gy * xhat, axis=(1, 2, 3))
    gbeta = gy.sum(axis=(1, 2, 3))
    gxhat = (gy * gamma[:, None, None, None]).reshape(groups, C // groups, B, H * W)
    xh = xhat.reshape(gxhat.shape)
    n = (C // groups) * H * W
    gx = inv / n * (n * gxhat - gxhat.sum(axis=(1, 3), keepdims=True)
                    - xh * np.sum(gxhat * xh, axis=(1, 3), keepdims=True))
    return gx.reshape(gy.shape), ggamma, gbeta


# network ---------------------------------------------------------------------

def _finite(a, layer):
    if not np.all(np.isfinite(a)):
        raise NonFiniteActivation(f"non-finite activation after {layer}")
    return a


def mixer_forward(x, params, cfg=MixerConfig()):
    """Returns ``(output, tape)``; ``x`` is (B, 4, H, W) or (4, H, W)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.shape[1] != cfg.in_channels:
        raise ValueError(f"expected {cfg.in_channels} input channels, got {x.shape[1]}")
    G = cfg.groups
    xc = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
    tape = {"shape": x.shape, "single": single}
    a1, tape["cols1"] = conv2d(xc, params["conv1.w"], params["conv1.b"])
    _finite(a1, "conv1")
    n1, tape["gn1"] = group_norm(a1, params["gn1.gamma"], params["gn1.beta"], G)
    h1 = _finite(np.maximum(n1, 0.0), "gn1/relu")
    a2, tape["cols2"] = conv2d(h1, params["conv2.w"], params["conv2.b"])
    _finite(a2, "conv2")
    n2, tape["gn2"] = group_norm(a2, params["gn2.gamma"], params["gn2.beta"], G)
    h2 = _finite(np.maximum(n2, 0.0), "gn2/relu")
    y, tape["cols3"] = conv2d(h2, params["conv3.w"], params["conv3.b"])
    _finite(y, "conv3")
    tape.update(m1=n1 > 0, m2=n2 > 0)
    y = y.transpose(1, 0, 2, 3)
    return (y[0] if single else np.ascontiguousarray(y)), tape


def mixer_backward(tape, gy, params, cfg=MixerConfig()):
    """Reverse pass; returns ``(input gradient, parameter gradients)``."""
    gy = np.asarray(gy, dtype=np.float64)
    if tape["single"]:
        gy = gy[None]
    B, _, H, W = tape["shape"]
    if gy.shape != (B, cfg.out_channels, H, W):
        raise ValueError("output gradient does not match the recorded forward pass")
    G = cfg.groups
    grads = {}
    g = np.ascontiguousarray(gy.transpose(1, 0, 2, 3))
    gh2, grads["conv3.w"], grads["conv3.b"] = conv2d_backward(tape["cols3"], params["conv3.w"], g)
    ga2, grads["gn2.gamma"], grads["gn2.beta"] = group_norm_backward(
        tape["gn2"], params["gn2.gamma"], gh2 * tape["m2"], G)
    gh1, grads["conv2.w"], grads["conv2.b"] = conv2d_backward(tape["cols2"], params["conv2.w"], ga2)
    ga1, grads["gn1.gamma"], grads["gn1.beta"] = group_norm_backward(
        tape["gn1"], params["gn1.gamma"], gh1 * tape["m1"], G)
    gx, grads["conv1.w"], grads["conv1.b"] = conv2d_backward(tape["cols1"], params["conv1.w"], ga1)
    gx = gx.transpose(1, 0, 2, 3)
    return (gx[0] if tape["single"] else np.ascontiguousarray(gx)), grads
