"""Layer-normalization tools: the scale-free hash, sign amplification, paired encodings."""
from __future__ import annotations

import numpy as np

from .assembly import embed_ffn, zero_attention
from .ffn import build_comparator, build_identity
from .interpreter import layer_forward, layernorm_forward
from .ir import FfnSpec, LayerNormSpec, LayerSpec, ParameterError


def ln_hash(numerator: float, denominator: float) -> np.ndarray:
    """LN(num, den, -num, -den) with eps = 0; equals lh(num / den) for den > 0."""
    pre = np.array([numerator, denominator, -numerator, -denominator], dtype=np.float64)
    return layernorm_forward(LayerNormSpec.plain(4), pre)


def lh(x: float) -> np.ndarray:
    """Closed form sqrt(2 / (x^2 + 1)) (x, 1, -x, -1)."""
    return np.sqrt(2.0 / (x * x + 1.0)) * np.array([x, 1.0, -x, -1.0])


def build_hash_layer(d: int, src, dst) -> LayerSpec:
    """Write the scale-free hash of the 4-channel pre-image at `src` into `dst`.

    A pre-norm with eps = 0 whose projection masks everything but `src`
    normalizes the pre-image; an identity network copies it into `dst`.
    """
    src, dst = list(src), list(dst)
    if len(src) != 4 or len(dst) != 4:
        raise ParameterError("the hash reads and writes four channels")
    norm = LayerNormSpec.plain(d, 0.0, mask=src)
    return LayerSpec(zero_attention(d), embed_ffn(build_identity(4), d, src, dst),
                     norm_mode="pre", ffn_norm=norm)


def build_sign_clip(delta: float, d: int = 1) -> FfnSpec:
    """clip_delta(x) / delta per coordinate, as GTZero_delta(x) - GTZero_delta(-x).

    Same map as the delta-clip up to the factor 1/delta, but both saturated
    sides evaluate to exactly +-1 in float64.
    """
    gt = build_comparator("gt", delta)
    w1 = np.zeros((4 * d, d))
    b1 = np.zeros(4 * d)
    w2 = np.zeros((d, 4 * d))
    for c in range(d):
        rows = slice(4 * c, 4 * c + 4)
        w1[rows, c] = np.concatenate([gt.w1[:, 0], -gt.w1[:, 0]])
        b1[rows] = np.concatenate([gt.b1, gt.b1])
        w2[c, rows] = np.concatenate([gt.w2[0], -gt.w2[0]])
    return FfnSpec(w1, b1, w2, np.zeros(d))


def build_amplifier(delta: float, d: int) -> LayerSpec:
    """Clip every channel to +-delta (rescaled), then layer-normalize with eps = 0.

    Input must have |x_c| >= delta everywhere and as many positive as negative
    channels (the paired encoding guarantees this); the output is then +-1.
    """
    if not delta > 0:
        raise ParameterError("delta must be > 0")
    if d < 2:
        raise ParameterError("amplification needs at least two channels")
    return LayerSpec(zero_attention(d), build_sign_clip(delta, d), attn_residual=True,
                     ffn_residual=False, norm_mode="post", ffn_norm=LayerNormSpec.plain(d))


def amplify(x, delta: float) -> np.ndarray:
    """Run the amplifier on one vector (or on each row of a matrix)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y, _ = layer_forward(build_amplifier(delta, x.shape[-1]), x)
    return y


def paired_encode(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.concatenate([x, -x], axis=-1)


def paired_decode(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] % 2:
        raise ParameterError("paired vectors have even width")
    return v[..., : v.shape[-1] // 2]


TRUE_PAIR = np.array([-1.0, 1.0])
FALSE_PAIR = np.array([1.0, -1.0])
