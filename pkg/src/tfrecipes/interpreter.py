"""Reference interpreter: runs a TransformerSpec and records a full trace."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .ir import (
    AttentionSpec, FfnSpec, LayerNormSpec, LayerSpec, MaskedRowError,
    ParameterError, ShapeError, SingularNormError, TransformerSpec, UnknownSymbolError,
    add_positions, check_length, embed,
)

NEAR_TIE = 1e-9

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_erf = np.vectorize(math.erf, otypes=[float])


class NearTieWarning(UserWarning):
    """A hardmax row had a runner-up score within NEAR_TIE of the maximum."""


@dataclass
class LayerTrace:
    scores: np.ndarray
    weights: np.ndarray
    post_attn: np.ndarray
    post_ffn: np.ndarray


@dataclass
class Trace:
    embedding: np.ndarray
    layers: list = field(default_factory=list)
    final: np.ndarray | None = None
    output: object = None


@dataclass
class RunResult:
    output: object
    trace: Trace

    @property
    def final(self) -> np.ndarray:
        return self.trace.final


# ---------------------------------------------------------------- weighting

def weighting(scores, kind: str, allow_empty: bool = False, verify: bool = False) -> np.ndarray:
    """Turn one row of scores (may contain -inf) into attention weights."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ShapeError("scores must be a non-empty vector")
    return weight_matrix(s[None, :], kind, allow_empty, verify)[0]


def mask_matrix(masking: str, n: int) -> np.ndarray:
    """Boolean n x n matrix, True where position i may attend to j."""
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    if masking == "none":
        return np.ones((n, n), dtype=bool)
    if masking == "future":
        return j <= i
    if masking == "strict-future":
        return j < i
    if masking == "past":
        return j >= i
    if masking == "strict-past":
        return j > i
    raise ParameterError(f"unknown masking {masking!r}")


# ---------------------------------------------------------------- sublayers

def _lin(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """x @ w.T over the last axis, as one 2-D product."""
    return (x.reshape(-1, x.shape[-1]) @ w.T).reshape(x.shape[:-1] + (w.shape[0],))


def attention_scores(spec: AttentionSpec, x: np.ndarray) -> np.ndarray:
    """Masked score matrix (..., n, n); masked entries are -inf."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or x.shape[-1] != spec.wq.shape[1] or x.shape[-1] != spec.wk.shape[1]:
        raise ShapeError(f"input width {x.shape[-1]} does not match attention width {spec.wq.shape[1]}")
    q = _lin(x, spec.wq)
    k = _lin(x, spec.wk)
    if spec.d_key <= 4:
        # Few key dimensions: summed outer products beat many tiny matmuls.
        s = q[..., :, None, 0] * k[..., None, :, 0]
        for c in range(1, spec.d_key):
            s = s + q[..., :, None, c] * k[..., None, :, c]
    else:
        s = q @ np.swapaxes(k, -1, -2)
    if spec.scale and spec.d_key > 0:
        s = s / math.sqrt(spec.d_key)
    allowed = mask_matrix(spec.masking, x.shape[-2])
    return np.where(allowed, s, -np.inf)


def _hard_pick(s: np.ndarray, kind: str, allow_empty: bool, verify: bool):
    """Shared front end of the weightings: validity checks, row maxima, tied maxima."""
    if not np.all(s < np.inf):
        raise ParameterError("scores must be finite or -inf")
    top = s.max(axis=-1, keepdims=True)
    nonempty = top > -np.inf
    if not allow_empty and not nonempty.all():
        raise MaskedRowError("every score in some row is masked")
    top = np.where(nonempty, top, 0.0)
    if kind == "softmax":
        return top, nonempty, None
    if kind not in ("lhardmax", "rhardmax", "ahardmax"):
        raise ParameterError(f"unknown weighting {kind!r}")
    best = s == top
    if verify:
        near = ~best & (s >= top - NEAR_TIE) & (s > -np.inf)
        if near.any():
            warnings.warn(f"near-tie in {int(near.sum())} hardmax entries", NearTieWarning,
                          stacklevel=3)
    return top, nonempty, best


def _hard_index(best: np.ndarray, kind: str) -> np.ndarray:
    n = best.shape[-1]
    if kind == "lhardmax":
        return np.argmax(best, axis=-1)
    return n - 1 - np.argmax(best[..., ::-1], axis=-1)


def weight_matrix(scores, kind: str, allow_empty: bool = False, verify: bool = False) -> np.ndarray:
    """Row-wise `weighting` over a (..., n, n) score array, vectorized."""
    s = np.asarray(scores, dtype=np.float64)
    top, nonempty, best = _hard_pick(s, kind, allow_empty, verify)
    if kind == "softmax":
        z = np.exp(s - top)    # exp(-inf) = 0 at masked entries
        tot = z.sum(axis=-1, keepdims=True)
        return np.divide(z, tot, out=np.zeros_like(z), where=tot > 0)
    if kind == "ahardmax":
        cnt = best.sum(axis=-1, keepdims=True)
        return np.divide(best, cnt, out=np.zeros(s.shape), where=cnt > 0)
    idx = _hard_index(best, kind)
    w = (np.arange(s.shape[-1]) == idx[..., None]).astype(np.float64)
    return w * nonempty


def attention_forward(spec: AttentionSpec, x, weighting_override: str | None = None,
                      verify: bool = False, keep_weights: bool = True):
    """Return (output, scores, weights) for one attention sublayer.

    Accepts an n x d matrix or a batch (..., n, d) of equal-length inputs.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or x.shape[-1] != spec.wv.shape[1]:
        raise ShapeError(f"input width {x.shape[-1]} does not match value width {spec.wv.shape[1]}")
    scores = attention_scores(spec, x)
    kind = weighting_override or spec.weighting
    v = _lin(x, spec.wv)
    if kind in ("lhardmax", "rhardmax"):
        # One-hot rows: gather the selected value instead of a dense product.
        _, nonempty, best = _hard_pick(scores, kind, spec.first_position_zero, verify)
        idx = _hard_index(best, kind)
        n, dv = v.shape[-2], v.shape[-1]
        rows = idx + n * np.arange(idx.size // n).reshape(idx.shape[:-1] + (1,))
        out = v.reshape(-1, dv)[rows] * nonempty
        if not keep_weights:
            return out, scores, None
        w = (np.arange(scores.shape[-1]) == idx[..., None]) * nonempty
        return out, scores, w.astype(np.float64)
    weights = weight_matrix(scores, kind, spec.first_position_zero, verify)
    if kind == "ahardmax":
        # Sum the selected rows, then divide once, so integer payloads stay exact.
        sel = (weights > 0).astype(np.float64)
        cnt = sel.sum(axis=-1, keepdims=True)
        out = np.divide(sel @ v, cnt, out=np.zeros(v.shape), where=cnt > 0)
    else:
        out = weights @ v
    return out, scores, weights


def activation(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "gelu-exact":
        return 0.5 * z * (1.0 + _erf(z / math.sqrt(2.0)))
    if kind == "gelu-tanh":
        return 0.5 * z * (1.0 + np.tanh(_SQRT_2_OVER_PI * (z + 0.044715 * z ** 3)))
    raise ParameterError(f"unknown activation {kind!r}")


def ffn_forward(spec: FfnSpec, x) -> np.ndarray:
    """Apply the FFN to a vector, or row-wise to a matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.d_in:
        raise ShapeError(f"input width {x.shape[-1]} does not match ffn input width {spec.d_in}")
    if not spec.w2.any():
        return np.broadcast_to(spec.b2, x.shape[:-1] + (spec.d_out,)).copy()
    h = activation(spec.activation, _lin(x, spec.w1) + spec.b1)
    return _lin(h, spec.w2) + spec.b2


def layernorm_forward(spec: LayerNormSpec, x) -> np.ndarray:
    """Layer normalization with population variance; rows are normalized independently."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.d:
        raise ShapeError(f"input width {x.shape[-1]} does not match norm width {spec.d}")
    if spec.projection is not None:
        x = x @ spec.projection.T
    mu = x.mean(axis=-1, keepdims=True)
    c = x - mu
    var = (c * c).mean(axis=-1, keepdims=True)
    if spec.epsilon == 0 and np.any(var == 0):
        raise SingularNormError("zero variance with epsilon = 0")
    return c / np.sqrt(var + spec.epsilon) * spec.gamma + spec.beta


def round_activations(x, p: int) -> np.ndarray:
    """Round every entry to the nearest multiple of 2**-p (ties to even)."""
    if p < 1:
        raise ParameterError("precision must be >= 1 bit")
    x = np.asarray(x, dtype=np.float64)
    return np.ldexp(np.rint(np.ldexp(x, p)), -p)


# ---------------------------------------------------------------- layers

def layer_forward(layer: LayerSpec, x, weighting_override: str | None = None,
                  precision: int | None = None, verify: bool = False, keep_weights: bool = True):
    x = np.asarray(x, dtype=np.float64)
    mode = layer.norm_mode

    def maybe_round(z):
        return z if precision is None else round_activations(z, precision)

    a_in = layernorm_forward(layer.attn_norm, x) if mode == "pre" and layer.attn_norm else x
    a_out, scores, weights = attention_forward(layer.attention, a_in, weighting_override, verify,
                                               keep_weights)
    h = a_out + x if layer.attn_residual else a_out
    if mode == "post" and layer.attn_norm is not None:
        h = layernorm_forward(layer.attn_norm, h)
    h = maybe_round(h)

    f_in = layernorm_forward(layer.ffn_norm, h) if mode == "pre" and layer.ffn_norm else h
    f_out = ffn_forward(layer.ffn, f_in)
    y = f_out + h if layer.ffn_residual else f_out
    if mode == "post" and layer.ffn_norm is not None:
        y = layernorm_forward(layer.ffn_norm, y)
    y = maybe_round(y)
    return y, LayerTrace(scores, weights, h, y)


def forward(layers, x, final_norm: LayerNormSpec | None = None,
            weighting_override: str | None = None, precision: int | None = None,
            verify: bool = False, keep_trace: bool = True):
    """Run a layer stack on an input matrix (or a batch of them).

    Returns (final activations, Trace). With keep_trace=False the per-layer
    records are dropped, which matters for large batches.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ShapeError("input must be an n x d matrix with n >= 1")
    trace = Trace(embedding=x.copy() if keep_trace else None)
    if precision is not None:
        x = round_activations(x, precision)
    for layer in layers:
        x, lt = layer_forward(layer, x, weighting_override, precision, verify, keep_trace)
        if keep_trace:
            trace.layers.append(lt)
    if final_norm is not None:
        x = layernorm_forward(final_norm, x)
    trace.final = x
    return x, trace


def apply_head(spec: TransformerSpec, final: np.ndarray):
    head = spec.head
    if head.kind == "raw":
        return final
    proj = final @ head.matrix.T
    if head.kind == "binary":
        return (proj[..., 0] > 0).astype(int)
    idx = np.argmax(proj, axis=-1)
    if idx.ndim == 1:
        return "".join(spec.alphabet[k] for k in idx)
    return ["".join(spec.alphabet[k] for k in row) for row in idx]


def run(spec: TransformerSpec, word, weighting_override: str | None = None,
        precision: int | None = None, verify: bool = False) -> RunResult:
    x = embed(spec, word)
    final, trace = forward(spec.layers, x, spec.final_norm, weighting_override, precision, verify)
    trace.output = apply_head(spec, final)
    return RunResult(trace.output, trace)


def embed_batch(spec: TransformerSpec, words) -> np.ndarray:
    """Stack the embeddings of equal-length words into a (B, n, d) array."""
    words = list(words)
    if not words:
        raise ParameterError("empty batch")
    n = len(words[0])
    if any(len(w) != n for w in words):
        raise ShapeError("batched words must share one length")
    check_length(spec, n)
    table = {s: i for i, s in enumerate(spec.alphabet)}
    try:
        idx = np.array([[table[c] for c in w] for w in words], dtype=np.intp)
    except KeyError as err:
        raise UnknownSymbolError(f"symbol {err.args[0]!r} is not in the alphabet") from None
    emb = np.stack([spec.embedding[s] for s in spec.alphabet])
    return add_positions(spec, emb[idx])


def run_batch(spec: TransformerSpec, words, weighting_override: str | None = None,
              precision: int | None = None):
    """Outputs for many equal-length words at once (no trace kept)."""
    x = embed_batch(spec, words)
    final, _ = forward(spec.layers, x, spec.final_norm, weighting_override, precision,
                       keep_trace=False)
    return apply_head(spec, final), final


# ---------------------------------------------------------------- export

def _jsonable(a: np.ndarray):
    return [[("-inf" if v == -np.inf else float(v)) for v in row] for row in np.asarray(a)]


def trace_to_json(trace: Trace) -> str:
    out = trace.output
    if isinstance(out, np.ndarray):
        out = out.tolist()
    doc = {
        "layers": [{"scores": _jsonable(t.scores), "weights": _jsonable(t.weights),
                    "post_attn": _jsonable(t.post_attn), "post_ffn": _jsonable(t.post_ffn)}
                   for t in trace.layers],
        "output": out,
    }
    return json.dumps(doc)
