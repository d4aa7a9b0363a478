"""Routing and composition of sublayers, plus channel bookkeeping helpers."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .ir import (
    AttentionSpec, FfnSpec, LayerNormSpec, LayerSpec, ParameterError, ShapeError,
    LayoutError, StreamLayout, TransformerSpec, validate_layer,
)


def allocate(layout: StreamLayout, name: str, width: int) -> slice:
    return layout.allocate(name, width)


def select(d_out: int, d_in: int, dst, src, scale: float = 1.0) -> np.ndarray:
    """d_out x d_in matrix copying input indices `src` to output indices `dst`."""
    dst, src = list(np.atleast_1d(dst)), list(np.atleast_1d(src))
    if len(dst) != len(src):
        raise ShapeError("source and destination index lists differ in length")
    m = np.zeros((d_out, d_in))
    m[dst, src] = scale
    return m


def zero_attention(d: int) -> AttentionSpec:
    z = np.zeros((1, d))
    return AttentionSpec(z, z, np.zeros((d, d)))


def zero_ffn(d: int) -> FfnSpec:
    return FfnSpec(np.zeros((1, d)), np.zeros(1), np.zeros((d, 1)), np.zeros(d))


def identity_layer(d: int) -> LayerSpec:
    """Both sublayers zero, both residuals on: passes the stream through unchanged."""
    return LayerSpec(zero_attention(d), zero_ffn(d))


def attention_layer(att: AttentionSpec) -> LayerSpec:
    return LayerSpec(att, zero_ffn(att.d))


def ffn_layer(ff: FfnSpec) -> LayerSpec:
    return LayerSpec(zero_attention(ff.d_in), ff)


def embed_ffn(f: FfnSpec, d: int, src, dst) -> FfnSpec:
    """Run f on channels `src` of a width-d stream, writing its outputs into `dst`."""
    src, dst = list(np.atleast_1d(src)), list(np.atleast_1d(dst))
    if len(src) != f.d_in or len(dst) != f.d_out:
        raise ShapeError(f"ffn is {f.d_in} -> {f.d_out}, got {len(src)} sources and {len(dst)} targets")
    R = select(f.d_in, d, range(f.d_in), src)
    L = select(d, f.d_out, dst, range(f.d_out))
    return route_ffn(L, f, R)


def stack_ffns(*ffns: FfnSpec) -> FfnSpec:
    """Sum of several d -> d networks, as one network with the hidden units side by side."""
    if not ffns:
        raise ParameterError("need at least one network")
    acts = {f.activation for f in ffns}
    if len(acts) != 1:
        raise ParameterError("stacked networks must share an activation")
    return FfnSpec(np.vstack([f.w1 for f in ffns]), np.concatenate([f.b1 for f in ffns]),
                   np.hstack([f.w2 for f in ffns]), np.sum([f.b2 for f in ffns], axis=0),
                   acts.pop())


def shift_input(f: FfnSpec, c) -> FfnSpec:
    """f'(x) = f(x + c)."""
    c = np.broadcast_to(np.asarray(c, dtype=np.float64), (f.d_in,))
    return replace(f, b1=f.b1 + f.w1 @ c)


# ---------------------------------------------------------------- routing

def route_ffn(L, f: FfnSpec, R) -> FfnSpec:
    """x -> L f(R x), as a single network."""
    L = np.atleast_2d(np.asarray(L, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    if R.shape[0] != f.d_in:
        raise ShapeError(f"R has {R.shape[0]} rows, network expects {f.d_in} inputs")
    if L.shape[1] != f.d_out:
        raise ShapeError(f"L has {L.shape[1]} columns, network yields {f.d_out} outputs")
    return FfnSpec(f.w1 @ R, f.b1, L @ f.w2, L @ f.b2, f.activation)


def route_attention(L, sa: AttentionSpec, R) -> AttentionSpec:
    """Attention on R x with values mapped through L: queries/keys read R x, values L W_V R x."""
    L = np.atleast_2d(np.asarray(L, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    if R.shape[0] != sa.d:
        raise ShapeError(f"R has {R.shape[0]} rows, attention expects width {sa.d}")
    if L.shape[1] != sa.d or L.shape[0] != R.shape[1]:
        raise ShapeError("L must map the attention width back to the routed width")
    return replace(sa, wq=sa.wq @ R, wk=sa.wk @ R, wv=L @ sa.wv @ R)


# ---------------------------------------------------------------- composition

def body_width(layers) -> int:
    return layers[0].attention.d


def serial_compose(*stages) -> tuple:
    """Concatenate layer stacks; every layer must share one width."""
    layers = [layer for stage in stages for layer in stage]
    if layers:
        d = body_width(layers)
        problems = [p for k, layer in enumerate(layers) for p in validate_layer(layer, d, f"layer {k}")]
        if problems:
            raise ShapeError("; ".join(problems))
    return tuple(layers)


def _widen_norm(ln: LayerNormSpec | None, lo: int, width: int, d: int):
    if ln is None:
        return None
    proj = np.zeros((d, d))
    inner = ln.projection if ln.projection is not None else np.eye(width)
    proj[lo:lo + width, lo:lo + width] = inner
    gamma = np.zeros(d)
    beta = np.zeros(d)
    gamma[lo:lo + width] = ln.gamma
    beta[lo:lo + width] = ln.beta
    return LayerNormSpec(gamma, beta, ln.epsilon, proj)


def widen_layer(layer: LayerSpec, lo: int, d: int) -> LayerSpec:
    """Embed a layer acting on channels [lo, lo + w) of a width-d stream, leaving the rest alone."""
    a, f = layer.attention, layer.ffn
    w = a.d
    if not (layer.attn_residual and layer.ffn_residual):
        raise ParameterError("widening needs both residual connections")
    R = select(w, d, range(w), range(lo, lo + w))
    L = R.T
    return LayerSpec(route_attention(L, a, R), route_ffn(L, f, R),
                     norm_mode=layer.norm_mode,
                     attn_norm=_widen_norm(layer.attn_norm, lo, w, d),
                     ffn_norm=_widen_norm(layer.ffn_norm, lo, w, d))


def parallel_compose(a, b, d_a: int | None = None, d_b: int | None = None,
                     unchecked: bool = False) -> tuple:
    """Block-diagonal combination: channels [0, d_a) run `a`, channels [d_a, d_a + d_b) run `b`.

    Layer k of `a` is followed by layer k of `b`; the shorter stack is padded
    with identity layers. Layer normalization is refused unless `unchecked`.
    """
    a, b = tuple(a), tuple(b)
    d_a = body_width(a) if d_a is None else d_a
    d_b = body_width(b) if d_b is None else d_b
    if not unchecked:
        for layer in a + b:
            if layer.norm_mode != "none":
                raise ParameterError("parallel composition is only defined without layer normalization")
    depth = max(len(a), len(b))
    a = a + tuple(identity_layer(d_a) for _ in range(depth - len(a)))
    b = b + tuple(identity_layer(d_b) for _ in range(depth - len(b)))
    d = d_a + d_b
    out = []
    for la, lb in zip(a, b):
        out.append(widen_layer(la, 0, d))
        out.append(widen_layer(lb, d_a, d))
    return tuple(out)


def compose_specs_serial(first: TransformerSpec, second: TransformerSpec) -> TransformerSpec:
    """Run `second`'s layers on `first`'s output; embedding from `first`, head from `second`."""
    if first.d != second.d:
        raise ShapeError(f"widths differ: {first.d} vs {second.d}")
    if first.final_norm is not None:
        raise ParameterError("the first stage must not end in a final norm")
    return replace(first, layers=serial_compose(first.layers, second.layers), head=second.head,
                   final_norm=second.final_norm,
                   meta={"composed": "serial", "stages": [first.meta, second.meta]})


def compose_specs_parallel(a: TransformerSpec, b: TransformerSpec,
                           unchecked: bool = False) -> TransformerSpec:
    """Side-by-side programs over one alphabet; raw output is the concatenation."""
    if tuple(a.alphabet) != tuple(b.alphabet):
        raise ParameterError("parallel programs must share an alphabet")
    if a.final_norm is not None or b.final_norm is not None:
        raise ParameterError("parallel composition is only defined without layer normalization")
    layers = parallel_compose(a.layers, b.layers, a.d, b.d, unchecked)
    emb = {s: np.concatenate([a.embedding[s], b.embedding[s]]) for s in a.alphabet}
    pos = tuple(a.pos_enc) + tuple(replace(p, offset=p.offset + a.d) for p in b.pos_enc)
    caps = [m for m in (a.max_len, b.max_len) if m is not None]
    return TransformerSpec(a.alphabet, a.d + b.d, emb, pos, layers,
                           max_len=min(caps) if caps else None,
                           meta={"composed": "parallel", "stages": [a.meta, b.meta]})


# ---------------------------------------------------------------- blocks

class Block:
    """A layer stack over its own local channel layout.

    `writes` lists the channels the block's sublayers produce; everything else
    in the layout is an input the caller must supply.
    """

    def __init__(self, layers, layout: StreamLayout, writes=(), meta=None):
        self.layers = tuple(layers)
        self.layout = layout
        self.writes = tuple(writes)
        self.meta = dict(meta or {})

    @property
    def d(self) -> int:
        return self.layout.d

    @property
    def inputs(self) -> tuple:
        return tuple(n for n in self.layout.channels if n not in self.writes)

    def blank(self, n: int) -> np.ndarray:
        return np.zeros((n, self.d))


def claim(block: Block, layout: StreamLayout, bind: dict | None = None, prefix: str = "") -> dict:
    """Map every local channel of `block` to a global one.

    Channels named in `bind` reuse existing global channels; the rest are
    allocated fresh as `prefix + name`.
    """
    bind = dict(bind or {})
    names = {}
    for name, (_, width) in block.layout.channels.items():
        if name in bind:
            g = bind[name]
            if layout[g].stop - layout[g].start != width:
                raise LayoutError(f"channel {g!r} does not match width {width} of {name!r}")
            names[name] = g
        else:
            names[name] = prefix + name
            layout.allocate(prefix + name, width)
    return names


def block_router(block: Block, layout: StreamLayout, names: dict) -> np.ndarray:
    """d_local x d_global selection matrix reading each local channel from its global home."""
    R = np.zeros((block.d, layout.d))
    for local, glob in names.items():
        for a, b in zip(block.layout.indices(local), layout.indices(glob)):
            R[a, b] = 1.0
    return R


def place(block: Block, layout: StreamLayout, names: dict, stage: str = "") -> tuple:
    """The block's layers re-expressed on the global stream."""
    R = block_router(block, layout, names)
    L = R.T
    out = []
    for layer in block.layers:
        out.append(LayerSpec(
            route_attention(L, layer.attention, R), route_ffn(L, layer.ffn, R),
            layer.attn_residual, layer.ffn_residual, layer.norm_mode,
            _route_norm(layer.attn_norm, R), _route_norm(layer.ffn_norm, R)))
    for local in block.writes:
        layout.mark_written(names[local], stage or block.meta.get("name", "block"))
    return tuple(out)


def _route_norm(ln: LayerNormSpec | None, R: np.ndarray):
    if ln is None:
        return None
    proj = ln.projection if ln.projection is not None else np.eye(ln.d)
    return LayerNormSpec(R.T @ ln.gamma, R.T @ ln.beta, ln.epsilon, R.T @ proj @ R)
