"""Attention recipes: averaging, first-position flag, index lookup, predecessor,
tie-breaking, head merging and softmax sharpening.

Single-sublayer recipes return an `AttentionSpec`. Recipes that need several
layers return a `Block` over a small local layout; programs place blocks into
their own residual stream with `assembly.place`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import (
    Block, attention_layer, embed_ffn, ffn_layer, route_ffn, select, shift_input, stack_ffns,
    zero_attention,
)
from .ffn import build_comparator
from .interpreter import forward
from .norm import build_hash_layer
from .ir import (
    AttentionSpec, FfnSpec, LayerSpec, LengthBoundError, ParameterError,
    ShapeError, StreamLayout,
)

ENCODINGS = ("one-hot", "almost-orthogonal", "layernorm-hash", "quadratic")


# ---------------------------------------------------------------- trivial heads

def build_attn_identity(d: int) -> AttentionSpec:
    """All-zero head; together with the residual it leaves the stream unchanged."""
    return zero_attention(d)


def build_average(d: int = 1, masking: str = "future", src=None, dst=None,
                  scale: float = 1.0, weighting: str = "ahardmax") -> AttentionSpec:
    """Uniform attention over the visible positions.

    By default the values are the whole input (W_V = I). With `src`/`dst` the
    head averages channels `src` into channels `dst`, multiplied by `scale`.
    """
    if masking not in ("none", "future"):
        raise ParameterError("averaging uses masking 'none' or 'future'")
    z = np.zeros((1, d))
    wv = scale * np.eye(d) if src is None else select(d, d, dst, src, scale)
    return AttentionSpec(z, z, wv, masking=masking, weighting=weighting)


def build_first() -> Block:
    """Flag the first position using only the (-1)^i channel.

    The head averages -(-1)^j over j <= i, which is 1 at i = 1 and at most 1/3
    afterwards; GTZero_{1/3}(c - 1/3) turns that into the 0/1 flag.
    """
    lay = StreamLayout()
    alt, c, first = (lay.allocate(n, 1).start for n in ("alt", "c", "first"))
    d = lay.d
    att = build_average(d, "future", src=[alt], dst=[c], scale=-1.0)
    thresh = shift_input(build_comparator("gt", 1 / 3), -1 / 3)
    layer = LayerSpec(att, embed_ffn(thresh, d, [c], [first]))
    return Block([layer], lay, writes=("c", "first"), meta={"name": "first"})


# ---------------------------------------------------------------- almost-orthogonal vectors

@dataclass(frozen=True)
class AoFamily:
    N: int
    m: int
    eps: float
    delta: float
    seed: int
    vectors: np.ndarray = field(repr=False)
    attempts: int = 1


def ao_dimension(N: int, eps: float = 0.25, delta: float = 0.01) -> int:
    """ceil(12 k / eps^2 * log(2N)) with k chosen so that N^-k <= delta."""
    if not 0 < eps < 1 or not 0 < delta < 1:
        raise ParameterError("eps and delta must lie in (0, 1)")
    k = 1.0 if N < 2 else max(math.log(1 / delta) / math.log(N), 1e-12)
    return max(1, math.ceil(12 * k / eps ** 2 * math.log(2 * N)))


def sample_ao_family(N: int, m: int | None = None, eps: float = 0.25, delta: float = 0.01,
                     seed: int = 0, retries: int = 16) -> AoFamily:
    """N random sign vectors scaled by 1/sqrt(m), resampled until they pass the checks."""
    if N < 1:
        raise ParameterError("N must be >= 1")
    m = ao_dimension(N, eps, delta) if m is None else int(m)
    if m < 1:
        raise ParameterError("m must be >= 1")
    rng = np.random.default_rng(seed)
    for attempt in range(1, retries + 1):
        x = rng.choice((-1.0, 1.0), size=(N, m)) / math.sqrt(m)
        gram = x @ x.T
        off = gram - np.diag(np.diag(gram))
        if np.abs(off).max(initial=0.0) <= eps and np.diag(gram).min() >= 1 - eps:
            x.setflags(write=False)
            return AoFamily(N, m, eps, delta, seed, x, attempt)
    raise ParameterError(f"no almost-orthogonal family with N={N}, m={m}, eps={eps} "
                         f"after {retries} draws")


# ---------------------------------------------------------------- layernorm hash

def hash_preimage(num, den) -> np.ndarray:
    return np.array([num, den, -num, -den], dtype=np.float64)


# ---------------------------------------------------------------- index lookup

@dataclass(frozen=True)
class LookupProblem:
    """Position i should retrieve values[queries[i] - 1]."""

    queries: tuple
    values: tuple
    encoding: str = "one-hot"
    max_len: int | None = None
    m: int | None = None
    seed: int = 0
    eps: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "queries", tuple(int(q) for q in self.queries))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        n = len(self.values)
        if n < 1 or len(self.queries) != n:
            raise ShapeError("queries and values must have the same non-zero length")
        if any(not 1 <= q <= n for q in self.queries):
            raise ParameterError(f"queries must lie in [1, {n}]")
        if self.encoding not in ENCODINGS:
            raise ParameterError(f"unknown encoding {self.encoding!r}; expected one of {ENCODINGS}")
        if self.encoding in ("one-hot", "almost-orthogonal"):
            if self.max_len is None:
                object.__setattr__(self, "max_len", n)
            if n > self.max_len:
                raise LengthBoundError(f"length {n} exceeds maximum length {self.max_len}")

    @property
    def n(self) -> int:
        return len(self.values)


class LookupBlock(Block):
    """Lookup layers plus the recipe for laying a problem out in the stream."""

    def __init__(self, layers, layout, encoding, gamma, max_len=None, family=None):
        super().__init__(layers, layout, writes=("out",) + (("qh", "kh") if encoding == "layernorm-hash" else ()),
                         meta={"name": f"lookup/{encoding}"})
        self.encoding = encoding
        self.gamma = gamma
        self.max_len = max_len
        self.family = family

    def prepare(self, problem: LookupProblem) -> np.ndarray:
        n = problem.n
        if self.max_len is not None and n > self.max_len:
            raise LengthBoundError(f"length {n} exceeds maximum length {self.max_len}")
        lay = self.layout
        x = self.blank(n)
        q = np.array(problem.queries)
        j = np.arange(1, n + 1)
        x[:, lay["v"]] = np.array(problem.values)[:, None]
        enc = self.encoding
        if enc == "one-hot":
            x[:, lay["q"]] = np.eye(self.max_len)[q - 1]
            x[:, lay["k"]] = np.eye(self.max_len)[j - 1]
        elif enc == "almost-orthogonal":
            x[:, lay["q"]] = self.family.vectors[q - 1]
            x[:, lay["k"]] = self.family.vectors[j - 1]
        elif enc == "quadratic":
            x[:, lay.index("q", 0)] = q
            x[:, lay.index("q", 1)] = 1.0
            x[:, lay.index("k", 0)] = j
            x[:, lay.index("k", 1)] = j.astype(np.float64) ** 2
        else:
            # Both pre-images are divided by the position, as an averaging head
            # would deliver them; the hash is blind to the common factor.
            x[:, lay["qpre"]] = np.stack([hash_preimage(qi / i, 1 / i) for qi, i in zip(q, j)])
            x[:, lay["kpre"]] = np.stack([hash_preimage(1.0, 1 / i) for i in j])
        return x

    def run(self, problem: LookupProblem, weighting: str | None = None, trace: bool = False):
        y, tr = forward(self.layers, self.prepare(problem), weighting_override=weighting)
        out = y[:, self.layout.index("out")]
        return (out, tr) if trace else out


def build_lookup(encoding: str = "one-hot", max_len: int | None = None, m: int | None = None,
                 seed: int = 0, eps: float = 0.25, weighting: str = "ahardmax") -> LookupBlock:
    """Index lookup under one of four position encodings.

    Score gaps: one-hot 1, quadratic 1, almost-orthogonal 1 - 2 eps; the
    layernorm hash has a gap that shrinks with the length (reported as None).
    """
    if isinstance(encoding, LookupProblem):
        p = encoding
        return build_lookup(p.encoding, p.max_len, p.m, p.seed, p.eps, weighting)
    lay = StreamLayout()
    if encoding in ("one-hot", "almost-orthogonal"):
        if max_len is None or max_len < 1:
            raise ParameterError(f"{encoding} lookup needs a maximum length")
        family = None
        if encoding == "one-hot":
            width, gamma = max_len, 1.0
        else:
            family = sample_ao_family(max_len, m=m, eps=eps, seed=seed)
            width, gamma = family.m, 1 - 2 * eps
        lay.allocate("q", width)
        lay.allocate("k", width)
        lay.allocate("v", 1)
        lay.allocate("out", 1)
        d = lay.d
        att = AttentionSpec(select(width, d, range(width), lay.indices("q")),
                            select(width, d, range(width), lay.indices("k")),
                            select(d, d, lay.index("out"), lay.index("v")),
                            masking="none", weighting=weighting)
        return LookupBlock([attention_layer(att)], lay, encoding, gamma, max_len, family)
    if encoding == "quadratic":
        lay.allocate("q", 2)   # (q_i, 1)
        lay.allocate("k", 2)   # (j, j^2)
        lay.allocate("v", 1)
        lay.allocate("out", 1)
        d = lay.d
        wq = select(2, d, [0, 1], lay.indices("q"))
        wk = np.zeros((2, d))
        wk[0, lay.index("k", 0)] = 2.0
        wk[1, lay.index("k", 1)] = -1.0
        att = AttentionSpec(wq, wk, select(d, d, lay.index("out"), lay.index("v")),
                            masking="none", weighting=weighting)
        return LookupBlock([attention_layer(att)], lay, encoding, 1.0, max_len)
    if encoding == "layernorm-hash":
        for name in ("qpre", "kpre", "qh", "kh"):
            lay.allocate(name, 4)
        lay.allocate("v", 1)
        lay.allocate("out", 1)
        d = lay.d
        layers = [build_hash_layer(d, lay.indices(pre), lay.indices(dst))
                  for pre, dst in (("qpre", "qh"), ("kpre", "kh"))]
        att = AttentionSpec(select(4, d, range(4), lay.indices("qh")),
                            select(4, d, range(4), lay.indices("kh")),
                            select(d, d, lay.index("out"), lay.index("v")),
                            masking="none", weighting=weighting)
        layers.append(attention_layer(att))
        return LookupBlock(layers, lay, encoding, None, max_len)
    raise ParameterError(f"unknown encoding {encoding!r}; expected one of {ENCODINGS}")


# ---------------------------------------------------------------- predecessor

def build_predecessor(variant: str = "strict-mask", width: int = 1) -> Block:
    """Shift values right by one position: (v_1, ..., v_n) -> (0, v_1, ..., v_{n-1}).

    strict-mask: channels ratio (i/n), v, out (v and out are `width` wide).
      Scores (i/n)(j/n) under strict future masking peak at j = i - 1;
      position 1 sees nothing and yields 0.
    alternating: channels one (1), alt ((-1)^i), v in [0, 1], out. Two
      rightmost-hard heads fetch the nearest even / odd earlier position, a
      first-position flag zeroes position 1, and a conditional picks the head
      matching the parity of i.
    """
    lay = StreamLayout()
    if variant == "strict-mask":
        r = lay.allocate("ratio", 1).start
        lay.allocate("v", width)
        lay.allocate("out", width)
        v, out = lay.indices("v"), lay.indices("out")
        d = lay.d
        att = AttentionSpec(select(1, d, 0, r), select(1, d, 0, r), select(d, d, out, v),
                            masking="strict-future", weighting="rhardmax",
                            first_position_zero=True)
        return Block([attention_layer(att)], lay, writes=("out",),
                     meta={"name": "predecessor/strict-mask"})
    if variant != "alternating":
        raise ParameterError(f"unknown predecessor variant {variant!r}")
    if width != 1:
        raise ParameterError("the alternating predecessor carries one channel")
    names = ("one", "alt", "v", "odd", "even", "is_even", "is_odd", "c", "first", "out")
    idx = {n: lay.allocate(n, 1).start for n in names}
    d = lay.d

    def head(sign):
        # Query 1, key sign * (-1)^j: rightmost-hard picks the latest j <= i
        # of the favoured parity.
        return AttentionSpec(select(1, d, 0, idx["one"]), select(1, d, 0, idx["alt"], sign),
                             select(d, d, idx["odd" if sign > 0 else "even"], idx["v"]),
                             masking="future", weighting="rhardmax")

    gt1 = build_comparator("gt", 1.0)
    flags = stack_ffns(embed_ffn(gt1, d, [idx["alt"]], [idx["is_even"]]),
                       embed_ffn(route_ffn([[1.0]], gt1, [[-1.0]]), d, [idx["alt"]], [idx["is_odd"]]))
    first_att = build_average(d, "future", src=[idx["alt"]], dst=[idx["c"]], scale=-1.0)
    first_ffn = embed_ffn(shift_input(build_comparator("gt", 1 / 3), -1 / 3), d,
                          [idx["c"]], [idx["first"]])
    # out = ReLU(even - is_odd - first) + ReLU(odd - is_even - first); with
    # 0/1 flags every live term is the fetched value plus exact zeros.
    w1c = np.zeros((2, d))
    w1c[0, [idx["even"], idx["is_odd"], idx["first"]]] = (1, -1, -1)
    w1c[1, [idx["odd"], idx["is_even"], idx["first"]]] = (1, -1, -1)
    combine = FfnSpec(w1c, np.zeros(2), select(d, 2, [idx["out"]] * 2, [0, 1]), np.zeros(d))
    layers = [
        LayerSpec(head(+1), flags),
        attention_layer(head(-1)),
        LayerSpec(first_att, first_ffn),
        ffn_layer(combine),
    ]
    return Block(layers, lay, writes=names[3:], meta={"name": "predecessor/alternating"})


def run_predecessor(values, variant: str = "strict-mask") -> np.ndarray:
    """Convenience: lay out `values`, run the predecessor block, read the output channel."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ShapeError("values must be a non-empty vector")
    if variant == "alternating" and (v.min() < 0 or v.max() > 1):
        raise ParameterError("the alternating predecessor needs values in [0, 1]")
    blk = build_predecessor(variant)
    n = v.size
    x = blk.blank(n)
    lay = blk.layout
    i = np.arange(1, n + 1)
    x[:, lay.index("v")] = v
    if variant == "strict-mask":
        x[:, lay.index("ratio")] = i / n
    else:
        x[:, lay.index("one")] = 1.0
        x[:, lay.index("alt")] = np.where(i % 2, -1.0, 1.0)
    y, _ = forward(blk.layers, x)
    return y[:, lay.index("out")]


# ---------------------------------------------------------------- transformations

T_KINDS = ("inverse", "ratio")


def apply_tiebreak(spec: AttentionSpec, gamma: float, direction: str, t_kind: str,
                   const_index: int, pos_index: int) -> AttentionSpec:
    """Append gamma * t(j) to every score so ahardmax picks the leftmost/rightmost maximum.

    The query reads gamma from the constant-one channel; the key reads t(j)
    from the positional channel: 1/j (t_kind 'inverse') or j/n ('ratio'),
    negated as needed. Requires non-maximal scores to trail the maximum by
    more than gamma.
    """
    if not gamma > 0:
        raise ParameterError("gamma must be > 0")
    if direction not in ("leftmost", "rightmost"):
        raise ParameterError("direction must be 'leftmost' or 'rightmost'")
    if t_kind not in T_KINDS:
        raise ParameterError(f"t_kind must be one of {T_KINDS}")
    d = spec.d
    sign = {("rightmost", "inverse"): -1.0, ("leftmost", "inverse"): 1.0,
            ("rightmost", "ratio"): 1.0, ("leftmost", "ratio"): -1.0}[direction, t_kind]
    g = gamma * math.sqrt(spec.d_key) if spec.scale else gamma
    qrow = np.zeros((1, d))
    qrow[0, const_index] = g
    krow = np.zeros((1, d))
    krow[0, pos_index] = sign
    return replace(spec, wq=np.vstack([spec.wq, qrow]), wk=np.vstack([spec.wk, krow]),
                   weighting="ahardmax")


def _touched(m: np.ndarray, axis: int) -> set:
    return set(np.flatnonzero(np.any(m != 0, axis=axis)).tolist())


def merge_heads(heads, combine: FfnSpec | None = None) -> tuple:
    """Run H heads as H consecutive single-head layers, then `combine`.

    Each head must write channels that no other head reads or writes, so that
    running them one after another matches running them side by side.
    """
    heads = list(heads)
    if not heads:
        raise ParameterError("need at least one head")
    d = heads[0].d
    if any(h.d != d for h in heads):
        raise ShapeError("heads must share one input width")
    writes = [_touched(h.wv, 1) for h in heads]
    reads = [_touched(h.wq, 0) | _touched(h.wk, 0) | _touched(h.wv, 0) for h in heads]
    for a in range(len(heads)):
        for b in range(len(heads)):
            if a != b and writes[a] & (writes[b] | reads[b]):
                raise ParameterError(f"head {a} writes channels used by head {b}")
    layers = [attention_layer(h) for h in heads]
    if combine is not None:
        layers[-1] = LayerSpec(heads[-1], combine)
    return tuple(layers)


def sharpen(spec: AttentionSpec, gamma: float, max_len: int) -> AttentionSpec:
    """Scale queries by log(8N)/gamma and switch to softmax.

    For bit-valued payloads the soft output then lies within 1/4 of the hard
    one for every length n <= N.
    """
    if not gamma > 0:
        raise ParameterError("gamma must be > 0")
    if max_len < 1:
        raise ParameterError("max_len must be >= 1")
    tau = gamma / math.log(8 * max_len)
    return replace(spec, wq=spec.wq / tau, weighting="softmax")


def build_bit_rounding() -> FfnSpec:
    """GTZero_{1/2}(c - 1/4): exact 0 on [0, 1/4] and exact 1 on [3/4, 1]."""
    return shift_input(build_comparator("gt", 0.5), -0.25)


def build_sharpened_lookup(max_len: int, gamma: float = 1.0) -> LookupBlock:
    """One-hot lookup under sharpened softmax, followed by the rounding network into 'bit'."""
    base = build_lookup("one-hot", max_len)
    lay = StreamLayout()
    for name, (_, w) in base.layout.channels.items():
        lay.allocate(name, w)
    lay.allocate("bit", 1)
    d = lay.d
    R = select(base.d, d, range(base.d), range(base.d))
    att = base.layers[0].attention
    att = replace(att, wq=att.wq @ R, wk=att.wk @ R, wv=R.T @ att.wv @ R)
    att = sharpen(att, gamma, max_len)
    ffn = embed_ffn(build_bit_rounding(), d, [lay.index("out")], [lay.index("bit")])
    blk = LookupBlock([LayerSpec(att, ffn)], lay, "one-hot", gamma, max_len)
    blk.writes = ("out", "bit")
    return blk
