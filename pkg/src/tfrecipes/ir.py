"""Weight-level data model for transformer programs.

Everything a program needs to run lives in a `TransformerSpec`: the word
embedding, positional channels, the ordered layer list and the output head.
Specs are plain records of float64 arrays; arrays are made read-only on
construction so a spec can be shared freely once built.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from functools import lru_cache

import numpy as np

FORMAT_VERSION = "v1"

MASKINGS = ("none", "future", "strict-future", "past", "strict-past")
WEIGHTINGS = ("softmax", "lhardmax", "rhardmax", "ahardmax")
ACTIVATIONS = ("relu", "gelu-exact", "gelu-tanh")
NORM_MODES = ("none", "pre", "post")
HEAD_KINDS = ("raw", "binary", "argmax")
POS_KINDS = (
    "none", "inverse", "ratio", "powers", "alternating",
    "sinusoidal", "one-hot", "almost-orthogonal", "constant",
)
BOUNDED_POS_KINDS = ("one-hot", "almost-orthogonal")


class SpecError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SpecError, ValueError):
    pass


class ParameterError(SpecError, ValueError):
    pass


class UnknownSymbolError(SpecError, ValueError):
    pass


class LengthBoundError(SpecError, ValueError):
    pass


class SingularNormError(SpecError, ArithmeticError):
    pass


class MaskedRowError(SpecError, ValueError):
    pass


class PayloadError(SpecError, ValueError):
    pass


class VersionError(SpecError, ValueError):
    pass


class LayoutError(SpecError, ValueError):
    pass


def as_array(a, ndim: int | None = None) -> np.ndarray:
    """Copy `a` into a read-only float64 array."""
    arr = np.array(a, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        if ndim == 2 and arr.ndim == 1:
            arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, 0)
        elif ndim == 1 and arr.ndim == 0:
            arr = arr.reshape(1)
        else:
            raise ShapeError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _same(a, b) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        if not (isinstance(a, np.ndarray) and isinstance(b, np.ndarray)):
            return False
        return a.shape == b.shape and a.tobytes() == b.tobytes()
    if isinstance(a, (tuple, list)) and isinstance(b, (tuple, list)):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_same(a[k], b[k]) for k in a)
    return a == b


class _Record:
    """Field-wise, bit-exact equality for the array-holding records below."""

    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        return all(_same(getattr(self, f.name), getattr(other, f.name)) for f in fields(self))

    __hash__ = None


def _check_choice(value: str, options: tuple, what: str) -> None:
    if value not in options:
        raise ParameterError(f"unknown {what} {value!r}; expected one of {options}")


@dataclass(frozen=True, eq=False)
class AttentionSpec(_Record):
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    masking: str = "none"
    weighting: str = "softmax"
    scale: bool = False
    # Lets a row with no visible positions (position 1 under strict-future,
    # position n under strict-past) produce a zero output instead of failing.
    first_position_zero: bool = False

    def __post_init__(self):
        for name in ("wq", "wk", "wv"):
            object.__setattr__(self, name, as_array(getattr(self, name), 2))
        _check_choice(self.masking, MASKINGS, "masking")
        _check_choice(self.weighting, WEIGHTINGS, "weighting")

    @property
    def d(self) -> int:
        return self.wv.shape[1]

    @property
    def d_key(self) -> int:
        return self.wq.shape[0]


@dataclass(frozen=True, eq=False)
class FfnSpec(_Record):
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "w1", as_array(self.w1, 2))
        object.__setattr__(self, "b1", as_array(self.b1, 1))
        object.__setattr__(self, "w2", as_array(self.w2, 2))
        object.__setattr__(self, "b2", as_array(self.b2, 1))
        _check_choice(self.activation, ACTIVATIONS, "activation")

    @property
    def d_in(self) -> int:
        return self.w1.shape[1]

    @property
    def d_hid(self) -> int:
        return self.w1.shape[0]

    @property
    def d_out(self) -> int:
        return self.w2.shape[0]


@dataclass(frozen=True, eq=False)
class LayerNormSpec(_Record):
    gamma: np.ndarray
    beta: np.ndarray
    epsilon: float = 0.0
    projection: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "gamma", as_array(self.gamma, 1))
        object.__setattr__(self, "beta", as_array(self.beta, 1))
        object.__setattr__(self, "epsilon", float(self.epsilon))
        if self.projection is not None:
            object.__setattr__(self, "projection", as_array(self.projection, 2))

    @classmethod
    def plain(cls, d: int, epsilon: float = 0.0, mask=None) -> "LayerNormSpec":
        """gamma=1, beta=0; `mask` (iterable of channel indices) becomes a diagonal 0/1 projection."""
        proj = None
        if mask is not None:
            diag = np.zeros(d)
            diag[list(mask)] = 1.0
            proj = np.diag(diag)
        return cls(np.ones(d), np.zeros(d), epsilon, proj)

    @property
    def d(self) -> int:
        return self.gamma.shape[0]


@dataclass(frozen=True, eq=False)
class LayerSpec(_Record):
    attention: AttentionSpec
    ffn: FfnSpec
    attn_residual: bool = True
    ffn_residual: bool = True
    norm_mode: str = "none"
    attn_norm: LayerNormSpec | None = None
    ffn_norm: LayerNormSpec | None = None

    def __post_init__(self):
        _check_choice(self.norm_mode, NORM_MODES, "norm mode")


@dataclass(frozen=True, eq=False)
class PosEnc(_Record):
    """One positional-encoding block, added into channels [offset, offset + width)."""

    kind: str = "none"
    offset: int = 0
    max_len: int | None = None
    exponents: tuple = ()
    base: float = 10000.0
    dim: int = 2          # sinusoidal only
    m: int | None = None  # almost-orthogonal only
    seed: int | None = None
    eps: float = 0.25

    def __post_init__(self):
        _check_choice(self.kind, POS_KINDS, "positional encoding")
        object.__setattr__(self, "exponents", tuple(float(e) for e in self.exponents))

    @property
    def width(self) -> int:
        k = self.kind
        if k == "none":
            return 0
        if k in ("inverse", "ratio", "alternating", "constant"):
            return 1
        if k == "powers":
            return len(self.exponents)
        if k == "sinusoidal":
            return self.dim
        if k == "one-hot":
            return int(self.max_len or 0)
        return int(self.m or 0)


@dataclass(frozen=True, eq=False)
class OutputHead(_Record):
    kind: str = "raw"
    matrix: np.ndarray | None = None

    def __post_init__(self):
        _check_choice(self.kind, HEAD_KINDS, "output head")
        if self.matrix is not None:
            object.__setattr__(self, "matrix", as_array(self.matrix, 2))


@dataclass(frozen=True, eq=False)
class TransformerSpec(_Record):
    alphabet: tuple
    d: int
    embedding: dict
    pos_enc: tuple = ()
    layers: tuple = ()
    head: OutputHead = field(default_factory=OutputHead)
    final_norm: LayerNormSpec | None = None
    max_len: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "alphabet", tuple(self.alphabet))
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "embedding", {s: as_array(v, 1) for s, v in self.embedding.items()})
        object.__setattr__(self, "pos_enc", tuple(self.pos_enc))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "meta", json.loads(json.dumps(self.meta)))


class StreamLayout:
    """Named channels (offset, width) inside the residual stream.

    `capacity=None` grows on demand; a fixed capacity raises on overflow.
    Each channel also records which build stages wrote to it.
    """

    def __init__(self, capacity: int | None = None):
        self.capacity = capacity
        self._channels: dict[str, tuple[int, int]] = {}
        self._writers: dict[str, list[str]] = {}
        self._used = 0

    def allocate(self, name: str, width: int) -> slice:
        if name in self._channels:
            raise LayoutError(f"channel {name!r} already allocated")
        if width < 1:
            raise LayoutError(f"channel width must be >= 1, got {width}")
        if self.capacity is not None and self._used + width > self.capacity:
            raise LayoutError(
                f"cannot fit {name!r} (width {width}) at offset {self._used} in d={self.capacity}")
        self._channels[name] = (self._used, width)
        self._writers[name] = []
        self._used += width
        return slice(self._used - width, self._used)

    def __getitem__(self, name: str) -> slice:
        off, w = self._channels[name]
        return slice(off, off + w)

    def __contains__(self, name: str) -> bool:
        return name in self._channels

    def index(self, name: str, k: int = 0) -> int:
        off, w = self._channels[name]
        if not 0 <= k < w:
            raise LayoutError(f"index {k} outside channel {name!r} of width {w}")
        return off + k

    def indices(self, name: str) -> list[int]:
        s = self[name]
        return list(range(s.start, s.stop))

    def mark_written(self, name: str, stage: str) -> None:
        self._writers[name].append(stage)

    def writers(self, name: str) -> list[str]:
        return list(self._writers[name])

    def multiply_written(self) -> list[str]:
        """Channels whose writer count is not exactly one."""
        return [n for n, w in self._writers.items() if len(w) != 1]

    @property
    def d(self) -> int:
        return self.capacity if self.capacity is not None else self._used

    @property
    def channels(self) -> dict[str, tuple[int, int]]:
        return dict(self._channels)

    def to_dict(self) -> dict:
        return {n: [o, w] for n, (o, w) in self._channels.items()}

    @classmethod
    def from_dict(cls, data: dict, d: int | None = None) -> "StreamLayout":
        lay = cls(d)
        for name, (off, w) in sorted(data.items(), key=lambda kv: kv[1][0]):
            lay._channels[name] = (int(off), int(w))
            lay._writers[name] = []
            lay._used = max(lay._used, int(off) + int(w))
        return lay

    def summary(self) -> str:
        return "\n".join(f"{n:>16s}  [{o}:{o + w}]" for n, (o, w) in self._channels.items())


# ---------------------------------------------------------------- validation

def _shape_issue(where: str, name: str, arr, expected: tuple) -> list[str]:
    if arr is None:
        return [f"{where}: {name} missing, expected shape {expected}"]
    if arr.shape != expected:
        return [f"{where}: {name} has shape {arr.shape}, expected {expected}"]
    if not np.all(np.isfinite(arr)):
        return [f"{where}: {name} contains non-finite entries"]
    return []


def _validate_norm(where: str, ln: LayerNormSpec, d: int) -> list[str]:
    out = _shape_issue(where, "gamma", ln.gamma, (d,))
    out += _shape_issue(where, "beta", ln.beta, (d,))
    if not ln.epsilon >= 0:
        out.append(f"{where}: epsilon must be >= 0, got {ln.epsilon}")
    if ln.projection is not None:
        out += _shape_issue(where, "projection", ln.projection, (d, d))
    return out


def validate_layer(layer: LayerSpec, d: int, where: str = "layer") -> list[str]:
    out = []
    att = layer.attention
    dk = att.wq.shape[0]
    out += _shape_issue(f"{where}.attention", "wq", att.wq, (dk, d))
    out += _shape_issue(f"{where}.attention", "wk", att.wk, (dk, d))
    out += _shape_issue(f"{where}.attention", "wv", att.wv, (d, d))
    ff = layer.ffn
    h = ff.w1.shape[0]
    out += _shape_issue(f"{where}.ffn", "w1", ff.w1, (h, d))
    out += _shape_issue(f"{where}.ffn", "b1", ff.b1, (h,))
    out += _shape_issue(f"{where}.ffn", "w2", ff.w2, (d, h))
    out += _shape_issue(f"{where}.ffn", "b2", ff.b2, (d,))
    norms = [("attn_norm", layer.attn_norm), ("ffn_norm", layer.ffn_norm)]
    if layer.norm_mode == "none":
        for name, ln in norms:
            if ln is not None:
                out.append(f"{where}: {name} present but norm_mode is 'none'")
    else:
        if all(ln is None for _, ln in norms):
            out.append(f"{where}: norm_mode {layer.norm_mode!r} without any norm spec")
        for name, ln in norms:
            if ln is not None:
                out += _validate_norm(f"{where}.{name}", ln, d)
    return out


def validate_spec(spec: TransformerSpec) -> list[str]:
    """Return a list of human-readable violations; empty iff the spec is well formed."""
    out = []
    d = spec.d
    if d < 1:
        return [f"spec: d must be >= 1, got {d}"]
    if len(spec.alphabet) == 0:
        out.append("spec: alphabet is empty")
    if len(set(spec.alphabet)) != len(spec.alphabet):
        out.append("spec: alphabet has repeated symbols")
    for sym in spec.alphabet:
        if sym not in spec.embedding:
            out.append(f"embedding: no vector for symbol {sym!r}")
        else:
            out += _shape_issue("embedding", repr(sym), spec.embedding[sym], (d,))
    for sym in spec.embedding:
        if sym not in spec.alphabet:
            out.append(f"embedding: symbol {sym!r} is not in the alphabet")
    for k, pe in enumerate(spec.pos_enc):
        where = f"pos_enc[{k}]"
        if pe.offset < 0 or pe.offset + pe.width > d:
            out.append(f"{where}: channels [{pe.offset}:{pe.offset + pe.width}] exceed d={d}")
        if pe.kind in BOUNDED_POS_KINDS and not pe.max_len:
            out.append(f"{where}: {pe.kind} encoding needs a maximum length")
        if pe.kind == "sinusoidal" and pe.dim % 2:
            out.append(f"{where}: sinusoidal width must be even, got {pe.dim}")
        if pe.kind == "almost-orthogonal" and not pe.m:
            out.append(f"{where}: almost-orthogonal encoding needs m")
    for k, layer in enumerate(spec.layers):
        out += validate_layer(layer, d, f"layers[{k}]")
    head = spec.head
    if head.kind == "binary":
        out += _shape_issue("output_head", "matrix", head.matrix, (1, d))
    elif head.kind == "argmax":
        out += _shape_issue("output_head", "matrix", head.matrix, (len(spec.alphabet), d))
    if spec.final_norm is not None:
        out += _validate_norm("final_norm", spec.final_norm, d)
    return out


# ---------------------------------------------------------------- positions

@lru_cache(maxsize=32)
def _ao_vectors(n_max: int, m: int, eps: float, seed: int) -> np.ndarray:
    from .attention import sample_ao_family
    return sample_ao_family(n_max, m=m, eps=eps, seed=seed).vectors


def positional_encoding(kind: PosEnc, n: int, i: int) -> np.ndarray:
    """Encoding vector for position i (1-based) in a length-n input.

    Sinusoidal encodings also accept i = 0.
    """
    if kind.kind == "sinusoidal":
        if not 0 <= i <= max(n, 0):
            raise ParameterError(f"position {i} outside [0, {n}]")
    elif not 1 <= i <= n:
        raise ParameterError(f"position {i} outside [1, {n}]")
    if kind.kind in BOUNDED_POS_KINDS:
        N = int(kind.max_len)
        if i > N or n > N:
            raise LengthBoundError(f"position {i} (length {n}) exceeds maximum length {N}")
    k = kind.kind
    if k == "none":
        return np.zeros(0)
    if k == "inverse":
        return np.array([1.0 / i])
    if k == "ratio":
        return np.array([i / n])
    if k == "powers":
        return np.array([float(i) ** e for e in kind.exponents])
    if k == "alternating":
        return np.array([-1.0 if i % 2 else 1.0])
    if k == "constant":
        return np.array([1.0])
    if k == "sinusoidal":
        if kind.dim % 2:
            raise ParameterError("sinusoidal encoding needs an even width")
        out = np.empty(kind.dim)
        for c in range(kind.dim // 2):
            angle = i / kind.base ** (2 * c / kind.dim)
            out[2 * c] = math.cos(angle)
            out[2 * c + 1] = math.sin(angle)
        return out
    if k == "one-hot":
        out = np.zeros(int(kind.max_len))
        out[i - 1] = 1.0
        return out
    # almost-orthogonal
    seed = 0 if kind.seed is None else int(kind.seed)
    return _ao_vectors(int(kind.max_len), int(kind.m), float(kind.eps), seed)[i - 1].copy()


def check_length(spec: TransformerSpec, n: int) -> None:
    if n < 1:
        raise ParameterError("input must contain at least one symbol")
    if spec.max_len is not None and n > spec.max_len:
        raise LengthBoundError(f"input length {n} exceeds maximum length {spec.max_len}")


def add_positions(spec: TransformerSpec, x: np.ndarray) -> np.ndarray:
    """Add every positional block in place to x of shape (..., n, d); returns x."""
    n = x.shape[-2]
    for pe in spec.pos_enc:
        if pe.width == 0:
            continue
        sl = slice(pe.offset, pe.offset + pe.width)
        for i in range(n):
            x[..., i, sl] += positional_encoding(pe, n, i + 1)
    return x


def embed(spec: TransformerSpec, word) -> np.ndarray:
    """Input matrix (n x d): word embedding plus every positional block."""
    symbols = list(word)
    check_length(spec, len(symbols))
    x = np.zeros((len(symbols), spec.d))
    for i, sym in enumerate(symbols):
        if sym not in spec.embedding:
            raise UnknownSymbolError(f"symbol {sym!r} is not in the alphabet")
        x[i] = spec.embedding[sym]
    return add_positions(spec, x)


# ---------------------------------------------------------------- serialization

def _enc_arr(a):
    return None if a is None else a.tolist()


def _enc_norm(ln):
    if ln is None:
        return None
    return {"gamma": _enc_arr(ln.gamma), "beta": _enc_arr(ln.beta),
            "epsilon": ln.epsilon, "projection": _enc_arr(ln.projection)}


def layer_to_dict(layer: LayerSpec) -> dict:
    a, f = layer.attention, layer.ffn
    return {
        "attention": {"wq": _enc_arr(a.wq), "wk": _enc_arr(a.wk), "wv": _enc_arr(a.wv),
                      "d_key": a.d_key, "masking": a.masking, "weighting": a.weighting,
                      "scale": a.scale, "first_position_zero": a.first_position_zero},
        "ffn": {"w1": _enc_arr(f.w1), "b1": _enc_arr(f.b1), "w2": _enc_arr(f.w2),
                "b2": _enc_arr(f.b2), "d_hid": f.d_hid, "activation": f.activation},
        "attn_residual": layer.attn_residual,
        "ffn_residual": layer.ffn_residual,
        "norm_mode": layer.norm_mode,
        "attn_norm": _enc_norm(layer.attn_norm),
        "ffn_norm": _enc_norm(layer.ffn_norm),
    }


def _pos_to_dict(pe: PosEnc) -> dict:
    return {"kind": pe.kind, "offset": pe.offset, "max_len": pe.max_len,
            "exponents": list(pe.exponents), "base": pe.base, "dim": pe.dim,
            "m": pe.m, "seed": pe.seed, "eps": pe.eps}


def spec_to_dict(spec: TransformerSpec) -> dict:
    return {
        "version": FORMAT_VERSION,
        "alphabet": list(spec.alphabet),
        "d": spec.d,
        "embedding": {s: _enc_arr(v) for s, v in spec.embedding.items()},
        "pos_enc": [_pos_to_dict(p) for p in spec.pos_enc],
        "layers": [layer_to_dict(layer) for layer in spec.layers],
        "output_head": {"kind": spec.head.kind, "matrix": _enc_arr(spec.head.matrix)},
        "final_norm": _enc_norm(spec.final_norm),
        "max_len": spec.max_len,
        "meta": spec.meta,
    }


def serialize(spec: TransformerSpec) -> bytes:
    return json.dumps(spec_to_dict(spec), allow_nan=False).encode("utf-8")


def _dec_norm(data):
    if data is None:
        return None
    proj = data.get("projection")
    return LayerNormSpec(data["gamma"], data["beta"], data["epsilon"],
                         None if proj is None else proj)


def _dec_2d(data, cols: int):
    # Zero-row matrices serialize as [] and lose their column count.
    arr = np.array(data, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, cols))
    return arr


def layer_from_dict(data: dict, d: int) -> LayerSpec:
    a, f = data["attention"], data["ffn"]
    att = AttentionSpec(_dec_2d(a["wq"], d), _dec_2d(a["wk"], d), _dec_2d(a["wv"], d),
                        a["masking"], a["weighting"], bool(a["scale"]),
                        bool(a["first_position_zero"]))
    hid = int(f.get("d_hid", len(f["b1"])))
    w2 = np.array(f["w2"], dtype=np.float64)
    if w2.size == 0:
        w2 = np.zeros((d, hid))
    ffn = FfnSpec(_dec_2d(f["w1"], d), f["b1"], w2, f["b2"], f["activation"])
    return LayerSpec(att, ffn, bool(data["attn_residual"]), bool(data["ffn_residual"]),
                     data["norm_mode"], _dec_norm(data["attn_norm"]), _dec_norm(data["ffn_norm"]))


def spec_from_dict(data: dict) -> TransformerSpec:
    if not isinstance(data, dict) or "version" not in data:
        raise PayloadError("payload has no version field")
    if data["version"] != FORMAT_VERSION:
        raise VersionError(f"unsupported format version {data['version']!r}")
    try:
        d = int(data["d"])
        head = data["output_head"]
        return TransformerSpec(
            alphabet=tuple(data["alphabet"]),
            d=d,
            embedding={s: v for s, v in data["embedding"].items()},
            pos_enc=tuple(PosEnc(p["kind"], int(p["offset"]), p["max_len"], tuple(p["exponents"]),
                                 float(p["base"]), int(p["dim"]), p["m"], p["seed"], float(p["eps"]))
                          for p in data["pos_enc"]),
            layers=tuple(layer_from_dict(layer, d) for layer in data["layers"]),
            head=OutputHead(head["kind"], head["matrix"]),
            final_norm=_dec_norm(data.get("final_norm")),
            max_len=data.get("max_len"),
            meta=data.get("meta") or {},
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, SpecError) and not isinstance(exc, (ParameterError, ShapeError)):
            raise
        raise PayloadError(f"malformed spec payload: {exc}") from exc


def deserialize(payload: bytes | str) -> TransformerSpec:
    try:
        text = payload.decode("utf-8") if isinstance(payload, (bytes, bytearray)) else payload
        data = json.loads(text)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PayloadError(f"malformed spec payload: {exc}") from exc
    return spec_from_dict(data)


def save_spec(spec: TransformerSpec, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(spec))


def load_spec(path) -> TransformerSpec:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


# ---------------------------------------------------------------- fragments
# Recipes below the program level (a network, a head, a layer stack) are
# stored in the same JSON style under a "fragment" kind.

FRAGMENT_KINDS = ("ffn", "attention", "layers")


def ffn_to_dict(f: FfnSpec) -> dict:
    return {"w1": _enc_arr(f.w1), "b1": _enc_arr(f.b1), "w2": _enc_arr(f.w2),
            "b2": _enc_arr(f.b2), "activation": f.activation}


def ffn_from_dict(data: dict) -> FfnSpec:
    return FfnSpec(data["w1"], data["b1"], data["w2"], data["b2"], data["activation"])


def attention_to_dict(a: AttentionSpec) -> dict:
    return layer_to_dict(LayerSpec(a, FfnSpec(np.zeros((1, a.d)), np.zeros(1),
                                               np.zeros((a.d, 1)), np.zeros(a.d))))["attention"]


def fragment_to_dict(obj, layout: StreamLayout | None = None, meta: dict | None = None) -> dict:
    out = {"version": FORMAT_VERSION, "meta": dict(meta or {})}
    if isinstance(obj, FfnSpec):
        out.update(fragment="ffn", d_in=obj.d_in, d_out=obj.d_out, ffn=ffn_to_dict(obj))
    elif isinstance(obj, AttentionSpec):
        out.update(fragment="attention", d=obj.d, attention=attention_to_dict(obj))
    else:
        layers = (obj,) if isinstance(obj, LayerSpec) else tuple(obj)
        if not layers:
            raise ParameterError("empty layer stack")
        out.update(fragment="layers", d=layers[0].attention.d,
                   layers=[layer_to_dict(layer) for layer in layers])
    if layout is not None:
        out["layout"] = layout.to_dict()
    return out


def fragment_from_dict(data: dict):
    """Inverse of fragment_to_dict: an FfnSpec, AttentionSpec or tuple of LayerSpec."""
    if data.get("version") != FORMAT_VERSION:
        raise VersionError(f"unsupported format version {data.get('version')!r}")
    kind = data.get("fragment")
    try:
        if kind == "ffn":
            return ffn_from_dict(data["ffn"])
        if kind == "attention":
            d = int(data["d"])
            a = data["attention"]
            return AttentionSpec(_dec_2d(a["wq"], d), _dec_2d(a["wk"], d), _dec_2d(a["wv"], d),
                                 a["masking"], a["weighting"], bool(a["scale"]),
                                 bool(a["first_position_zero"]))
        if kind == "layers":
            d = int(data["d"])
            return tuple(layer_from_dict(layer, d) for layer in data["layers"])
    except (KeyError, TypeError) as exc:
        raise PayloadError(f"malformed fragment payload: {exc}") from exc
    raise PayloadError(f"unknown fragment kind {kind!r}")


def load_document(path):
    """Read a spec or fragment file; returns (kind, object, raw dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        data = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PayloadError(f"malformed payload: {exc}") from exc
    if isinstance(data, dict) and "fragment" in data:
        return data["fragment"], fragment_from_dict(data), data
    return "transformer", spec_from_dict(data), data
