"""Feed-forward recipes: exact piecewise-linear maps, comparators, Boolean tables.

Every builder returns an `FfnSpec`. Unless noted, the recipes are exact over
the reals; in float64 they are exact whenever the intermediate sums are
representable (small integers and dyadic rationals, for instance).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .ir import FfnSpec, ParameterError

MAX_BOOLEAN_ARITY = 16


def _ffn(w1, b1, w2, b2, activation="relu") -> FfnSpec:
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    return FfnSpec(np.atleast_2d(w1), np.asarray(b1, dtype=np.float64).reshape(-1),
                   w2.reshape(-1, w1.shape[0]) if w2.ndim < 2 else w2,
                   np.asarray(b2, dtype=np.float64).reshape(-1), activation)


def build_identity(d: int) -> FfnSpec:
    """x -> ReLU(x) - ReLU(-x), coordinate-wise; hidden width 2d."""
    if d < 1:
        raise ParameterError("d must be >= 1")
    eye = np.eye(d)
    return _ffn(np.vstack([eye, -eye]), np.zeros(2 * d), np.hstack([eye, -eye]), np.zeros(d))


def build_zero(d: int, d_out: int | None = None) -> FfnSpec:
    """All-zero weights: with a residual connection the layer passes x through."""
    if d < 1:
        raise ParameterError("d must be >= 1")
    d_out = d if d_out is None else d_out
    return _ffn(np.zeros((1, d)), np.zeros(1), np.zeros((d_out, 1)), np.zeros(d_out))


def build_cancel_residual(f: FfnSpec) -> FfnSpec:
    """f' with f'(x) + x = f(x): append an identity block with negated output."""
    if f.d_in != f.d_out:
        raise ParameterError("cancelling the residual needs a d -> d network")
    if f.activation != "relu":
        raise ParameterError("the identity block needs relu activation")
    d = f.d_in
    eye = np.eye(d)
    w1 = np.vstack([f.w1, eye, -eye])
    b1 = np.concatenate([f.b1, np.zeros(2 * d)])
    w2 = np.hstack([f.w2, -eye, eye])
    return _ffn(w1, b1, w2, f.b2)


def build_minmax(kind: str) -> FfnSpec:
    """(x, y) -> min or max, via x - ReLU(x - y) and x + ReLU(y - x)."""
    if kind == "min":
        return _ffn([[1, 0], [-1, 0], [1, -1]], np.zeros(3), [[1, -1, -1]], [0])
    if kind == "max":
        return _ffn([[1, 0], [-1, 0], [-1, 1]], np.zeros(3), [[1, -1, 1]], [0])
    raise ParameterError(f"kind must be 'min' or 'max', got {kind!r}")


def build_add() -> FfnSpec:
    """(x, y) -> x + y."""
    return _ffn([[1, 1], [-1, -1]], np.zeros(2), [[1, -1]], [0])


def build_subtract() -> FfnSpec:
    """(x, y) -> x - y: the adder with its second input negated by routing."""
    from .assembly import route_ffn
    return route_ffn(np.eye(1), build_add(), np.diag([1.0, -1.0]))


def build_scale(c: float) -> FfnSpec:
    """x -> c x."""
    c = float(c)
    if not math.isfinite(c):
        raise ParameterError("scale factor must be finite")
    return _ffn([[1], [-1]], np.zeros(2), [[c, -c]], [0])


def build_mul_gelu(activation: str = "gelu-exact") -> FfnSpec:
    """(x, y) -> approx. x y from three GELU units; error at most (|x|+|y|)^3 / 4."""
    if activation not in ("gelu-exact", "gelu-tanh"):
        raise ParameterError("multiplication needs a GELU activation")
    k = math.sqrt(math.pi / 2)
    return _ffn([[1, 1], [1, 0], [0, 1]], np.zeros(3), [[k, -k, -k]], [0], activation)


def mul_error_bound(x, y):
    return 0.25 * (np.abs(x) + np.abs(y)) ** 3


def build_comparator(kind: str, eps: float | None = None, parameterized: bool = False) -> FfnSpec:
    """Threshold tests against zero.

    Fixed mode (1 -> 1), exact outside the band of width eps:
      gt: 0 for x <= 0, 1 for x >= eps
      ge: 0 for x <= -eps, 1 for x >= 0
      eq: 1 at 0, 0 for |x| >= eps
    Parameterized mode takes (x, eps) and answers 0 or eps instead of 0 or 1.
    """
    if kind not in ("gt", "ge", "eq"):
        raise ParameterError(f"comparator kind must be gt, ge or eq, got {kind!r}")
    if parameterized:
        if kind == "gt":    # ReLU(x) - ReLU(x - e)
            return _ffn([[1, 0], [1, -1]], np.zeros(2), [[1, -1]], [0])
        if kind == "ge":    # ReLU(x + e) - ReLU(x)
            return _ffn([[1, 1], [1, 0]], np.zeros(2), [[1, -1]], [0])
        # ReLU(x + e) - 2 ReLU(x) + ReLU(x - e)
        return _ffn([[1, 1], [1, 0], [1, -1]], np.zeros(3), [[1, -2, 1]], [0])
    if eps is None or not eps > 0 or not math.isfinite(eps):
        raise ParameterError("fixed comparators need a finite eps > 0")
    r = 1.0 / eps
    # The saturated side of each form is computed as u - (u - 1) or from the
    # bias alone, both of which are exact in float64.
    if kind == "gt":    # ReLU(x/e) - ReLU(x/e - 1)
        return _ffn([[r], [r]], [0, -1], [[1, -1]], [0])
    if kind == "ge":    # 1 - ReLU(-x/e) + ReLU(-x/e - 1)
        return _ffn([[-r], [-r]], [0, -1], [[-1, 1]], [1])
    # 1 - GT(x) - GT(-x)
    return _ffn([[r], [r], [-r], [-r]], [0, -1, 0, -1], [[-1, 1, -1, 1]], [1])


@dataclass(frozen=True)
class BooleanTable:
    """Truth values of an m-ary Boolean function.

    Entry k belongs to the input whose bits spell k with the first input as the
    most significant bit.
    """

    m: int
    bits: tuple

    def __post_init__(self):
        if not 1 <= self.m <= MAX_BOOLEAN_ARITY:
            raise ParameterError(f"arity must lie in [1, {MAX_BOOLEAN_ARITY}], got {self.m}")
        bits = tuple(int(b) for b in self.bits)
        if len(bits) != 2 ** self.m or any(b not in (0, 1) for b in bits):
            raise ParameterError(f"table needs exactly {2 ** self.m} bits")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_function(cls, m: int, fn) -> "BooleanTable":
        return cls(m, tuple(int(bool(fn(*xs))) for xs in product((0, 1), repeat=m)))

    def __call__(self, *xs) -> int:
        k = 0
        for b in xs:
            k = 2 * k + int(b)
        return self.bits[k]


def build_boolean(table: BooleanTable) -> FfnSpec:
    """One hidden unit per input pattern xi: ReLU((2 xi - 1) . x - |xi| + 1) fires only on xi."""
    m = table.m
    pats = np.array(list(product((0, 1), repeat=m)), dtype=np.float64)
    w1 = 2 * pats - 1
    b1 = 1 - pats.sum(axis=1)
    return _ffn(w1, b1, np.array([table.bits], dtype=np.float64), [0])


def build_conditional(lo: float = 0.0, hi: float = 1.0) -> FfnSpec:
    """(t, x, y) -> x if t = 1 else y, for t in {0, 1} and x, y in [lo, hi].

    On [0, 1]: ReLU(x + t - 1) + ReLU(y - t). Other ranges are mapped onto
    [0, 1] and back; keep hi - lo a power of two for exact results.
    """
    if not hi > lo:
        raise ParameterError("need lo < hi")
    s = hi - lo
    return _ffn([[1, 1 / s, 0], [-1, 0, 1 / s]], [-1 - lo / s, -lo / s], [[s, s]], [lo])


@dataclass(frozen=True)
class CpwlKnots:
    xs: tuple
    ys: tuple

    def __post_init__(self):
        xs = tuple(float(v) for v in self.xs)
        ys = tuple(float(v) for v in self.ys)
        if len(xs) < 2 or len(xs) != len(ys):
            raise ParameterError("need at least two knots with matching xs and ys")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ParameterError("knot xs must be strictly increasing")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def slopes(self) -> list[float]:
        return [(y1 - y0) / (x1 - x0)
                for x0, x1, y0, y1 in zip(self.xs, self.xs[1:], self.ys, self.ys[1:])]


def build_cpwl(knots: CpwlKnots) -> FfnSpec:
    """Interpolate the knots; the outer pieces extend affinely. Hidden width = #pieces + 1."""
    if not isinstance(knots, CpwlKnots):
        knots = CpwlKnots(*knots)
    m = knots.slopes
    inner = knots.xs[1:-1]
    w1 = np.array([-1.0, 1.0] + [1.0] * len(inner)).reshape(-1, 1)
    b1 = np.array([0.0, 0.0] + [-x for x in inner])
    w2 = np.array([[-m[0], m[0]] + [m[k] - m[k - 1] for k in range(1, len(m))]])
    b2 = [knots.ys[0] - m[0] * knots.xs[0]]
    if not np.all(np.isfinite(w2)):
        raise ParameterError("slopes must be finite")
    return _ffn(w1, b1, w2, b2)


def build_clip(delta: float, d: int = 1) -> FfnSpec:
    """x -> max(-delta, min(x, delta)) per coordinate, as ReLU(x + delta) - ReLU(x - delta) - delta."""
    if not delta > 0:
        raise ParameterError("delta must be > 0")
    eye = np.eye(d)
    return _ffn(np.vstack([eye, eye]), np.concatenate([np.full(d, delta), np.full(d, -delta)]),
                np.hstack([eye, -eye]), np.full(d, -delta))
