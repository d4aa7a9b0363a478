"""Brute-force reference answers. Plain loops only; nothing here runs a transformer."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .ir import ParameterError, UnknownSymbolError

BRACKETS = "()[]{}<>"


def bracket_alphabet(k: int) -> str:
    """Opening/closing pairs for k bracket types, interleaved: '()[]' for k=2."""
    if not 1 <= k <= len(BRACKETS) // 2:
        raise ParameterError(f"k must lie in [1, {len(BRACKETS) // 2}]")
    return BRACKETS[: 2 * k]


def oracle_dyck(w: str, k: int = 1, depth: int | None = None) -> bool:
    """Stack simulation; `depth` bounds the nesting when given."""
    if len(w) == 0:
        raise ParameterError("inputs must be non-empty")
    alpha = bracket_alphabet(k)
    stack = []
    for c in w:
        pos = alpha.find(c)
        if pos < 0:
            raise UnknownSymbolError(f"symbol {c!r} is not a bracket of the first {k} types")
        if pos % 2 == 0:
            stack.append(pos // 2)
            if depth is not None and len(stack) > depth:
                return False
        else:
            if not stack or stack[-1] != pos // 2:
                return False
            stack.pop()
    return not stack


def oracle_balance(w: str) -> bool:
    """Single bracket type: every prefix has #( >= #) and the totals agree."""
    bal = 0
    for c in w:
        bal += 1 if c == "(" else -1
        if bal < 0:
            return False
    return bal == 0


def max_depth(w: str, k: int = 1) -> int:
    alpha = bracket_alphabet(k)
    d = best = 0
    for c in w:
        d += 1 if alpha.index(c) % 2 == 0 else -1
        best = max(best, d)
    return best


def prefix_balance(w: str) -> list[int]:
    out, bal = [], 0
    for c in w:
        bal += 1 if c == "(" else -1
        out.append(bal)
    return out


def bigram_counts(w: str, first: str, second: str) -> list[int]:
    """Running count of the bigram (first, second) ending at or before each position."""
    out, cnt = [], 0
    for i, c in enumerate(w):
        if i > 0 and w[i - 1] == first and c == second:
            cnt += 1
        out.append(cnt)
    return out


def oracle_induction(w: str, variant: str = "rightmost", alphabet=None) -> str:
    if variant not in ("rightmost", "frequent"):
        raise ParameterError(f"unknown induction variant {variant!r}")
    if alphabet is not None:
        for c in w:
            if c not in alphabet:
                raise UnknownSymbolError(f"symbol {c!r} is not in the alphabet")
    out = []
    for i, cur in enumerate(w):
        if variant == "rightmost":
            nxt = cur
            for j in range(i - 1, -1, -1):
                if w[j] == cur:
                    nxt = w[j + 1]
                    break
            out.append(nxt)
        else:
            counts: dict[str, int] = {}
            for j in range(1, i + 1):
                if w[j - 1] == cur:
                    counts[w[j]] = counts.get(w[j], 0) + 1
            if not counts:
                out.append(cur)
            else:
                top = max(counts.values())
                out.append(min(c for c, v in counts.items() if v == top))
    return "".join(out)


def oracle_prefix_average(values) -> list:
    """Means of every prefix; exact Fractions for integer input, floats otherwise."""
    out, total = [], 0
    for i, v in enumerate(values, start=1):
        total += v
        out.append(Fraction(total, i) if isinstance(total, int) else total / i)
    return out


def oracle_lookup(queries, values) -> list:
    """Position i retrieves values[q_i] (queries are 1-based)."""
    n = len(values)
    out = []
    for q in queries:
        if not 1 <= q <= n:
            raise ParameterError(f"query {q} outside [1, {n}]")
        out.append(values[q - 1])
    return out


def oracle_predecessor(values, fill=0.0) -> list:
    return [fill] + list(values[:-1]) if len(values) else []


@dataclass(frozen=True)
class GapReport:
    gap: float      # measured L1 distance between hardmax and softmax
    bound: float    # 2 n exp(-gamma)
    gamma: float    # distance from the maximum to the runner-up

    @property
    def holds(self) -> bool:
        return self.gap <= self.bound


def hardmax_softmax_gap(scores) -> GapReport:
    s = [float(v) for v in scores]
    n = len(s)
    if n == 0:
        raise ParameterError("scores must be non-empty")
    top = max(s)
    arg = [j for j in range(n) if s[j] == top]
    if len(arg) > 1:
        raise ParameterError("scores have tied maxima")
    rest = [v for v in s if v != top]
    gamma = top - max(rest) if rest else math.inf
    exps = [math.exp(v - top) for v in s]
    z = math.fsum(exps)
    gap = math.fsum(abs((1.0 if j == arg[0] else 0.0) - exps[j] / z) for j in range(n))
    bound = 2 * n * math.exp(-gamma) if rest else 0.0
    return GapReport(gap, bound, gamma)
