"""Self-check suites behind `tfrecipes verify`: constructions against brute-force oracles."""
from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field

import numpy as np

from .assembly import ffn_layer, parallel_compose, route_ffn, serial_compose
from .attention import ENCODINGS, LookupProblem, apply_tiebreak, build_lookup
from .ffn import (
    BooleanTable, CpwlKnots, build_add, build_boolean, build_cancel_residual, build_comparator,
    build_conditional, build_cpwl, build_identity, build_minmax, build_scale,
)
from .interpreter import ffn_forward, forward, run_batch, weight_matrix
from .ir import AttentionSpec
from .oracles import (
    bracket_alphabet, hardmax_softmax_gap, oracle_dyck, oracle_induction, oracle_lookup,
)
from .programs import build_dyck1, build_dyck_depth, build_induction, decide_batch

SEED_ENV = "TFRECIPES_SEED"


def default_seed() -> int:
    """Seed for randomized checks and almost-orthogonal sampling; overridable by environment."""
    return int(os.environ.get(SEED_ENV, "0"))


@dataclass
class SuiteReport:
    name: str
    checked: int = 0
    failed: int = 0
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.failed == 0 and self.checked > 0

    def to_dict(self) -> dict:
        return {"suite": self.name, "checked": self.checked, "failed": self.failed,
                "passed": self.passed, "details": self.details}


def _count(report: SuiteReport, key: str, ok: np.ndarray) -> None:
    ok = np.asarray(ok, dtype=bool).ravel()
    report.checked += ok.size
    report.failed += int((~ok).sum())
    report.details[key] = {"checked": int(ok.size), "failed": int((~ok).sum())}


def dyadic_grid(lo: float, hi: float, step: float) -> np.ndarray:
    return np.arange(lo, hi + step / 2, step)


def verify_ffn(samples: int = 1000, seed: int | None = None) -> SuiteReport:
    """Every exact FFN recipe against its defining formula on dyadic inputs."""
    rng = np.random.default_rng(default_seed() if seed is None else seed)
    rep = SuiteReport("ffn")

    def dy(shape, lo=-8.0, hi=8.0):
        return np.round(rng.uniform(lo, hi, shape) * 64) / 64

    x = dy((samples, 3))
    _count(rep, "identity", ffn_forward(build_identity(3), x) == x)
    p = dy((samples, 2))
    _count(rep, "min", ffn_forward(build_minmax("min"), p)[:, 0] == p.min(axis=1))
    _count(rep, "max", ffn_forward(build_minmax("max"), p)[:, 0] == p.max(axis=1))
    _count(rep, "add", ffn_forward(build_add(), p)[:, 0] == p.sum(axis=1))
    _count(rep, "scale", ffn_forward(build_scale(-2.5), p[:, :1])[:, 0] == -2.5 * p[:, 0])
    for m in range(1, 9):
        table = BooleanTable(m, tuple(rng.integers(0, 2, 2 ** m)))
        bits = np.array(list(itertools.product((0, 1), repeat=m)), dtype=np.float64)
        got = ffn_forward(build_boolean(table), bits)[:, 0]
        _count(rep, f"boolean-{m}", got == np.array(table.bits))
    t = rng.integers(0, 2, samples).astype(np.float64)
    xy = np.round(rng.uniform(0, 1, (samples, 2)) * 1024) / 1024
    got = ffn_forward(build_conditional(), np.column_stack([t, xy]))[:, 0]
    _count(rep, "conditional", got == np.where(t == 1, xy[:, 0], xy[:, 1]))
    knots = CpwlKnots((-2.0, -1.0, 0.5, 2.5), (1.0, -1.0, 0.5, 0.0))  # slopes -2, 1, -1/4
    z = dy((samples, 1), -4, 4)
    _count(rep, "cpwl", ffn_forward(build_cpwl(knots), z)[:, 0] == _cpwl(z[:, 0], knots))
    f = build_minmax("max")
    sq = route_ffn(np.ones((2, 1)), f, np.eye(2))  # 2 -> 2 network to cancel
    got = ffn_forward(build_cancel_residual(sq), p) + p
    _count(rep, "cancel-residual", got == ffn_forward(sq, p))
    for kind, eps in (("gt", 0.5), ("ge", 0.5), ("eq", 0.5)):
        u = dyadic_grid(-2, 2, 1 / 16)[:, None]
        y = ffn_forward(build_comparator(kind, eps), u)[:, 0]
        v = u[:, 0]
        if kind == "gt":
            want, live = (v >= eps).astype(float), (v <= 0) | (v >= eps)
        elif kind == "ge":
            want, live = (v >= 0).astype(float), (v <= -eps) | (v >= 0)
        else:
            want, live = (v == 0).astype(float), (v == 0) | (np.abs(v) >= eps)
        _count(rep, f"comparator-{kind}", y[live] == want[live])
    return rep


def _cpwl(z: np.ndarray, knots: CpwlKnots) -> np.ndarray:
    xs, ys, m = knots.xs, knots.ys, knots.slopes
    out = np.empty_like(z)
    for k, v in enumerate(z):
        seg = min(max(np.searchsorted(xs, v, side="right") - 1, 0), len(m) - 1)
        out[k] = ys[seg] + m[seg] * (v - xs[seg])
    return out


def verify_lookup(problems: int = 200, max_len: int = 32, seed: int | None = None) -> SuiteReport:
    rng = np.random.default_rng(default_seed() if seed is None else seed)
    rep = SuiteReport("lookup")
    for enc in ENCODINGS:
        blk = build_lookup(enc, max_len, seed=int(rng.integers(1 << 30))) \
            if enc in ("one-hot", "almost-orthogonal") else build_lookup(enc, max_len)
        ok = []
        for _ in range(problems):
            n = int(rng.integers(1, max_len + 1))
            q = rng.integers(1, n + 1, n)
            v = rng.integers(-100, 101, n).astype(np.float64)
            prob = LookupProblem(q, v, enc, max_len)
            ok.append(np.array_equal(blk.run(prob), np.array(oracle_lookup(list(q), list(v)))))
        _count(rep, enc, ok)
    return rep


def verify_gap(trials: int = 1000, seed: int | None = None) -> SuiteReport:
    rng = np.random.default_rng(default_seed() if seed is None else seed)
    rep = SuiteReport("gap")
    ok, worst = [], 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 33))
        s = rng.normal(0, 3, n)
        if np.sum(s == s.max()) > 1:
            continue
        r = hardmax_softmax_gap(s)
        ok.append(r.holds)
        worst = max(worst, r.gap / r.bound)
    _count(rep, "rows", ok)
    rep.details["max_ratio"] = worst
    return rep


def verify_tiebreak(trials: int = 500, seed: int | None = None) -> SuiteReport:
    """apply_tiebreak + ahardmax against lhardmax / rhardmax on integer score rows."""
    rng = np.random.default_rng(default_seed() if seed is None else seed)
    rep = SuiteReport("tiebreak")
    ok = []
    for _ in range(trials):
        n = int(rng.integers(1, 33))
        keys = rng.integers(0, 4, n).astype(np.float64)
        x = np.column_stack([keys, np.ones(n), np.arange(1, n + 1) / n])
        base = AttentionSpec(np.array([[0.0, 1.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]),
                             np.eye(3), masking="none", weighting="ahardmax")
        for direction, ref in (("leftmost", "lhardmax"), ("rightmost", "rhardmax")):
            tb = apply_tiebreak(base, 0.5, direction, "ratio", 1, 2)
            s_plain = x @ base.wq.T @ (x @ base.wk.T).T
            want = weight_matrix(s_plain, ref)
            s_tb = x @ tb.wq.T @ (x @ tb.wk.T).T
            ok.append(np.array_equal(weight_matrix(s_tb, "ahardmax"), want))
    _count(rep, "vectors", ok)
    return rep


def verify_composition(instances: int = 50, seed: int | None = None) -> SuiteReport:
    rng = np.random.default_rng(default_seed() if seed is None else seed)
    rep = SuiteReport("composition")
    ok_r, ok_s, ok_p = [], [], []
    for _ in range(instances):
        x = np.round(rng.uniform(-4, 4, (5, 4)) * 16) / 16
        # routing: the adder applied to channels (2, 0), written to channel 3
        R = np.zeros((2, 4))
        R[0, 2] = R[1, 0] = 1.0
        L = np.zeros((4, 1))
        L[3, 0] = 1.0
        got = ffn_forward(route_ffn(L, build_add(), R), x)
        want = np.zeros_like(x)
        want[:, 3] = x[:, 2] + x[:, 0]
        ok_r.append(np.array_equal(got, want))
        a = ffn_layer(route_ffn(np.eye(4)[:, [1]], build_minmax("max"), np.eye(4)[[0, 2]]))
        b = ffn_layer(route_ffn(np.eye(4)[:, [3]], build_add(), np.eye(4)[[1, 2]]))
        y1, _ = forward((a,), x)
        y2, _ = forward((b,), y1)
        y12, _ = forward(serial_compose((a,), (b,)), x)
        ok_s.append(np.array_equal(y2, y12))
        par = parallel_compose((a,), (b,))
        z = np.hstack([x, x[:, ::-1]])
        yp, _ = forward(par, z)
        ya, _ = forward((a,), x)
        yb, _ = forward((b,), x[:, ::-1])
        ok_p.append(np.array_equal(yp, np.hstack([ya, yb])) and par[0].attention.d == 8)
    _count(rep, "routing", ok_r)
    _count(rep, "serial", ok_s)
    _count(rep, "parallel", ok_p)
    return rep


def _all_words(alphabet: str, max_len: int):
    for n in range(1, max_len + 1):
        yield n, ["".join(p) for p in itertools.product(alphabet, repeat=n)]


def verify_dyck(max_len: int = 12, k: int = 1, depth: int | None = None) -> SuiteReport:
    """Exhaustive sweep of every word up to max_len."""
    rep = SuiteReport("dyck")
    if depth is None:
        specs = {"external-check": build_dyck1(), "nonuniform": build_dyck1("nonuniform", max_len)}
    else:
        specs = {f"k{k}-depth{depth}": build_dyck_depth(k, depth)}
    alpha = bracket_alphabet(k)
    for name, spec in specs.items():
        ok = []
        for _, words in _all_words(alpha, max_len):
            want = np.array([oracle_dyck(w, k, depth) for w in words])
            ok.append(decide_batch(spec, words) == want)
        _count(rep, name, np.concatenate(ok))
    return rep


def verify_induction(trials: int = 1000, max_len: int = 64, seed: int | None = None,
                     sizes=(2, 4, 26)) -> SuiteReport:
    rng = np.random.default_rng(default_seed() if seed is None else seed)
    rep = SuiteReport("induction")
    for size in sizes:
        alpha = tuple(chr(ord("A") + c) for c in range(size))
        words = ["".join(rng.choice(alpha, int(rng.integers(1, max_len + 1)))) for _ in range(trials)]
        by_len: dict = {}
        for w in words:
            by_len.setdefault(len(w), []).append(w)
        for variant in ("rightmost", "frequent"):
            spec = build_induction(alpha, variant, max_len)
            ok = []
            for ws in by_len.values():
                outs, _ = run_batch(spec, ws)
                ok.extend(o == oracle_induction(w, variant, alpha) for w, o in zip(ws, outs))
            _count(rep, f"{variant}-{size}", ok)
    return rep


SUITES = {
    "ffn": verify_ffn,
    "lookup": verify_lookup,
    "gap": verify_gap,
    "tiebreak": verify_tiebreak,
    "composition": verify_composition,
    "dyck": verify_dyck,
    "induction": verify_induction,
}
