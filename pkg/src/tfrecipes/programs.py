"""End-to-end programs: induction heads and bracket-language recognizers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import (
    attention_layer, claim, embed_ffn, ffn_layer, place, select, serial_compose, stack_ffns,
)
from .attention import apply_tiebreak, build_average, build_predecessor
from .ffn import BooleanTable, build_boolean, build_comparator
from .interpreter import embed_batch, forward, run
from .ir import (
    AttentionSpec, FfnSpec, LayerSpec, LayoutError, OutputHead, ParameterError, PosEnc,
    StreamLayout, TransformerSpec, validate_spec,
)
from .oracles import bracket_alphabet

DEFAULT_INDUCTION_MAX_LEN = 64


@dataclass(frozen=True)
class DyckParams:
    k: int = 1
    depth: int | None = None
    mode: str = "external-check"   # or "nonuniform"
    max_len: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError("k must be >= 1")
        if self.depth is not None and self.depth < 1:
            raise ParameterError("depth must be >= 1")
        if self.mode not in ("external-check", "nonuniform"):
            raise ParameterError(f"unknown decision mode {self.mode!r}")
        if self.mode == "nonuniform" and (self.max_len is None or self.max_len < 1):
            raise ParameterError("nonuniform mode needs a maximum length")


def _finish(layout: StreamLayout, alphabet, embedding, pos_enc, layers, head, meta,
            max_len=None) -> TransformerSpec:
    bad = layout.multiply_written()
    if bad:
        raise LayoutError(f"channels without exactly one writer: {bad}")
    meta = dict(meta)
    meta["layout"] = layout.to_dict()
    meta["writers"] = {n: layout.writers(n) for n in layout.channels}
    spec = TransformerSpec(tuple(alphabet), layout.d, embedding, tuple(pos_enc), tuple(layers),
                           head, max_len=max_len, meta=meta)
    problems = validate_spec(spec)
    if problems:
        raise ParameterError("; ".join(problems))
    return spec


def _one_hot_embedding(alphabet, layout: StreamLayout, channel: str) -> dict:
    emb = {}
    for k, s in enumerate(alphabet):
        v = np.zeros(layout.d)
        v[layout.index(channel, k)] = 1.0
        emb[s] = v
    return emb


def _argmax_head(layout: StreamLayout, channel: str, size: int) -> OutputHead:
    return OutputHead("argmax", select(size, layout.d, range(size), layout.indices(channel)))


# ---------------------------------------------------------------- induction heads

def _check_alphabet(alphabet) -> tuple:
    alphabet = tuple(alphabet)
    if len(alphabet) < 2 or len(set(alphabet)) != len(alphabet):
        raise ParameterError("need at least two distinct symbols")
    return alphabet


def build_induction_rightmost(alphabet) -> TransformerSpec:
    """Predict the symbol that followed the latest earlier copy of the current symbol.

    Layer 1 copies the previous symbol into `pred`. Layer 2 queries with the
    current symbol against `pred` (one-hot keys, score gap 1) and breaks ties
    towards the right with half the i/n channel; a position with no match
    ends up attending to itself and so predicts its own symbol.
    """
    alphabet = _check_alphabet(alphabet)
    s = len(alphabet)
    lay = StreamLayout()
    lay.allocate("cur", s)
    lay.allocate("ratio", 1)
    lay.allocate("one", 1)
    pred = build_predecessor("strict-mask", width=s)
    names = claim(pred, lay, {"ratio": "ratio", "v": "cur"}, prefix="pred.")
    lay.allocate("next", s)
    for ch in ("cur", "ratio", "one"):
        lay.mark_written(ch, "embedding")
    d = lay.d
    layers = list(place(pred, lay, names, "predecessor"))
    att = AttentionSpec(select(s, d, range(s), lay.indices("cur")),
                        select(s, d, range(s), lay.indices(names["out"])),
                        select(d, d, lay.indices("next"), lay.indices("cur")),
                        masking="future", weighting="ahardmax")
    att = apply_tiebreak(att, 0.5, "rightmost", "ratio", lay.index("one"), lay.index("ratio"))
    layers.append(attention_layer(att))
    lay.mark_written("next", "lookup")
    emb = _one_hot_embedding(alphabet, lay, "cur")
    for v in emb.values():
        v[lay.index("one")] = 1.0
    pos = [PosEnc("ratio", offset=lay.index("ratio"))]
    return _finish(lay, alphabet, emb, pos, layers, _argmax_head(lay, "next", s),
                   {"program": "induction", "variant": "rightmost"})


def build_induction_frequent(alphabet, max_len: int = DEFAULT_INDUCTION_MAX_LEN) -> TransformerSpec:
    """Predict the most frequent successor of the current symbol so far.

    Layer 2 attends uniformly to every position j <= i whose predecessor equals
    the current symbol, averaging one-hot(x_j) into `cnt` (bigram counts over
    a common denominator) and the predecessor into `pavg` (which reads 1 at
    the current symbol iff at least one bigram matched). A comparator bank
    then finds the largest count with alphabetical tie-breaking, and the last
    layer falls back to the current symbol when nothing matched. Comparators
    use margin 1/(2 N^2), so the program is valid up to length N.
    """
    alphabet = _check_alphabet(alphabet)
    s = len(alphabet)
    lay = StreamLayout()
    lay.allocate("cur", s)
    lay.allocate("ratio", 1)
    pred = build_predecessor("strict-mask", width=s)
    names = claim(pred, lay, {"ratio": "ratio", "v": "cur"}, prefix="pred.")
    for name, w in (("cnt", s), ("pavg", s), ("matched", 1), ("wins", s), ("score", s)):
        lay.allocate(name, w)
    for ch in ("cur", "ratio"):
        lay.mark_written(ch, "embedding")
    d = lay.d
    layers = list(place(pred, lay, names, "predecessor"))

    wv = select(d, d, lay.indices("cnt"), lay.indices("cur")) \
        + select(d, d, lay.indices("pavg"), lay.indices(names["out"]))
    att = AttentionSpec(select(s, d, range(s), lay.indices("cur")),
                        select(s, d, range(s), lay.indices(names["out"])),
                        wv, masking="future", weighting="ahardmax")
    # matched = sum_a ReLU(pavg_a + cur_a - 1)
    w1 = np.zeros((s, d))
    for a in range(s):
        w1[a, [lay.index("pavg", a), lay.index("cur", a)]] = 1.0
    matched = FfnSpec(w1, -np.ones(s), select(d, s, [lay.index("matched")] * s, range(s)), np.zeros(d))
    eps = 1.0 / (2 * max_len ** 2)
    gt, ge = build_comparator("gt", eps), build_comparator("ge", eps)
    bank = []
    for a in range(s):
        for b in range(s):
            if a == b:
                continue
            # Earlier symbols win ties, so `a` must beat an earlier `b` strictly.
            cmp = gt if b < a else ge
            diff = FfnSpec(cmp.w1 @ np.array([[1.0, -1.0]]), cmp.b1, cmp.w2, cmp.b2)
            bank.append(embed_ffn(diff, d, [lay.index("cnt", a), lay.index("cnt", b)],
                                  [lay.index("wins", a)]))
    layers.append(LayerSpec(att, stack_ffns(matched, *bank)))
    lay.mark_written("cnt", "bigram-average")
    lay.mark_written("pavg", "bigram-average")
    lay.mark_written("matched", "comparators")
    lay.mark_written("wins", "comparators")

    # score_a = ReLU(wins_a - (s - 2) - (1 - matched)) + ReLU(cur_a - matched)
    w1 = np.zeros((2 * s, d))
    b1 = np.zeros(2 * s)
    for a in range(s):
        w1[a, lay.index("wins", a)] = 1.0
        w1[a, lay.index("matched")] = 1.0
        b1[a] = -(s - 1)
        w1[s + a, lay.index("cur", a)] = 1.0
        w1[s + a, lay.index("matched")] = -1.0
    w2 = np.zeros((d, 2 * s))
    for a in range(s):
        w2[lay.index("score", a), [a, s + a]] = 1.0
    layers.append(ffn_layer(FfnSpec(w1, b1, w2, np.zeros(d))))
    lay.mark_written("score", "select")

    emb = _one_hot_embedding(alphabet, lay, "cur")
    pos = [PosEnc("ratio", offset=lay.index("ratio"))]
    return _finish(lay, alphabet, emb, pos, layers, _argmax_head(lay, "score", s),
                   {"program": "induction", "variant": "frequent"}, max_len=max_len)


def build_induction(alphabet, variant: str = "rightmost", max_len: int = DEFAULT_INDUCTION_MAX_LEN):
    if variant == "rightmost":
        return build_induction_rightmost(alphabet)
    if variant == "frequent":
        return build_induction_frequent(alphabet, max_len)
    raise ParameterError(f"unknown induction variant {variant!r}")


# ---------------------------------------------------------------- Dyck-1

def _dyck1_layout(nonuniform: bool) -> StreamLayout:
    lay = StreamLayout()
    for name in ("o", "bal", "err", "t"):
        lay.allocate(name, 1)
    if nonuniform:
        for name in ("viol", "zero", "acc"):
            lay.allocate(name, 1)
    return lay


def dyck1_stages(lay: StreamLayout) -> tuple:
    """(balance stage, error stage) on a Dyck-1 layout.

    Balance: bal_i = mean of o_j over j <= i, then err_i = ReLU(-bal_i).
    Error: t_i = mean of err_j over j <= i.
    """
    d = lay.d
    o, bal, err, t = (lay.index(n) for n in ("o", "bal", "err", "t"))
    relu_neg = FfnSpec(select(1, d, 0, bal, -1.0), np.zeros(1), select(d, 1, err, 0), np.zeros(d))
    balance = (LayerSpec(build_average(d, "future", [o], [bal]), relu_neg),)
    error = (attention_layer(build_average(d, "future", [err], [t])),)
    return balance, error


def build_dyck1(mode: str = "external-check", max_len: int | None = None) -> TransformerSpec:
    """Recognize balanced strings over '(' and ')'.

    external-check: the raw output at the last position carries (bal_n, t_n);
      the string is accepted iff both are exactly 0.
    nonuniform: two more layers turn that into one bit, using
      GTZero_{1/N^2}(t) and EqZero_{1/N}(bal) and an AND-NOT table; the binary
      head reads the bit minus 1/2. Valid for lengths up to N.
    """
    params = DyckParams(1, None, mode, max_len)
    nonuniform = params.mode == "nonuniform"
    lay = _dyck1_layout(nonuniform)
    d = lay.d
    balance, error = dyck1_stages(lay)
    layers = list(serial_compose(balance, error))
    lay.mark_written("o", "embedding")
    lay.mark_written("bal", "balance")
    lay.mark_written("err", "balance")
    lay.mark_written("t", "error")
    meta = {"program": "dyck", "k": 1, "depth": None, "mode": params.mode}
    head = OutputHead("raw")
    if nonuniform:
        N = params.max_len
        viol = embed_ffn(build_comparator("gt", 1.0 / N ** 2), d, [lay.index("t")], [lay.index("viol")])
        zero = embed_ffn(build_comparator("eq", 1.0 / N), d, [lay.index("bal")], [lay.index("zero")])
        layers.append(ffn_layer(stack_ffns(viol, zero)))
        # zero AND NOT viol, shifted down by 1/2 so the sign is the answer.
        table = BooleanTable.from_function(2, lambda z, v: z and not v)
        acc = embed_ffn(build_boolean(table), d, [lay.index("zero"), lay.index("viol")],
                        [lay.index("acc")])
        acc = FfnSpec(acc.w1, acc.b1, acc.w2, acc.b2 - 0.5 * np.eye(d)[lay.index("acc")])
        layers.append(ffn_layer(acc))
        for name, stage in (("viol", "threshold"), ("zero", "threshold"), ("acc", "decision")):
            lay.mark_written(name, stage)
        head = OutputHead("binary", select(1, d, 0, lay.index("acc")))
        meta["decision"] = {"kind": "bit"}
    else:
        meta["decision"] = {"kind": "zero", "channels": ["bal", "t"]}
    emb = {"(": np.eye(d)[lay.index("o")], ")": -np.eye(d)[lay.index("o")]}
    return _finish(lay, "()", emb, [], layers, head, meta,
                   max_len=params.max_len if nonuniform else None)


# ---------------------------------------------------------------- Dyck-k-D

def _hat_rows(k_coef: dict, shift_coef: dict, const: float, d: int):
    """Three hidden rows realizing hat(s) = ReLU(s+1) - 2 ReLU(s) + ReLU(s-1) for a linear s."""
    base = np.zeros(d)
    for idx, c in {**k_coef, **shift_coef}.items():
        base[idx] += c
    w1 = np.stack([base, base, base])
    b1 = const + np.array([1.0, 0.0, -1.0])
    return w1, b1, np.array([1.0, -2.0, 1.0])


def build_dyck_depth(k: int = 1, depth: int = 2) -> TransformerSpec:
    """Recognize Dyck-k strings of nesting depth at most `depth`.

    Every round fetches, for each position, the nearest still-active bracket
    on each side (strict masking, rightmost-hard scores j/n + a_j and
    -j/n + a_j), then clears positions forming an adjacent matching pair. The
    active bits live in a fresh channel per round. After `depth` rounds the
    mean of the active bits is 0 iff the string is accepted.
    """
    params = DyckParams(k, depth)
    D = params.depth
    alpha = bracket_alphabet(k)
    M = 2.0 * k + 2.0
    lay = StreamLayout()
    for name in ("o", "is_open", "is_close", "one", "ratio", "a0"):
        lay.allocate(name, 1)
        lay.mark_written(name, "embedding")
    for r in range(1, D + 1):
        for name in ("l_o", "l_a", "r_o", "r_a", "a"):
            lay.allocate(f"{name}{r}", 1)
    lay.allocate("rest", 1)
    d = lay.d
    ix = lay.index
    layers = []
    for r in range(1, D + 1):
        a_prev = ix(f"a{r - 1}")
        key = np.zeros((2, d))
        key[0, ix("ratio")] = 1.0
        key[1, a_prev] = 1.0
        for side, mask, qsign in (("l", "strict-future", 1.0), ("r", "strict-past", -1.0)):
            q = np.zeros((2, d))
            q[0, ix("one")] = qsign
            q[1, ix("one")] = 1.0
            wv = select(d, d, [ix(f"{side}_o{r}"), ix(f"{side}_a{r}")], [ix("o"), a_prev])
            att = AttentionSpec(q, key, wv, masking=mask, weighting="rhardmax",
                                first_position_zero=True)
            layers.append(attention_layer(att))
            lay.mark_written(f"{side}_o{r}", f"round{r}")
            lay.mark_written(f"{side}_a{r}", f"round{r}")
        # a_r = ReLU(a_{r-1}) - hat(open side) - hat(close side)
        w1o, b1o, _ = _hat_rows({ix("o"): 1.0, ix(f"r_o{r}"): 1.0},
                                {a_prev: M, ix("is_open"): M, ix(f"r_a{r}"): M}, -3 * M, d)
        w1c, b1c, hat = _hat_rows({ix("o"): 1.0, ix(f"l_o{r}"): 1.0},
                                  {a_prev: M, ix("is_close"): M, ix(f"l_a{r}"): M}, -3 * M, d)
        keep = np.zeros((1, d))
        keep[0, a_prev] = 1.0
        w1 = np.vstack([keep, w1o, w1c])
        b1 = np.concatenate([[0.0], b1o, b1c])
        w2 = np.zeros((d, 7))
        w2[ix(f"a{r}")] = np.concatenate([[1.0], -hat, -hat])
        layers[-1] = LayerSpec(layers[-1].attention, FfnSpec(w1, b1, w2, np.zeros(d)))
        lay.mark_written(f"a{r}", f"round{r}")
    layers.append(attention_layer(build_average(d, "none", [ix(f"a{D}")], [ix("rest")])))
    lay.mark_written("rest", "count")
    emb = {}
    for p, sym in enumerate(alpha):
        v = np.zeros(d)
        kind = p // 2 + 1
        is_open = p % 2 == 0
        v[ix("o")] = kind if is_open else -kind
        v[ix("is_open" if is_open else "is_close")] = 1.0
        v[ix("one")] = 1.0
        v[ix("a0")] = 1.0
        emb[sym] = v
    pos = [PosEnc("ratio", offset=ix("ratio"))]
    meta = {"program": "dyck", "k": k, "depth": D, "mode": "external-check",
            "decision": {"kind": "zero", "channels": ["rest"]}}
    return _finish(lay, alpha, emb, pos, layers, OutputHead("raw"), meta)


def build_dyck(k: int = 1, depth: int | None = None, mode: str = "external-check",
               max_len: int | None = None) -> TransformerSpec:
    if depth is None:
        if k != 1:
            raise ParameterError("unbounded depth is only available for k = 1")
        return build_dyck1(mode, max_len)
    if mode != "external-check":
        raise ParameterError("depth-bounded programs use external-check mode")
    return build_dyck_depth(k, depth)


# ---------------------------------------------------------------- decisions

def decide_final(spec: TransformerSpec, final: np.ndarray, output) -> np.ndarray:
    """Apply the stored decision rule to final activations (and head output) of one or many runs."""
    rule = spec.meta.get("decision")
    if rule is None:
        raise ParameterError("spec carries no decision rule")
    if rule["kind"] == "bit":
        return np.asarray(output)[..., -1] == 1
    lay = StreamLayout.from_dict(spec.meta["layout"], spec.d)
    idx = [i for ch in rule["channels"] for i in lay.indices(ch)]
    return np.all(final[..., -1, idx] == 0, axis=-1)


def decide(spec: TransformerSpec, word: str) -> bool:
    """Accept/reject a word with a recognizer spec, per the rule stored in its metadata."""
    res = run(spec, word)
    return bool(decide_final(spec, res.final, res.output))


def decide_batch(spec: TransformerSpec, words, chunk: int = 1 << 15) -> np.ndarray:
    """decide() for many words of one length, evaluated in vectorized chunks."""
    words = list(words)
    out = []
    for lo in range(0, len(words), chunk):
        x = embed_batch(spec, words[lo:lo + chunk])
        final, _ = forward(spec.layers, x, spec.final_norm, keep_trace=False)
        output = None
        if spec.head.kind == "binary":
            output = ((final @ spec.head.matrix.T)[..., 0] > 0).astype(int)
        out.append(decide_final(spec, final, output))
    return np.concatenate(out) if out else np.zeros(0, dtype=bool)


def diagnostics(spec: TransformerSpec, word: str) -> dict:
    """Decision channels at the last position, by name."""
    res = run(spec, word)
    lay = StreamLayout.from_dict(spec.meta["layout"], spec.d)
    rule = spec.meta.get("decision", {})
    chans = rule.get("channels", ["acc"] if "acc" in lay else [])
    return {ch: res.final[-1, lay.index(ch)].item() for ch in chans}
