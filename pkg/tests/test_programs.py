"""End-to-end programs: induction heads and bracket recognizers."""
import pytest
from hypothesis import given, strategies as st

from tfrecipes.interpreter import run, run_batch
from tfrecipes.ir import LengthBoundError, ParameterError, StreamLayout, UnknownSymbolError
from tfrecipes.oracles import bigram_counts, oracle_dyck, oracle_induction
from tfrecipes.programs import (
    DyckParams, build_dyck, build_dyck1, build_dyck_depth, build_induction,
    build_induction_frequent, build_induction_rightmost, decide, decide_batch, diagnostics,
)

ALPHA = "ABCD"


class TestInductionRightmost:
    def test_running_example(self):
        assert run(build_induction_rightmost(ALPHA), "ACABDACDCA").output == "ACCBDBAADC"

    def test_small(self):
        spec = build_induction_rightmost("AZ")
        assert run(spec, "AA").output == "AA"
        assert run(spec, "ZZ").output == "ZZ"
        assert run(spec, "Z").output == "Z"

    @given(st.text("ABC", min_size=1, max_size=40))
    def test_matches_oracle(self, w):
        spec = build_induction_rightmost("ABC")
        assert run(spec, w).output == oracle_induction(w, "rightmost", "ABC")

    def test_unknown_symbol(self):
        with pytest.raises(UnknownSymbolError):
            run(build_induction_rightmost("AB"), "ABX")


class TestInductionFrequent:
    def test_running_example(self):
        assert run(build_induction_frequent(ALPHA), "ACABDACDCA").output == "ACCBDBAAAC"

    def test_bigram_count(self):
        assert bigram_counts("ACABDACDCA", "A", "C") == [0, 1, 1, 1, 1, 1, 2, 2, 2, 2]

    def test_abab(self):
        # at the last B the bigram BA occurred once; the prediction is A
        assert run(build_induction_frequent("AB", 8), "ABAB").output == "ABBA"

    @given(st.text("ABC", min_size=1, max_size=24))
    def test_matches_oracle(self, w):
        spec = build_induction_frequent("ABC", 24)
        assert run(spec, w).output == oracle_induction(w, "frequent", "ABC")

    def test_length_bound(self):
        with pytest.raises(LengthBoundError):
            run(build_induction_frequent("AB", 4), "ABABA")

    def test_dispatch(self):
        assert build_induction("AB", "rightmost") == build_induction_rightmost("AB")
        with pytest.raises(ParameterError):
            build_induction("AB", "middle")

    def test_batch(self, rng):
        spec = build_induction("ABCD", "frequent", 32)
        words = ["".join(rng.choice(list("ABCD"), 20)) for _ in range(50)]
        outs, _ = run_batch(spec, words)
        assert list(outs) == [oracle_induction(w, "frequent", "ABCD") for w in words]


class TestDyck1:
    def test_examples(self):
        spec = build_dyck1()
        assert decide(spec, "()(())")
        assert not decide(spec, "())(()")
        assert not decide(spec, "((")

    def test_prefix_sums(self):
        spec = build_dyck1()
        lay = StreamLayout.from_dict(spec.meta["layout"], spec.d)
        fin = run(spec, "()(())").final
        assert fin[-1, lay.index("bal")] == 0 and fin[-1, lay.index("t")] == 0
        # "())(()": O_3 < C_3, so the error channel turns positive at position 3
        fin = run(spec, "())(()").final
        assert fin[2, lay.index("t")] > 0

    def test_nonuniform(self):
        spec = build_dyck1("nonuniform", 12)
        assert spec.head.kind == "binary"
        assert run(spec, "()(())").output[-1] == 1
        assert run(spec, "())(()").output[-1] == 0
        with pytest.raises(LengthBoundError):
            run(spec, "()" * 7)

    def test_two_layers(self):
        assert len(build_dyck1().layers) == 2

    @given(st.text("()", min_size=1, max_size=40))
    def test_matches_oracle(self, w):
        assert decide(build_dyck1(), w) == oracle_dyck(w)

    def test_diagnostics(self):
        assert diagnostics(build_dyck1(), "(()") == {"bal": pytest.approx(1 / 3), "t": 0.0}


class TestDyckDepth:
    def test_marking_trace(self):
        w = "(())(()())"
        spec = build_dyck_depth(1, 2)
        lay = StreamLayout.from_dict(spec.meta["layout"], spec.d)
        fin = run(spec, w).final
        assert fin[:, lay.index("a1")].tolist() == [1, 0, 0, 1, 1, 0, 0, 0, 0, 1]
        assert fin[:, lay.index("a2")].tolist() == [0] * 10
        assert decide(spec, w)

    def test_examples(self):
        assert not decide(build_dyck_depth(1, 2), "((()))")
        spec = build_dyck_depth(2, 2)
        assert decide(spec, "([])")
        assert not decide(spec, "([)]")

    @given(st.text("()[]", min_size=1, max_size=16), st.integers(1, 4))
    def test_matches_oracle(self, w, depth):
        assert decide(build_dyck_depth(2, depth), w) == oracle_dyck(w, 2, depth)

    def test_three_kinds(self, rng):
        spec = build_dyck_depth(3, 3)
        words = ["".join(rng.choice(list("()[]{}"), 12)) for _ in range(300)]
        words += ["([{}])" * 2, "{[()]}" + "()" * 3]
        got = decide_batch(spec, words)
        assert got.tolist() == [oracle_dyck(w, 3, 3) for w in words]

    def test_batch_matches_single(self):
        spec = build_dyck_depth(2, 2)
        words = ["([])", "([)]", "[]()", "(((("]
        assert decide_batch(spec, words).tolist() == [decide(spec, w) for w in words]


class TestParams:
    def test_validation(self):
        with pytest.raises(ParameterError):
            DyckParams(k=0)
        with pytest.raises(ParameterError):
            DyckParams(depth=0)
        with pytest.raises(ParameterError):
            DyckParams(mode="nonuniform")
        with pytest.raises(ParameterError):
            build_dyck(k=2)

    def test_dispatch(self):
        assert build_dyck() == build_dyck1()
        assert build_dyck(2, 2) == build_dyck_depth(2, 2)
        assert build_dyck(mode="nonuniform", max_len=6) == build_dyck1("nonuniform", 6)
