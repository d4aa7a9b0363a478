"""Brute-force reference implementations."""
import itertools
import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from tfrecipes.ir import ParameterError, UnknownSymbolError
from tfrecipes.oracles import (
    bigram_counts, bracket_alphabet, hardmax_softmax_gap, max_depth, oracle_balance, oracle_dyck,
    oracle_induction, oracle_lookup, oracle_predecessor, oracle_prefix_average, prefix_balance,
)


class TestDyck:
    def test_balanced_example(self):
        assert oracle_dyck("()(())")

    def test_prefix_violation(self):
        assert not oracle_dyck("())(()")

    def test_empty_input_rejected_as_error(self):
        with pytest.raises(ParameterError):
            oracle_dyck("")

    def test_depth_bound(self):
        assert not oracle_dyck("((()))", 1, 2)
        assert oracle_dyck("((()))", 1, 3)
        assert max_depth("((()))") == 3

    def test_typed_brackets(self):
        assert oracle_dyck("([])", 2, 2)
        assert not oracle_dyck("([)]", 2, 2)
        assert bracket_alphabet(2) == "()[]"

    def test_unknown_symbol(self):
        with pytest.raises(UnknownSymbolError):
            oracle_dyck("(x)")

    def test_stack_matches_balance_counting(self):
        # two formulations of Dyck-1 membership agree on every string up to length 14
        for n in range(1, 15):
            for w in map("".join, itertools.product("()", repeat=n)):
                assert oracle_dyck(w) == oracle_balance(w), w

    def test_prefix_balance(self):
        assert prefix_balance("()(())") == [1, 0, 1, 2, 1, 0]


class TestInduction:
    def test_rightmost_example(self):
        assert oracle_induction("ACABDACDCA", "rightmost") == "ACCBDBAADC"

    def test_frequent_example(self):
        assert oracle_induction("ACABDACDCA", "frequent") == "ACCBDBAAAC"

    def test_repeated_symbol(self):
        assert oracle_induction("ZZ") == "ZZ"
        assert oracle_induction("AA") == "AA"

    def test_bigram_count_example(self):
        assert bigram_counts("ACABDACDCA", "A", "C") == [0, 1, 1, 1, 1, 1, 2, 2, 2, 2]

    def test_frequent_counts_bigrams_from_current_symbol(self):
        # at the last B the only earlier bigram starting with B is "BA"
        assert oracle_induction("ABAB", "frequent") == "ABBA"

    def test_unknown_variant(self):
        with pytest.raises(ParameterError):
            oracle_induction("AB", "middle")


class TestSmallOracles:
    def test_prefix_average_exact(self):
        assert oracle_prefix_average([1, 0, 1]) == [1, Fraction(1, 2), Fraction(2, 3)]
        assert oracle_prefix_average([2.0, 4.0]) == [2.0, 3.0]

    def test_lookup(self):
        assert oracle_lookup([2, 1, 3], [10, 20, 30]) == [20, 10, 30]
        assert oracle_lookup([1, 2], [5, 6]) == [5, 6]
        with pytest.raises(ParameterError):
            oracle_lookup([3], [1.0])

    def test_predecessor(self):
        assert oracle_predecessor([0.1, 0.2, 0.3]) == [0.0, 0.1, 0.2]
        assert oracle_predecessor([7.0]) == [0.0]


class TestGap:
    def test_bound_formula(self):
        r = hardmax_softmax_gap([5, 1, 1])
        assert r.gamma == 4
        assert r.bound == pytest.approx(0.10989383333240508, rel=1e-14)
        assert r.holds

    def test_two_entries(self):
        r = hardmax_softmax_gap([0, -10])
        # independent: 2 e^-10 / (1 + e^-10)
        assert r.gap == pytest.approx(9.079573740486878e-05, rel=1e-12)
        assert r.gap <= r.bound

    def test_tied_maxima(self):
        with pytest.raises(ParameterError):
            hardmax_softmax_gap([2, 2, 1])

    @given(st.lists(st.integers(-40, 40), min_size=2, max_size=20, unique=True))
    def test_bound_holds(self, scores):
        assert hardmax_softmax_gap([s / 4 for s in scores]).holds

    def test_single_entry(self):
        r = hardmax_softmax_gap([3.0])
        assert r.gap == 0 and math.isinf(r.gamma)
