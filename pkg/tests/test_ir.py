"""Data model: records, validation, positional encodings, serialization."""
import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tfrecipes import attention, ffn, norm, programs
from tfrecipes.assembly import ffn_layer, identity_layer
from tfrecipes.ir import (
    AttentionSpec, FfnSpec, LayerNormSpec, LayerSpec, LayoutError, LengthBoundError, OutputHead,
    ParameterError, PayloadError, PosEnc, StreamLayout, TransformerSpec, UnknownSymbolError,
    VersionError, deserialize, embed, fragment_from_dict, fragment_to_dict, positional_encoding,
    serialize, spec_to_dict, validate_spec,
)


def tiny_spec(**kw):
    d = 2
    base = dict(alphabet=("(", ")"), d=d,
                embedding={"(": np.array([1.0, 0.0]), ")": np.array([-1.0, 0.0])},
                pos_enc=(PosEnc("ratio", offset=1),), layers=(identity_layer(d),))
    base.update(kw)
    return TransformerSpec(**base)


class TestRecords:
    def test_dimensions(self):
        a = AttentionSpec(np.zeros((3, 5)), np.zeros((3, 5)), np.eye(5))
        assert (a.d, a.d_key) == (5, 3)
        f = FfnSpec(np.zeros((4, 2)), np.zeros(4), np.zeros((1, 4)), np.zeros(1))
        assert (f.d_in, f.d_hid, f.d_out) == (2, 4, 1)

    def test_unknown_choice(self):
        with pytest.raises(ParameterError):
            AttentionSpec(np.zeros((1, 1)), np.zeros((1, 1)), np.eye(1), masking="sideways")
        with pytest.raises(ParameterError):
            FfnSpec(np.zeros((1, 1)), [0], [[0]], [0], activation="tanh")

    def test_arrays_are_read_only(self):
        f = ffn.build_add()
        with pytest.raises(ValueError):
            f.w1[0, 0] = 3.0

    def test_bit_exact_equality(self):
        a = ffn.build_scale(0.1)
        b = ffn.build_scale(0.1)
        assert a == b
        assert a != ffn.build_scale(float(np.nextafter(0.1, 1.0)))


class TestValidation:
    def test_dyck_spec_is_clean(self):
        assert validate_spec(programs.build_dyck1()) == []

    def test_bad_value_matrix_is_named(self):
        spec = programs.build_dyck1()
        bad = replace(spec.layers[0].attention, wv=np.zeros((spec.d + 1, spec.d)))
        layers = (replace(spec.layers[0], attention=bad),) + spec.layers[1:]
        issues = validate_spec(replace(spec, layers=layers))
        assert len(issues) == 1 and "wv" in issues[0]

    def test_missing_embedding_is_named(self):
        spec = programs.build_dyck1()
        issues = validate_spec(replace(spec, embedding={"(": spec.embedding["("]}))
        assert len(issues) == 1 and "')'" in issues[0]

    def test_norm_without_mode(self):
        layer = replace(identity_layer(2), ffn_norm=LayerNormSpec.plain(2))
        assert validate_spec(tiny_spec(layers=(layer,)))

    def test_every_builder_output_validates(self):
        specs = [programs.build_dyck1(), programs.build_dyck1("nonuniform", 8),
                 programs.build_dyck_depth(2, 2), programs.build_induction_rightmost("AB"),
                 programs.build_induction_frequent("ABC", 16)]
        for s in specs:
            assert validate_spec(s) == []
        blocks = [attention.build_first(), attention.build_lookup("layernorm-hash"),
                  attention.build_lookup("one-hot", 4), attention.build_predecessor("alternating"),
                  attention.build_sharpened_lookup(8)]
        for b in blocks:
            spec = TransformerSpec(("a",), b.d, {"a": np.zeros(b.d)}, (), b.layers)
            assert validate_spec(spec) == []
        amp = norm.build_amplifier(0.1, 4)
        assert validate_spec(TransformerSpec(("a",), 4, {"a": np.zeros(4)}, (), (amp,))) == []


class TestPositions:
    def test_alternating(self):
        assert positional_encoding(PosEnc("alternating"), 5, 3).tolist() == [-1.0]

    def test_ratio(self):
        assert positional_encoding(PosEnc("ratio"), 4, 2).tolist() == [0.5]

    def test_inverse_and_powers(self):
        assert positional_encoding(PosEnc("inverse"), 4, 4).tolist() == [0.25]
        assert positional_encoding(PosEnc("powers", exponents=(1, 2)), 9, 3).tolist() == [3.0, 9.0]

    def test_sinusoidal_at_zero(self):
        v = positional_encoding(PosEnc("sinusoidal", dim=2), 4, 0)
        assert v.tolist() == [math.cos(0.0), math.sin(0.0)] == [1.0, 0.0]

    def test_sinusoidal_formula(self):
        v = positional_encoding(PosEnc("sinusoidal", dim=4, base=100.0), 8, 3)
        want = [math.cos(3), math.sin(3), math.cos(3 / 10), math.sin(3 / 10)]
        assert v.tolist() == pytest.approx(want, abs=1e-15)

    def test_one_hot_orthonormal(self):
        pe = PosEnc("one-hot", max_len=6)
        for n in range(1, 7):
            vs = [positional_encoding(pe, n, i) for i in range(1, n + 1)]
            gram = np.array([[a @ b for b in vs] for a in vs])
            assert np.array_equal(gram, np.eye(n))

    def test_bounded_kinds_enforce_length(self):
        with pytest.raises(LengthBoundError):
            positional_encoding(PosEnc("one-hot", max_len=4), 5, 5)

    def test_position_range(self):
        with pytest.raises(ParameterError):
            positional_encoding(PosEnc("ratio"), 3, 4)

    def test_almost_orthogonal_is_seeded(self):
        pe = PosEnc("almost-orthogonal", max_len=8, m=200, seed=3)
        a = positional_encoding(pe, 8, 2)
        assert np.array_equal(a, positional_encoding(pe, 8, 2))
        assert a.shape == (200,) and np.allclose(np.abs(a), 1 / math.sqrt(200))


class TestEmbed:
    def test_channels(self):
        x = embed(tiny_spec(), "(()")
        assert x.tolist() == [[1.0, 1 / 3], [1.0, 2 / 3], [-1.0, 1.0]]

    def test_unknown_symbol(self):
        with pytest.raises(UnknownSymbolError):
            embed(tiny_spec(), "(x")

    def test_length_bound(self):
        with pytest.raises(LengthBoundError):
            embed(tiny_spec(max_len=2), "(((")

    def test_empty(self):
        with pytest.raises(ParameterError):
            embed(tiny_spec(), "")


class TestLayout:
    def test_offsets(self):
        lay = StreamLayout(8)
        assert lay.allocate("a", 2) == slice(0, 2)
        assert lay.allocate("b", 3) == slice(2, 5)
        assert lay.d == 8

    def test_duplicate(self):
        lay = StreamLayout()
        lay.allocate("a", 1)
        with pytest.raises(LayoutError):
            lay.allocate("a", 1)

    def test_overflow(self):
        lay = StreamLayout(3)
        lay.allocate("a", 2)
        with pytest.raises(LayoutError):
            lay.allocate("b", 2)

    def test_round_trip(self):
        lay = StreamLayout()
        lay.allocate("x", 2)
        lay.allocate("y", 1)
        back = StreamLayout.from_dict(json.loads(json.dumps(lay.to_dict())))
        assert back.channels == lay.channels and back.d == 3


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


class TestSerialization:
    @pytest.mark.parametrize("build", [
        programs.build_dyck1, lambda: programs.build_dyck1("nonuniform", 6),
        lambda: programs.build_dyck_depth(2, 2), lambda: programs.build_induction_frequent("ABC", 8),
    ])
    def test_program_round_trip(self, build):
        spec = build()
        assert deserialize(serialize(spec)) == spec

    @given(st.lists(finite, min_size=6, max_size=6), st.sampled_from(["relu", "gelu-exact", "gelu-tanh"]))
    def test_float_payloads_bit_exact(self, vals, act):
        f = FfnSpec(np.array(vals[:4]).reshape(2, 2), vals[4:6], np.eye(2), [vals[0], vals[1]], act)
        att = AttentionSpec(np.array([vals[:2]]), np.array([vals[2:4]]), np.eye(2) * vals[5],
                            masking="future", weighting="ahardmax", scale=True)
        spec = tiny_spec(layers=(LayerSpec(att, f),), head=OutputHead("binary", [vals[:2]]),
                         final_norm=LayerNormSpec(vals[2:4], vals[4:6], 1e-5))
        back = deserialize(serialize(spec))
        assert back == spec
        assert back.layers[0].ffn.w1.tobytes() == f.w1.tobytes()

    def test_truncated_payload(self):
        blob = serialize(programs.build_dyck1())
        with pytest.raises(PayloadError):
            deserialize(blob[: len(blob) // 2])

    def test_unknown_version(self):
        data = spec_to_dict(programs.build_dyck1())
        data["version"] = "v999"
        with pytest.raises(VersionError):
            deserialize(json.dumps(data))

    def test_no_infinities_stored(self):
        text = serialize(programs.build_dyck_depth(1, 2)).decode()
        assert "Infinity" not in text and "inf" not in text.lower().replace("info", "")

    def test_top_level_keys(self):
        data = json.loads(serialize(programs.build_dyck1()))
        assert {"version", "alphabet", "d", "pos_enc", "layers", "output_head"} <= set(data)

    def test_fragments(self):
        for obj in (ffn.build_cpwl(((-1, 0, 1), (1, 0, 1))), attention.build_average(3),
                    (ffn_layer(ffn.build_identity(2)), identity_layer(2))):
            back = fragment_from_dict(json.loads(json.dumps(fragment_to_dict(obj))))
            assert back == obj
