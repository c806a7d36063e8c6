import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from squeezejet.fxp import ACT_FORMAT, FixedFormat
from squeezejet.netgraph import GraphBuilder, ShapeError, squeezenet_v11
from squeezejet.quant import quantize_model, random_float_model
from squeezejet.serialize import (
    BadMagicError,
    ModelGeometryError,
    ParameterCountError,
    SerializationError,
    TruncatedFileError,
    UnsupportedVersionError,
    load_model,
    load_tensor,
    model_from_bytes,
    model_to_bytes,
    save_model,
    save_tensor,
    tensor_from_bytes,
    tensor_to_bytes,
)
from squeezejet.tensor import FmapTensor


def small_spec():
    b = GraphBuilder((9, 9, 3))
    b.conv(16, 3, stride=2, first_layer=True).maxpool(3, 2).fire(16, 8, 8).conv(5, 1)
    return b.classifier_tail().build()


@pytest.fixture
def fixed_model(rng):
    return quantize_model(random_float_model(small_spec(), rng))


class TestModelRoundTrip:
    def test_fixed(self, fixed_model, tmp_path):
        path = tmp_path / "m.sqjm"
        save_model(fixed_model, path)
        back = load_model(path)
        assert back.same_as(fixed_model)
        assert back.act_fmt == ACT_FORMAT
        assert [n.kind for n in back.spec.layers] == [n.kind for n in fixed_model.spec.layers]

    def test_float(self, rng):
        m = random_float_model(small_spec(), rng)
        back = model_from_bytes(model_to_bytes(m))
        assert back.act_fmt is None and back.same_as(m)

    def test_v11(self, rng):
        m = quantize_model(random_float_model(squeezenet_v11(), rng))
        back = model_from_bytes(model_to_bytes(m))
        assert back.same_as(m)
        assert back.spec.output_shape == (1, 1, 1000)

    def test_other_formats(self, rng):
        m = quantize_model(random_float_model(small_spec(), rng), FixedFormat(12, 9), FixedFormat(16, 5), FixedFormat(20, 12))
        assert model_from_bytes(model_to_bytes(m)).same_as(m)

    def test_header_and_layout(self, fixed_model):
        buf = model_to_bytes(fixed_model)
        assert buf[:4] == b"SQJM"
        version, count = struct.unpack_from("<II", buf, 4)
        assert version == 1
        # conv, maxpool, three fire records, conv, three tail layers
        assert count == 9
        tags = []
        pos = 12
        for _ in range(count):
            tag, y, x, c, co, k, *_rest, wt, wf, bt, bf = struct.unpack_from("<B8I4B", buf, pos)
            tags.append(tag)
            pos += 37
            if tag <= 3:
                pos += co * k * k * c * (wt // 8) + co * (bt // 8)
        assert tags == [0, 4, 1, 2, 3, 0, 5, 6, 7]
        assert pos == len(buf)

    def test_parameters_are_signed_bytes(self, fixed_model):
        buf = model_to_bytes(fixed_model)
        cp = fixed_model.params["0:conv"]
        start = 12 + 37
        raw = np.frombuffer(buf, dtype=np.int8, count=cp.weights.size, offset=start)
        assert np.array_equal(raw, cp.weights.ravel())


class TestModelErrors:
    def test_bad_magic(self, fixed_model):
        buf = bytearray(model_to_bytes(fixed_model))
        buf[:4] = b"SQJX"
        with pytest.raises(BadMagicError):
            model_from_bytes(bytes(buf))

    def test_bad_version(self, fixed_model):
        buf = bytearray(model_to_bytes(fixed_model))
        buf[4:8] = struct.pack("<I", 2)
        with pytest.raises(UnsupportedVersionError):
            model_from_bytes(bytes(buf))

    @pytest.mark.parametrize("cut", [2, 10, 40, 200, -1])
    def test_truncated(self, fixed_model, cut):
        buf = model_to_bytes(fixed_model)
        with pytest.raises(TruncatedFileError):
            model_from_bytes(buf[:cut])

    def test_trailing_bytes(self, fixed_model):
        with pytest.raises(ParameterCountError):
            model_from_bytes(model_to_bytes(fixed_model) + b"\0")

    def test_geometry_not_chaining(self, fixed_model):
        buf = bytearray(model_to_bytes(fixed_model))
        # maxpool record: claim 5 input channels instead of 16
        pos = 12 + 37 + 16 * 27 + 16
        assert buf[pos] == 4
        buf[pos + 9 : pos + 13] = struct.pack("<I", 5)
        buf[pos + 13 : pos + 17] = struct.pack("<I", 5)
        # loading keeps the record so the chain check can name the layer
        m = model_from_bytes(bytes(buf))
        with pytest.raises(ShapeError, match="1:maxpool"):
            m.spec.validate()

    def test_invalid_record_geometry(self, fixed_model):
        buf = bytearray(model_to_bytes(fixed_model))
        buf[12 + 17 : 12 + 21] = struct.pack("<I", 0)  # K of the first conv
        with pytest.raises(ModelGeometryError):
            model_from_bytes(bytes(buf))

    def test_unknown_tag(self, fixed_model):
        buf = bytearray(model_to_bytes(fixed_model))
        buf[12] = 9
        with pytest.raises(ModelGeometryError):
            model_from_bytes(bytes(buf))

    def test_errors_are_value_errors(self):
        assert issubclass(TruncatedFileError, ValueError)


class TestTensor:
    @given(arrays(np.int64, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5)),
                  elements=st.integers(-32768, 32767)))
    def test_fixed16_round_trip(self, data):
        t = FmapTensor(data, ACT_FORMAT)
        assert tensor_from_bytes(tensor_to_bytes(t)).same_as(t)

    def test_fixed8_and_real(self, rng):
        t8 = FmapTensor(rng.integers(-128, 128, (3, 2, 4)), FixedFormat(8, 7))
        tr = FmapTensor(rng.normal(size=(2, 2, 3)))
        assert tensor_from_bytes(tensor_to_bytes(t8)).same_as(t8)
        assert tensor_from_bytes(tensor_to_bytes(tr)).same_as(tr)

    def test_layout(self):
        t = FmapTensor(np.arange(6).reshape(1, 2, 3), ACT_FORMAT)
        buf = tensor_to_bytes(t)
        assert buf[:4] == b"SQJT"
        assert struct.unpack_from("<IBB3I", buf, 4) == (1, 1, 3, 1, 2, 3)
        assert np.frombuffer(buf[22:], "<i2").tolist() == list(range(6))

    def test_file(self, tmp_path, rng):
        t = FmapTensor(rng.integers(-5, 5, (2, 2, 2)), ACT_FORMAT)
        save_tensor(t, tmp_path / "t.sqjt")
        assert load_tensor(tmp_path / "t.sqjt").same_as(t)

    def test_dims_disagree_with_payload(self):
        buf = tensor_to_bytes(FmapTensor(np.zeros((2, 2, 2), dtype=np.int64), ACT_FORMAT))
        with pytest.raises(TruncatedFileError):
            tensor_from_bytes(buf[:-2])
        with pytest.raises(ParameterCountError):
            tensor_from_bytes(buf + b"\0\0")

    def test_unsupported_width(self):
        with pytest.raises(SerializationError):
            tensor_to_bytes(FmapTensor(np.zeros((1, 1, 1), dtype=np.int64), FixedFormat(12, 3)))

    def test_bad_magic(self):
        with pytest.raises(BadMagicError):
            tensor_from_bytes(b"SQJM" + bytes(18))
