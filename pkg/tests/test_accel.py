import numpy as np
import pytest

from conftest import random_fmap, random_params, random_stream_layer
from squeezejet.accel import (
    ConvParams,
    EngineProbe,
    GeometryError,
    LayerParams,
    LineBufferSet,
    PixelStream,
    StreamUnderrun,
    WindowBuffer,
    conv_l0,
    conv_stream,
    output_dims,
    run_layer,
    split_weights,
)
from squeezejet.fxp import ACT_FORMAT, PARAM_FORMAT
from squeezejet.quant import reference_conv_fixed
from squeezejet.tensor import FmapTensor


@pytest.mark.parametrize(
    "y,k,p,s,expect",
    [(56, 3, 1, 1, 56), (227, 3, 0, 2, 113), (13, 1, 0, 1, 13), (7, 1, 1, 1, 9)],
)
def test_output_dims(y, k, p, s, expect):
    assert output_dims(LayerParams(y, y, 16, 16, k, s, p)) == (expect, expect)


def test_output_dims_rejects_uneven_stride():
    with pytest.raises(GeometryError):
        output_dims(LayerParams(8, 8, 3, 4, 3, 2, 0))


class TestLineBuffers:
    def test_rotation(self):
        itb = LineBufferSet(3, 4, 2)
        itb.shift()
        assert itb.rot == [1, 2, 0]
        itb.shift()
        assert itb.rot == [2, 0, 1]
        itb.shift()
        assert itb.rot == [0, 1, 2]

    def test_capacity(self):
        assert LineBufferSet(3, 56, 128).capacity == 3 * 7168

    def test_write_read_round_trip(self):
        itb = LineBufferSet(3, 4, 2)
        itb.write_pixel(1, [5, -6])
        assert itb.read_column(1)[-1].tolist() == [5, -6]

    def test_rows_move_up_after_shift(self):
        itb = LineBufferSet(3, 2, 1)
        for row in range(3):
            itb.shift()
            for x in range(2):
                itb.write_pixel(x, [10 * row + x])
        assert itb.read_column(0)[:, 0].tolist() == [0, 10, 20]
        itb.shift()
        itb.write_pixel(0, [30])
        # the old top row's buffer is now the bottom line; the others keep their data
        assert itb.read_column(0)[:, 0].tolist() == [10, 20, 30]
        assert itb.read_column(1)[:, 0].tolist() == [11, 21, 1]

    def test_shift_touches_only_target(self):
        itb = LineBufferSet(3, 3, 2)
        itb.lines[:] = np.arange(18).reshape(3, 3, 2)
        before = itb.lines.copy()
        itb.shift()
        itb.write_pixel(2, [99, 99])
        changed = np.argwhere((itb.lines != before).any(axis=(1, 2))).ravel().tolist()
        assert changed == [itb.target]

    def test_zero_pixel(self):
        itb = LineBufferSet(3, 4, 2)
        itb.lines[:] = 7
        itb.write_pixel(0, np.zeros(2), padding=True)
        assert itb.read_column(0)[-1].tolist() == [0, 0]
        assert (itb.pad_writes, itb.pixel_writes) == (1, 0)

    def test_out_of_range(self):
        itb = LineBufferSet(3, 4, 2)
        with pytest.raises(IndexError):
            itb.write_pixel(4, [0, 0])


class TestWindowBuffer:
    def test_column_order(self):
        wb = WindowBuffer(3, 1)
        cols = {name: np.full(3, v) for name, v in zip("ABCD", range(1, 5))}
        for name in "ABC":
            wb.shift_column(cols[name])
        assert wb.window()[0, :, 0].tolist() == [1, 2, 3]
        wb.shift_column(cols["D"])
        assert wb.window()[0, :, 0].tolist() == [2, 3, 4]

    def test_only_one_slot_changes(self):
        wb = WindowBuffer(3, 4)
        for v in range(3):
            wb.shift_column(np.full(12, v))
        before = wb.cols.copy()
        wb.shift_column(np.full(12, 9))
        changed = [(before[s] != wb.cols[s]).any() for s in range(3)]
        assert sum(changed) == 1

    def test_window_layout(self):
        wb = WindowBuffer(2, 3)
        wb.shift_column(np.arange(6))  # k_h rows of 3 channels
        wb.shift_column(np.arange(6) + 10)
        w = wb.window()
        assert w.shape == (2, 2, 3)
        assert w[1, 0].tolist() == [3, 4, 5] and w[0, 1].tolist() == [10, 11, 12]


class TestSplitWeights:
    def test_identity(self, rng):
        w = rng.integers(-5, 5, (8, 3, 3, 16))
        (g,) = split_weights(w, 0)
        assert np.array_equal(g, w)

    def test_groups(self, rng):
        w = rng.integers(-5, 5, (16, 1, 1, 16))
        groups = split_weights(w, 2)
        assert [g.shape[0] for g in groups] == [4] * 4
        assert np.array_equal(np.concatenate(groups), w)
        assert np.array_equal(groups[2], w[8:12])

    def test_not_divisible(self):
        with pytest.raises(GeometryError):
            split_weights(np.zeros((12, 1, 1, 16)), 3)


class TestPixelStream:
    def test_fifo_and_counters(self):
        s = PixelStream(2, ACT_FORMAT)
        s.push([1, 2])
        s.push([3, 4])
        assert s.pop().tolist() == [1, 2]
        assert (s.reads, s.writes, len(s)) == (1, 2, 1)

    def test_underrun(self):
        s = PixelStream(2, ACT_FORMAT)
        with pytest.raises(StreamUnderrun):
            s.pop()

    def test_channel_check(self):
        with pytest.raises(ValueError):
            PixelStream(2, ACT_FORMAT).push([1, 2, 3])


def _one_hot_layer():
    p = LayerParams(1, 1, 16, 1, 1, relu=False)
    w = np.zeros(p.weight_shape, dtype=np.int64)
    w[0, 0, 0, 0] = 64
    return p, ConvParams(w, [0], PARAM_FORMAT, PARAM_FORMAT)


class TestConvStream:
    def test_single_term(self):
        p, cp = _one_hot_layer()
        x = np.zeros((1, 1, 16), dtype=np.int64)
        x[0, 0, 0] = 16
        out, _, _ = run_layer(p, cp, FmapTensor(x, ACT_FORMAT))
        assert out.data.tolist() == [[[8]]]

    def test_zero_parameters(self, rng):
        p = LayerParams(6, 5, 32, 8, 3, pad=1)
        cp = ConvParams(np.zeros(p.weight_shape, int), np.zeros(8, int), PARAM_FORMAT, PARAM_FORMAT)
        out, _, _ = run_layer(p, cp, random_fmap(rng, (6, 5, 32)))
        assert out.shape == (6, 5, 8) and not out.data.any()

    @pytest.mark.parametrize("k,pad", [(3, 1), (3, 0), (1, 0), (1, 1)])
    def test_matches_oracle(self, rng, k, pad):
        p = LayerParams(8, 8, 16, 8, k, pad=pad)
        cp, t = random_params(rng, p), random_fmap(rng, (8, 8, 16))
        for n in range(4):
            out, _, _ = run_layer(p, cp, t, n)
            assert out.same_as(reference_conv_fixed(p, cp, t))

    def test_counts_and_itb_locality(self, rng):
        p = LayerParams(9, 7, 16, 4, 3, pad=1)
        cp, t = random_params(rng, p), random_fmap(rng, (9, 7, 16))
        probe = EngineProbe()
        s_in = PixelStream.from_tensor(t)
        s_out = conv_stream(p, cp, s_in, 2, probe=probe)
        assert s_in.reads == 63 and len(s_in) == 0
        assert s_out.writes == 63 == probe.pixels_out
        itb = probe.itb
        assert itb.pixel_writes == 63
        # two zero rows (top and bottom padding), each one line wide
        assert itb.pad_writes == 2 * 7
        assert sum(itb.line_writes) == 63 + 14
        assert len(probe.windows) == 4

    def test_two_pixels_preloaded_without_padding(self, rng):
        p = LayerParams(5, 6, 16, 4, 3)
        cp, t = random_params(rng, p), random_fmap(rng, (5, 6, 16))
        s_in = PixelStream.from_tensor(t)
        out = conv_stream(p, cp, s_in, lazy=True)
        out.pop()
        # two full rows during initialization, then two pre-loaded and one per column
        assert s_in.reads == 2 * 6 + 2 + 1

    def test_lazy_pipeline(self, rng):
        p1 = LayerParams(6, 6, 16, 32, 3, pad=1)
        p2 = LayerParams(6, 6, 32, 16, 1)
        c1, c2 = random_params(rng, p1), random_params(rng, p2)
        t = random_fmap(rng, (6, 6, 16), spread=200)
        s_in = PixelStream.from_tensor(t)
        mid = conv_stream(p1, c1, s_in, 1, lazy=True)
        final = conv_stream(p2, c2, mid, 3, lazy=True)
        assert s_in.reads == 0
        got = final.to_tensor(6, 6)
        expect = reference_conv_fixed(p2, c2, reference_conv_fixed(p1, c1, t))
        assert got.same_as(expect)
        assert (s_in.reads, mid.reads, final.writes) == (36, 36, 36)

    def test_underrun(self, rng):
        p = LayerParams(4, 4, 16, 4, 3, pad=1)
        cp = random_params(rng, p)
        s_in = PixelStream(16, ACT_FORMAT)
        for pixel in random_fmap(rng, (3, 4, 16)).data.reshape(-1, 16):
            s_in.push(pixel)
        with pytest.raises(StreamUnderrun):
            conv_stream(p, cp, s_in)

    @pytest.mark.parametrize(
        "p,n",
        [
            (LayerParams(8, 8, 16, 8, 3, stride=2, pad=1), 0),  # stride
            (LayerParams(8, 8, 16, 8, 5, pad=2), 0),  # kernel
            (LayerParams(8, 8, 24, 8, 3, pad=1), 0),  # channel granularity
            (LayerParams(8, 8, 16, 12, 3, pad=1), 3),  # 12 kernels over 8 units
        ],
    )
    def test_preconditions(self, rng, p, n):
        cp = random_params(rng, p)
        s = PixelStream.from_tensor(random_fmap(rng, (8, 8, p.in_channels)))
        with pytest.raises(GeometryError):
            conv_stream(p, cp, s, n)

    def test_rejects_wrong_parameter_shape(self, rng):
        p = LayerParams(4, 4, 16, 8, 3, pad=1)
        cp = random_params(rng, LayerParams(4, 4, 16, 4, 3, pad=1))
        with pytest.raises(GeometryError):
            conv_stream(p, cp, PixelStream.from_tensor(random_fmap(rng, (4, 4, 16))))

    def test_random_layers_parallel_invariant(self, rng):
        for _ in range(10):
            p = random_stream_layer(rng)
            cp = random_params(rng, p)
            t = random_fmap(rng, (p.height, p.width, p.in_channels))
            outs = [run_layer(p, cp, t, n)[0] for n in range(4) if p.out_channels % (1 << n) == 0]
            assert all(o.same_as(outs[0]) for o in outs)


class TestConvL0:
    def test_first_layer_dims(self, rng):
        p = LayerParams(227, 227, 3, 4, 3, stride=2)
        cp = random_params(rng, p)
        t = random_fmap(rng, (227, 227, 3))
        out, s_in, s_out = run_layer(p, cp, t, first_layer=True)
        assert out.shape == (113, 113, 4)
        assert (s_in.reads, s_out.writes) == (227 * 227, 113 * 113)
        assert out.same_as(reference_conv_fixed(p, cp, t))

    @pytest.mark.parametrize("c_in", [1, 3, 4])
    def test_stride_one_matches_stream_engine(self, rng, c_in):
        p = LayerParams(7, 9, c_in, 8, 3, pad=1)
        cp, t = random_params(rng, p), random_fmap(rng, (7, 9, c_in))
        via_l0, _, _ = run_layer(p, cp, t, first_layer=True)
        # same layer with channels zero-padded to 16 on the stream engine
        p16 = LayerParams(7, 9, 16, 8, 3, pad=1)
        w16 = np.pad(cp.weights, ((0, 0), (0, 0), (0, 0), (0, 16 - c_in)))
        cp16 = ConvParams(w16, cp.bias, PARAM_FORMAT, PARAM_FORMAT)
        t16 = FmapTensor(np.pad(t.data, ((0, 0), (0, 0), (0, 16 - c_in))), ACT_FORMAT)
        via_stream, _, _ = run_layer(p16, cp16, t16)
        assert via_l0.same_as(via_stream)

    @pytest.mark.parametrize("k,s,pad,size", [(3, 2, 0, 11), (3, 2, 1, 9), (5, 3, 1, 12), (2, 2, 0, 8)])
    def test_strided_matches_oracle(self, rng, k, s, pad, size):
        p = LayerParams(size, size, 3, 8, k, s, pad)
        cp, t = random_params(rng, p), random_fmap(rng, (size, size, 3))
        probe = EngineProbe()
        s_in = PixelStream.from_tensor(t)
        out = conv_l0(p, cp, s_in, 1, probe=probe).to_tensor(*output_dims(p))
        assert out.same_as(reference_conv_fixed(p, cp, t))
        assert s_in.reads == size * size
        assert probe.itb.capacity == k * size * 16
