import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from refit import raster_io as rio
from refit.errors import (
    BadMagic,
    CorruptFile,
    DimensionMismatch,
    NonBinaryPixel,
    NotFound,
    RangeViolation,
    TooManyLabels,
    UnsupportedFormat,
)


def write_rfm(path, planes, width, height):
    planes = np.asarray(planes, dtype="<f4")
    path.write_bytes(struct.pack("<4sIII", b"RFM1", width, height, planes.shape[0]) + planes.tobytes())


class TestLoadImage:
    def test_pgm_binary_endpoints(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 0, 255]))
        r = rio.load_image(p)
        assert r.channels == 1 and (r.width, r.height) == (2, 2)
        assert r.data.ravel().tolist() == [0.0, 1.0, 0.0, 1.0]

    def test_pgm_ascii(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_text("P2\n2 2\n255\n0 255\n0 255\n")
        assert rio.load_image(p).data.ravel().tolist() == [0.0, 1.0, 0.0, 1.0]

    def test_gray_png_scaling(self, tmp_path):
        p = tmp_path / "g.png"
        Image.fromarray(np.array([[128]], dtype=np.uint8)).save(p)
        assert rio.load_image(p).data[0, 0, 0] == pytest.approx(128 / 255)
        assert rio.load_image(p).data[0, 0, 0] == pytest.approx(0.50196, abs=1e-5)

    def test_rgb_png(self, tmp_path):
        p = tmp_path / "red.png"
        arr = np.zeros((3, 3, 3), dtype=np.uint8)
        arr[..., 0] = 255
        Image.fromarray(arr).save(p)
        r = rio.load_image(p)
        assert r.channels == 3
        assert np.array_equal(r.data.reshape(-1, 3), np.tile([1.0, 0.0, 0.0], (9, 1)))

    def test_missing(self, tmp_path):
        with pytest.raises(NotFound):
            rio.load_image(tmp_path / "nope.png")

    def test_unsupported(self, tmp_path):
        p = tmp_path / "x.png"
        p.write_bytes(b"GIF89a........")
        with pytest.raises(UnsupportedFormat):
            rio.load_image(p)

    def test_truncated_png(self, tmp_path):
        p = tmp_path / "t.png"
        Image.fromarray(np.full((32, 32), 9, dtype=np.uint8)).save(p)
        p.write_bytes(p.read_bytes()[:40])
        with pytest.raises(CorruptFile):
            rio.load_image(p)

    def test_bad_pgm_header(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P5\nxx yy\n255\n")
        with pytest.raises(CorruptFile):
            rio.load_image(p)

    def test_luminance(self):
        r = rio.Raster(np.array([[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]]))
        assert r.gray().ravel() == pytest.approx([0.299, 0.587, 0.114])


class TestResponseMap:
    def test_round_values(self, tmp_path):
        p = tmp_path / "m.rfm"
        write_rfm(p, [[0.1, 0.9, 0.5, 0.5]], 2, 2)
        m = rio.load_response_map(p)
        assert (m.classes, m.width, m.height) == (1, 2, 2)
        assert m.planes.ravel().tolist() == pytest.approx([0.1, 0.9, 0.5, 0.5])

    def test_clamps_tiny_overshoot(self, tmp_path):
        p = tmp_path / "m.rfm"
        write_rfm(p, [[1.0000005, -0.0000005]], 2, 1)
        m = rio.load_response_map(p)
        assert m.planes.ravel().tolist() == [1.0, 0.0]

    @pytest.mark.parametrize("bad", [1.5, -0.01, float("nan")])
    def test_range_violation(self, tmp_path, bad):
        p = tmp_path / "m.rfm"
        write_rfm(p, [[0.2, bad]], 2, 1)
        with pytest.raises(RangeViolation):
            rio.load_response_map(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "m.rfm"
        p.write_bytes(b"RFM2" + bytes(12) + bytes(4))
        with pytest.raises(BadMagic):
            rio.load_response_map(p)

    def test_short_payload(self, tmp_path):
        p = tmp_path / "m.rfm"
        write_rfm(p, [[0.1, 0.2, 0.3]], 2, 2)
        with pytest.raises(DimensionMismatch):
            rio.load_response_map(p)

    def test_layout_is_plane_major(self):
        planes = np.arange(12, dtype=np.float32).reshape(2, 2, 3) / 12
        raw = rio.encode_response_map(rio.ResponseMap(planes))
        assert raw[:16] == struct.pack("<4sIII", b"RFM1", 3, 2, 2)
        assert np.frombuffer(raw[16:], "<f4").tolist() == planes.ravel().tolist()

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(0, 1, width=32)))
    def test_round_trip(self, planes):
        m = rio.ResponseMap(planes)
        back = rio.decode_response_map(rio.encode_response_map(m))
        assert back == m


class TestMasks:
    def test_round_trip_pixels(self, tmp_path):
        p = tmp_path / "m.png"
        m = rio.BinaryMask(np.array([[1, 0], [0, 1]]))
        rio.save_mask(m, p)
        assert np.asarray(Image.open(p)).tolist() == [[255, 0], [0, 255]]
        assert rio.load_mask(p) == m

    def test_all_zero(self, tmp_path):
        p = tmp_path / "z.png"
        rio.save_mask(rio.BinaryMask.zeros(16, 16), p)
        assert not np.asarray(Image.open(p)).any()

    def test_non_binary_pixel(self, tmp_path):
        p = tmp_path / "b.png"
        Image.fromarray(np.array([[0, 7]], dtype=np.uint8)).save(p)
        with pytest.raises(NonBinaryPixel):
            rio.load_mask(p)

    def test_constructor_rejects_values(self):
        with pytest.raises(NonBinaryPixel):
            rio.BinaryMask(np.array([[0, 2]]))

    @settings(max_examples=40, deadline=None)
    @given(arrays(bool, st.tuples(st.integers(1, 20), st.integers(1, 20))))
    def test_round_trip_property(self, tmp_path_factory, bits):
        p = tmp_path_factory.mktemp("m") / "m.png"
        m = rio.BinaryMask(bits)
        rio.save_mask(m, p)
        assert rio.load_mask(p) == m


class TestLabelMaps:
    @pytest.mark.parametrize("labels", [[[0, 0], [1, 1]], [[0]], [[65535, 3]]])
    def test_round_trip(self, tmp_path, labels):
        p = tmp_path / "l.png"
        lm = rio.LabelMap(np.array(labels))
        rio.save_label_map(lm, p)
        assert rio.load_label_map(p) == lm

    def test_too_many(self, tmp_path):
        lm = rio.LabelMap(np.array([[0, 69999]]))
        assert lm.label_count == 70000
        with pytest.raises(TooManyLabels):
            rio.save_label_map(lm, tmp_path / "l.png")
        assert not (tmp_path / "l.png").exists()

    def test_compaction_first_appearance(self):
        lm = rio.LabelMap(np.array([[7, 7, 2], [9, 2, 2]])).compacted()
        assert lm.labels.tolist() == [[0, 0, 1], [2, 1, 1]]
        assert lm.label_count == 3

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.int64, st.tuples(st.integers(1, 12), st.integers(1, 12)),
                  elements=st.integers(0, 65535)))
    def test_round_trip_property(self, tmp_path_factory, labels):
        p = tmp_path_factory.mktemp("l") / "l.png"
        lm = rio.LabelMap(labels)
        rio.save_label_map(lm, p)
        assert rio.load_label_map(p) == lm


class TestTypes:
    def test_raster_rejects_nan(self):
        with pytest.raises(RangeViolation):
            rio.Raster(np.array([[np.nan]]))

    def test_raster_rejects_channels(self):
        with pytest.raises(DimensionMismatch):
            rio.Raster(np.zeros((2, 2, 2)))

    def test_immutable(self):
        r = rio.Raster(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            r.data[0, 0, 0] = 1.0

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        rio.atomic_write(tmp_path / "f.bin", b"abc")
        assert [p.name for p in tmp_path.iterdir()] == ["f.bin"]
