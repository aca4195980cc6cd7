import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from streamstab.imgio import (
    FlowField,
    FlowFormatError,
    ImageIOError,
    as_frame,
    discover_source,
    load_frame,
    read_flo,
    save_frame,
    write_flo,
)


def write_ppm(path, pixels, maxval=255):
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n%d\n" % (w, h, maxval))
        fh.write(pixels.astype(">u2" if maxval > 255 else "u1").tobytes())


class TestLoadFrame:
    def test_ppm_all_255_normalizes_to_one(self, tmp_path):
        path = tmp_path / "white.ppm"
        write_ppm(path, np.full((2, 2, 3), 255, np.uint8))
        frame = load_frame(path)
        assert frame.shape == (2, 2, 3)
        assert np.all(frame == 1.0)

    def test_png_gray_128(self, tmp_path):
        path = tmp_path / "gray.png"
        save_frame(np.full((1, 1, 1), 128.0 / 255.0, np.float32), path)
        frame = load_frame(path)
        assert frame.shape == (1, 1, 1)
        assert frame[0, 0, 0] == pytest.approx(128.0 / 255.0, abs=1e-7)

    def test_truncated_png_is_unreadable(self, tmp_path):
        good = tmp_path / "ok.png"
        save_frame(np.zeros((8, 8, 3), np.float32), good)
        bad = tmp_path / "bad.png"
        bad.write_bytes(good.read_bytes()[:20])
        with pytest.raises(ImageIOError, match="unreadable"):
            load_frame(bad)

    def test_unsupported_format(self, tmp_path):
        path = tmp_path / "frame.tiff"
        path.write_bytes(b"II*\x00")
        with pytest.raises(ImageIOError, match="unsupported"):
            load_frame(path)

    def test_ppm_comment_and_16bit(self, tmp_path):
        path = tmp_path / "deep.ppm"
        with open(path, "wb") as fh:
            fh.write(b"P6\n# a comment\n1 1\n65535\n")
            fh.write(np.array([[[65535, 0, 32768]]], dtype=">u2").tobytes())
        frame = load_frame(path)
        assert frame[0, 0, 0] == 1.0
        assert frame[0, 0, 1] == 0.0
        assert frame[0, 0, 2] == pytest.approx(0.5, abs=1e-4)


class TestSaveFrame:
    def test_zeros_roundtrip_exact(self, tmp_path):
        path = tmp_path / "z.png"
        save_frame(np.zeros((4, 4, 3), np.float32), path)
        assert np.all(load_frame(path) == 0.0)

    def test_random_roundtrip_within_quantization(self, tmp_path, rng):
        frame = rng.random((9, 7, 3)).astype(np.float32)
        for ext in ("png", "ppm"):
            path = tmp_path / f"r.{ext}"
            save_frame(frame, path)
            again = load_frame(path)
            assert np.abs(again - frame).max() <= 1.0 / 255.0 + 1e-7

    def test_unwritable_path(self, tmp_path):
        target = tmp_path / "no" / "such" / "dir" / "f.png"
        with pytest.raises(ImageIOError, match="unwritable|unreadable"):
            save_frame(np.zeros((2, 2, 3), np.float32), target)

    @settings(max_examples=25, deadline=None)
    @given(
        seed=st.integers(0, 2**31),
        h=st.integers(1, 8),
        w=st.integers(1, 8),
        c=st.sampled_from([1, 3]),
    )
    def test_roundtrip_bound_property(self, tmp_path_factory, seed, h, w, c):
        frame = np.random.default_rng(seed).random((h, w, c)).astype(np.float32)
        path = tmp_path_factory.mktemp("frames") / "f.png"
        save_frame(frame, path)
        assert np.abs(load_frame(path) - frame).max() <= 1.0 / 255.0 + 1e-7


class TestFlo:
    def test_golden_20_byte_file(self, tmp_path):
        path = tmp_path / "one.flo"
        path.write_bytes(struct.pack("<fii", 202021.25, 1, 1) + struct.pack("<ff", 2.0, -3.0))
        assert path.stat().st_size == 20
        field = read_flo(path)
        assert field.width == 1 and field.height == 1
        assert field.uv[0, 0, 0] == 2.0
        assert field.uv[0, 0, 1] == -3.0
        assert field.valid[0, 0]

    def test_write_golden_bytes(self, tmp_path):
        path = tmp_path / "zero.flo"
        write_flo(FlowField.zero(1, 1), path)
        raw = path.read_bytes()
        assert len(raw) == 20
        assert raw == struct.pack("<fii", 202021.25, 1, 1) + struct.pack("<ff", 0.0, 0.0)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.flo"
        path.write_bytes(struct.pack("<fii", 1.0, 1, 1) + b"\x00" * 8)
        with pytest.raises(FlowFormatError, match="bad magic"):
            read_flo(path)

    def test_size_mismatch(self, tmp_path):
        path = tmp_path / "short.flo"
        path.write_bytes(struct.pack("<fii", 202021.25, 4, 4) + b"\x00" * 8)
        with pytest.raises(FlowFormatError, match="size mismatch"):
            read_flo(path)

    def test_nan_rejected(self, tmp_path):
        uv = np.zeros((2, 2, 2), np.float32)
        uv[0, 0, 0] = np.nan
        with pytest.raises(FlowFormatError, match="non-finite"):
            write_flo(FlowField(uv), tmp_path / "nan.flo")

    def test_roundtrip_bit_exact(self, tmp_path, rng):
        uv = (rng.random((16, 16, 2)).astype(np.float32) - 0.5) * 100
        path = tmp_path / "rt.flo"
        write_flo(FlowField(uv), path)
        again = read_flo(path)
        assert again.uv.tobytes() == uv.tobytes()

    def test_sentinel_marks_invalid_and_roundtrips(self, tmp_path):
        uv = np.zeros((2, 2, 2), np.float32)
        uv[1, 1, 0] = 1.5e9
        field = FlowField(uv)
        assert field.valid[0, 0] and not field.valid[1, 1]
        path = tmp_path / "inv.flo"
        write_flo(field, path)
        again = read_flo(path)
        assert again.uv.tobytes() == uv.tobytes()
        assert not again.valid[1, 1]

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31), h=st.integers(1, 6), w=st.integers(1, 6))
    def test_roundtrip_property(self, tmp_path_factory, seed, h, w):
        uv = np.random.default_rng(seed).normal(0, 10, (h, w, 2)).astype(np.float32)
        path = tmp_path_factory.mktemp("flo") / "f.flo"
        write_flo(FlowField(uv), path)
        assert read_flo(path).uv.tobytes() == uv.tobytes()


class TestAsFrame:
    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            as_frame(np.zeros((4, 4, 2), np.float32))
        with pytest.raises(ValueError):
            as_frame(np.zeros((0, 4, 3), np.float32))

    def test_clamps_and_freezes(self):
        frame = as_frame(np.array([[[1.5, -0.5, 0.25]]], np.float32))
        assert frame[0, 0, 0] == 1.0 and frame[0, 0, 1] == 0.0
        with pytest.raises(ValueError):
            frame[0, 0, 0] = 0.0


class TestFrameSource:
    def make_dir(self, tmp_path, names):
        for i, name in enumerate(names):
            save_frame(np.full((4, 5, 3), i / 10.0, np.float32), tmp_path / name)

    def test_pattern_discovery_and_ordering(self, tmp_path):
        self.make_dir(tmp_path, ["frame_00003.png", "frame_00001.png", "frame_00002.png"])
        src = discover_source(tmp_path, "frame_%05d.png")
        assert len(src) == 3
        assert src.file_numbers == (1, 2, 3)
        assert [p.name for p in src.paths] == [
            "frame_00001.png",
            "frame_00002.png",
            "frame_00003.png",
        ]

    def test_iteration_deterministic(self, tmp_path):
        self.make_dir(tmp_path, [f"f_{i:03d}.png" for i in range(5)])
        src = discover_source(tmp_path)
        first = [f.mean() for f in src]
        second = [f.mean() for f in src]
        assert first == second

    def test_empty_dir_errors(self, tmp_path):
        with pytest.raises(ImageIOError, match="no frames"):
            discover_source(tmp_path)

    def test_resolution_drift_detected(self, tmp_path):
        save_frame(np.zeros((4, 5, 3), np.float32), tmp_path / "a_1.png")
        save_frame(np.zeros((6, 5, 3), np.float32), tmp_path / "a_2.png")
        src = discover_source(tmp_path, "a_%d.png")
        src.frame(1)
        with pytest.raises(ImageIOError, match="drift"):
            src.frame(2)
