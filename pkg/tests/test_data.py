"""Transformation sequences, IDX parsing, dataset cache, and toy sprites."""

import colorsys
import struct

import numpy as np
import pytest

from flowfact import data
from flowfact.data import IdxFormatError, TransformSpec, generate_sequence, load_idx, make_toy_dataset


class TestTransformSpec:
    def test_valid_ranges(self):
        TransformSpec("scale", 8, 1.8)
        TransformSpec("rotate", 8, 80.0)
        TransformSpec("hue", 8, 340.0)

    @pytest.mark.parametrize(
        "kind,extent",
        [("scale", 0.9), ("scale", 3.5), ("rotate", -1.0), ("rotate", 200.0), ("hue", 360.0), ("bogus", 1.0)],
    )
    def test_invalid_specs_rejected(self, kind, extent):
        with pytest.raises(ValueError):
            TransformSpec(kind, 8, extent)


class TestGenerateSequence:
    def test_first_frame_is_bit_equal_to_base(self):
        base = make_toy_dataset(0, 1, 16)[0].astype(np.float64)
        for kind, extent in (("scale", 1.8), ("rotate", 80.0), ("hue", 340.0)):
            seq = generate_sequence(base, TransformSpec(kind, 9, extent))
            assert seq.shape == (10, 3, 16, 16)
            assert np.array_equal(seq[0], base)
            assert seq.min() >= 0.0 and seq.max() <= 1.0

    def test_final_rotation_frame_hits_full_extent(self):
        base = make_toy_dataset(1, 1, 16)[0].astype(np.float64)
        seq = generate_sequence(base, TransformSpec("rotate", 9, 80.0))
        expected = data.affine_resample(base, angle_deg=80.0)
        assert np.array_equal(seq[-1], expected)

    def test_rotation_90_matches_rot90(self):
        base = make_toy_dataset(2, 1, 16)[0].astype(np.float64)
        rotated = data.affine_resample(base, angle_deg=90.0)
        reference = np.stack([np.rot90(ch, k=-1) for ch in base])
        assert np.allclose(rotated, reference, atol=1e-12)

    def test_hue_rotation_closed_form_on_constant_image(self):
        rgb = (0.8, 0.3, 0.1)
        img = np.zeros((3, 5, 5))
        for c, v in enumerate(rgb):
            img[c] = v
        seq = generate_sequence(img, TransformSpec("hue", 4, 340.0))
        h0, s0, v0 = colorsys.rgb_to_hsv(*rgb)
        expected = colorsys.hsv_to_rgb((h0 + 340.0 / 360.0) % 1.0, s0, v0)
        assert np.max(np.abs(seq[-1][:, 2, 2] - np.array(expected))) < 1e-12

    def test_scale_area_is_nondecreasing(self):
        base = np.zeros((3, 16, 16))
        base[:, 6:10, 6:10] = 1.0  # binary sprite
        seq = generate_sequence(base, TransformSpec("scale", 8, 1.8))
        areas = [(frame.sum(axis=0) > 0.5).sum() for frame in seq]
        assert all(a2 >= a1 for a1, a2 in zip(areas, areas[1:]))

    def test_out_of_range_base_rejected(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            generate_sequence(np.full((3, 8, 8), 1.5), TransformSpec("scale", 4, 1.5))


class TestIdx:
    def test_constructed_fixture(self, tmp_path):
        path = tmp_path / "images.idx"
        path.write_bytes(struct.pack(">IIII", 2051, 1, 2, 2) + bytes([0, 128, 255, 64]))
        t = load_idx(path)
        assert t.shape == (1, 2, 2)
        assert np.allclose(t, [[[0.0, 128 / 255], [1.0, 64 / 255]]])

    def test_byte_level_reread_oracle(self, tmp_path):
        rng = np.random.default_rng(0)
        pixels = rng.integers(0, 256, size=(3, 4, 5), dtype=np.uint8)
        path = tmp_path / "img.idx"
        path.write_bytes(struct.pack(">IIII", 2051, 3, 4, 5) + pixels.tobytes())
        t = load_idx(path)
        raw = path.read_bytes()
        for i in (0, 7, 59):
            assert t.flat[i] == raw[16 + i] / 255.0

    def test_labels_fixture(self, tmp_path):
        path = tmp_path / "labels.idx"
        path.write_bytes(struct.pack(">II", 2049, 4) + bytes([7, 2, 1, 0]))
        assert np.array_equal(load_idx(path), [7, 2, 1, 0])

    def test_bad_magic_names_expected(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_bytes(struct.pack(">I", 9999))
        with pytest.raises(IdxFormatError, match="2051") as exc:
            load_idx(path)
        assert exc.value.offset == 0

    def test_truncated_data_reports_offset(self, tmp_path):
        path = tmp_path / "short.idx"
        path.write_bytes(struct.pack(">IIII", 2051, 2, 2, 2) + bytes([1, 2, 3]))
        with pytest.raises(IdxFormatError, match="truncated"):
            load_idx(path)


class TestCache:
    def test_round_trip(self, tmp_path):
        arr = np.random.default_rng(1).random((4, 3, 5, 5)).astype(np.float32)
        path = tmp_path / "d.ffds"
        data.save_cache(path, arr)
        assert np.array_equal(data.load_cache(path), arr)
        assert path.read_bytes()[:4] == b"FFDS"

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ffds"
        path.write_bytes(b"XXXX" + bytes(16))
        with pytest.raises(ValueError, match="magic"):
            data.load_cache(path)


class TestToyDataset:
    def test_deterministic_across_runs(self):
        a = make_toy_dataset(7, 16, 16)
        b = make_toy_dataset(7, 16, 16)
        assert np.array_equal(a, b)
        assert a.dtype == np.float32

    def test_empty_count(self):
        assert make_toy_dataset(0, 0, 16).shape == (0, 3, 16, 16)

    def test_histogram_matches_golden_fixture(self):
        # frozen from the committed generator; any change to the sprite
        # recipe or RNG consumption order shows up here
        imgs = make_toy_dataset(7, 32, 16)
        hist, _ = np.histogram(imgs, bins=8, range=(0.0, 1.0))
        assert list(hist) == [22684, 287, 176, 245, 193, 150, 177, 664]

    def test_size_guard(self):
        with pytest.raises(ValueError, match=">= 8"):
            make_toy_dataset(0, 1, 4)
