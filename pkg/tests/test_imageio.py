import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from invennet.errors import ContractError, FormatError, ImageIOError
from invennet.imageio import (
    DatasetIndex,
    ImageBuffer,
    from_tensor,
    luminance,
    pad_to_even,
    read_image,
    resize_array,
    scan_directory,
    to_tensor,
    write_image,
)


class TestReadWrite:
    def test_single_red_pixel_ppm(self, tmp_path):
        path = tmp_path / "red.ppm"
        path.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
        np.testing.assert_array_equal(read_image(path).pixels, [[[255, 0, 0]]])

    def test_ppm_header_comments(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6 # a comment\n2 1\n# another\n255\n" + bytes(range(6)))
        np.testing.assert_array_equal(read_image(path).pixels.ravel(), range(6))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**32 - 1))
    def test_ppm_round_trip_is_exact(self, tmp_path_factory, h, w, seed):
        px = np.random.default_rng(seed).integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        path = tmp_path_factory.mktemp("ppm") / "x.ppm"
        write_image(path, ImageBuffer(px))
        assert read_image(path) == ImageBuffer(px)

    def test_png_round_trip_is_exact(self, tmp_path):
        px = np.random.default_rng(0).integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
        write_image(tmp_path / "x.png", ImageBuffer(px))
        np.testing.assert_array_equal(read_image(tmp_path / "x.png").pixels, px)

    def test_rgba_png_drops_alpha(self, tmp_path):
        rgba = np.arange(16, dtype=np.uint8).reshape(2, 2, 4)
        Image.fromarray(rgba, mode="RGBA").save(tmp_path / "a.png")
        np.testing.assert_array_equal(read_image(tmp_path / "a.png").pixels, rgba[..., :3])

    def test_sixteen_bit_png_is_a_format_error(self, tmp_path):
        Image.fromarray(np.full((2, 2), 40000, dtype=np.uint16)).save(tmp_path / "d.png")
        with pytest.raises(FormatError, match="PNG"):
            read_image(tmp_path / "d.png")

    def test_ascii_ppm_is_a_format_error(self, tmp_path):
        (tmp_path / "a.ppm").write_bytes(b"P3\n1 1\n255\n1 2 3\n")
        with pytest.raises(FormatError, match="P3"):
            read_image(tmp_path / "a.ppm")

    def test_truncated_ppm_is_an_io_error(self, tmp_path):
        (tmp_path / "t.ppm").write_bytes(b"P6\n4 4\n255\n" + bytes(10))
        with pytest.raises(ImageIOError, match="truncated"):
            read_image(tmp_path / "t.ppm")

    def test_truncated_png_is_an_io_error(self, tmp_path):
        px = np.random.default_rng(1).integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        write_image(tmp_path / "full.png", ImageBuffer(px))
        data = (tmp_path / "full.png").read_bytes()
        (tmp_path / "cut.png").write_bytes(data[: len(data) // 2])
        with pytest.raises(ImageIOError):
            read_image(tmp_path / "cut.png")

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(ImageIOError, match="nope.png"):
            read_image(tmp_path / "nope.png")

    def test_unknown_output_suffix(self, tmp_path):
        with pytest.raises(FormatError):
            write_image(tmp_path / "x.jpg", ImageBuffer(np.zeros((1, 1, 3), np.uint8)))


class TestConversion:
    def test_extremes_and_midpoint(self):
        t = to_tensor(ImageBuffer(np.array([[[255, 0, 128]]], dtype=np.uint8)))
        assert t.shape == (3, 1, 1)
        assert t[0, 0, 0] == 1.0 and t[1, 0, 0] == 0.0
        assert t[2, 0, 0] == pytest.approx(128 / 255)

    def test_every_byte_value_round_trips(self):
        px = np.arange(256, dtype=np.uint8).reshape(16, 16, 1).repeat(3, axis=2)
        assert from_tensor(to_tensor(ImageBuffer(px))) == ImageBuffer(px)

    def test_rounding_half_away_from_zero_and_clamp(self):
        arr = np.array([0.5, 1.5, 2.5, -3.0, 300.0]) / 255.0
        out = from_tensor(np.broadcast_to(arr, (3, 1, 5))).pixels[0, :, 0]
        np.testing.assert_array_equal(out, [1, 2, 3, 0, 255])


class TestPadToEven:
    def test_even_is_unchanged(self):
        x = np.random.default_rng(0).random((3, 4, 4))
        out, rec = pad_to_even(x)
        assert rec.empty
        np.testing.assert_array_equal(out, x)

    def test_odd_height_mirrors_bottom_row(self):
        x = np.random.default_rng(1).random((3, 5, 4))
        out, rec = pad_to_even(x)
        assert out.shape == (3, 6, 4)
        np.testing.assert_array_equal(out[:, 5], x[:, 3])  # reflect: edge row not repeated
        np.testing.assert_array_equal(rec.crop(out), x)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 9), st.integers(2, 9))
    def test_crop_restores_size(self, h, w):
        x = np.zeros((3, h, w))
        out, rec = pad_to_even(x)
        assert out.shape[1] % 2 == 0 and out.shape[2] % 2 == 0
        assert out.shape[1] - h <= 1 and out.shape[2] - w <= 1
        assert rec.crop(out).shape == (3, h, w)


class TestHelpers:
    def test_resize_keeps_constants(self):
        out = resize_array(np.full((3, 10, 15), 0.4, np.float32), 64, 96)
        assert out.shape == (3, 64, 96)
        np.testing.assert_allclose(out, 0.4, rtol=1e-6)

    def test_luminance_weights(self):
        img = np.zeros((3, 1, 1))
        img[1] = 1.0
        assert luminance(img)[0, 0] == pytest.approx(0.587)

    def test_scan_is_lexicographic_and_filtered(self, tmp_path):
        for name in ["b.png", "a.ppm", "c.txt", "A.png"]:
            (tmp_path / name).write_bytes(b"")
        names = [p.rsplit("/", 1)[-1] for p in scan_directory(tmp_path)]
        assert names == ["A.png", "a.ppm", "b.png"]

    def test_dataset_rejects_overlap_and_empty(self, tmp_path):
        (tmp_path / "x.png").write_bytes(b"")
        shared = str(tmp_path / "x.png")
        with pytest.raises(ContractError, match="both pools"):
            DatasetIndex([shared], [shared]).validate()
        with pytest.raises(ContractError):
            DatasetIndex([], [shared]).validate()
