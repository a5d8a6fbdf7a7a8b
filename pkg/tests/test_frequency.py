"""Transform correctness against a direct-summation oracle, plus containers.

The oracle below evaluates the 2-D DCT-II definition term by term with
math.cos, sharing no code with the separable matrix implementation under
test.
"""

import math

import numpy as np
import pytest

from freqdoc.errors import FormatError, ValidationError
from freqdoc.frequency import (
    CHROMA_BASE,
    LUMA_BASE,
    ZIGZAG,
    FrequencyCube,
    build_quant_tables,
    dequantize_block,
    dequantize_cube,
    extract_frequency_cube,
    forward_dct_block,
    inverse_dct_block,
    plane_coefficients,
    plane_from_coefficients,
    quantize_block,
    read_tensor,
    reconstruct_canvas,
    rgb_flatten_cube,
    write_tensor,
)
from freqdoc.imaging import RgbImage, rgb_to_ycbcr, subsample_chroma

from conftest import make_document


def naive_dct_block(pixels: np.ndarray) -> np.ndarray:
    """Direct summation over the transform definition, term by term."""
    cos = [[math.cos((2 * m + 1) * u * math.pi / 16.0) for m in range(8)] for u in range(8)]
    alpha = [1.0 / math.sqrt(2.0)] + [1.0] * 7
    centered = np.asarray(pixels, dtype=np.float64) - 128.0
    out = np.empty((8, 8))
    for u in range(8):
        for v in range(8):
            acc = 0.0
            for m in range(8):
                for n in range(8):
                    acc += centered[m, n] * cos[u][m] * cos[v][n]
            out[u, v] = alpha[u] * alpha[v] * acc / 4.0
    return out


def zigzag_by_walk() -> tuple:
    """Regenerate the scan order by walking anti-diagonals."""
    order = []
    for s in range(15):
        diag = [(u, s - u) for u in range(8) if 0 <= s - u < 8]
        if s % 2 == 0:
            diag.reverse()
        order.extend(u * 8 + v for u, v in diag)
    return tuple(order)


class TestForwardDct:
    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            block = rng.uniform(0, 255, size=(8, 8))
            assert np.allclose(forward_dct_block(block), naive_dct_block(block), atol=1e-9)

    def test_constant_block_dc_only(self):
        coefs = forward_dct_block(np.full((8, 8), 140.0))
        assert coefs[0, 0] == pytest.approx(8.0 * (140 - 128))
        ac = coefs.copy()
        ac[0, 0] = 0.0
        assert np.abs(ac).max() < 1e-12

    def test_centered_impulse_dc(self):
        block = np.full((8, 8), 128.0)
        block[3, 5] += 1.0
        assert forward_dct_block(block)[0, 0] == pytest.approx(0.125)

    def test_linearity(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(-50, 50, size=(8, 8))
        b = rng.uniform(-50, 50, size=(8, 8))
        fa = forward_dct_block(a + 128.0)
        fb = forward_dct_block(b + 128.0)
        fab = forward_dct_block(a + b + 128.0)
        assert np.allclose(fab, fa + fb, atol=1e-9)
        assert np.allclose(forward_dct_block(3.0 * a + 128.0), 3.0 * fa, atol=1e-9)

    def test_parseval(self):
        rng = np.random.default_rng(9)
        block = rng.uniform(0, 255, size=(8, 8))
        coefs = forward_dct_block(block)
        assert np.sum(coefs**2) == pytest.approx(np.sum((block - 128.0) ** 2), rel=1e-12)

    def test_roundtrip(self):
        rng = np.random.default_rng(5)
        block = rng.uniform(0, 255, size=(8, 8))
        assert np.allclose(inverse_dct_block(forward_dct_block(block)), block, atol=1e-10)

    def test_shape_and_finite_validation(self):
        with pytest.raises(ValidationError):
            forward_dct_block(np.zeros((4, 4)))
        bad = np.zeros((8, 8))
        bad[0, 0] = np.nan
        with pytest.raises(ValidationError):
            forward_dct_block(bad)


class TestQuantTables:
    def test_quality_50_is_annex_k(self):
        t = build_quant_tables(50)
        assert np.array_equal(t.luma, LUMA_BASE)
        assert np.array_equal(t.chroma, CHROMA_BASE)
        assert t.luma[0][0] == 16

    def test_quality_100_all_ones(self):
        t = build_quant_tables(100)
        assert np.all(t.luma == 1) and np.all(t.chroma == 1)

    def test_low_quality_integer_division(self):
        # s = 5000 // 10 = 500; (16 * 500 + 50) // 100 = 80
        assert build_quant_tables(10).luma[0][0] == 80
        # s = 5000 // 3 = 1666; (16 * 1666 + 50) // 100 = 267 -> clipped 255
        assert build_quant_tables(3).luma[0][0] == 255

    def test_high_quality(self):
        # s = 200 - 180 = 20; (16 * 20 + 50) // 100 = 3
        assert build_quant_tables(90).luma[0][0] == 3

    def test_all_qualities_stay_in_byte_range(self):
        for q in range(1, 101):
            t = build_quant_tables(q)
            for table in (t.luma, t.chroma):
                assert table.min() >= 1 and table.max() <= 255

    def test_out_of_range_rejected(self):
        for q in (0, 101, -5):
            with pytest.raises(ValidationError):
                build_quant_tables(q)


class TestQuantization:
    def test_round_half_away_from_zero(self):
        table = np.full((8, 8), 16)
        block = np.zeros((8, 8))
        block[0, 0], block[0, 1] = 8.0, -8.0
        block[1, 0], block[1, 1] = 7.99, -7.99
        q = quantize_block(block, table)
        assert q[0, 0] == 1 and q[0, 1] == -1
        assert q[1, 0] == 0 and q[1, 1] == 0

    def test_error_bounded_by_half_step(self):
        rng = np.random.default_rng(7)
        tables = build_quant_tables(50)
        block = forward_dct_block(rng.uniform(0, 255, size=(8, 8)))
        q = quantize_block(block, tables.luma)
        back = dequantize_block(q, tables.luma)
        assert np.all(np.abs(back - block) <= tables.luma / 2.0 + 1e-9)

    def test_integer_output(self):
        q = quantize_block(np.ones((8, 8)) * 100.0, np.full((8, 8), 16))
        assert q.dtype == np.int32


class TestZigzag:
    def test_literal_matches_antidiagonal_walk(self):
        assert ZIGZAG == zigzag_by_walk()

    def test_is_a_permutation(self):
        assert sorted(ZIGZAG) == list(range(64))

    def test_dc_first_then_low_frequencies(self):
        assert ZIGZAG[0] == 0
        assert ZIGZAG[1] == 1 and ZIGZAG[2] == 8
        assert ZIGZAG[-1] == 63


class TestPlaneCoefficients:
    def test_matches_per_block_transform(self):
        rng = np.random.default_rng(3)
        plane = rng.uniform(0, 255, size=(24, 16))
        vol = plane_coefficients(plane, None, "raw")
        assert vol.shape == (64, 3, 2)
        for g in range(3):
            for h in range(2):
                block = forward_dct_block(plane[g * 8 : g * 8 + 8, h * 8 : h * 8 + 8])
                for k in range(64):
                    u, v = divmod(ZIGZAG[k], 8)
                    assert vol[k, g, h] == pytest.approx(block[u, v], abs=1e-9)

    def test_row_major_order(self):
        rng = np.random.default_rng(4)
        plane = rng.uniform(0, 255, size=(8, 8))
        vol = plane_coefficients(plane, None, "raw", channel_order="row_major")
        block = forward_dct_block(plane)
        assert np.allclose(vol[:, 0, 0], block.reshape(64))

    def test_quantized_and_dequantized_modes(self):
        rng = np.random.default_rng(5)
        plane = rng.uniform(0, 255, size=(16, 16))
        tables = build_quant_tables(50)
        q = plane_coefficients(plane, tables.luma, "quantized")
        dq = plane_coefficients(plane, tables.luma, "dequantized")
        assert np.allclose(q, np.round(q))
        scales = tables.luma.reshape(64)[np.asarray(ZIGZAG)]
        assert np.allclose(dq, q * scales[:, None, None])

    def test_quant_mode_requires_table(self):
        with pytest.raises(ValidationError):
            plane_coefficients(np.zeros((8, 8)), None, "quantized")

    def test_plane_must_tile(self):
        with pytest.raises(ValidationError):
            plane_coefficients(np.zeros((12, 8)), None, "raw")

    def test_inverse_reassembles_plane(self):
        rng = np.random.default_rng(6)
        plane = rng.uniform(0, 255, size=(32, 24))
        for order in ("zigzag", "row_major"):
            vol = plane_coefficients(plane, None, "raw", channel_order=order)
            back = plane_from_coefficients(vol, channel_order=order)
            assert np.allclose(back, plane, atol=1e-9)


def _canvas(side: int, seed: int = 0) -> RgbImage:
    data = make_document(side, side, seed=seed)
    return RgbImage(width=side, height=side, data=data)


class TestFrequencyCube:
    def test_shape_and_channel_layout(self):
        canvas = _canvas(128)
        planes = subsample_chroma(rgb_to_ycbcr(canvas))
        cube = extract_frequency_cube(planes, mode="raw")
        assert cube.data.shape == (192, 16, 16)
        assert cube.data.dtype == np.float32
        assert cube.canvas_side == 128
        # luma channels come straight from the full-resolution plane
        y_vol = plane_coefficients(planes.y, None, "raw")
        assert np.allclose(cube.data[:64], y_vol, atol=1e-4)

    def test_chroma_upsampled_from_half_grid(self):
        canvas = _canvas(128)
        planes = subsample_chroma(rgb_to_ycbcr(canvas))
        cb_vol = plane_coefficients(planes.cb, None, "raw")
        assert cb_vol.shape == (64, 8, 8)
        cube = extract_frequency_cube(planes, mode="raw")
        # constant-extrapolated corners survive the x2 upsample untouched
        assert cube.data[64, 0, 0] == pytest.approx(cb_vol[0, 0, 0], abs=1e-4)
        assert cube.data[128, -1, -1] == pytest.approx(
            plane_coefficients(planes.cr, None, "raw")[0, -1, -1], abs=1e-4
        )

    def test_dequantized_needs_tables(self):
        planes = subsample_chroma(rgb_to_ycbcr(_canvas(64)))
        with pytest.raises(ValidationError):
            extract_frequency_cube(planes, mode="dequantized")

    def test_full_resolution_chroma_rejected(self):
        planes = rgb_to_ycbcr(_canvas(64))
        with pytest.raises(ValidationError):
            extract_frequency_cube(planes, mode="raw")

    def test_dequantize_cube_matches_dequantized_extraction(self):
        planes = subsample_chroma(rgb_to_ycbcr(_canvas(128)))
        tables = build_quant_tables(50)
        quant = extract_frequency_cube(planes, tables=tables, mode="quantized")
        deq = extract_frequency_cube(planes, tables=tables, mode="dequantized")
        rescaled = dequantize_cube(quant, tables)
        assert rescaled.mode == "dequantized"
        assert np.allclose(rescaled.data, deq.data, atol=1e-2)

    def test_cube_validation(self):
        with pytest.raises(ValidationError):
            FrequencyCube(data=np.zeros((64, 4, 4), dtype=np.float32), mode="raw")
        with pytest.raises(ValidationError):
            FrequencyCube(data=np.zeros((192, 4, 5), dtype=np.float32), mode="raw")
        with pytest.raises(ValidationError):
            FrequencyCube(data=np.zeros((192, 4, 4), dtype=np.float32), mode="lossless")


class TestRgbFlatten:
    def test_exact_pixel_mapping(self):
        side = 16
        data = np.zeros((side, side, 3), dtype=np.uint8)
        data[9, 10, 1] = 255  # patch (1, 1), in-patch (1, 2), channel G
        cube = rgb_flatten_cube(RgbImage(width=side, height=side, data=data))
        assert cube.data.shape == (192, 2, 2)
        channel = (1 * 8 + 2) * 3 + 1
        assert cube.data[channel, 1, 1] == pytest.approx(1.0)
        assert cube.data.sum() == pytest.approx(1.0)

    def test_values_scaled_to_unit(self):
        cube = rgb_flatten_cube(_canvas(64))
        assert cube.data.min() >= 0.0 and cube.data.max() <= 1.0
        assert cube.mode == "rgb_flatten"

    def test_same_grid_as_dct_cube(self):
        canvas = _canvas(128)
        flat = rgb_flatten_cube(canvas)
        planes = subsample_chroma(rgb_to_ycbcr(canvas))
        dct = extract_frequency_cube(planes, mode="raw")
        assert flat.data.shape == dct.data.shape

    def test_non_square_rejected(self):
        data = np.zeros((16, 24, 3), dtype=np.uint8)
        with pytest.raises(ValidationError):
            rgb_flatten_cube(RgbImage(width=24, height=16, data=data))


class TestReconstruct:
    def test_raw_cube_luma_recovers_canvas(self):
        canvas = _canvas(128)
        planes = subsample_chroma(rgb_to_ycbcr(canvas))
        cube = extract_frequency_cube(planes, mode="raw")
        rgb = reconstruct_canvas(cube)
        out = rgb_to_ycbcr(RgbImage(width=128, height=128, data=rgb))
        assert np.abs(out.y - planes.y).max() <= 1.0

    def test_quantized_needs_tables(self):
        planes = subsample_chroma(rgb_to_ycbcr(_canvas(64)))
        tables = build_quant_tables(50)
        cube = extract_frequency_cube(planes, tables=tables, mode="quantized")
        with pytest.raises(ValidationError):
            reconstruct_canvas(cube)
        rgb = reconstruct_canvas(cube, tables=tables)
        assert rgb.shape == (64, 64, 3)

    def test_rgb_flatten_cube_rejected(self):
        cube = rgb_flatten_cube(_canvas(64))
        with pytest.raises(ValidationError):
            reconstruct_canvas(cube)


class TestTensorContainer:
    @pytest.mark.parametrize(
        "shape", [(3,), (2, 5), (192, 4, 4), (1, 2, 3, 4, 5)], ids=str
    )
    def test_roundtrip(self, tmp_path, shape):
        rng = np.random.default_rng(1)
        arr = rng.normal(size=shape).astype(np.float32)
        path = tmp_path / "t.fqc1"
        write_tensor(path, arr)
        back = read_tensor(path)
        assert back.shape == arr.shape
        assert back.dtype == np.float32
        assert np.array_equal(back, arr)

    def test_float64_input_downcast(self, tmp_path):
        path = tmp_path / "t.fqc1"
        write_tensor(path, np.array([1.5, 2.5], dtype=np.float64))
        assert read_tensor(path).dtype == np.float32

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "t.fqc1"
        write_tensor(path, np.zeros(4, dtype=np.float32))
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            read_tensor(path)

    def test_bad_version_and_dtype(self, tmp_path):
        path = tmp_path / "t.fqc1"
        write_tensor(path, np.zeros(4, dtype=np.float32))
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            read_tensor(path)
        raw[4], raw[5] = 1, 7
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            read_tensor(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.fqc1"
        write_tensor(path, np.zeros((4, 4), dtype=np.float32))
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(FormatError):
            read_tensor(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "t.fqc1"
        write_tensor(path, np.zeros(4, dtype=np.float32))
        path.write_bytes(path.read_bytes() + b"\x00\x00\x00\x00")
        with pytest.raises(FormatError):
            read_tensor(path)

    def test_short_header(self, tmp_path):
        path = tmp_path / "t.fqc1"
        path.write_bytes(b"FQC1\x01")
        with pytest.raises(FormatError):
            read_tensor(path)

    def test_excessive_rank(self, tmp_path):
        path = tmp_path / "t.fqc1"
        with pytest.raises(ValidationError):
            write_tensor(path, np.zeros((1,) * 9, dtype=np.float32))
