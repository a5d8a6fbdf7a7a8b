"""8x8 block DCT, quantization, and the 192-channel frequency cube.

The forward transform is the orthonormal 2-D DCT-II

    X[u, v] = (a_u * a_v / 4) * sum_{m,n} x[m, n]
              * cos((2m + 1) u pi / 16) * cos((2n + 1) v pi / 16)

with a_0 = 1/sqrt(2) and a_i = 1 otherwise, applied to pixel blocks centered
to [-128, 127]. A canvas becomes a cube of 192 channels (64 luma + 64 Cb +
64 Cr, zigzag order, DC first) at 1/8 spatial scale; chroma coefficients are
computed at 1/16 scale and bilinearly upsampled so all three align.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .imaging import RgbImage, YcbcrPlanes, bilinear_resize, ycbcr_to_rgb

CUBE_CHANNELS = 192

# Scan order of JPEG coefficient indices: position k in a zigzag-ordered
# vector holds flat raster index ZIGZAG[k] (u * 8 + v), DC first.
ZIGZAG = (
    0, 1, 8, 16, 9, 2, 3, 10,
    17, 24, 32, 25, 18, 11, 4, 5,
    12, 19, 26, 33, 40, 48, 41, 34,
    27, 20, 13, 6, 7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36,
    29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46,
    53, 60, 61, 54, 47, 55, 62, 63,
)

# ITU-T T.81 Annex K base quantization tables.
LUMA_BASE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)

CHROMA_BASE = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.int64,
)

CUBE_MODES = ("raw", "quantized", "dequantized", "rgb_flatten")


def _dct_basis() -> np.ndarray:
    # B[u, m] = (a_u / 2) * cos((2m + 1) u pi / 16); rows are orthonormal.
    u = np.arange(8).reshape(8, 1)
    m = np.arange(8).reshape(1, 8)
    basis = 0.5 * np.cos((2 * m + 1) * u * np.pi / 16.0)
    basis[0] *= 1.0 / np.sqrt(2.0)
    return basis


_BASIS = _dct_basis()


@dataclass(frozen=True)
class QuantTables:
    """Annex K tables scaled to a quality setting."""

    quality: int
    luma: np.ndarray
    chroma: np.ndarray


@dataclass
class FrequencyCube:
    """Channel-major coefficient volume covering one square canvas."""

    data: np.ndarray  # (192, side, side) float32
    mode: str
    channel_order: str = "zigzag"

    def __post_init__(self) -> None:
        if self.data.ndim != 3 or self.data.shape[0] != CUBE_CHANNELS:
            raise ValidationError(f"cube shape {self.data.shape} must be (192, side, side)")
        if self.data.shape[1] != self.data.shape[2]:
            raise ValidationError("cube spatial grid must be square")
        if self.mode not in CUBE_MODES:
            raise ValidationError(f"unknown cube mode {self.mode!r}")
        if self.channel_order not in ("zigzag", "row_major"):
            raise ValidationError(f"unknown channel order {self.channel_order!r}")

    @property
    def side(self) -> int:
        return self.data.shape[1]

    @property
    def canvas_side(self) -> int:
        return self.side * 8


def forward_dct_block(pixels: np.ndarray) -> np.ndarray:
    """Transform one 8x8 pixel block; input is centered by -128 first."""
    block = np.asarray(pixels, dtype=np.float64)
    if block.shape != (8, 8):
        raise ValidationError(f"expected an 8x8 block, got {block.shape}")
    if not np.all(np.isfinite(block)):
        raise ValidationError("block contains non-finite values")
    centered = block - 128.0
    return _BASIS @ centered @ _BASIS.T


def inverse_dct_block(coefficients: np.ndarray) -> np.ndarray:
    """Invert forward_dct_block, returning pixels in their original range."""
    coefs = np.asarray(coefficients, dtype=np.float64)
    if coefs.shape != (8, 8):
        raise ValidationError(f"expected an 8x8 block, got {coefs.shape}")
    if not np.all(np.isfinite(coefs)):
        raise ValidationError("block contains non-finite values")
    return _BASIS.T @ coefs @ _BASIS + 128.0


def build_quant_tables(quality: int) -> QuantTables:
    """Scale the Annex K tables with the conventional quality rule.

    quality 50 reproduces the base tables; quality 100 degenerates to all
    ones (lossless up to rounding). The 5000/quality branch uses integer
    division, matching the reference codec behavior.
    """
    if not 1 <= int(quality) <= 100:
        raise ValidationError(f"quality {quality} outside [1, 100]")
    quality = int(quality)
    s = 5000 // quality if quality < 50 else 200 - 2 * quality

    def scale(base: np.ndarray) -> np.ndarray:
        return np.clip((base * s + 50) // 100, 1, 255)

    return QuantTables(quality=quality, luma=scale(LUMA_BASE), chroma=scale(CHROMA_BASE))


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_block(block: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Divide elementwise and round half away from zero to integers."""
    block = np.asarray(block, dtype=np.float64)
    table = np.asarray(table)
    if block.shape != table.shape:
        raise ValidationError(f"block {block.shape} and table {table.shape} differ")
    if np.any(table < 1):
        raise ValidationError("quantization table entries must be >= 1")
    return _round_half_away(block / table).astype(np.int32)


def dequantize_block(q: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Return quantized integers to coefficient scale."""
    q = np.asarray(q)
    table = np.asarray(table)
    if q.shape != table.shape:
        raise ValidationError(f"block {q.shape} and table {table.shape} differ")
    return q.astype(np.float64) * table


def _channel_positions(channel_order: str) -> np.ndarray:
    if channel_order == "zigzag":
        return np.asarray(ZIGZAG, dtype=np.intp)
    return np.arange(64, dtype=np.intp)


def plane_coefficients(
    plane: np.ndarray,
    table: np.ndarray | None,
    mode: str,
    channel_order: str = "zigzag",
) -> np.ndarray:
    """Blockwise DCT of one plane into a (64, H/8, W/8) channel volume."""
    plane = np.asarray(plane, dtype=np.float64)
    h, w = plane.shape
    if h % 8 or w % 8:
        raise ValidationError(f"plane {h}x{w} is not a multiple of 8")
    gh, gw = h // 8, w // 8
    blocks = plane.reshape(gh, 8, gw, 8).transpose(0, 2, 1, 3) - 128.0
    coefs = np.einsum("um,ghmn,vn->ghuv", _BASIS, blocks, _BASIS, optimize=True)
    if mode in ("quantized", "dequantized"):
        if table is None:
            raise ValidationError(f"mode {mode!r} requires quantization tables")
        q = _round_half_away(coefs / table)
        coefs = q if mode == "quantized" else q * table
    elif mode != "raw":
        raise ValidationError(f"unknown coefficient mode {mode!r}")
    flat = coefs.reshape(gh, gw, 64)
    return flat[:, :, _channel_positions(channel_order)].transpose(2, 0, 1)


def extract_frequency_cube(
    planes: YcbcrPlanes,
    tables: QuantTables | None = None,
    mode: str = "dequantized",
    channel_order: str = "zigzag",
) -> FrequencyCube:
    """Assemble the 192-channel cube from 4:2:0 planes.

    Luma fills channels 0-63 at 1/8 canvas scale; Cb and Cr fill 64-127 and
    128-191, computed at 1/16 scale and bilinearly upsampled by 2 so the
    grid aligns with luma.
    """
    if not planes.is_subsampled:
        raise ValidationError("cube extraction expects 4:2:0 planes")
    if mode == "rgb_flatten":
        raise ValidationError("rgb_flatten cubes come from rgb_flatten_cube")
    if mode in ("quantized", "dequantized") and tables is None:
        raise ValidationError(f"mode {mode!r} requires quantization tables")
    luma_table = tables.luma if tables is not None else None
    chroma_table = tables.chroma if tables is not None else None

    y_vol = plane_coefficients(planes.y, luma_table, mode, channel_order)
    side = y_vol.shape[1]
    chroma_vols = []
    for plane in (planes.cb, planes.cr):
        vol = plane_coefficients(plane, chroma_table, mode, channel_order)
        chroma_vols.append(bilinear_resize(vol, side, side))
    data = np.concatenate([y_vol, *chroma_vols], axis=0).astype(np.float32)
    return FrequencyCube(data=data, mode=mode, channel_order=channel_order)


@dataclass(frozen=True)
class AdapterWeights:
    """Affine map taking 192 coefficient channels to the encoder width."""

    projection: np.ndarray  # (dim, 192)
    bias: np.ndarray  # (dim,)

    def __post_init__(self) -> None:
        if self.projection.ndim != 2 or self.projection.shape[1] != CUBE_CHANNELS:
            raise ValidationError(
                f"projection shape {self.projection.shape} must be (dim, 192)"
            )
        if self.bias.shape != (self.projection.shape[0],):
            raise ValidationError(
                f"bias shape {self.bias.shape} does not match dim "
                f"{self.projection.shape[0]}"
            )

    @property
    def dim(self) -> int:
        return self.projection.shape[0]


def adapter_project(cube: FrequencyCube, weights: AdapterWeights) -> np.ndarray:
    """Per-cell affine projection of cube channels, (dim, side, side)."""
    out = np.einsum("dc,cij->dij", weights.projection, cube.data, optimize=True)
    return out + weights.bias[:, None, None]


def per_channel_stats(cubes: list[FrequencyCube]) -> tuple[np.ndarray, np.ndarray]:
    """Calibration mean/std per channel over a set of cubes."""
    if not cubes:
        raise ValidationError("need at least one cube for calibration")
    stacked = np.concatenate([c.data.reshape(CUBE_CHANNELS, -1) for c in cubes], axis=1)
    return stacked.mean(axis=1), stacked.std(axis=1)


def standardize_cube(
    cube: FrequencyCube, mean: np.ndarray, std: np.ndarray, eps: float = 1e-6
) -> FrequencyCube:
    """Optional per-channel standardization; off by default in pipelines."""
    data = (cube.data - mean[:, None, None]) / (std[:, None, None] + eps)
    return FrequencyCube(
        data=data.astype(np.float32), mode=cube.mode, channel_order=cube.channel_order
    )


def rgb_flatten_cube(canvas: RgbImage) -> FrequencyCube:
    """Ablation baseline: 8x8x3 patches flattened to 192 channels.

    Patch bytes are taken exactly as stored (row-major pixels, RGB
    interleaved) and scaled to [0, 1]; the result is shape-compatible with
    the DCT cube of the same canvas.
    """
    if canvas.width != canvas.height:
        raise ValidationError("flattening expects a square canvas")
    if canvas.width % 8:
        raise ValidationError(f"canvas side {canvas.width} is not a multiple of 8")
    side = canvas.width // 8
    patches = (
        canvas.data.reshape(side, 8, side, 8, 3)
        .transpose(0, 2, 1, 3, 4)
        .reshape(side, side, CUBE_CHANNELS)
    )
    data = (patches.astype(np.float32) / 255.0).transpose(2, 0, 1)
    return FrequencyCube(data=data, mode="rgb_flatten")


def plane_from_coefficients(volume: np.ndarray, channel_order: str = "zigzag") -> np.ndarray:
    """Inverse of plane_coefficients for raw-scale volumes: (64, gh, gw) to a plane."""
    volume = np.asarray(volume, dtype=np.float64)
    if volume.ndim != 3 or volume.shape[0] != 64:
        raise ValidationError(f"volume shape {volume.shape} must be (64, gh, gw)")
    gh, gw = volume.shape[1:]
    flat = np.empty((gh, gw, 64), dtype=np.float64)
    flat[:, :, _channel_positions(channel_order)] = volume.transpose(1, 2, 0)
    coefs = flat.reshape(gh, gw, 8, 8)
    blocks = np.einsum("um,ghuv,vn->ghmn", _BASIS, coefs, _BASIS, optimize=True) + 128.0
    return blocks.transpose(0, 2, 1, 3).reshape(gh * 8, gw * 8)


def _channel_scales(tables: QuantTables, channel_order: str) -> np.ndarray:
    # Each cube channel holds one coefficient position, so dequantization is
    # a single scalar per channel.
    positions = _channel_positions(channel_order)
    luma = tables.luma.reshape(64)[positions]
    chroma = tables.chroma.reshape(64)[positions]
    return np.concatenate([luma, chroma, chroma]).astype(np.float64)


def dequantize_cube(cube: FrequencyCube, tables: QuantTables) -> FrequencyCube:
    """Rescale a quantized cube back to coefficient magnitudes."""
    if cube.mode != "quantized":
        raise ValidationError(f"cube mode {cube.mode!r} is not quantized")
    scales = _channel_scales(tables, cube.channel_order)
    data = (cube.data.astype(np.float64) * scales[:, None, None]).astype(np.float32)
    return FrequencyCube(data=data, mode="dequantized", channel_order=cube.channel_order)


def reconstruct_canvas(cube: FrequencyCube, tables: QuantTables | None = None) -> np.ndarray:
    """Invert a coefficient cube to an RGB canvas, uint8 (side*8, side*8, 3).

    Chroma channels are pooled 2x2 back to their native 1/16 grid before the
    inverse transform, then the half-resolution planes are bilinearly
    upsampled, mirroring the forward path.
    """
    if cube.mode == "rgb_flatten":
        raise ValidationError("rgb_flatten cubes hold pixels, not coefficients")
    if cube.mode == "quantized":
        if tables is None:
            raise ValidationError("quantized cubes need tables to reconstruct")
        cube = dequantize_cube(cube, tables)
    if cube.side % 2:
        raise ValidationError(f"cube side {cube.side} must be even for 4:2:0 chroma")
    data = cube.data.astype(np.float64)
    y = plane_from_coefficients(data[:64], cube.channel_order)
    half = cube.side // 2
    planes = []
    for vol in (data[64:128], data[128:192]):
        pooled = vol.reshape(64, half, 2, half, 2).mean(axis=(2, 4))
        plane = plane_from_coefficients(pooled, cube.channel_order)
        planes.append(bilinear_resize(plane, cube.canvas_side, cube.canvas_side))
    rgb = ycbcr_to_rgb(y, planes[0], planes[1])
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


# Tensor container: magic FQC1, u8 version, u8 dtype code (0 = float32),
# two reserved zero bytes, u32 ndim, ndim u32 dims, row-major payload.
# All integers little-endian.
_TENSOR_MAGIC = b"FQC1"
_TENSOR_VERSION = 1
_DTYPE_FLOAT32 = 0
_MAX_NDIM = 8


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    """Serialize an array as float32 in the FQC1 container."""
    arr = np.ascontiguousarray(np.asarray(array), dtype="<f4")
    if arr.ndim > _MAX_NDIM:
        raise ValidationError(f"rank {arr.ndim} exceeds the container limit {_MAX_NDIM}")
    header = _TENSOR_MAGIC + struct.pack(
        "<BBHI", _TENSOR_VERSION, _DTYPE_FLOAT32, 0, arr.ndim
    )
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes(order="C"))


def read_tensor(path: str | Path) -> np.ndarray:
    """Read an FQC1 tensor, rejecting unknown magic, version, or dtype."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: too short for a tensor header")
    if raw[:4] != _TENSOR_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, dtype_code, _reserved, ndim = struct.unpack("<BBHI", raw[4:12])
    if version != _TENSOR_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype_code != _DTYPE_FLOAT32:
        raise FormatError(f"{path}: unsupported dtype code {dtype_code}")
    if ndim > _MAX_NDIM:
        raise FormatError(f"{path}: rank {ndim} exceeds the container limit")
    dims_end = 12 + 4 * ndim
    if len(raw) < dims_end:
        raise FormatError(f"{path}: truncated dimension list")
    dims = struct.unpack(f"<{ndim}I", raw[12:dims_end])
    count = 1
    for d in dims:
        count *= d
    payload = raw[dims_end:]
    if len(payload) != 4 * count:
        raise FormatError(
            f"{path}: payload holds {len(payload)} bytes, header declares {4 * count}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
