"""Image ingestion and canvas geometry.

Sources are decoded to 8-bit RGB, letterboxed onto a square canvas without
distorting aspect ratio, and converted to YCbCr with 4:2:0 chroma
subsampling. Resampling is bilinear with the half-pixel-center convention
throughout so outputs are reproducible to the byte.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, ValidationError

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

# Full-range BT.601 analysis coefficients.
_KR, _KG, _KB = 0.299, 0.587, 0.114


@dataclass(frozen=True)
class RgbImage:
    """Decoded 8-bit RGB raster, row-major, at least 8 pixels per side."""

    width: int
    height: int
    data: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self) -> None:
        if self.width < 8 or self.height < 8:
            raise ValidationError(
                f"image must be at least 8x8, got {self.width}x{self.height}"
            )
        if self.data.shape != (self.height, self.width, 3):
            raise ValidationError(
                f"data shape {self.data.shape} does not match "
                f"{self.height}x{self.width}x3"
            )
        if self.data.dtype != np.uint8:
            raise ValidationError(f"data must be uint8, got {self.data.dtype}")


@dataclass(frozen=True)
class CanvasTransform:
    """Mapping from original pixel coordinates onto the padded canvas."""

    target_side: int
    scale: float
    pad_right: int
    pad_bottom: int
    fill_value: int
    orig_width: int
    orig_height: int


@dataclass
class YcbcrPlanes:
    """Luma plus two chroma planes, full resolution or 4:2:0.

    Plane values stay in [0, 255] as float64; centering to [-128, 127]
    happens later in the transform stage.
    """

    y: np.ndarray
    cb: np.ndarray
    cr: np.ndarray

    def __post_init__(self) -> None:
        h, w = self.y.shape
        if h % 16 or w % 16:
            raise ValidationError(f"plane dimensions {h}x{w} must be multiples of 16")
        full = (h, w)
        half = (h // 2, w // 2)
        if self.cb.shape != self.cr.shape:
            raise ValidationError("cb and cr shapes differ")
        if self.cb.shape not in (full, half):
            raise ValidationError(
                f"chroma shape {self.cb.shape} is neither full {full} nor 4:2:0 {half}"
            )

    @property
    def height(self) -> int:
        return self.y.shape[0]

    @property
    def width(self) -> int:
        return self.y.shape[1]

    @property
    def is_subsampled(self) -> bool:
        return self.cb.shape != self.y.shape


def bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample the last two axes with half-pixel-center bilinear weights.

    Edge samples are clamped. Computation is float64 regardless of the
    input dtype; callers quantize if they need integers.
    """
    if out_h < 1 or out_w < 1:
        raise ValidationError(f"output size {out_h}x{out_w} must be positive")
    src = np.asarray(arr, dtype=np.float64)
    h, w = src.shape[-2:]
    if (out_h, out_w) == (h, w):
        return src.copy()

    def axis_coords(n_out: int, n_src: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = (np.arange(n_out) + 0.5) * (n_src / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_src - 1.0)
        lo = np.floor(pos).astype(np.intp)
        hi = np.minimum(lo + 1, n_src - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis_coords(out_h, h)
    x0, x1, fx = axis_coords(out_w, w)
    a = src[..., y0[:, None], x0[None, :]]
    b = src[..., y0[:, None], x1[None, :]]
    c = src[..., y1[:, None], x0[None, :]]
    d = src[..., y1[:, None], x1[None, :]]
    fy = fy[:, None]
    fx = fx[None, :]
    top = a * (1.0 - fx) + b * fx
    bot = c * (1.0 - fx) + d * fx
    return top * (1.0 - fy) + bot * fy


def load_image(path: str | Path, fill: int = 255) -> RgbImage:
    """Decode a PNG or baseline JPEG file to 8-bit RGB.

    Alpha, when present, is composited over ``fill``. 16-bit PNGs are
    rejected rather than silently squashed. Unreadable paths raise OSError;
    everything wrong past the filesystem raises FormatError.
    """
    raw = Path(path).read_bytes()
    if raw[:8] == _PNG_SIGNATURE:
        if len(raw) < 26:
            raise FormatError(f"{path}: truncated PNG header")
        if raw[24] == 16:
            raise FormatError(f"{path}: 16-bit PNG samples are not supported")
    try:
        im = Image.open(io.BytesIO(raw))
        decoded_format = im.format
        im.load()
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise FormatError(f"{path}: cannot decode image ({exc})") from exc
    if decoded_format not in ("PNG", "JPEG"):
        raise FormatError(f"{path}: unsupported format {decoded_format}")
    if im.width == 0 or im.height == 0:
        raise FormatError(f"{path}: zero-dimension image")

    if im.mode == "P":
        im = im.convert("RGBA" if "transparency" in im.info else "RGB")
    if im.mode in ("RGBA", "LA"):
        rgba = np.asarray(im.convert("RGBA"), dtype=np.float64)
        alpha = rgba[..., 3:4] / 255.0
        blended = rgba[..., :3] * alpha + float(fill) * (1.0 - alpha)
        data = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
    else:
        if im.mode != "RGB":
            im = im.convert("RGB")
        data = np.asarray(im, dtype=np.uint8)

    if im.width < 8 or im.height < 8:
        raise FormatError(f"{path}: image {im.width}x{im.height} is smaller than 8x8")
    return RgbImage(width=im.width, height=im.height, data=data)


def _even(value: float) -> int:
    # Nearest even integer, ties rounded up, floor of 2 so content survives.
    return max(2, int(math.floor(value / 2.0 + 0.5)) * 2)


def plan_canvas(
    width: int, height: int, target_side: int = 2560, fill: int = 255
) -> CanvasTransform:
    """Compute the letterbox geometry without touching pixels."""
    if target_side <= 0 or target_side % 16:
        raise ValidationError(f"target_side {target_side} must be a positive multiple of 16")
    if width < 1 or height < 1:
        raise ValidationError(f"source size {width}x{height} must be positive")
    if not 0 <= fill <= 255:
        raise ValidationError(f"fill value {fill} out of byte range")
    scale = target_side / max(width, height)
    if width >= height:
        content_w, content_h = target_side, _even(height * scale)
    else:
        content_w, content_h = _even(width * scale), target_side
    return CanvasTransform(
        target_side=target_side,
        scale=scale,
        pad_right=target_side - content_w,
        pad_bottom=target_side - content_h,
        fill_value=fill,
        orig_width=width,
        orig_height=height,
    )


def resize_and_pad(
    img: RgbImage, target_side: int = 2560, fill: int = 255
) -> tuple[RgbImage, CanvasTransform]:
    """Scale the longest side to ``target_side`` and pad right/bottom.

    The shorter side lands on the nearest even integer so 4:2:0
    subsampling never straddles the content edge. Square target-size
    inputs pass through byte-identical.
    """
    t = plan_canvas(img.width, img.height, target_side, fill)
    content_w = target_side - t.pad_right
    content_h = target_side - t.pad_bottom
    if (content_w, content_h) == (img.width, img.height):
        content = img.data
    else:
        planes = img.data.astype(np.float64).transpose(2, 0, 1)
        resized = bilinear_resize(planes, content_h, content_w)
        content = np.clip(np.rint(resized), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    canvas = np.full((target_side, target_side, 3), fill, dtype=np.uint8)
    canvas[:content_h, :content_w] = content
    return RgbImage(width=target_side, height=target_side, data=canvas), t


def map_box(
    box: tuple[float, float, float, float], t: CanvasTransform
) -> tuple[float, float, float, float]:
    """Map an original-pixel box to canvas-normalized [0, 1] coordinates.

    Coordinates are quantized to exactly three decimals, matching how they
    are rendered in instruction text.
    """
    x1, y1, x2, y2 = (float(v) for v in box)
    if not (0 <= x1 < x2 <= t.orig_width and 0 <= y1 < y2 <= t.orig_height):
        raise ValidationError(
            f"box {box} is degenerate or outside {t.orig_width}x{t.orig_height}"
        )

    def norm(v: float) -> float:
        return round(min(max(v * t.scale / t.target_side, 0.0), 1.0), 3)

    return norm(x1), norm(y1), norm(x2), norm(y2)


def rgb_to_ycbcr(img: RgbImage) -> YcbcrPlanes:
    """Full-range BT.601 conversion, float, clipped to [0, 255]."""
    if img.width % 16 or img.height % 16:
        raise ValidationError(
            f"canvas {img.width}x{img.height} must have sides that are multiples of 16"
        )
    rgb = img.data.astype(np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = _KR * r + _KG * g + _KB * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    clip = lambda p: np.clip(p, 0.0, 255.0)
    return YcbcrPlanes(y=clip(y), cb=clip(cb), cr=clip(cr))


def ycbcr_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    """Exact inverse of rgb_to_ycbcr, unclamped float (H, W, 3).

    Green is recovered from the luma identity instead of rounded published
    coefficients so converting back to luma cancels chroma exactly.
    """
    cb_c = cb - 128.0
    cr_c = cr - 128.0
    r = y + 2.0 * (1.0 - _KR) * cr_c
    b = y + 2.0 * (1.0 - _KB) * cb_c
    g = (y - _KR * r - _KB * b) / _KG
    return np.stack([r, g, b], axis=-1)


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; inf for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(peak * peak / mse)


def subsample_chroma(planes: YcbcrPlanes) -> YcbcrPlanes:
    """4:2:0 subsampling by 2x2 arithmetic mean; luma passes through."""
    if planes.is_subsampled:
        raise ValidationError("chroma planes are already subsampled")
    h, w = planes.y.shape

    def pool(p: np.ndarray) -> np.ndarray:
        return p.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))

    return YcbcrPlanes(y=planes.y, cb=pool(planes.cb), cr=pool(planes.cr))
