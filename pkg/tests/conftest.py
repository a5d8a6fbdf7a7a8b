"""Shared fixtures: deterministic document-like rasters and tiny configs."""

from __future__ import annotations

import numpy as np
import pytest

from freqdoc.imaging import RgbImage


def make_document(width: int, height: int, seed: int = 0) -> np.ndarray:
    """Synthetic page: off-white ground, dark strokes, rules, a muted color patch.

    Grayscale-dominant like scanned documents, with enough structure that
    transform losses are measurable. The color patch sits inside a gray mat
    so chroma bleed from 4:2:0 resampling never pushes a reconstructed pixel
    out of gamut. Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    page = np.full((height, width, 3), 235.0)

    line_h = max(3, height // 80)
    for top in range(height // 8, height - line_h, line_h * 3):
        left = width // 20
        right = width - width // 20
        page[top : top + line_h, left:right] = 25.0
        gaps = rng.integers(left, right, size=max(4, width // 60))
        for g in gaps:
            page[top : top + line_h, g : g + line_h * 2] = 235.0

    rule_y = height // 6
    page[rule_y : rule_y + 2, :] = 128.0

    band = np.linspace(60.0, 225.0, width)[None, :, None]
    page[height - height // 10 :, :, :] = band

    mat = max(8, height // 24)
    ph, pw = height // 12, width // 4
    page[: ph + mat, : pw + mat] = 140.0
    page[:ph, :pw] = (90.0, 110.0, 150.0)

    noise = rng.normal(0.0, 1.5, size=page.shape)
    return np.clip(page + noise, 8, 242).astype(np.uint8)


@pytest.fixture(scope="session")
def document_array() -> np.ndarray:
    return make_document(1024, 768, seed=11)


@pytest.fixture(scope="session")
def document_image(document_array) -> RgbImage:
    h, w = document_array.shape[:2]
    return RgbImage(width=w, height=h, data=document_array)


@pytest.fixture()
def toy_config_file(tmp_path):
    path = tmp_path / "toy.ini"
    path.write_text(
        "[run]\n"
        "canvas_side = 512\n"
        "quality = 50\n"
        "[encoder]\n"
        "embed_dim = 8\n"
        "heads = 2,2,2,2\n"
        "window = 4\n"
        "llm_dim = 32\n",
        encoding="utf-8",
    )
    return path
