"""Plain (P2, ASCII) PGM reading and writing."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import InconsistentDims, MalformedFile, ZeroArea


def _tokens(text: str) -> list[str]:
    out: list[str] = []
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        out.extend(line.split())
    return out


def read_pgm(path: str | Path) -> tuple[np.ndarray, int]:
    """Return ``(pixels, maxval)``; pixels has shape (height, width), file order."""
    path = Path(path)
    try:
        text = path.read_text()
    except UnicodeDecodeError as exc:
        raise MalformedFile(f"{path}: not an ASCII PGM") from exc
    toks = _tokens(text)
    if len(toks) < 4 or toks[0] != "P2":
        raise MalformedFile(f"{path}: missing P2 header")
    try:
        width, height, maxval = (int(t) for t in toks[1:4])
        values = [int(t) for t in toks[4:]]
    except ValueError as exc:
        raise MalformedFile(f"{path}: non-integer token") from exc
    if width == 0 or height == 0:
        raise ZeroArea(f"{path}: {width}x{height} image")
    if width < 0 or height < 0 or maxval <= 0 or maxval > 65535:
        raise MalformedFile(f"{path}: bad header {width} {height} {maxval}")
    if len(values) != width * height:
        raise InconsistentDims(
            f"{path}: header says {width}x{height}={width * height} pixels, found {len(values)}"
        )
    pixels = np.asarray(values, dtype=np.int64).reshape(height, width)
    if pixels.min() < 0 or pixels.max() > maxval:
        raise MalformedFile(f"{path}: pixel outside [0, {maxval}]")
    return pixels, maxval


def write_pgm(path: str | Path, pixels: np.ndarray, maxval: int = 255) -> None:
    """Write a 2D integer array (file order, first row on top)."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValueError("expected a 2D array")
    h, w = pixels.shape
    lines = ["P2", f"{w} {h}", str(maxval)]
    lines.extend(" ".join(str(int(v)) for v in row) for row in pixels)
    Path(path).write_text("\n".join(lines) + "\n")


def heatmap_pixels(values: np.ndarray) -> np.ndarray:
    """Scale a (ny, nx) array with row 0 = lowest y to 0..255, top row = highest y.

    Non-finite entries map to 0.
    """
    v = np.asarray(values, dtype=float)
    finite = np.isfinite(v)
    out = np.zeros(v.shape, dtype=np.int64)
    if finite.any():
        lo = v[finite].min()
        hi = v[finite].max()
        span = hi - lo
        scaled = np.zeros_like(v) if span <= 0 else (v - lo) / span
        out[finite] = np.round(scaled[finite] * 255).astype(np.int64)
    return out[::-1]
