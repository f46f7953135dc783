"""Dependency-free output formats: binary PPM images, SVG line plots,
key=value metadata files and content hashes for provenance."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np


def to_uint8(img: np.ndarray) -> np.ndarray:
    """(3, H, W) array in [-1, 1] -> (H, W, 3) uint8."""
    arr = np.clip((np.asarray(img) + 1.0) / 2.0, 0.0, 1.0)
    return np.round(arr.transpose(1, 2, 0) * 255.0).astype(np.uint8)


def write_ppm(path: str | Path, img: np.ndarray) -> None:
    """Write a (3, H, W) array in [-1, 1] as binary P6."""
    arr = to_uint8(img)
    h, w, _ = arr.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(arr.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM")
    parts = data.split(b"\n", 3)
    w, h = (int(v) for v in parts[1].split())
    arr = np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float32) / 255.0 * 2.0 - 1.0


def image_grid(images: list[np.ndarray], cols: int = 8, pad: int = 1) -> np.ndarray:
    """Tile (3, H, W) arrays into one grid image with a dark separator."""
    n = len(images)
    cols = min(cols, n)
    rows = (n + cols - 1) // cols
    _, h, w = images[0].shape
    grid = np.full((3, rows * (h + pad) + pad, cols * (w + pad) + pad), -1.0, dtype=np.float32)
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        grid[:, y:y + h, x:x + w] = img
    return grid


def write_metadata(path: str | Path, meta: dict[str, str]) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in sorted(meta.items())))


def read_metadata(path: str | Path) -> dict[str, str]:
    meta = {}
    for line in Path(path).read_text().splitlines():
        if line:
            k, _, v = line.partition("=")
            meta[k] = v
    return meta


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2")


def write_svg_line_plot(
    path: str | Path,
    series: dict[str, tuple[list[float], list[float]]],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    width: int = 640,
    height: int = 420,
) -> None:
    """Minimal multi-series line plot as a standalone SVG."""
    ml, mr, mt, mb = 60, 160, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    all_x = [x for xs, _ in series.values() for x in xs]
    all_y = [y for _, ys in series.values() for y in ys]
    if not all_x:
        raise ValueError("no data to plot")
    x0, x1 = min(all_x), max(all_x)
    y0, y1 = min(all_y), max(all_y)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    y0, y1 = y0 - 0.05 * (y1 - y0), y1 + 0.05 * (y1 - y0)

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
    ]
    if title:
        parts.append(f'<text x="{width / 2}" y="{mt - 15}" text-anchor="middle" '
                     f'font-size="14">{title}</text>')
    if xlabel:
        parts.append(f'<text x="{ml + pw / 2}" y="{height - 12}" text-anchor="middle">{xlabel}</text>')
    if ylabel:
        parts.append(f'<text x="16" y="{mt + ph / 2}" text-anchor="middle" '
                     f'transform="rotate(-90 16 {mt + ph / 2})">{ylabel}</text>')
    for i in range(5):
        xv = x0 + i / 4 * (x1 - x0)
        yv = y0 + i / 4 * (y1 - y0)
        parts.append(f'<text x="{sx(xv):.1f}" y="{mt + ph + 16}" text-anchor="middle">{xv:.3g}</text>')
        parts.append(f'<text x="{ml - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
        parts.append(f'<line x1="{ml}" y1="{sy(yv):.1f}" x2="{ml + pw}" y2="{sy(yv):.1f}" '
                     f'stroke="#ddd"/>')
    for i, (label, (xs, ys)) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in sorted(zip(xs, ys)))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in zip(xs, ys):
            parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{color}"/>')
        ly = mt + 16 + i * 18
        parts.append(f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 30}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{ml + pw + 35}" y="{ly}">{label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))
