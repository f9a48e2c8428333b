"""File formats: sRGB images in, label maps / flow fields / overlays out.

Label maps serialize as 16-bit binary PGM (P5, big-endian, maxval 65535) or
as CSV with one image row per line. Flow fields use CSV with a `width,height`
header line followed by one `u,v` line per pixel in row-major order.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .cluster import LabelMap


class FileFormatError(ValueError):
    """Raised when a file does not match its expected format."""


def load_image(path: str | Path) -> np.ndarray:
    """Read a PNG or binary PPM image as an (h, w, 3) uint8 array.

    Alpha channels are stripped; grayscale is expanded to RGB.
    """
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        return np.asarray(rgb, dtype=np.uint8)


def save_image_png(path: str | Path, img: np.ndarray) -> None:
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# PGM label maps


def write_label_pgm(path: str | Path, labels: LabelMap) -> None:
    """16-bit binary PGM; ids above 65535 need the CSV format instead."""
    ids = labels.grid()
    if ids.min() < 0 or ids.max() > 65535:
        raise FileFormatError(
            f"label ids outside [0, 65535] (max {ids.max()}); use CSV"
        )
    header = f"P5\n{labels.n_w} {labels.n_h}\n65535\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(ids.astype(">u2").tobytes())


def read_label_pgm(path: str | Path) -> np.ndarray:
    """Read an 8- or 16-bit binary PGM as an (h, w) int array."""
    blob = Path(path).read_bytes()
    if not blob.startswith(b"P5"):
        raise FileFormatError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval -- whitespace separated, with
    # optional '#' comment lines
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FileFormatError(f"{path}: truncated PGM header")
        try:
            fields.append(int(blob[start:pos]))
        except ValueError as e:
            raise FileFormatError(f"{path}: bad PGM header field") from e
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise FileFormatError(f"{path}: invalid PGM dimensions/maxval")
    dtype = ">u2" if maxval > 255 else "u1"
    expect = w * h * (2 if maxval > 255 else 1)
    data = blob[pos:pos + expect]
    if len(data) != expect:
        raise FileFormatError(f"{path}: PGM pixel data truncated")
    return np.frombuffer(data, dtype=dtype).reshape(h, w).astype(np.int64)


# ---------------------------------------------------------------------------
# CSV label maps and flow fields


def write_label_csv(path: str | Path, labels: LabelMap) -> None:
    ids = labels.grid()
    with open(path, "w") as f:
        for row in ids:
            f.write(",".join(str(int(v)) for v in row))
            f.write("\n")


def read_label_csv(path: str | Path) -> np.ndarray:
    try:
        rows = [
            [int(v) for v in line.split(",")]
            for line in Path(path).read_text().splitlines()
            if line.strip()
        ]
    except ValueError as e:
        raise FileFormatError(f"{path}: non-integer label entry") from e
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise FileFormatError(f"{path}: ragged or empty label CSV")
    return np.array(rows, dtype=np.int64)


def write_flow_csv(path: str | Path, flow2d: np.ndarray) -> None:
    """(h, w, 2) flow field -> header `width,height` plus n `u,v` lines."""
    flow2d = np.asarray(flow2d, dtype=np.float64)
    h, w = flow2d.shape[:2]
    with open(path, "w") as f:
        f.write(f"{w},{h}\n")
        for u, v in flow2d.reshape(-1, 2):
            f.write(f"{float(u)!r},{float(v)!r}\n")


def read_flow_csv(path: str | Path) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise FileFormatError(f"{path}: empty flow CSV")
    try:
        w, h = (int(v) for v in lines[0].split(","))
        vals = np.array(
            [[float(v) for v in ln.split(",")] for ln in lines[1:]]
        )
    except ValueError as e:
        raise FileFormatError(f"{path}: malformed flow CSV") from e
    if vals.shape != (w * h, 2):
        raise FileFormatError(
            f"{path}: expected {w * h} u,v rows, got {vals.shape}"
        )
    return vals.reshape(h, w, 2)


# ---------------------------------------------------------------------------
# overlays


def overlay_boundaries(img: np.ndarray, labels: LabelMap,
                       color: tuple[int, int, int] = (255, 0, 0)) -> np.ndarray:
    """Paint label boundary pixels (4-neighbor different id) over the image."""
    out = np.asarray(img, dtype=np.uint8).copy()
    lab = labels.grid()
    mask = np.zeros(lab.shape, dtype=bool)
    d = lab[:, :-1] != lab[:, 1:]
    mask[:, :-1] |= d
    mask[:, 1:] |= d
    d = lab[:-1, :] != lab[1:, :]
    mask[:-1, :] |= d
    mask[1:, :] |= d
    out[mask] = color
    return out
