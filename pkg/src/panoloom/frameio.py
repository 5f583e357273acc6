"""Frame and grid file formats.

``.erpf`` layout: ``b"ERPF"``, then little-endian ``u32 width, u32 height,
u32 channels``, then ``width*height*channels`` little-endian f32 values in
row-major ``(H, W, C)`` order. The same container carries occupancy grids
(one channel, nonzero = obstacle) without the 2:1 constraint.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .erp import ErpFrame
from .errors import ParseError

ERPF_MAGIC = b"ERPF"
_HEADER = struct.Struct("<4sIII")


def write_raw(path, array: np.ndarray) -> None:
    arr = np.asarray(array, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(ERPF_MAGIC, w, h, c))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_raw(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ParseError(f"{path}: truncated header", len(data))
    magic, w, h, c = _HEADER.unpack_from(data)
    if magic != ERPF_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}", 0)
    expected = w * h * c * 4
    payload = len(data) - _HEADER.size
    if payload != expected:
        raise ParseError(f"{path}: expected {expected} payload bytes, found {payload}", _HEADER.size + min(payload, expected))
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(h, w, c).astype(np.float32)


def write_erpf(path, frame: ErpFrame) -> None:
    write_raw(path, frame.pixels)


def read_erpf(path) -> ErpFrame:
    return ErpFrame(read_raw(path))


def write_png(path, pixels) -> None:
    px = np.asarray(pixels.pixels if isinstance(pixels, ErpFrame) else pixels)
    if px.dtype != np.uint8:
        px = np.clip(np.rint(px), 0, 255).astype(np.uint8)
    if px.ndim == 3 and px.shape[2] == 1:
        px = px[:, :, 0]
    Image.fromarray(px).save(path, format="PNG", compress_level=1)


def read_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def read_frame(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".erpf":
        return read_raw(path)
    return read_png(path)


def list_frames(directory) -> list[Path]:
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix in (".png", ".erpf"))
    return files


def read_frames_dir(directory) -> list[np.ndarray]:
    return [read_frame(p) for p in list_frames(directory)]


# --- occupancy grids ---------------------------------------------------------


def write_pgm(path, obstacles: np.ndarray) -> None:
    """Binary PGM (P5): obstacles black (0), free space white (255)."""
    cells = np.asarray(obstacles, dtype=bool)
    h, w = cells.shape
    body = np.where(cells, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(body.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P5 PGM; pixels darker than mid-grey are obstacles."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: truncated PGM header", pos)
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ParseError(f"{path}: not a binary PGM", 0)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ParseError(f"{path}: bad PGM header ({exc})", pos) from None
    pos += 1
    depth = 2 if maxval > 255 else 1
    need = w * h * depth
    if len(data) - pos < need:
        raise ParseError(f"{path}: expected {need} pixel bytes", len(data))
    dtype = ">u2" if depth == 2 else np.uint8
    pixels = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return pixels < (maxval + 1) / 2


def read_grid_cells(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".pgm":
        return read_pgm(path)
    raw = read_raw(path)
    return raw[:, :, 0] != 0
