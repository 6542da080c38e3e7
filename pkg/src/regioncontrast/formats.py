"""Binary image file I/O: PGM (P5, 8/16-bit), PPM (P6, 8-bit) and PFM.

Writers emit canonical headers (single spaces, single newlines) so identical
data always produces identical bytes.  Readers follow the published netpbm
framing: header tokens separated by whitespace, '#' comments allowed before
the raster.  PFM rasters are 32-bit little-endian floats stored bottom row
first, scale field -1.0; positive (big-endian) scales are rejected.
"""

from __future__ import annotations

import io

import numpy as np

from .errors import FormatError


def _read_token(f: io.BufferedReader) -> bytes:
    tok = b""
    while True:
        ch = f.read(1)
        if ch == b"":
            raise FormatError("truncated header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = f.read(1)
            continue
        if ch.isspace():
            if tok:
                return tok
            continue
        tok += ch


def _read_netpbm_header(f: io.BufferedReader, magic: str) -> tuple[int, int, int]:
    got = f.read(2)
    if got != magic.encode():
        raise FormatError(f"expected {magic}, got {got!r}")
    width = int(_read_token(f))
    height = int(_read_token(f))
    maxval = int(_read_token(f))
    if width <= 0 or height <= 0:
        raise FormatError(f"bad extents {width}x{height}")
    return width, height, maxval


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated payload: wanted {n} bytes, got {len(buf)}")
    return buf


# ---------------------------------------------------------------------------
# PGM

def load_pgm16(path) -> np.ndarray:
    """16-bit big-endian P5 -> (H,W) uint16 array."""
    with open(path, "rb") as f:
        w, h, maxval = _read_netpbm_header(f, "P5")
        if maxval != 65535:
            raise FormatError(f"expected maxval 65535, got {maxval}")
        raw = _read_exact(f, w * h * 2)
    return np.frombuffer(raw, dtype=">u2").reshape(h, w).astype(np.uint16)


def store_pgm16(values: np.ndarray, path) -> None:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("store_pgm16: expected (H,W)")
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode())
        f.write(values.astype(">u2").tobytes())


def load_pgm8(path) -> np.ndarray:
    """8-bit P5 -> (H,W) uint8 array."""
    with open(path, "rb") as f:
        w, h, maxval = _read_netpbm_header(f, "P5")
        if maxval != 255:
            raise FormatError(f"expected maxval 255, got {maxval}")
        raw = _read_exact(f, w * h)
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy()


def store_pgm8(values: np.ndarray, path) -> None:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("store_pgm8: expected (H,W)")
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(values.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# PPM

def load_image_ppm(path) -> np.ndarray:
    """8-bit P6 -> (3,H,W) float64 in [0,1]."""
    with open(path, "rb") as f:
        w, h, maxval = _read_netpbm_header(f, "P6")
        if maxval != 255:
            raise FormatError(f"expected maxval 255, got {maxval}")
        raw = _read_exact(f, w * h * 3)
    rgb = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return rgb.transpose(2, 0, 1).astype(np.float64) / 255.0


def store_image_ppm(image: np.ndarray, path) -> None:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError("store_image_ppm: expected (3,H,W)")
    q = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    _, h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(q.transpose(1, 2, 0).tobytes())


# ---------------------------------------------------------------------------
# PFM

def _load_pfm(path, channels: int) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic not in (b"Pf", b"PF"):
            raise FormatError(f"expected Pf/PF, got {magic!r}")
        got_channels = 1 if magic == b"Pf" else 3
        if got_channels != channels:
            raise FormatError(f"expected {channels}-channel PFM, file has {got_channels}")
        dims = f.readline().split()
        if len(dims) != 2:
            raise FormatError("bad PFM dimension line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline())
        if scale >= 0:
            raise FormatError("big-endian PFM (positive scale) unsupported")
        raw = _read_exact(f, w * h * channels * 4)
    flat = np.frombuffer(raw, dtype="<f4").reshape(h, w, channels)
    flat = flat[::-1]  # rows are stored bottom-up
    if channels == 1:
        return flat[:, :, 0].astype(np.float64)
    return flat.transpose(2, 0, 1).astype(np.float64)


def _store_pfm(values: np.ndarray, path, channels: int) -> None:
    if channels == 1:
        h, w = values.shape
        pixels = values.reshape(h, w, 1)
        magic = "Pf"
    else:
        _, h, w = values.shape
        pixels = values.transpose(1, 2, 0)
        magic = "PF"
    with open(path, "wb") as f:
        f.write(f"{magic}\n{w} {h}\n-1.0\n".encode())
        f.write(pixels[::-1].astype("<f4").tobytes())


def load_scalar_pfm(path) -> np.ndarray:
    """Single-channel PFM -> (H,W) float64."""
    return _load_pfm(path, 1)


def store_scalar_pfm(values: np.ndarray, path) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("store_scalar_pfm: expected (H,W)")
    _store_pfm(values, path, 1)


def load_vec3_pfm(path) -> np.ndarray:
    """3-channel PFM -> (3,H,W) float64."""
    return _load_pfm(path, 3)


def store_vec3_pfm(values: np.ndarray, path) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or values.shape[0] != 3:
        raise ValueError("store_vec3_pfm: expected (3,H,W)")
    _store_pfm(values, path, 3)


def snap_f32(values: np.ndarray) -> np.ndarray:
    """Round-trip through float32, so later PFM persistence is bit-exact."""
    return np.asarray(values).astype(np.float32).astype(np.float64)
