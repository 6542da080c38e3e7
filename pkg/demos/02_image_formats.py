"""
Plain binary image formats: PGM, PPM, PFM
=========================================

Scenes are stored as ordinary Netpbm/PFM files so any image viewer can
open them. This script writes each format to a temp directory, reads it
back, and shows that the round trip is exact.
"""

import tempfile
from pathlib import Path

import numpy as np

from regioncontrast.formats import (
    load_image_ppm,
    load_pgm8,
    load_pgm16,
    load_scalar_pfm,
    load_vec3_pfm,
    snap_f32,
    store_image_ppm,
    store_pgm8,
    store_pgm16,
    store_scalar_pfm,
    store_vec3_pfm,
)

out = Path(tempfile.mkdtemp(prefix="formats_demo_"))

# 16-bit PGM holds integer grids, used for region masks.
ids = np.array([[0, 1, 1], [2, 2, 65535]], dtype=np.int64)
store_pgm16(ids, out / "mask.pgm")
print("mask.pgm bytes:", (out / "mask.pgm").read_bytes()[:20], "...")
assert (load_pgm16(out / "mask.pgm") == ids).all()

# 8-bit PGM holds class grids.
seg = np.array([[0, 3], [4, 1]], dtype=np.int64)
store_pgm8(seg, out / "seg.pgm")
assert (load_pgm8(out / "seg.pgm") == seg).all()

# PPM stores color images quantized to 8 bits per channel; reading back
# lands within half a quantization step of the original reals.
rng = np.random.default_rng(0)
img = rng.uniform(0.0, 1.0, (3, 4, 5))
store_image_ppm(img, out / "img.ppm")
back = load_image_ppm(out / "img.ppm")
print("ppm max round-trip error:", float(np.abs(back - img).max()), "<", 0.5 / 255)

# PFM is float32 and signed; depth uses the scalar layout, normals the
# 3-channel one. snap_f32 first makes the write/read loop bitwise exact.
depth = snap_f32(rng.uniform(0.0, 1.0, (4, 5)))
store_scalar_pfm(depth, out / "depth.pfm")
assert (load_scalar_pfm(out / "depth.pfm") == depth).all()
print("depth.pfm round trip: bitwise equal")

normals = rng.normal(size=(3, 4, 5))
normals = snap_f32(normals / np.linalg.norm(normals, axis=0, keepdims=True))
store_vec3_pfm(normals, out / "normals.pfm")
assert (load_vec3_pfm(out / "normals.pfm") == normals).all()
print("normals.pfm round trip: bitwise equal")
print("files written under", out)
