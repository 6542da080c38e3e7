"""Image format round-trips against hand-assembled byte oracles."""
import struct

import numpy as np
import pytest

from regioncontrast.errors import FormatError
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


# ---------------------------------------------------------------------------
# byte-level oracles: headers and payloads assembled by hand


def test_pgm16_bytes(tmp_path):
    p = tmp_path / "a.pgm"
    vals = np.asarray([[0, 1], [258, 65535]], dtype=np.uint16)
    store_pgm16(vals, p)
    want = b"P5\n2 2\n65535\n" + struct.pack(">4H", 0, 1, 258, 65535)
    assert p.read_bytes() == want
    np.testing.assert_array_equal(load_pgm16(p), vals)


def test_pgm8_bytes(tmp_path):
    p = tmp_path / "a.pgm"
    vals = np.asarray([[7, 0, 255]], dtype=np.uint8)
    store_pgm8(vals, p)
    assert p.read_bytes() == b"P5\n3 1\n255\n" + bytes([7, 0, 255])
    np.testing.assert_array_equal(load_pgm8(p), vals)


def test_ppm_bytes_and_quantization(tmp_path):
    p = tmp_path / "a.ppm"
    # one pixel per channel corner, plus a mid value that rounds to nearest
    image = np.zeros((3, 1, 2))
    image[:, 0, 0] = [0.0, 1.0, 0.5]
    image[:, 0, 1] = [2.0, -1.0, 128.4 / 255.0]
    store_image_ppm(image, p)
    want = b"P6\n2 1\n255\n" + bytes([0, 255, 128, 255, 0, 128])
    assert p.read_bytes() == want
    back = load_image_ppm(p)
    np.testing.assert_allclose(back[:, 0, 0], [0.0, 1.0, 128.0 / 255.0])


def test_scalar_pfm_bytes_bottom_up(tmp_path):
    p = tmp_path / "a.pfm"
    vals = np.asarray([[1.0, 2.0], [3.0, 4.0]])
    store_scalar_pfm(vals, p)
    # bottom row (3,4) is serialized before the top row (1,2)
    want = b"Pf\n2 2\n-1.0\n" + struct.pack("<4f", 3.0, 4.0, 1.0, 2.0)
    assert p.read_bytes() == want
    np.testing.assert_array_equal(load_scalar_pfm(p), vals)


def test_vec3_pfm_interleaves_channels(tmp_path):
    p = tmp_path / "a.pfm"
    vals = np.zeros((3, 1, 2))
    vals[:, 0, 0] = [1.0, 2.0, 3.0]
    vals[:, 0, 1] = [4.0, 5.0, 6.0]
    store_vec3_pfm(vals, p)
    want = b"PF\n2 1\n-1.0\n" + struct.pack("<6f", 1, 2, 3, 4, 5, 6)
    assert p.read_bytes() == want
    np.testing.assert_array_equal(load_vec3_pfm(p), vals)


# ---------------------------------------------------------------------------
# round-trip sweeps


@pytest.mark.parametrize("seed", range(4))
def test_pgm16_roundtrip_random(tmp_path, seed):
    rng = np.random.default_rng(seed)
    vals = rng.integers(0, 65536, size=(9, 13), dtype=np.uint16)
    p = tmp_path / "r.pgm"
    store_pgm16(vals, p)
    np.testing.assert_array_equal(load_pgm16(p), vals)


@pytest.mark.parametrize("seed", range(4))
def test_pfm_roundtrip_is_exact_after_snap(tmp_path, seed):
    rng = np.random.default_rng(100 + seed)
    vals = snap_f32(rng.standard_normal((6, 8)) * 50.0)
    p = tmp_path / "r.pfm"
    store_scalar_pfm(vals, p)
    np.testing.assert_array_equal(load_scalar_pfm(p), vals)

    vec = snap_f32(rng.standard_normal((3, 6, 8)))
    store_vec3_pfm(vec, p)
    np.testing.assert_array_equal(load_vec3_pfm(p), vec)


def test_store_twice_identical_bytes(tmp_path):
    rng = np.random.default_rng(3)
    image = rng.uniform(size=(3, 5, 7))
    a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
    store_image_ppm(image, a)
    store_image_ppm(image, b)
    assert a.read_bytes() == b.read_bytes()


# ---------------------------------------------------------------------------
# reader tolerance and failure modes


def test_reader_accepts_comments_and_padding(tmp_path):
    p = tmp_path / "c.pgm"
    payload = bytes([1, 2, 3, 4, 5, 6])
    p.write_bytes(b"P5 # comment\n# another line\n  3\n\t2 \n255\n" + payload)
    want = np.frombuffer(payload, dtype=np.uint8).reshape(2, 3)
    np.testing.assert_array_equal(load_pgm8(p), want)


def test_wrong_magic_raises(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P6\n1 1\n255\n\x00")
    with pytest.raises(FormatError):
        load_pgm8(p)


def test_wrong_maxval_raises(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P5\n1 1\n255\n\x00")
    with pytest.raises(FormatError):
        load_pgm16(p)


def test_truncated_payload_raises(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P5\n4 4\n255\n\x00\x01")
    with pytest.raises(FormatError):
        load_pgm8(p)


def test_truncated_header_raises(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P5\n4")
    with pytest.raises(FormatError):
        load_pgm8(p)


def test_pfm_big_endian_rejected(tmp_path):
    p = tmp_path / "x.pfm"
    p.write_bytes(b"Pf\n1 1\n1.0\n" + struct.pack(">f", 1.0))
    with pytest.raises(FormatError):
        load_scalar_pfm(p)


def test_pfm_channel_mismatch_raises(tmp_path):
    p = tmp_path / "x.pfm"
    store_scalar_pfm(np.ones((2, 2)), p)
    with pytest.raises(FormatError):
        load_vec3_pfm(p)


def test_store_shape_validation(tmp_path):
    with pytest.raises(ValueError):
        store_pgm16(np.zeros(4), tmp_path / "x")
    with pytest.raises(ValueError):
        store_image_ppm(np.zeros((4, 2, 2)), tmp_path / "x")
    with pytest.raises(ValueError):
        store_vec3_pfm(np.zeros((2, 2)), tmp_path / "x")


def test_snap_f32_idempotent():
    rng = np.random.default_rng(8)
    v = rng.standard_normal(100)
    s = snap_f32(v)
    np.testing.assert_array_equal(snap_f32(s), s)
    assert s.dtype == np.float64
