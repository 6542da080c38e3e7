"""Scene generator invariants, persistence round-trips, and a frozen golden."""
import hashlib

import numpy as np
import pytest

from regioncontrast.errors import DataError
from regioncontrast.formats import snap_f32
from regioncontrast.synthworld import (
    MIN_VISIBLE_PIXELS,
    Scene,
    WorldConfig,
    assign_labels,
    class_palette,
    generate_dataset,
    generate_scene,
    read_dataset,
    write_dataset,
)
from regioncontrast.tasks import TASKS

# regenerating scene (seed 0, default config) must keep producing these bytes
GOLDEN_SHA256 = "d36085c447015ee72e2c383915770b35cfd6c7551d1ebe4d9fd4a92046c2d95e"


def scene_digest(sc: Scene) -> str:
    h = hashlib.sha256()
    for arr in (sc.image, sc.seg.astype(np.int64), sc.depth, sc.normals,
                sc.regions.ids.astype(np.int64)):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def test_config_validation():
    with pytest.raises(ValueError):
        WorldConfig(h=47).validate()
    with pytest.raises(ValueError):
        WorldConfig(n_classes=1).validate()
    with pytest.raises(ValueError):
        WorldConfig(min_shapes=4, max_shapes=3).validate()
    WorldConfig().validate()


def test_palette_deterministic_and_bounded():
    a = class_palette(WorldConfig(seed=5))
    b = class_palette(WorldConfig(seed=5))
    c = class_palette(WorldConfig(seed=6))
    np.testing.assert_array_equal(a, b)
    assert (a != c).any()
    assert a.shape == (5, 3)
    assert (a >= 0.15).all() and (a <= 0.85).all()


def test_golden_scene_frozen():
    sc = generate_scene(WorldConfig(), np.random.default_rng(0))
    assert scene_digest(sc) == GOLDEN_SHA256


@pytest.mark.parametrize("seed", [0, 1])
def test_dataset_bitwise_reproducible(seed):
    cfg = WorldConfig(seed=seed)
    a = generate_dataset(cfg, 5)
    b = generate_dataset(cfg, 5)
    for sa, sb in zip(a, b):
        assert scene_digest(sa) == scene_digest(sb)
    # different world seed, different scenes
    other = generate_dataset(WorldConfig(seed=seed + 100), 5)
    assert scene_digest(a[0]) != scene_digest(other[0])


def test_scene_invariant_sweep():
    cfg = WorldConfig(h=32, w=40, seed=9)
    rng_ids = range(300)
    cols, rows = np.meshgrid(np.arange(cfg.w), np.arange(cfg.h))
    x = cols / (cfg.w - 1)
    y = rows / (cfg.h - 1)
    for i in rng_ids:
        sc = generate_scene(cfg, np.random.default_rng(i))
        # shapes and dtypes
        assert sc.image.shape == (3, cfg.h, cfg.w)
        assert sc.seg.shape == (cfg.h, cfg.w) and sc.seg.dtype == np.uint8
        assert sc.depth.shape == (cfg.h, cfg.w)
        assert sc.normals.shape == (3, cfg.h, cfg.w)
        # ranges
        assert (sc.image >= 0).all() and (sc.image <= 1).all()
        assert (sc.depth >= 0).all() and (sc.depth <= 1).all()
        assert sc.seg.max() < cfg.n_classes
        # persisted-precision exactness: a float32 round-trip changes nothing
        np.testing.assert_array_equal(snap_f32(sc.depth), sc.depth)
        np.testing.assert_array_equal(snap_f32(sc.normals), sc.normals)
        # unit normals
        norms = np.sqrt((sc.normals.astype(np.float64) ** 2).sum(axis=0))
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)
        # every region visible enough, consistent labels within regions
        m = sc.regions
        assert 2 <= m.n_regions <= cfg.max_shapes + 1
        for rid in m.region_ids():
            pix = m.pixels[rid]
            assert len(pix) >= MIN_VISIBLE_PIXELS
            classes = sc.seg[pix[:, 0], pix[:, 1]]
            assert (classes == classes[0]).all()
            vecs = sc.normals[:, pix[:, 0], pix[:, 1]]
            np.testing.assert_array_equal(vecs, vecs[:, :1] * np.ones(len(pix)))


def test_depth_planar_per_region_normals_match():
    cfg = WorldConfig(seed=3)
    sc = generate_scene(cfg, np.random.default_rng(42))
    cols, rows = np.meshgrid(np.arange(cfg.w), np.arange(cfg.h))
    x = cols / (cfg.w - 1)
    y = rows / (cfg.h - 1)
    for rid in sc.regions.region_ids():
        pix = sc.regions.pixels[rid]
        xs, ys = x[pix[:, 0], pix[:, 1]], y[pix[:, 0], pix[:, 1]]
        d = sc.depth[pix[:, 0], pix[:, 1]].astype(np.float64)
        coef, res, *_ = np.linalg.lstsq(
            np.stack([xs, ys, np.ones_like(xs)], axis=1), d, rcond=None)
        fitted = np.stack([xs, ys, np.ones_like(xs)], axis=1) @ coef
        assert np.abs(fitted - d).max() < 1e-5  # planar up to float32 snap
        a, b = coef[0], coef[1]
        nvec = np.array([-a, -b, 1.0])
        nvec /= np.linalg.norm(nvec)
        got = sc.normals[:, pix[0, 0], pix[0, 1]]
        np.testing.assert_allclose(got, nvec, atol=1e-4)


def test_background_is_class_zero():
    sc = generate_scene(WorldConfig(seed=1), np.random.default_rng(7))
    # region 0 is the background instance by first-appearance canonicalization
    # unless a shape covers pixel (0,0); check via the instance grid instead:
    # background pixels are exactly the ones whose class is 0
    classes_present = set(sc.seg.ravel().tolist())
    assert 0 in classes_present


# ---------------------------------------------------------------------------
# label assignment


def test_assign_labels_onelabel():
    scenes = generate_dataset(WorldConfig(seed=2), 40)
    assign_labels(scenes, "onelabel", seed=0)
    for sc in scenes:
        assert len(sc.labeled_tasks) == 1
        assert sc.labeled_tasks[0] in TASKS
    # all three tasks should appear across 40 draws
    assert {sc.labeled_tasks[0] for sc in scenes} == set(TASKS)


def test_assign_labels_random_subset_sizes():
    scenes = generate_dataset(WorldConfig(seed=2), 60)
    assign_labels(scenes, "random", seed=1)
    sizes = {len(sc.labeled_tasks) for sc in scenes}
    assert sizes <= {1, 2}
    assert sizes == {1, 2}  # both sizes appear over 60 draws
    for sc in scenes:
        assert tuple(sorted(sc.labeled_tasks, key=TASKS.index)) == sc.labeled_tasks


def test_assign_labels_full_and_determinism():
    scenes = generate_dataset(WorldConfig(seed=2), 10)
    assign_labels(scenes, "full", seed=3)
    assert all(sc.labeled_tasks == tuple(TASKS) for sc in scenes)
    a = [sc.labeled_tasks for sc in assign_labels(scenes, "onelabel", seed=5)]
    b = [sc.labeled_tasks for sc in assign_labels(scenes, "onelabel", seed=5)]
    assert a == b
    with pytest.raises(ValueError):
        assign_labels(scenes, "few", seed=0)


# ---------------------------------------------------------------------------
# persistence


def test_write_read_roundtrip(tmp_path):
    scenes = generate_dataset(WorldConfig(seed=4), 4)
    assign_labels(scenes, "random", seed=2)
    write_dataset(scenes, tmp_path / "data")
    back = read_dataset(tmp_path / "data")
    assert len(back) == 4
    for orig, got in zip(scenes, back):
        np.testing.assert_array_equal(got.seg, orig.seg)
        np.testing.assert_array_equal(got.depth, orig.depth)
        np.testing.assert_array_equal(got.normals, orig.normals)
        np.testing.assert_array_equal(got.regions.ids, orig.regions.ids)
        assert got.labeled_tasks == orig.labeled_tasks
        # images pass through 8-bit quantization: re-writing must be stable
        assert np.abs(got.image - orig.image).max() <= 0.5 / 255.0 + 1e-12


def test_rewrite_is_idempotent(tmp_path):
    scenes = generate_dataset(WorldConfig(seed=5), 2)
    assign_labels(scenes, "onelabel", seed=0)
    write_dataset(scenes, tmp_path / "a")
    once = read_dataset(tmp_path / "a")
    write_dataset(once, tmp_path / "b")
    twice = read_dataset(tmp_path / "b")
    for x, z in zip(once, twice):
        np.testing.assert_array_equal(x.image, z.image)
        np.testing.assert_array_equal(x.depth, z.depth)


def test_read_missing_directory(tmp_path):
    with pytest.raises(DataError):
        read_dataset(tmp_path / "nope")


def test_read_corrupt_file(tmp_path):
    scenes = generate_dataset(WorldConfig(seed=6), 1)
    assign_labels(scenes, "onelabel", seed=0)
    write_dataset(scenes, tmp_path / "data")
    target = next((tmp_path / "data").glob("scene_*/depth.pfm"))
    target.write_bytes(b"Pf\n broken")
    with pytest.raises(DataError):
        read_dataset(tmp_path / "data")
