"""Region mask canonicalization, persistence, and resolution bridging."""
import numpy as np
import pytest

from regioncontrast.errors import FormatError
from regioncontrast.regions import (
    IGNORE_ID,
    RegionMask,
    downsample_mask,
    load_region_mask,
    make_patch_grid,
    store_region_mask,
)


def test_canonical_relabel_first_appearance():
    raw = np.asarray([[9, 9, 4], [4, 100, 9]])
    m = RegionMask(raw)
    np.testing.assert_array_equal(m.ids, [[0, 0, 1], [1, 2, 0]])
    assert m.n_regions == 3
    assert m.region_ids() == [0, 1, 2]


def test_ignore_preserved_not_counted():
    raw = np.asarray([[IGNORE_ID, 3], [3, IGNORE_ID]])
    m = RegionMask(raw)
    np.testing.assert_array_equal(m.ids, [[IGNORE_ID, 0], [0, IGNORE_ID]])
    assert m.n_regions == 1
    assert 0 in m.pixels and IGNORE_ID not in m.pixels


def test_pixels_sorted_row_major():
    raw = np.asarray([[1, 0], [0, 1]])
    m = RegionMask(raw)
    np.testing.assert_array_equal(m.pixels[0], [[0, 0], [1, 1]])
    np.testing.assert_array_equal(m.pixels[1], [[0, 1], [1, 0]])


def test_pixel_lists_partition_grid():
    rng = np.random.default_rng(2)
    raw = rng.integers(0, 6, size=(12, 9))
    m = RegionMask(raw)
    total = sum(len(m.pixels[r]) for r in m.region_ids())
    assert total == 12 * 9
    seen = np.zeros((12, 9), dtype=bool)
    for r in m.region_ids():
        rr, cc = m.pixels[r][:, 0], m.pixels[r][:, 1]
        assert not seen[rr, cc].any()
        seen[rr, cc] = True
    assert seen.all()


def test_mask_requires_2d():
    with pytest.raises(ValueError):
        RegionMask(np.zeros(5))


def test_roundtrip_via_pgm16(tmp_path):
    rng = np.random.default_rng(7)
    raw = rng.integers(0, 11, size=(16, 16))
    raw[0, :4] = IGNORE_ID
    m = RegionMask(raw)
    p = tmp_path / "m.pgm"
    store_region_mask(m, p)
    back = load_region_mask(p)
    np.testing.assert_array_equal(back.ids, m.ids)


def test_all_ignore_file_rejected(tmp_path):
    m = RegionMask.__new__(RegionMask)  # bypass ctor to store a raw grid
    from regioncontrast.formats import store_pgm16

    p = tmp_path / "bad.pgm"
    store_pgm16(np.full((4, 4), IGNORE_ID, dtype=np.uint16), p)
    with pytest.raises(FormatError):
        load_region_mask(p)


# ---------------------------------------------------------------------------
# downsampling


def test_downsample_majority_vote():
    raw = np.asarray(
        [
            [0, 0, 1, 1],
            [0, 2, 1, 1],
            [2, 2, 0, 1],
            [2, 2, 1, 1],
        ]
    )
    m = RegionMask(raw)
    d = downsample_mask(m, 2, 2)
    # top-left block has three 0s, bottom-left three 2s, right blocks majority 1
    np.testing.assert_array_equal(d.ids, [[0, 1], [2, 1]])


def test_downsample_tie_breaks_to_smaller_id():
    raw = np.asarray([[0, 1], [1, 0]])
    d = downsample_mask(RegionMask(raw), 2, 2)
    assert d.ids[0, 0] == 0


def test_downsample_ignore_only_when_block_all_ignore():
    raw = np.full((4, 4), IGNORE_ID)
    raw[0, 0] = 0
    raw[2:, 2:] = 1
    m = RegionMask(raw)
    d = downsample_mask(m, 2, 2)
    assert d.ids[0, 0] == 0
    assert d.ids[1, 1] == 1
    assert d.ids[0, 1] == IGNORE_ID
    assert d.ids[1, 0] == IGNORE_ID


def test_downsample_recanonicalizes_lost_regions():
    # region 1 is a single pixel outvoted everywhere: it must vanish and the
    # remaining labels must stay dense
    raw = np.zeros((4, 4), dtype=int)
    raw[0, 0] = 7  # becomes id 0 or 1 depending on scan; outvoted either way
    m = RegionMask(raw)
    assert m.n_regions == 2
    d = downsample_mask(m, 2, 2)
    assert d.n_regions == 1
    assert set(np.unique(d.ids)) == {0}


def test_downsample_extent_mismatch_raises():
    with pytest.raises(ValueError):
        downsample_mask(RegionMask(np.zeros((5, 4), dtype=int)), 2, 2)


@pytest.mark.parametrize("seed", range(5))
def test_downsample_matches_naive_vote(seed):
    rng = np.random.default_rng(40 + seed)
    raw = rng.integers(0, 5, size=(8, 12))
    raw[rng.uniform(size=(8, 12)) < 0.2] = IGNORE_ID
    m = RegionMask(raw)
    d = downsample_mask(m, 2, 3)

    want = np.empty((4, 4), dtype=np.int64)
    for i in range(4):
        for j in range(4):
            block = m.ids[2 * i:2 * i + 2, 3 * j:3 * j + 3].reshape(-1)
            block = block[block != IGNORE_ID]
            if block.size == 0:
                want[i, j] = IGNORE_ID
            else:
                vals, counts = np.unique(block, return_counts=True)
                want[i, j] = vals[np.argmax(counts)]  # unique is sorted: ties go small
    np.testing.assert_array_equal(d.ids, RegionMask(want).ids)


# ---------------------------------------------------------------------------
# patch grids


def test_patch_grid_row_major_ids():
    g = make_patch_grid(4, 6, 2, 3)
    np.testing.assert_array_equal(
        g.ids,
        [
            [0, 0, 0, 1, 1, 1],
            [0, 0, 0, 1, 1, 1],
            [2, 2, 2, 3, 3, 3],
            [2, 2, 2, 3, 3, 3],
        ],
    )


def test_patch_grid_ragged_border():
    g = make_patch_grid(5, 5, 2, 2)
    assert g.n_regions == 9
    assert g.ids[4, 4] == 8
    assert len(g.pixels[8]) == 1  # bottom-right corner patch is 1x1


def test_patch_grid_covers_everything():
    g = make_patch_grid(7, 9, 3, 4)
    assert (g.ids != IGNORE_ID).all()
    assert g.n_regions == 3 * 3


def test_patch_grid_validation():
    with pytest.raises(ValueError):
        make_patch_grid(4, 4, 0, 2)
    with pytest.raises(ValueError):
        make_patch_grid(4, 4, 5, 2)
