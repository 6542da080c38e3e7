"""Region masks: the grayscale area-ID grid contract, plus resolution bridging.

A mask is an HxW grid of region IDs with 65535 reserved for unassigned
pixels.  Canonical masks use dense IDs 0..M-1 ordered by first appearance
in a row-major scan, with a per-region pixel index list alongside.
"""

from __future__ import annotations

import numpy as np

from . import formats
from .errors import FormatError

IGNORE_ID = 65535


class RegionMask:
    """Canonicalized region-ID grid plus per-region pixel coordinates.

    ``ids`` is (H,W) uint16; ``pixels[rid]`` is an (n,2) int array of
    (row, col) coordinates sorted row-major.  Instances are treated as
    immutable.
    """

    def __init__(self, ids: np.ndarray):
        ids = np.asarray(ids)
        if ids.ndim != 2:
            raise ValueError("RegionMask: ids must be 2-D")
        self.ids = _canonical_ids(ids)
        self.height, self.width = self.ids.shape
        self.pixels: dict[int, np.ndarray] = {}
        flat = self.ids.reshape(-1)
        order = np.argsort(flat, kind="stable")  # stable sort keeps row-major order per ID
        sorted_ids = flat[order]
        boundaries = np.searchsorted(sorted_ids, np.arange(self.n_regions + 1))
        for rid in range(self.n_regions):
            flat_idx = order[boundaries[rid]:boundaries[rid + 1]]
            self.pixels[rid] = np.stack(np.unravel_index(flat_idx, self.ids.shape), axis=1)

    @property
    def n_regions(self) -> int:
        nonignore = self.ids[self.ids != IGNORE_ID]
        return int(nonignore.max()) + 1 if nonignore.size else 0

    def region_ids(self) -> list[int]:
        return list(range(self.n_regions))


def _canonical_ids(ids: np.ndarray) -> np.ndarray:
    """Dense relabeling by first-appearance order; IGNORE_ID preserved."""
    ids = ids.astype(np.int64)
    out = np.full(ids.shape, IGNORE_ID, dtype=np.uint16)
    flat = ids.reshape(-1)
    mask = flat != IGNORE_ID
    if mask.any():
        _, first_pos, inverse = np.unique(flat[mask], return_index=True, return_inverse=True)
        rank = np.empty(first_pos.size, dtype=np.int64)
        rank[np.argsort(first_pos, kind="stable")] = np.arange(first_pos.size)
        out.reshape(-1)[mask] = rank[inverse].astype(np.uint16)
    return out


def load_region_mask(path) -> RegionMask:
    """Load a 16-bit P5 mask; IDs are canonicalized, all-ignore is an error."""
    ids = formats.load_pgm16(path)
    if not (ids != IGNORE_ID).any():
        raise FormatError(f"{path}: no regions (all pixels ignore)")
    return RegionMask(ids)


def store_region_mask(mask: RegionMask, path) -> None:
    formats.store_pgm16(mask.ids, path)


def downsample_mask(mask: RegionMask, fh: int, fw: int) -> RegionMask:
    """Majority-vote each source block into one feature cell.

    Ties break toward the smallest ID.  A cell is ignore only when its whole
    block is ignore.  The result is re-canonicalized, so regions that vanish
    at the lower resolution drop out of the region count.
    """
    h, w = mask.height, mask.width
    if h % fh or w % fw:
        raise ValueError(f"downsample_mask: ({h},{w}) not an integer multiple of ({fh},{fw})")
    sh, sw = h // fh, w // fw
    m = mask.n_regions
    if m == 0:
        return RegionMask(np.full((sh, sw), IGNORE_ID))
    # one row per feature cell, its fh*fw source pixels along the columns
    blocks = mask.ids.reshape(sh, fh, sw, fw).transpose(0, 2, 1, 3).reshape(sh * sw, fh * fw)
    counts = np.zeros((sh * sw, m), dtype=np.int64)
    valid = blocks != IGNORE_ID
    cell_idx = np.broadcast_to(np.arange(sh * sw)[:, None], blocks.shape)
    np.add.at(counts, (cell_idx[valid], blocks[valid].astype(np.int64)), 1)
    out = np.where(counts.sum(axis=1) > 0,
                   counts.argmax(axis=1),  # argmax returns the smallest ID on ties
                   IGNORE_ID).astype(np.int64)
    return RegionMask(out.reshape(sh, sw))


def make_patch_grid(h: int, w: int, patch_h: int, patch_w: int) -> RegionMask:
    """Row-major patch IDs covering the full map; border patches may be short."""
    if patch_h <= 0 or patch_w <= 0 or patch_h > h or patch_w > w:
        raise ValueError(f"make_patch_grid: patch ({patch_h},{patch_w}) must fit inside ({h},{w})")
    rows = np.arange(h) // patch_h
    cols = np.arange(w) // patch_w
    n_cols = -(-w // patch_w)
    ids = rows[:, None] * n_cols + cols[None, :]
    return RegionMask(ids)
