"""Region representations over feature maps: Gaussians, mean vectors, pixel sets.

Gaussian fits use the population (1/n) covariance with an unconditional
``eps`` ridge on the diagonal, so a near-constant region still yields a
usable distribution.  Every extractor comes with an exact adjoint mapping
gradients on the representation back onto the feature map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import RegionTooSmallError
from .regions import RegionMask

MIN_REGION_CELLS = 4


@dataclass
class RegionGaussian:
    """Mean + covariance summary of one region's feature vectors.

    ``sigma`` is (C,C) symmetric in ``full`` mode, (C,) variances in
    ``diag`` mode; ``eps`` is the ridge actually added.
    """
    region_id: int
    n: int
    mu: np.ndarray
    sigma: np.ndarray
    mode: str
    eps: float


@dataclass
class RegionVector:
    region_id: int
    v: np.ndarray


@dataclass
class RegionPixels:
    region_id: int
    coords: np.ndarray    # (n,2) row/col
    features: np.ndarray  # (n,C), row-aligned with coords


def _map_values(fmap) -> np.ndarray:
    v = fmap.values if isinstance(fmap, Tensor) else np.asarray(fmap, dtype=np.float64)
    if v.ndim != 3:
        raise ValueError("expected a (C,H,W) feature map")
    return v


def _sorted_coords(pixels: np.ndarray) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    order = np.lexsort((pixels[:, 1], pixels[:, 0]))
    return pixels[order]


def _gather(values: np.ndarray, coords: np.ndarray) -> np.ndarray:
    return values[:, coords[:, 0], coords[:, 1]].T  # (n,C)


def fit_region_gaussian(fmap, pixels, mode: str = "diag", eps: float = 1e-5,
                        region_id: int = 0,
                        min_region_cells: int = MIN_REGION_CELLS) -> RegionGaussian:
    """Population mean/covariance of the features at ``pixels``.

    Coordinates are sorted before accumulation, so the result is bitwise
    independent of input pixel order.
    """
    if mode not in ("full", "diag"):
        raise ValueError(f"unknown covariance mode {mode!r}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    coords = _sorted_coords(pixels)
    n = coords.shape[0]
    if n < min_region_cells:
        raise RegionTooSmallError(f"region {region_id}: {n} pixels < {min_region_cells}")
    values = _map_values(fmap)
    feats = _gather(values, coords)
    mu = feats.mean(axis=0)
    centered = feats - mu
    if mode == "full":
        c = values.shape[0]
        sigma = centered.T @ centered / n + eps * np.eye(c)
    else:
        sigma = (centered * centered).mean(axis=0) + eps
    return RegionGaussian(region_id, n, mu, sigma, mode, eps)


def gaussian_fit_backward(fmap_values: np.ndarray, gauss: RegionGaussian,
                          pixels: np.ndarray, d_mu: np.ndarray,
                          d_sigma: np.ndarray, out: np.ndarray) -> None:
    """Accumulate d(loss)/d(feature map) into ``out`` for one fitted region.

    d_sigma follows the same layout as gauss.sigma and is symmetrized here,
    since the covariance only ever depends on the symmetric part.
    """
    coords = _sorted_coords(pixels)
    n = gauss.n
    feats = _gather(fmap_values, coords)
    centered = feats - gauss.mu
    if gauss.mode == "full":
        d_sym = 0.5 * (d_sigma + d_sigma.T)
        per_pixel = d_mu / n + (2.0 / n) * centered @ d_sym
    else:
        per_pixel = d_mu / n + (2.0 / n) * centered * d_sigma
    np.add.at(out, (slice(None), coords[:, 0], coords[:, 1]), per_pixel.T)


def fit_all_regions(fmap, mask: RegionMask, mode: str = "diag", eps: float = 1e-5,
                    min_region_cells: int = MIN_REGION_CELLS
                    ) -> tuple[list[RegionGaussian], list[int]]:
    """Fit every region with >= min_region_cells pixels, ordered by region ID.

    Returns (fits, skipped_region_ids).
    """
    values = _map_values(fmap)
    if values.shape[1:] != (mask.height, mask.width):
        raise ValueError(f"feature map {values.shape[1:]} vs mask ({mask.height},{mask.width})")
    fits: list[RegionGaussian] = []
    skipped: list[int] = []
    for rid in mask.region_ids():
        coords = mask.pixels[rid]
        if coords.shape[0] < min_region_cells:
            skipped.append(rid)
            continue
        fits.append(fit_region_gaussian(values, coords, mode, eps, region_id=rid,
                                        min_region_cells=min_region_cells))
    return fits, skipped


def region_mean_vector(fmap, pixels, region_id: int = 0) -> RegionVector:
    coords = _sorted_coords(pixels)
    if coords.shape[0] == 0:
        raise ValueError("region_mean_vector: empty pixel list")
    values = _map_values(fmap)
    return RegionVector(region_id, _gather(values, coords).mean(axis=0))


def mean_vector_backward(coords: np.ndarray, d_v: np.ndarray, out: np.ndarray) -> None:
    """Adjoint of the masked mean: 1/n of the upstream gradient per pixel."""
    coords = _sorted_coords(coords)
    n = coords.shape[0]
    np.add.at(out, (slice(None), coords[:, 0], coords[:, 1]),
              np.broadcast_to(d_v[:, None], (d_v.size, n)) / n)


def region_pixels(fmap, pixels, region_id: int = 0) -> RegionPixels:
    """Feature vectors at the region's pixels; adjoint is pass-through."""
    coords = _sorted_coords(pixels)
    if coords.shape[0] == 0:
        raise ValueError("region_pixels: empty pixel list")
    values = _map_values(fmap)
    return RegionPixels(region_id, coords, _gather(values, coords))


def pixels_backward(coords: np.ndarray, d_features: np.ndarray, out: np.ndarray) -> None:
    np.add.at(out, (slice(None), coords[:, 0], coords[:, 1]), d_features.T)
