"""Procedural scenes: colored shapes with consistent seg/depth/normal truth.

Each scene is a stack of axis-aligned rectangles and ellipses over a
background, drawn back to front (later shapes occlude earlier ones).  Every
visible instance is one region: its segmentation class is constant, its
depth is an affine plane in normalized image coordinates, and its normal is
the constant plane normal (-a, -b, 1)/norm.  That cross-task coupling is
exactly what region-level contrast can exploit.

Depth and normals are snapped through float32 at generation time so the
PFM files round-trip bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .formats import (
    load_image_ppm,
    load_pgm8,
    load_scalar_pfm,
    load_vec3_pfm,
    snap_f32,
    store_image_ppm,
    store_pgm8,
    store_scalar_pfm,
    store_vec3_pfm,
)
from .regions import RegionMask, load_region_mask, store_region_mask
from .tasks import TASKS, order_tasks

MIN_VISIBLE_PIXELS = 24
_LAYOUT_TRIES = 200


@dataclass
class WorldConfig:
    h: int = 48
    w: int = 64
    n_classes: int = 5
    min_shapes: int = 3
    max_shapes: int = 6
    noise_sigma: float = 0.05
    seed: int = 0

    def validate(self) -> "WorldConfig":
        if self.h % 2 or self.w % 2:
            raise ValueError(f"extents must be divisible by 2, got {self.h}x{self.w}")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes (background + one shape class)")
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise ValueError("bad shape count range")
        return self


@dataclass
class Scene:
    image: np.ndarray           # (3,H,W) in [0,1]
    seg: np.ndarray             # (H,W) class ids, background 0
    depth: np.ndarray           # (H,W) in [0,1], float32-exact
    normals: np.ndarray         # (3,H,W) unit vectors, float32-exact
    regions: RegionMask
    labeled_tasks: tuple = field(default=TASKS)


def class_palette(cfg: WorldConfig) -> np.ndarray:
    """Per-class base colors, fixed by the world seed (shared by all scenes)."""
    rng = np.random.default_rng([cfg.seed, 3])
    return rng.uniform(0.15, 0.85, size=(cfg.n_classes, 3))


def _shape_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    if rng.integers(2) == 0:
        rh = int(rng.integers(8, 25))
        rw = int(rng.integers(8, 29))
        rh, rw = min(rh, h - 2), min(rw, w - 2)
        r0 = int(rng.integers(0, h - rh + 1))
        c0 = int(rng.integers(0, w - rw + 1))
        mask = np.zeros((h, w), dtype=bool)
        mask[r0:r0 + rh, c0:c0 + rw] = True
        return mask
    ar = min(int(rng.integers(5, 13)), (h - 2) // 2)
    ac = min(int(rng.integers(6, 15)), (w - 2) // 2)
    cr = int(rng.integers(ar, h - ar))
    cc = int(rng.integers(ac, w - ac))
    rr, cc_grid = np.mgrid[0:h, 0:w]
    return ((rr - cr) / ar) ** 2 + ((cc_grid - cc) / ac) ** 2 <= 1.0


def _region_plane(rng: np.random.Generator, x: np.ndarray, y: np.ndarray):
    """Plane coefficients (a, b, c) keeping a*x + b*y + c inside [0,1]."""
    for _ in range(100):
        a, b = rng.uniform(-0.5, 0.5, size=2)
        vals = a * x + b * y
        lo, hi = float(vals.min()), float(vals.max())
        if hi - lo <= 1.0:
            return float(a), float(b), float(rng.uniform(-lo, 1.0 - hi))
    return 0.0, 0.0, float(rng.uniform(0.0, 1.0))


def generate_scene(cfg: WorldConfig, rng: np.random.Generator) -> Scene:
    """One scene; bitwise reproducible from (cfg, rng state).

    Layouts where a shape ends up nearly hidden (or the background nearly
    covered) are redrawn, so every instance survives as a usable region.
    """
    cfg.validate()
    h, w = cfg.h, cfg.w
    for _ in range(_LAYOUT_TRIES):
        n_shapes = int(rng.integers(cfg.min_shapes, cfg.max_shapes + 1))
        inst = np.zeros((h, w), dtype=np.int64)
        shape_class = [0]
        for j in range(1, n_shapes + 1):
            inst[_shape_mask(rng, h, w)] = j
            shape_class.append(int(rng.integers(1, cfg.n_classes)))
        counts = np.bincount(inst.ravel(), minlength=n_shapes + 1)
        if counts.min() >= MIN_VISIBLE_PIXELS:
            break
    else:
        raise RuntimeError("could not lay out a scene with all shapes visible")

    seg = np.zeros((h, w), dtype=np.uint8)
    depth = np.zeros((h, w))
    normals = np.zeros((3, h, w))
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    x = cols / (w - 1)
    y = rows / (h - 1)
    for j in range(n_shapes + 1):
        sel = inst == j
        seg[sel] = shape_class[j]
        a, b, c = _region_plane(rng, x[sel], y[sel])
        depth[sel] = a * x[sel] + b * y[sel] + c
        nvec = np.array([-a, -b, 1.0])
        nvec /= np.sqrt(nvec @ nvec)
        normals[:, sel] = nvec[:, None]

    palette = class_palette(cfg)
    image = palette[seg].transpose(2, 0, 1) + rng.normal(0.0, cfg.noise_sigma, (3, h, w))
    return Scene(np.clip(image, 0.0, 1.0), seg, snap_f32(depth), snap_f32(normals),
                 RegionMask(inst))


def generate_dataset(cfg: WorldConfig, n_scenes: int) -> list[Scene]:
    """Scenes with per-scene derived seeds (world seed XOR scene index)."""
    return [generate_scene(cfg, np.random.default_rng(cfg.seed ^ i))
            for i in range(n_scenes)]


def assign_labels(scenes, setting: str, seed: int) -> list:
    """Set each scene's labeled task subset per the chosen protocol.

    onelabel: one uniform task.  random: first the subset size, uniform in
    1..K-1, then a uniform subset of that size.  full: everything.
    """
    k = len(TASKS)
    rng = np.random.default_rng([seed, 4])
    for sc in scenes:
        if setting == "onelabel":
            chosen = [TASKS[int(rng.integers(k))]]
        elif setting == "random":
            size = int(rng.integers(1, k))
            chosen = [TASKS[i] for i in sorted(rng.choice(k, size=size, replace=False))]
        elif setting == "full":
            chosen = list(TASKS)
        else:
            raise ValueError(f"unknown label setting {setting!r}")
        sc.labeled_tasks = tuple(chosen)
    return scenes


# ---------------------------------------------------------------------------
# dataset directories


def _scene_names(n: int) -> list[str]:
    return [f"scene_{i:05d}" for i in range(n)]


def write_dataset(scenes, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    names = _scene_names(len(scenes))
    (root / "manifest.txt").write_text("".join(f"{n}\n" for n in names))
    for name, sc in zip(names, scenes):
        d = root / name
        d.mkdir(exist_ok=True)
        store_image_ppm(sc.image, d / "image.ppm")
        store_pgm8(sc.seg, d / "seg.pgm")
        store_region_mask(sc.regions, d / "regions.pgm")
        store_scalar_pfm(sc.depth, d / "depth.pfm")
        store_vec3_pfm(sc.normals, d / "normals.pfm")
        (d / "labels.txt").write_text("labeled=" + ",".join(sc.labeled_tasks) + "\n")


def _read_labels(path: Path) -> tuple:
    text = path.read_text().strip()
    if not text.startswith("labeled="):
        raise DataError(f"{path}: expected a 'labeled=' line, got {text[:40]!r}")
    names = [t for t in text[len("labeled="):].split(",") if t]
    if not names:
        raise DataError(f"{path}: no labeled tasks")
    return tuple(order_tasks(names))


def read_dataset(root) -> list[Scene]:
    root = Path(root)
    manifest = root / "manifest.txt"
    if not manifest.is_file():
        raise DataError(f"{manifest}: missing dataset manifest")
    scenes = []
    for name in manifest.read_text().split():
        d = root / name
        try:
            scenes.append(Scene(
                image=load_image_ppm(d / "image.ppm"),
                seg=load_pgm8(d / "seg.pgm"),
                depth=load_scalar_pfm(d / "depth.pfm"),
                normals=load_vec3_pfm(d / "normals.pfm"),
                regions=load_region_mask(d / "regions.pgm"),
                labeled_tasks=_read_labels(d / "labels.txt"),
            ))
        except OSError as e:
            raise DataError(f"{d}: unreadable scene ({e})") from e
    return scenes
