"""Cross-task region contrast: per-region NCE over Gaussian, mean-vector or
pixel representations, with hand-written adjoints into both feature maps.

The per-region loss is computed in log-space,

    loss = log(1 + sum_k exp((d_pos - d_neg_k) / tau)),

which equals -log(sim_pos / (sim_pos + sum sim_neg)) for sim = exp(-d/tau)
and never overflows.  Negative terms are summed in sorted order so the loss
is bitwise independent of how the caller enumerates negatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, accumulate
from .errors import NumericError
from .gaussdist import (
    DISTANCES,
    diag_distance_grad_matrix,
    diag_distance_matrix,
    gauss_distance,
    gauss_distance_grad,
)
from .regions import RegionMask
from .regionstats import (
    RegionGaussian,
    RegionPixels,
    RegionVector,
    fit_all_regions,
    gaussian_fit_backward,
    mean_vector_backward,
    region_mean_vector,
    region_pixels,
)
from .tasks import order_tasks

STRATEGIES = ("gaussian", "vector", "pixel")
NEGATIVE_SOURCES = ("partner_map", "both_maps")


@dataclass
class ContrastConfig:
    tau: float = 1.0
    strategy: str = "gaussian"
    distance: str = "wasserstein"
    negative_source: str = "partner_map"
    symmetric_anchors: bool = True
    max_neg_pixels: int = 16
    min_region_cells: int = 4
    cov_mode: str = "diag"
    eps: float = 1e-5

    def validate(self) -> "ContrastConfig":
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.distance not in DISTANCES:
            raise ValueError(f"unknown distance {self.distance!r}")
        if self.negative_source not in NEGATIVE_SOURCES:
            raise ValueError(f"unknown negative_source {self.negative_source!r}")
        if self.max_neg_pixels < 1 or self.min_region_cells < 1:
            raise ValueError("pixel caps must be positive")
        if self.cov_mode not in ("diag", "full"):
            raise ValueError(f"unknown covariance mode {self.cov_mode!r}")
        return self


@dataclass
class ContrastReport:
    loss: float = 0.0
    regions_contrasted: int = 0
    regions_skipped: int = 0
    per_region_losses: list[float] = field(default_factory=list)
    note: str = ""


def nce_from_distances(d_pos: float, d_negs, tau: float):
    """Core NCE term from scalar distances.

    Returns (loss, d loss/d d_pos, d loss/d d_negs).  Zero negatives give a
    zero loss with zero gradients.
    """
    d_negs = np.asarray(d_negs, dtype=np.float64).reshape(-1)
    if d_negs.size == 0:
        return 0.0, 0.0, d_negs.copy()
    if not np.isfinite(d_pos) or not np.isfinite(d_negs).all():
        raise NumericError("non-finite distance in contrastive term")
    z = (float(d_pos) - d_negs) / tau
    order = np.argsort(z, kind="stable")
    zs = z[order]
    shift = zs[-1] if zs[-1] > 0.0 else 0.0
    exps = np.exp(zs - shift)
    total = np.exp(-shift) + exps.sum()
    loss = shift + np.log(total)
    w_sorted = exps / total
    dd_negs = np.empty_like(w_sorted)
    dd_negs[order] = -w_sorted / tau
    dd_pos = float(w_sorted.sum()) / tau
    return float(loss), dd_pos, dd_negs


def _vector_distance(a: RegionVector, b: RegionVector) -> float:
    diff = a.v - b.v
    return float(diff @ diff)


def _pixel_nce(anchor: RegionPixels, positive: RegionPixels, neg_feats: np.ndarray,
               tau: float):
    """Vectorized per-pixel NCE averaged over the anchor's pixels.

    Returns (term, c_pos, w, diff_pos, diffs) where c_pos is the per-pixel
    gradient on d_pos (mean factor folded in) and w the per-(pixel, negative)
    softmax weights.
    """
    if anchor.features.shape != positive.features.shape:
        raise ValueError("pixel strategy: anchor/positive extents differ")
    a = anchor.features
    diff_pos = a - positive.features
    d_pos = (diff_pos * diff_pos).sum(axis=1)
    diffs = a[:, None, :] - neg_feats[None, :, :]
    d_neg = (diffs * diffs).sum(axis=2)
    if not (np.isfinite(d_pos).all() and np.isfinite(d_neg).all()):
        raise NumericError("non-finite distance in contrastive term")
    z = (d_pos[:, None] - d_neg) / tau
    shift = np.maximum(z.max(axis=1), 0.0)
    exps = np.exp(z - shift[:, None])
    total = np.exp(-shift) + exps.sum(axis=1)
    losses = shift + np.log(total)
    n = a.shape[0]
    w = exps / total[:, None]
    c_pos = w.sum(axis=1) / (tau * n)
    return float(losses.mean()), c_pos, w, diff_pos, diffs


def _subsample_pixels(rp: RegionPixels, cap: int, rng: np.random.Generator):
    n = rp.features.shape[0]
    take = min(cap, n)
    sel = np.sort(rng.permutation(n)[:take])
    return rp.features[sel], rp.coords[sel]


def nce_region_loss(anchor, positive, negatives, cfg: ContrastConfig,
                    rng: np.random.Generator | None = None) -> float:
    """One region's NCE term from already-extracted representations.

    Negatives are sorted by region id before use, so any permutation of the
    list yields a bitwise identical value.
    """
    cfg.validate()
    negatives = sorted(negatives, key=lambda r: r.region_id)
    if cfg.strategy == "gaussian":
        if not isinstance(anchor, RegionGaussian):
            raise ValueError("gaussian strategy expects RegionGaussian inputs")
        d_pos = gauss_distance(cfg.distance, anchor, positive)
        d_negs = [gauss_distance(cfg.distance, anchor, k) for k in negatives]
    elif cfg.strategy == "vector":
        if not isinstance(anchor, RegionVector):
            raise ValueError("vector strategy expects RegionVector inputs")
        d_pos = _vector_distance(anchor, positive)
        d_negs = [_vector_distance(anchor, k) for k in negatives]
    else:
        if not isinstance(anchor, RegionPixels):
            raise ValueError("pixel strategy expects RegionPixels inputs")
        if not negatives:
            return 0.0
        if rng is None:
            rng = np.random.default_rng(0)
        feats = [_subsample_pixels(k, cfg.max_neg_pixels, rng)[0] for k in negatives]
        term, _, _, _, _ = _pixel_nce(anchor, positive, np.concatenate(feats), cfg.tau)
        return term
    loss, _, _ = nce_from_distances(d_pos, d_negs, cfg.tau)
    return loss


def pair_schedule(labeled_tasks, unlabeled_tasks, setting: str = "partial"):
    """Ordered (source, target) task pairs to contrast.

    partial: every labeled source against every unlabeled target.  full: all
    ordered pairs of distinct tasks.  Ordering follows the canonical task
    order, so schedules are reproducible.
    """
    labeled = order_tasks(labeled_tasks)
    unlabeled = order_tasks(unlabeled_tasks)
    if set(labeled) & set(unlabeled):
        raise ValueError("a task cannot be both labeled and unlabeled")
    if setting == "partial":
        if not labeled:
            raise ValueError("partial setting needs at least one labeled task")
        return [(s, t) for s in labeled for t in unlabeled]
    if setting == "full":
        everything = order_tasks(labeled + unlabeled)
        return [(s, t) for s in everything for t in everything if s != t]
    raise ValueError(f"unknown setting {setting!r}; expected partial or full")


def _extract(values: np.ndarray, mask: RegionMask, cfg: ContrastConfig):
    """Per-region representations for one map, plus skipped region ids."""
    reps: dict[int, object] = {}
    skipped: list[int] = []
    if cfg.strategy == "gaussian":
        fits, skipped = fit_all_regions(values, mask, cfg.cov_mode, cfg.eps,
                                        cfg.min_region_cells)
        reps = {f.region_id: f for f in fits}
        return reps, skipped
    for rid in mask.region_ids():
        coords = mask.pixels[rid]
        if coords.shape[0] < cfg.min_region_cells:
            skipped.append(rid)
            continue
        if cfg.strategy == "vector":
            reps[rid] = region_mean_vector(values, coords, region_id=rid)
        else:
            reps[rid] = region_pixels(values, coords, region_id=rid)
    return reps, skipped


def _diag_gauss_all_anchors(reps, survivors, cfg: ContrastConfig, directions,
                            terms, contrasted, skipped, g_mu, g_sig):
    """Gaussian-strategy contrast for diag covariances, batched.

    Computes every anchor-versus-candidate distance of a direction as one
    pairwise matrix instead of a quadratic number of scalar calls; a patch
    grid makes that quadratic count large enough to dominate a training
    step.  Appends to terms/contrasted/skipped and fills the g_mu/g_sig
    accumulators exactly like the scalar loop.
    """
    count = len(survivors)
    if count < 2:
        skipped.update(survivors)
        return
    mus = [np.stack([reps[m][rid].mu for rid in survivors]) for m in (0, 1)]
    sigs = [np.stack([reps[m][rid].sigma for rid in survivors]) for m in (0, 1)]
    acc_mu = [np.zeros_like(mus[0]), np.zeros_like(mus[1])]
    acc_sig = [np.zeros_like(sigs[0]), np.zeros_like(sigs[1])]
    idx = np.arange(count)
    own = cfg.negative_source == "both_maps"

    for ai, pi in directions:
        d_cross = diag_distance_matrix(cfg.distance, mus[ai], sigs[ai],
                                       mus[pi], sigs[pi])
        g_cross = diag_distance_grad_matrix(cfg.distance, mus[ai], sigs[ai],
                                            mus[pi], sigs[pi], cfg.eps)
        if own:
            d_own = diag_distance_matrix(cfg.distance, mus[ai], sigs[ai],
                                         mus[ai], sigs[ai])
            g_own = diag_distance_grad_matrix(cfg.distance, mus[ai], sigs[ai],
                                              mus[ai], sigs[ai], cfg.eps)
        for i, rid in enumerate(survivors):
            sel = idx[idx != i]
            if own:
                d_negs = np.concatenate([d_cross[i, sel], d_own[i, sel]])
            else:
                d_negs = d_cross[i, sel]
            term, dd_pos, dd_negs = nce_from_distances(d_cross[i, i], d_negs,
                                                       cfg.tau)
            ddc = dd_negs[:sel.size]
            acc_mu[ai][i] += dd_pos * g_cross[0][i, i] + ddc @ g_cross[0][i, sel]
            acc_sig[ai][i] += dd_pos * g_cross[1][i, i] + ddc @ g_cross[1][i, sel]
            acc_mu[pi][i] += dd_pos * g_cross[2][i, i]
            acc_sig[pi][i] += dd_pos * g_cross[3][i, i]
            acc_mu[pi][sel] += ddc[:, None] * g_cross[2][i, sel]
            acc_sig[pi][sel] += ddc[:, None] * g_cross[3][i, sel]
            if own:
                ddo = dd_negs[sel.size:]
                acc_mu[ai][i] += ddo @ g_own[0][i, sel]
                acc_sig[ai][i] += ddo @ g_own[1][i, sel]
                acc_mu[ai][sel] += ddo[:, None] * g_own[2][i, sel]
                acc_sig[ai][sel] += ddo[:, None] * g_own[3][i, sel]
            terms.append(term)
            contrasted.add(rid)

    for m in (0, 1):
        for i, rid in enumerate(survivors):
            g_mu[(m, rid)] = acc_mu[m][i]
            g_sig[(m, rid)] = acc_sig[m][i]


def cross_task_region_contrast(tape: Tape, map_a: Tensor, map_b: Tensor,
                               mask: RegionMask, cfg: ContrastConfig,
                               rng: np.random.Generator | None = None):
    """Contrast corresponding regions of two feature maps.

    Every surviving region of one map is an anchor whose positive is the
    same region in the partner map and whose negatives are the other
    regions; with symmetric_anchors both maps take the anchor role.  The
    returned scalar is taped: backward spreads gradients into both maps
    through the representation extractors.
    """
    cfg.validate()
    if map_a.values.shape != map_b.values.shape:
        raise ValueError(f"feature map extents differ: {map_a.shape} vs {map_b.shape}")
    if map_a.values.shape[1:] != (mask.height, mask.width):
        raise ValueError("mask extents do not match the feature maps")
    if rng is None:
        rng = np.random.default_rng(0)

    maps = (map_a.values, map_b.values)
    reps = []
    skipped: set[int] = set()
    for v in maps:
        r, skip = _extract(v, mask, cfg)
        reps.append(r)
        skipped.update(skip)
    survivors = sorted(set(reps[0]) & set(reps[1]))

    bufs = (np.zeros_like(maps[0]), np.zeros_like(maps[1]))
    g_mu: dict[tuple[int, int], np.ndarray] = {}
    g_sig: dict[tuple[int, int], np.ndarray] = {}
    g_vec: dict[tuple[int, int], np.ndarray] = {}

    def acc_gauss(key, coeff, mu, sig):
        if key not in g_mu:
            g_mu[key] = np.zeros_like(mu)
            g_sig[key] = np.zeros_like(sig)
        g_mu[key] += coeff * mu
        g_sig[key] += coeff * sig

    terms: list[float] = []
    contrasted: set[int] = set()
    directions = [(0, 1)] + ([(1, 0)] if cfg.symmetric_anchors else [])
    batched = cfg.strategy == "gaussian" and cfg.cov_mode == "diag"
    if batched:
        _diag_gauss_all_anchors(reps, survivors, cfg, directions, terms,
                                contrasted, skipped, g_mu, g_sig)

    for ai, pi in ([] if batched else directions):
        for rid in survivors:
            entries = [(pi, j) for j in survivors if j != rid]
            if cfg.negative_source == "both_maps":
                entries += [(ai, j) for j in survivors if j != rid]
            if not entries:
                skipped.add(rid)
                continue
            anchor = reps[ai][rid]
            positive = reps[pi][rid]

            if cfg.strategy == "pixel":
                feats, metas = [], []
                for mk, j in entries:
                    f, coords = _subsample_pixels(reps[mk][j], cfg.max_neg_pixels, rng)
                    feats.append(f)
                    metas.append((mk, coords))
                term, c_pos, w, diff_pos, diffs = _pixel_nce(
                    anchor, positive, np.concatenate(feats), cfg.tau)
                n = anchor.features.shape[0]
                scale = 2.0 / (cfg.tau * n)
                d_anchor = (2.0 * c_pos[:, None] * diff_pos
                            - scale * np.einsum("pk,pkc->pc", w, diffs))
                d_pos_map = -2.0 * c_pos[:, None] * diff_pos
                d_negs = scale * np.einsum("pk,pkc->kc", w, diffs)
                bufs[ai][:, anchor.coords[:, 0], anchor.coords[:, 1]] += d_anchor.T
                bufs[pi][:, positive.coords[:, 0], positive.coords[:, 1]] += d_pos_map.T
                offset = 0
                for (mk, coords), f in zip(metas, feats):
                    block = d_negs[offset:offset + f.shape[0]]
                    bufs[mk][:, coords[:, 0], coords[:, 1]] += block.T
                    offset += f.shape[0]
            elif cfg.strategy == "gaussian":
                d_pos = gauss_distance(cfg.distance, anchor, positive)
                d_negs = [gauss_distance(cfg.distance, anchor, reps[mk][j])
                          for mk, j in entries]
                term, dd_pos, dd_negs = nce_from_distances(d_pos, d_negs, cfg.tau)
                gg = gauss_distance_grad(cfg.distance, anchor, positive)
                acc_gauss((ai, rid), dd_pos, gg.d_mu1, gg.d_sigma1)
                acc_gauss((pi, rid), dd_pos, gg.d_mu2, gg.d_sigma2)
                for (mk, j), dd in zip(entries, dd_negs):
                    gg = gauss_distance_grad(cfg.distance, anchor, reps[mk][j])
                    acc_gauss((ai, rid), dd, gg.d_mu1, gg.d_sigma1)
                    acc_gauss((mk, j), dd, gg.d_mu2, gg.d_sigma2)
            else:
                d_pos = _vector_distance(anchor, positive)
                d_negs = [_vector_distance(anchor, reps[mk][j]) for mk, j in entries]
                term, dd_pos, dd_negs = nce_from_distances(d_pos, d_negs, cfg.tau)
                diff = anchor.v - positive.v
                g_vec.setdefault((ai, rid), np.zeros_like(diff))
                g_vec.setdefault((pi, rid), np.zeros_like(diff))
                g_vec[(ai, rid)] += dd_pos * 2.0 * diff
                g_vec[(pi, rid)] -= dd_pos * 2.0 * diff
                for (mk, j), dd in zip(entries, dd_negs):
                    diff = anchor.v - reps[mk][j].v
                    g_vec.setdefault((mk, j), np.zeros_like(diff))
                    g_vec[(ai, rid)] += dd * 2.0 * diff
                    g_vec[(mk, j)] -= dd * 2.0 * diff
            terms.append(term)
            contrasted.add(rid)

    for key in sorted(g_mu):
        mk, rid = key
        gaussian_fit_backward(maps[mk], reps[mk][rid], mask.pixels[rid],
                              g_mu[key], g_sig[key], bufs[mk])
    for key in sorted(g_vec):
        mk, rid = key
        mean_vector_backward(mask.pixels[rid], g_vec[key], bufs[mk])

    report = ContrastReport(regions_contrasted=len(contrasted),
                            regions_skipped=len(skipped))
    if not terms:
        report.note = "no contrastable regions"
        return Tensor(0.0), report

    n_terms = len(terms)
    loss_value = sum(terms) / n_terms
    report.loss = float(loss_value)
    report.per_region_losses = terms
    out = Tensor(np.float64(loss_value))
    buf_a, buf_b = bufs

    def backward(g):
        accumulate(map_a, (g / n_terms) * buf_a)
        accumulate(map_b, (g / n_terms) * buf_b)

    tape.record("region_contrast", (map_a, map_b), out, backward)
    return out, report
