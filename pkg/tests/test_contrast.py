"""Contrastive objective: analytic NCE values, composition oracles, gradients."""
import numpy as np
import pytest

from regioncontrast.autodiff import Tape, Tensor, grad_check
from regioncontrast.contrast import (
    ContrastConfig,
    cross_task_region_contrast,
    nce_from_distances,
    nce_region_loss,
    pair_schedule,
)
from regioncontrast.errors import NumericError
from regioncontrast.gaussdist import gauss_distance
from regioncontrast.regions import RegionMask
from regioncontrast.regionstats import (
    fit_region_gaussian,
    region_mean_vector,
    region_pixels,
)


def three_region_mask():
    ids = np.zeros((6, 6), dtype=int)
    ids[:, 2:4] = 1
    ids[:, 4:] = 2
    return RegionMask(ids)


# ---------------------------------------------------------------------------
# scalar NCE core


def test_nce_zero_negatives_is_zero():
    loss, dd_pos, dd_negs = nce_from_distances(3.7, [], tau=1.0)
    assert loss == 0.0 and dd_pos == 0.0 and dd_negs.size == 0


def test_nce_equidistant_negatives_ln_n_plus_1():
    for n in (1, 2, 5, 17):
        loss, _, _ = nce_from_distances(2.0, [2.0] * n, tau=0.7)
        assert loss == pytest.approx(np.log(n + 1), abs=1e-12)


def test_nce_single_negative_unit_gap():
    # d_pos = 0, d_neg = tau: exponent is -1
    loss, _, _ = nce_from_distances(0.0, [1.3], tau=1.3)
    assert loss == pytest.approx(np.log(1 + np.exp(-1.0)), abs=1e-12)


def test_nce_matches_direct_formula():
    rng = np.random.default_rng(0)
    for _ in range(20):
        tau = float(rng.uniform(0.2, 3.0))
        d_pos = float(rng.uniform(0, 5))
        d_negs = rng.uniform(0, 5, size=rng.integers(1, 8))
        loss, _, _ = nce_from_distances(d_pos, d_negs, tau)
        want = np.log(1.0 + np.exp((d_pos - d_negs) / tau).sum())
        assert loss == pytest.approx(want, rel=1e-12)


def test_nce_permutation_invariant_bitwise():
    rng = np.random.default_rng(1)
    d_negs = rng.uniform(0, 4, size=9)
    base = nce_from_distances(1.0, d_negs, 0.9)
    for _ in range(5):
        perm = rng.permutation(9)
        loss, dd_pos, dd = nce_from_distances(1.0, d_negs[perm], 0.9)
        assert loss == base[0]
        assert dd_pos == base[1]
        np.testing.assert_array_equal(dd, base[2][perm])


def test_nce_large_gap_stable():
    # exponent 1e4: naive exp overflows, shifted form must not
    loss, dd_pos, _ = nce_from_distances(1e4, [0.0], tau=1.0)
    assert np.isfinite(loss)
    assert loss == pytest.approx(1e4, rel=1e-12)
    assert dd_pos == pytest.approx(1.0, abs=1e-12)
    loss2, _, _ = nce_from_distances(-1e4, [0.0], tau=1.0)
    assert loss2 == pytest.approx(0.0, abs=1e-30)


def test_nce_gradients_match_fd():
    rng = np.random.default_rng(2)
    for _ in range(10):
        tau = float(rng.uniform(0.3, 2.0))
        d_pos = float(rng.uniform(0, 3))
        d_negs = rng.uniform(0, 3, size=5)
        _, dd_pos, dd_negs = nce_from_distances(d_pos, d_negs, tau)
        eps = 1e-6
        fd_pos = (nce_from_distances(d_pos + eps, d_negs, tau)[0]
                  - nce_from_distances(d_pos - eps, d_negs, tau)[0]) / (2 * eps)
        assert dd_pos == pytest.approx(fd_pos, abs=1e-8)
        for k in range(5):
            up, dn = d_negs.copy(), d_negs.copy()
            up[k] += eps
            dn[k] -= eps
            fd = (nce_from_distances(d_pos, up, tau)[0]
                  - nce_from_distances(d_pos, dn, tau)[0]) / (2 * eps)
            assert dd_negs[k] == pytest.approx(fd, abs=1e-8)


def test_nce_monotone_in_distances():
    base, _, _ = nce_from_distances(1.0, [2.0, 3.0], 1.0)
    worse_pos, _, _ = nce_from_distances(1.5, [2.0, 3.0], 1.0)
    better_neg, _, _ = nce_from_distances(1.0, [2.5, 3.0], 1.0)
    assert worse_pos > base        # positive moved away: loss up
    assert better_neg < base       # negative moved away: loss down


def test_nce_nonfinite_rejected():
    with pytest.raises(NumericError):
        nce_from_distances(np.nan, [1.0], 1.0)
    with pytest.raises(NumericError):
        nce_from_distances(1.0, [np.inf], 1.0)


# ---------------------------------------------------------------------------
# per-region loss over extracted representations


def test_region_loss_gaussian_composes():
    rng = np.random.default_rng(3)
    fa, fb = rng.standard_normal((2, 3, 6, 6))
    mask = three_region_mask()
    cfg = ContrastConfig(tau=0.8, strategy="gaussian", distance="jeffreys")
    fit = lambda v, rid: fit_region_gaussian(v, mask.pixels[rid], "diag",
                                             region_id=rid)
    anchor = fit(fa, 0)
    positive = fit(fb, 0)
    negatives = [fit(fb, 1), fit(fb, 2)]
    got = nce_region_loss(anchor, positive, negatives, cfg)
    d_pos = gauss_distance("jeffreys", anchor, positive)
    d_negs = [gauss_distance("jeffreys", anchor, k) for k in negatives]
    want, _, _ = nce_from_distances(d_pos, d_negs, 0.8)
    assert got == want


def test_region_loss_vector_composes():
    rng = np.random.default_rng(4)
    fa, fb = rng.standard_normal((2, 3, 6, 6))
    mask = three_region_mask()
    cfg = ContrastConfig(strategy="vector")
    mv = lambda v, rid: region_mean_vector(v, mask.pixels[rid], region_id=rid)
    got = nce_region_loss(mv(fa, 0), mv(fb, 0), [mv(fb, 1), mv(fb, 2)], cfg)
    d = lambda a, b: float(((a.v - b.v) ** 2).sum())
    want, _, _ = nce_from_distances(d(mv(fa, 0), mv(fb, 0)),
                                    [d(mv(fa, 0), mv(fb, 1)),
                                     d(mv(fa, 0), mv(fb, 2))], 1.0)
    assert got == want


def test_region_loss_negatives_order_bitwise():
    rng = np.random.default_rng(5)
    fa, fb = rng.standard_normal((2, 3, 6, 6))
    mask = three_region_mask()
    cfg = ContrastConfig(strategy="vector")
    mv = lambda v, rid: region_mean_vector(v, mask.pixels[rid], region_id=rid)
    negs = [mv(fb, 1), mv(fb, 2)]
    a = nce_region_loss(mv(fa, 0), mv(fb, 0), negs, cfg)
    b = nce_region_loss(mv(fa, 0), mv(fb, 0), negs[::-1], cfg)
    assert a == b


def test_region_loss_type_mismatch():
    rng = np.random.default_rng(6)
    fa = rng.standard_normal((3, 6, 6))
    mask = three_region_mask()
    v = region_mean_vector(fa, mask.pixels[0])
    with pytest.raises(ValueError):
        nce_region_loss(v, v, [], ContrastConfig(strategy="gaussian"))


def test_region_loss_pixel_no_negatives_zero():
    rng = np.random.default_rng(7)
    fa = rng.standard_normal((3, 6, 6))
    mask = three_region_mask()
    px = region_pixels(fa, mask.pixels[0])
    assert nce_region_loss(px, px, [], ContrastConfig(strategy="pixel")) == 0.0


# ---------------------------------------------------------------------------
# pair scheduling


def test_pair_schedule_partial():
    assert pair_schedule(["seg"], ["depth", "normal"]) == [
        ("seg", "depth"), ("seg", "normal")]
    assert pair_schedule(["normal", "seg"], ["depth"]) == [
        ("seg", "depth"), ("normal", "depth")]


def test_pair_schedule_full():
    got = pair_schedule(["seg"], ["depth", "normal"], setting="full")
    assert got == [("seg", "depth"), ("seg", "normal"),
                   ("depth", "seg"), ("depth", "normal"),
                   ("normal", "seg"), ("normal", "depth")]


def test_pair_schedule_validation():
    with pytest.raises(ValueError):
        pair_schedule(["seg"], ["seg"])
    with pytest.raises(ValueError):
        pair_schedule([], ["depth"])
    with pytest.raises(ValueError):
        pair_schedule(["seg"], ["depth"], setting="ring")


# ---------------------------------------------------------------------------
# cross-map contrast


def contrast_fn(mask, cfg):
    def f(tape, a, b):
        rng = np.random.default_rng(0)
        out, _ = cross_task_region_contrast(tape, a, b, mask, cfg, rng=rng)
        return out
    return f


def test_contrast_reports_counts():
    rng = np.random.default_rng(8)
    a = Tensor(rng.standard_normal((3, 6, 6)))
    b = Tensor(rng.standard_normal((3, 6, 6)))
    mask = three_region_mask()
    _, rep = cross_task_region_contrast(Tape(), a, b, mask, ContrastConfig())
    assert rep.regions_contrasted == 3
    assert rep.regions_skipped == 0
    assert len(rep.per_region_losses) == 6  # both anchor directions
    assert rep.loss == pytest.approx(np.mean(rep.per_region_losses))


def test_contrast_single_region_skips():
    rng = np.random.default_rng(9)
    a = Tensor(rng.standard_normal((3, 4, 4)))
    b = Tensor(rng.standard_normal((3, 4, 4)))
    mask = RegionMask(np.zeros((4, 4), dtype=int))
    out, rep = cross_task_region_contrast(Tape(), a, b, mask, ContrastConfig())
    assert out.item() == 0.0
    assert rep.regions_contrasted == 0
    assert rep.regions_skipped == 1
    assert rep.note != ""


def test_contrast_small_regions_skipped():
    ids = np.zeros((6, 6), dtype=int)
    ids[:, 3:] = 1
    ids[0, 0] = 2  # 1-pixel region, below the cell floor
    mask = RegionMask(ids)
    rng = np.random.default_rng(10)
    a = Tensor(rng.standard_normal((3, 6, 6)))
    b = Tensor(rng.standard_normal((3, 6, 6)))
    _, rep = cross_task_region_contrast(Tape(), a, b, mask, ContrastConfig())
    assert rep.regions_contrasted == 2
    assert rep.regions_skipped == 1


def test_contrast_extent_validation():
    rng = np.random.default_rng(11)
    a = Tensor(rng.standard_normal((3, 6, 6)))
    with pytest.raises(ValueError):
        cross_task_region_contrast(Tape(), a, Tensor(np.zeros((3, 4, 6))),
                                   three_region_mask(), ContrastConfig())
    with pytest.raises(ValueError):
        cross_task_region_contrast(Tape(), a, Tensor(a.values.copy()),
                                   RegionMask(np.zeros((4, 4), dtype=int)),
                                   ContrastConfig())


def test_contrast_deterministic_bitwise():
    rng = np.random.default_rng(12)
    av = rng.standard_normal((3, 6, 6))
    bv = rng.standard_normal((3, 6, 6))
    mask = three_region_mask()
    cfg = ContrastConfig(strategy="pixel")
    results = []
    for _ in range(2):
        tape = Tape()
        a, b = Tensor(av.copy()), Tensor(bv.copy())
        out, _ = cross_task_region_contrast(tape, a, b, mask, cfg,
                                            rng=np.random.default_rng(0))
        tape.backward(out)
        results.append((out.item(), a.grad.copy(), b.grad.copy()))
    assert results[0][0] == results[1][0]
    np.testing.assert_array_equal(results[0][1], results[1][1])
    np.testing.assert_array_equal(results[0][2], results[1][2])


def test_contrast_aligned_maps_lower_loss_than_misaligned():
    # b identical to a has every positive at distance zero; it must score
    # strictly lower than a channel-permuted partner
    rng = np.random.default_rng(13)
    av = rng.standard_normal((3, 6, 6))
    mask = three_region_mask()
    cfg = ContrastConfig()
    same, _ = cross_task_region_contrast(Tape(), Tensor(av.copy()),
                                         Tensor(av.copy()), mask, cfg)
    other, _ = cross_task_region_contrast(Tape(), Tensor(av.copy()),
                                          Tensor(np.roll(av, 2, axis=2)), mask, cfg)
    assert same.item() < other.item()


def test_contrast_gradient_step_descends():
    rng = np.random.default_rng(14)
    av = rng.standard_normal((3, 6, 6))
    bv = rng.standard_normal((3, 6, 6))
    mask = three_region_mask()
    cfg = ContrastConfig()
    tape = Tape()
    a, b = Tensor(av.copy()), Tensor(bv.copy())
    out, _ = cross_task_region_contrast(tape, a, b, mask, cfg)
    tape.backward(out)
    lr = 1e-2
    stepped, _ = cross_task_region_contrast(
        Tape(), Tensor(av - lr * a.grad), Tensor(bv - lr * b.grad), mask, cfg)
    assert stepped.item() < out.item()


@pytest.mark.parametrize("cov_mode", ["diag", "full"])
@pytest.mark.parametrize("distance", ["wasserstein", "jeffreys", "kl"])
def test_contrast_grad_gaussian(cov_mode, distance):
    rng = np.random.default_rng(15)
    a = Tensor(rng.standard_normal((2, 6, 6)))
    b = Tensor(rng.standard_normal((2, 6, 6)))
    cfg = ContrastConfig(strategy="gaussian", cov_mode=cov_mode,
                         distance=distance, tau=0.9)
    err = grad_check(contrast_fn(three_region_mask(), cfg), [a, b])
    assert err < 1e-4


@pytest.mark.parametrize("negative_source", ["partner_map", "both_maps"])
def test_contrast_grad_vector(negative_source):
    rng = np.random.default_rng(16)
    a = Tensor(rng.standard_normal((2, 6, 6)))
    b = Tensor(rng.standard_normal((2, 6, 6)))
    cfg = ContrastConfig(strategy="vector", negative_source=negative_source)
    err = grad_check(contrast_fn(three_region_mask(), cfg), [a, b])
    assert err < 1e-4


def test_contrast_grad_pixel():
    rng = np.random.default_rng(17)
    a = Tensor(rng.standard_normal((2, 6, 6)))
    b = Tensor(rng.standard_normal((2, 6, 6)))
    cfg = ContrastConfig(strategy="pixel", max_neg_pixels=5)
    err = grad_check(contrast_fn(three_region_mask(), cfg), [a, b])
    assert err < 1e-4


def test_contrast_one_direction_half_the_terms():
    rng = np.random.default_rng(18)
    a = Tensor(rng.standard_normal((3, 6, 6)))
    b = Tensor(rng.standard_normal((3, 6, 6)))
    mask = three_region_mask()
    _, sym = cross_task_region_contrast(Tape(), a, b, mask,
                                        ContrastConfig(symmetric_anchors=True))
    _, one = cross_task_region_contrast(Tape(), a, b, mask,
                                        ContrastConfig(symmetric_anchors=False))
    assert len(sym.per_region_losses) == 2 * len(one.per_region_losses)
    assert sym.per_region_losses[:3] == one.per_region_losses


def test_contrast_both_maps_adds_negatives():
    # with M=2 regions and partner-only negatives each anchor has 1 negative;
    # both_maps doubles it, changing (here: raising) the mean NCE term
    ids = np.zeros((6, 6), dtype=int)
    ids[:, 3:] = 1
    mask = RegionMask(ids)
    rng = np.random.default_rng(19)
    a = Tensor(rng.standard_normal((3, 6, 6)))
    b = Tensor(rng.standard_normal((3, 6, 6)))
    partner, _ = cross_task_region_contrast(Tape(), a, b, mask, ContrastConfig())
    both, _ = cross_task_region_contrast(
        Tape(), a, b, mask, ContrastConfig(negative_source="both_maps"))
    assert both.item() != partner.item()


def test_config_validation():
    with pytest.raises(ValueError):
        ContrastConfig(tau=0.0).validate()
    with pytest.raises(ValueError):
        ContrastConfig(strategy="cosine").validate()
    with pytest.raises(ValueError):
        ContrastConfig(distance="l1").validate()
    with pytest.raises(ValueError):
        ContrastConfig(negative_source="none").validate()
    with pytest.raises(ValueError):
        ContrastConfig(cov_mode="low_rank").validate()
    with pytest.raises(ValueError):
        ContrastConfig(max_neg_pixels=0).validate()
