"""Distances between region Gaussians, with analytic gradients.

Squared 2-Wasserstein uses the symmetric Bures form
``tr(S1 @ sigma2 @ S1)^(1/2)`` with ``S1 = sigma1^(1/2)``: equal to the
trace of ``(sigma1 sigma2)^(1/2)`` on SPD inputs but computed entirely
through symmetric eigendecompositions.  The eigensolver is a cyclic Jacobi
iteration: deterministic, exact-arithmetic-free, adequate for C <= 64.

Full-mode gradients differentiate through both eigendecompositions with the
spectral rule; eigenvalue-difference denominators are floored at 1e-8, which
biases the gradient at near-degenerate spectra but keeps it bounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .regionstats import RegionGaussian

_EIG_DIFF_FLOOR = 1e-8
_negative_clamp_count = 0


def negative_clamp_count() -> int:
    """How many negative eigenvalues have been clamped to zero so far."""
    return _negative_clamp_count


def reset_negative_clamp_count() -> None:
    global _negative_clamp_count
    _negative_clamp_count = 0


@dataclass
class SpdEigen:
    eigenvalues: np.ndarray   # ascending, clamped >= 0
    eigenvectors: np.ndarray  # orthogonal, columns are eigenvectors


def symmetric_eigen(a: np.ndarray) -> SpdEigen:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Sweeps until every off-diagonal magnitude drops below 1e-12 * ||A||_F,
    up to 50 sweeps.  Eigenvalues come back ascending; strictly negative
    ones are clamped to zero and counted.
    """
    global _negative_clamp_count
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("symmetric_eigen: expected a square matrix")
    c = a.shape[0]
    if c > 64:
        raise ValueError("symmetric_eigen: dimension capped at 64")
    asym = float(np.abs(a - a.T).max()) if c > 1 else 0.0
    if asym > 1e-9:
        raise ValueError(f"symmetric_eigen: input asymmetric by {asym:.3e}")

    work = 0.5 * (a + a.T)
    fro = math.sqrt(float((work * work).sum()))
    thresh = 1e-12 * fro
    v = np.eye(c)
    for _ in range(50):
        off = work.copy()
        np.fill_diagonal(off, 0.0)
        if np.abs(off).max() <= thresh:
            break
        for p in range(c - 1):
            for q in range(p + 1, c):
                apq = work[p, q]
                if apq == 0.0:
                    continue
                theta = (work[q, q] - work[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:  # avoid theta**2 overflow
                    t = 1.0 / (2.0 * theta)
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                cth = 1.0 / math.sqrt(t * t + 1.0)
                sth = t * cth
                col_p = cth * work[:, p] - sth * work[:, q]
                col_q = sth * work[:, p] + cth * work[:, q]
                work[:, p], work[:, q] = col_p, col_q
                row_p = cth * work[p, :] - sth * work[q, :]
                row_q = sth * work[p, :] + cth * work[q, :]
                work[p, :], work[q, :] = row_p, row_q
                work[p, q] = work[q, p] = 0.0
                vec_p = cth * v[:, p] - sth * v[:, q]
                vec_q = sth * v[:, p] + cth * v[:, q]
                v[:, p], v[:, q] = vec_p, vec_q

    lam = np.diag(work).copy()
    order = np.argsort(lam, kind="stable")
    lam = lam[order]
    v = v[:, order]
    neg = lam < -1e-12 * max(fro, 1.0)
    if neg.any():
        _negative_clamp_count += int(neg.sum())
    return SpdEigen(np.maximum(lam, 0.0), v)


def spd_sqrt(a: np.ndarray) -> np.ndarray:
    e = symmetric_eigen(a)
    s = (e.eigenvectors * np.sqrt(e.eigenvalues)) @ e.eigenvectors.T
    return 0.5 * (s + s.T)


# ---------------------------------------------------------------------------
# squared 2-Wasserstein


def _check_pair(g1: RegionGaussian, g2: RegionGaussian) -> None:
    if g1.mode != g2.mode:
        raise ValueError(f"covariance mode mismatch: {g1.mode} vs {g2.mode}")
    if g1.mu.shape != g2.mu.shape:
        raise ValueError(f"dimension mismatch: {g1.mu.shape} vs {g2.mu.shape}")


def wasserstein_sq(g1: RegionGaussian, g2: RegionGaussian) -> float:
    """Squared Bures-Wasserstein distance; symmetric, clamped >= 0.

    Arguments are canonically ordered by region_id before computing, so the
    two call orders return bitwise-identical values.
    """
    _check_pair(g1, g2)
    if g2.region_id < g1.region_id:
        g1, g2 = g2, g1
    d_mu = g1.mu - g2.mu
    mean_term = float(d_mu @ d_mu)
    if g1.mode == "diag":
        root_diff = np.sqrt(g1.sigma) - np.sqrt(g2.sigma)
        return max(mean_term + float(root_diff @ root_diff), 0.0)
    s1 = spd_sqrt(g1.sigma)
    mid = s1 @ g2.sigma @ s1
    lam = symmetric_eigen(0.5 * (mid + mid.T)).eigenvalues
    bures = float(np.trace(g1.sigma) + np.trace(g2.sigma) - 2.0 * np.sqrt(lam).sum())
    return max(mean_term + bures, 0.0)


@dataclass
class GaussGrad:
    d_mu1: np.ndarray
    d_sigma1: np.ndarray
    d_mu2: np.ndarray
    d_sigma2: np.ndarray

    def swapped(self) -> "GaussGrad":
        return GaussGrad(self.d_mu2, self.d_sigma2, self.d_mu1, self.d_sigma1)

    def __add__(self, other: "GaussGrad") -> "GaussGrad":
        return GaussGrad(self.d_mu1 + other.d_mu1, self.d_sigma1 + other.d_sigma1,
                         self.d_mu2 + other.d_mu2, self.d_sigma2 + other.d_sigma2)

    def scaled(self, c: float) -> "GaussGrad":
        return GaussGrad(self.d_mu1 * c, self.d_sigma1 * c,
                         self.d_mu2 * c, self.d_sigma2 * c)


def _sqrt_spectral_backward(eig: SpdEigen, upstream: np.ndarray) -> np.ndarray:
    """Pull a gradient on sqrt(A) back to A through the eigendecomposition."""
    lam, v = eig.eigenvalues, eig.eigenvectors
    roots = np.sqrt(lam)
    diff = lam[:, None] - lam[None, :]
    denom = np.where(np.abs(diff) < _EIG_DIFF_FLOOR,
                     np.where(diff < 0, -_EIG_DIFF_FLOOR, _EIG_DIFF_FLOOR), diff)
    f = (roots[:, None] - roots[None, :]) / denom
    np.fill_diagonal(f, 0.5 / np.maximum(roots, 1e-12))
    w_sym = 0.5 * (upstream + upstream.T)
    return v @ (f * (v.T @ w_sym @ v)) @ v.T


def wasserstein_sq_grad(g1: RegionGaussian, g2: RegionGaussian) -> GaussGrad:
    """Gradient blocks (d_mu1, d_sigma1, d_mu2, d_sigma2) of wasserstein_sq."""
    _check_pair(g1, g2)
    if g2.region_id < g1.region_id:
        return wasserstein_sq_grad(g2, g1).swapped()
    d_mu1 = 2.0 * (g1.mu - g2.mu)
    if g1.mode == "diag":
        eps = g1.eps if g1.eps > 0 else 1e-12
        s1 = np.maximum(g1.sigma, eps)
        s2 = np.maximum(g2.sigma, eps)
        d_s1 = 1.0 - np.sqrt(s2 / s1)
        d_s2 = 1.0 - np.sqrt(s1 / s2)
        return GaussGrad(d_mu1, d_s1, -d_mu1, d_s2)
    c = g1.mu.shape[0]
    eye = np.eye(c)
    eig1 = symmetric_eigen(g1.sigma)
    s1 = (eig1.eigenvectors * np.sqrt(eig1.eigenvalues)) @ eig1.eigenvectors.T
    s1 = 0.5 * (s1 + s1.T)
    mid = s1 @ g2.sigma @ s1
    eig_m = symmetric_eigen(0.5 * (mid + mid.T))
    # -2 Tr sqrt(mid) pulls back through d(Tr sqrt)/d(mid) = inv_root/2 as a
    # plain -inv_root on mid; g_mid is that inverse root, symmetrized
    inv_root = (eig_m.eigenvectors / np.maximum(np.sqrt(eig_m.eigenvalues), 1e-12)
                ) @ eig_m.eigenvectors.T
    g_mid = 0.5 * (inv_root + inv_root.T)
    d_sigma2 = eye - s1 @ g_mid @ s1
    d_s1 = -(g_mid @ s1 @ g2.sigma + g2.sigma @ s1 @ g_mid)
    d_sigma1 = eye + _sqrt_spectral_backward(eig1, d_s1)
    return GaussGrad(d_mu1, 0.5 * (d_sigma1 + d_sigma1.T),
                     -d_mu1, 0.5 * (d_sigma2 + d_sigma2.T))


# ---------------------------------------------------------------------------
# KL divergence and the symmetrized Jeffreys form


def _inv_and_logdet(sigma: np.ndarray) -> tuple[np.ndarray, float]:
    e = symmetric_eigen(sigma)
    lam = np.maximum(e.eigenvalues, 1e-300)
    inv = (e.eigenvectors / lam) @ e.eigenvectors.T
    return 0.5 * (inv + inv.T), float(np.log(lam).sum())


def kl_gauss(g1: RegionGaussian, g2: RegionGaussian) -> float:
    """KL(N1 || N2); needs sigma2 invertible, guaranteed by the eps ridge."""
    _check_pair(g1, g2)
    delta = g2.mu - g1.mu
    c = g1.mu.shape[0]
    if g1.mode == "diag":
        return 0.5 * float(np.sum(g1.sigma / g2.sigma + delta * delta / g2.sigma
                                  - 1.0 + np.log(g2.sigma) - np.log(g1.sigma)))
    p, logdet2 = _inv_and_logdet(g2.sigma)
    _, logdet1 = _inv_and_logdet(g1.sigma)
    return 0.5 * (float(np.trace(p @ g1.sigma)) + float(delta @ p @ delta)
                  - c + logdet2 - logdet1)


def jeffreys(g1: RegionGaussian, g2: RegionGaussian) -> float:
    """Symmetrized KL: the default similarity for the KL-distance ablation."""
    return 0.5 * (kl_gauss(g1, g2) + kl_gauss(g2, g1))


def kl_gauss_grad(g1: RegionGaussian, g2: RegionGaussian) -> GaussGrad:
    _check_pair(g1, g2)
    delta = g1.mu - g2.mu
    if g1.mode == "diag":
        inv2 = 1.0 / g2.sigma
        d_mu1 = delta * inv2
        d_s1 = 0.5 * (inv2 - 1.0 / g1.sigma)
        d_s2 = 0.5 * (inv2 - g1.sigma * inv2 * inv2 - delta * delta * inv2 * inv2)
        return GaussGrad(d_mu1, d_s1, -d_mu1, d_s2)
    p, _ = _inv_and_logdet(g2.sigma)
    inv1, _ = _inv_and_logdet(g1.sigma)
    d_mu1 = p @ delta
    d_sigma1 = 0.5 * (p - inv1)
    pd = p @ delta
    d_sigma2 = 0.5 * (p - p @ g1.sigma @ p - np.outer(pd, pd))
    return GaussGrad(d_mu1, d_sigma1, -d_mu1, 0.5 * (d_sigma2 + d_sigma2.T))


def jeffreys_grad(g1: RegionGaussian, g2: RegionGaussian) -> GaussGrad:
    forward = kl_gauss_grad(g1, g2)
    reverse = kl_gauss_grad(g2, g1).swapped()
    return (forward + reverse).scaled(0.5)


# ---------------------------------------------------------------------------
# batched diagonal-mode paths
#
# A patch grid turns one feature map into dozens of Gaussians, and the NCE
# needs every anchor-versus-candidate distance, so the scalar functions above
# become a per-pair Python loop with quadratic call counts.  These helpers
# compute the whole pairwise block at once.  Values match the scalar
# functions up to summation order; gradients are the same closed forms.


def _diag_kl_matrix(mu_a, sig_a, mu_b, sig_b):
    delta = mu_a[:, None, :] - mu_b[None, :, :]
    inv_b = 1.0 / sig_b[None, :, :]
    term = (sig_a[:, None, :] * inv_b + delta * delta * inv_b - 1.0
            + np.log(sig_b)[None, :, :] - np.log(sig_a)[:, None, :])
    return 0.5 * term.sum(axis=2)


def diag_distance_matrix(name: str, mu_a, sig_a, mu_b, sig_b) -> np.ndarray:
    """Pairwise distances between two stacks of diagonal Gaussians.

    ``mu_*``/``sig_*`` hold one Gaussian per row, shape (n, C).  Entry [i, j]
    of the (n_a, n_b) result is the distance from a_i to b_j, with the first
    stack in the anchor role for the asymmetric KL.
    """
    if name == "wasserstein":
        delta = mu_a[:, None, :] - mu_b[None, :, :]
        mean_term = (delta * delta).sum(axis=2)
        rd = np.sqrt(sig_a)[:, None, :] - np.sqrt(sig_b)[None, :, :]
        return np.maximum(mean_term + (rd * rd).sum(axis=2), 0.0)
    if name == "kl":
        return _diag_kl_matrix(mu_a, sig_a, mu_b, sig_b)
    if name == "jeffreys":
        return 0.5 * (_diag_kl_matrix(mu_a, sig_a, mu_b, sig_b)
                      + _diag_kl_matrix(mu_b, sig_b, mu_a, sig_a).T)
    raise ValueError(f"unknown distance {name!r}; expected one of {DISTANCES}")


def _diag_kl_grad_matrix(mu_a, sig_a, mu_b, sig_b):
    delta = mu_a[:, None, :] - mu_b[None, :, :]
    inv_b = 1.0 / sig_b[None, :, :]
    d_mu_a = delta * inv_b
    d_sig_a = 0.5 * (inv_b - 1.0 / sig_a[:, None, :])
    d_sig_b = 0.5 * (inv_b - sig_a[:, None, :] * inv_b * inv_b
                     - delta * delta * inv_b * inv_b)
    return d_mu_a, d_sig_a, -d_mu_a, d_sig_b


def diag_distance_grad_matrix(name: str, mu_a, sig_a, mu_b, sig_b,
                              eps: float):
    """Pairwise gradient blocks mirroring GaussGrad.

    Returns four (n_a, n_b, C) arrays: d/d mu_a, d/d sig_a, d/d mu_b,
    d/d sig_b of each pairwise distance.
    """
    if name == "wasserstein":
        delta = mu_a[:, None, :] - mu_b[None, :, :]
        d_mu = 2.0 * delta
        floor = eps if eps > 0 else 1e-12
        sa = np.maximum(sig_a, floor)[:, None, :]
        sb = np.maximum(sig_b, floor)[None, :, :]
        return d_mu, 1.0 - np.sqrt(sb / sa), -d_mu, 1.0 - np.sqrt(sa / sb)
    if name == "kl":
        return _diag_kl_grad_matrix(mu_a, sig_a, mu_b, sig_b)
    if name == "jeffreys":
        f = _diag_kl_grad_matrix(mu_a, sig_a, mu_b, sig_b)
        r = _diag_kl_grad_matrix(mu_b, sig_b, mu_a, sig_a)
        rt = tuple(np.transpose(g, (1, 0, 2)) for g in r)
        return (0.5 * (f[0] + rt[2]), 0.5 * (f[1] + rt[3]),
                0.5 * (f[2] + rt[0]), 0.5 * (f[3] + rt[1]))
    raise ValueError(f"unknown distance {name!r}; expected one of {DISTANCES}")


# ---------------------------------------------------------------------------
# dispatch used by the contrastive loss

DISTANCES = ("wasserstein", "jeffreys", "kl")


def gauss_distance(name: str, g1: RegionGaussian, g2: RegionGaussian) -> float:
    if name == "wasserstein":
        return wasserstein_sq(g1, g2)
    if name == "jeffreys":
        return jeffreys(g1, g2)
    if name == "kl":
        return kl_gauss(g1, g2)
    raise ValueError(f"unknown distance {name!r}; expected one of {DISTANCES}")


def gauss_distance_grad(name: str, g1: RegionGaussian, g2: RegionGaussian) -> GaussGrad:
    if name == "wasserstein":
        return wasserstein_sq_grad(g1, g2)
    if name == "jeffreys":
        return jeffreys_grad(g1, g2)
    if name == "kl":
        return kl_gauss_grad(g1, g2)
    raise ValueError(f"unknown distance {name!r}; expected one of {DISTANCES}")
