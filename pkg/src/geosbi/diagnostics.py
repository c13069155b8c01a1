"""Sampler diagnostics: linear-kernel MMD, spherical Frechet means, ESS, clustering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ConvergenceError
from .manifold import sphere_log


@dataclass
class MmdReport:
    mmd_squared: float
    n_a: int
    n_b: int
    kernel: str = "linear"

    @property
    def mmd(self) -> float:
        return float(np.sqrt(max(self.mmd_squared, 0.0)))


def mmd_linear(a, b) -> MmdReport:
    """Biased MMD^2 with kernel ``k(x, y) = x.y``, i.e. ``|mean(a) - mean(b)|^2``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ContractError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if len(a) == 0 or len(b) == 0:
        raise ContractError("both sample sets must be non-empty")
    diff = a.mean(axis=0) - b.mean(axis=0)
    return MmdReport(float(diff @ diff), len(a), len(b))


def frechet_mean(samples, tol=1e-10, max_iter=1000):
    """Intrinsic mean on S^d by fixed-point iteration on the mean Riemannian log."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    m = x.mean(axis=0)
    nrm = np.linalg.norm(m)
    m = x[0].copy() if nrm < 1e-12 else m / nrm
    step = np.inf
    for _ in range(max_iter):
        g = sphere_log(m[None, :], x).mean(axis=0)
        step = float(np.linalg.norm(g))
        if step < tol:
            return m
        m = np.cos(step) * m + np.sin(step) * g / step
        m /= np.linalg.norm(m)
    raise ConvergenceError("Frechet mean did not converge", step)


def geodesic_mean_distance(a, b) -> float:
    """Arc length between the Frechet means of two sphere sample sets."""
    ma, mb = frechet_mean(a), frechet_mean(b)
    return float(np.arccos(np.clip(ma @ mb, -1.0, 1.0)))


def _autocov(x):
    n = len(x)
    x = x - x.mean()
    f = np.fft.rfft(x, 2 * n)
    return np.fft.irfft(f * np.conj(f))[:n] / n


def _ips_tau(rho):
    # Geyer initial positive sequence on pairs of autocorrelations
    n = len(rho)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return max(tau, 1.0 / n)


@dataclass
class EssReport:
    per_chain: np.ndarray  # (chains, D)
    pooled: np.ndarray  # (D,)
    degenerate: np.ndarray  # (D,) bool


def ess(traces) -> EssReport:
    """Effective sample size per coordinate; accepts ``(n,)``, ``(chains, n)`` or
    ``(chains, n, D)`` traces. Constant coordinates get ESS 1 and a degenerate flag."""
    t = np.asarray(traces, dtype=float)
    if t.ndim == 1:
        t = t[None, :, None]
    elif t.ndim == 2:
        t = t[:, :, None]
    chains, n, dim = t.shape
    if n < 10:
        raise ContractError("ESS needs traces of length >= 10")
    per = np.ones((chains, dim))
    pooled = np.ones(dim)
    degenerate = np.zeros(dim, dtype=bool)
    for j in range(dim):
        acovs = np.array([_autocov(t[c, :, j]) for c in range(chains)])
        chain_var = acovs[:, 0]
        if np.all(chain_var <= 1e-300) and np.ptp(t[:, :, j]) == 0:
            degenerate[j] = True
            continue
        for c in range(chains):
            if chain_var[c] > 0:
                per[c, j] = n / _ips_tau(acovs[c] / chain_var[c])
        w = chain_var.mean() * n / (n - 1) if n > 1 else chain_var.mean()
        between = n * np.var(t[:, :, j].mean(axis=1), ddof=1) if chains > 1 else 0.0
        var_plus = (n - 1) / n * w + between / n
        rho = 1.0 - (w - acovs.mean(axis=0)) / var_plus
        rho[0] = 1.0
        pooled[j] = chains * n / _ips_tau(rho)
    return EssReport(per, pooled, degenerate)


def resultant_length(q) -> float:
    """Length of the mean of unit vectors; 0 for uniform, 1 for a point mass."""
    q = np.atleast_2d(q)
    return float(np.linalg.norm(q.mean(axis=0)))


def circular_two_means(q, iters=100, max_points=2000, rng=0):
    """Two-cluster spherical k-means on S^1 with a geodesic-distance silhouette.

    Returns ``(centers, labels, silhouette, weights)``; clustering runs on at most
    ``max_points`` evenly strided points.
    """
    from sklearn.metrics import silhouette_score

    q = np.atleast_2d(np.asarray(q, dtype=float))
    if len(q) > max_points:
        q = q[:: int(np.ceil(len(q) / max_points))]
    ang = np.arctan2(q[:, 1], q[:, 0])
    axial = np.arctan2(np.sin(2 * ang).mean(), np.cos(2 * ang).mean()) / 2.0
    centers = np.array([[np.cos(axial), np.sin(axial)], [-np.cos(axial), -np.sin(axial)]])
    labels = np.zeros(len(q), dtype=int)
    for _ in range(iters):
        new = np.argmax(q @ centers.T, axis=1)
        for k in range(2):
            if np.any(new == k):
                c = q[new == k].mean(axis=0)
                centers[k] = c / np.linalg.norm(c)
        if np.array_equal(new, labels):
            break
        labels = new
    if len(np.unique(labels)) < 2:
        return centers, labels, -1.0, np.array([1.0, 0.0])
    chord = np.linalg.norm(q[:, None, :] - q[None, :, :], axis=2)
    dist = 2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))
    np.fill_diagonal(dist, 0.0)
    sil = float(silhouette_score(dist, labels, metric="precomputed"))
    weights = np.bincount(labels, minlength=2) / len(labels)
    return centers, labels, sil, weights


def is_antipodal_bimodal(q, silhouette_min=0.5, angle_tol=0.35, min_weight=0.2) -> bool:
    centers, _, sil, weights = circular_two_means(q)
    gap = np.arccos(np.clip(centers[0] @ centers[1], -1.0, 1.0))
    return bool(sil > silhouette_min and abs(gap - np.pi) < angle_tol and weights.min() >= min_weight)


def acceptance_summary(acceptance) -> dict:
    a = np.asarray(acceptance, dtype=float)
    return {
        "mean": float(a.mean()),
        "min": float(a.min()),
        "max": float(a.max()),
        "median": float(np.median(a)),
    }
