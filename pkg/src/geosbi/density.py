"""Unnormalized log densities on manifold points.

Every density is called on a batch of ambient points and returns ``(log_value,
ambient_gradient)``. A single point of shape ``(D,)`` gives a scalar value and a
``(D,)`` gradient. Gradients are not projected; samplers and optimizers do that.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ive

from .errors import ConfigurationError, ContractError
from .manifold import Euclidean, ManifoldSpec, Sphere


class LogDensity:
    """Base class. Subclasses implement :meth:`evaluate` on ``(n, D)`` batches."""

    spec: ManifoldSpec

    def evaluate(self, x):
        raise NotImplementedError

    def __call__(self, x):
        x = self.spec.check_shape(x, "point")
        if x.ndim == 1:
            val, grad = self.evaluate(x[None, :])
            return float(val[0]), grad[0]
        return self.evaluate(x)

    def __add__(self, other):
        return SumDensity(self, other)


class FunctionDensity(LogDensity):
    """Wrap a vectorized callable ``fn(x) -> (values, gradients)``."""

    def __init__(self, spec, fn):
        self.spec = spec
        self.fn = fn

    def evaluate(self, x):
        return self.fn(x)


class ConstantDensity(LogDensity):
    def __init__(self, spec, value=0.0):
        self.spec = spec
        self.value = float(value)

    def evaluate(self, x):
        return np.full(len(x), self.value), np.zeros_like(x)


class ShiftedDensity(LogDensity):
    """``base + constant``; the gradient is passed through untouched."""

    def __init__(self, base, constant):
        self.spec = base.spec
        self.base = base
        self.constant = float(constant)

    def evaluate(self, x):
        val, grad = self.base.evaluate(x)
        return val + self.constant, grad


class SumDensity(LogDensity):
    """Pointwise sum of log densities. Wherever a term is ``-inf`` the sum is ``-inf``
    with a zero gradient."""

    def __init__(self, *terms):
        if not terms:
            raise ContractError("SumDensity needs at least one term")
        spec = terms[0].spec
        for t in terms[1:]:
            if t.spec != spec:
                raise ContractError(f"spec mismatch: {t.spec!r} vs {spec!r}")
        self.spec = spec
        self.terms = terms

    def evaluate(self, x):
        val = np.zeros(len(x))
        grad = np.zeros_like(x)
        for t in self.terms:
            v, g = t.evaluate(x)
            val = val + v
            grad = grad + g
        dead = ~np.isfinite(val)
        if dead.any():
            val = np.where(dead & (val != np.inf), -np.inf, val)
            grad[dead] = 0.0
        return val, grad


class Posterior(SumDensity):
    """Unnormalized posterior ``log r + log prior``.

    Keeps both parts accessible because the likelihood-free sampler integrates with
    the ratio gradient alone and only uses the prior in the acceptance test.
    """

    def __init__(self, log_ratio, prior):
        super().__init__(log_ratio, prior)
        self.log_ratio = log_ratio
        self.prior = prior


def compose_posterior(ratio, prior) -> Posterior:
    return Posterior(ratio, prior)


class UniformSphere(LogDensity):
    """Uniform density on a sphere (value 0, zero gradient); rotation invariant."""

    def __init__(self, d):
        self.spec = ManifoldSpec(Sphere(d))

    def evaluate(self, x):
        return np.zeros(len(x)), np.zeros_like(x)


class BoxUniform(LogDensity):
    """Uniform on an axis-aligned box of a Euclidean space; ``-inf`` outside."""

    def __init__(self, bounds):
        bounds = np.asarray(bounds, dtype=float)
        if bounds.ndim != 2 or bounds.shape[1] != 2 or np.any(bounds[:, 1] <= bounds[:, 0]):
            raise ConfigurationError(f"invalid box bounds {bounds.tolist()}")
        self.bounds = bounds
        self.spec = ManifoldSpec(Euclidean(len(bounds)))

    def inside(self, x):
        return np.all((x >= self.bounds[:, 0]) & (x <= self.bounds[:, 1]), axis=-1)

    def evaluate(self, x):
        val = np.where(self.inside(x), 0.0, -np.inf)
        return val, np.zeros_like(x)


class VonMisesFisher(LogDensity):
    """von Mises-Fisher density ``exp(kappa * mean . x)`` on S^d (unnormalized)."""

    def __init__(self, mean, kappa):
        mean = np.asarray(mean, dtype=float)
        if mean.ndim != 1 or len(mean) < 2:
            raise ContractError(f"mean direction must be a vector of length >= 2, got {mean.shape}")
        if abs(np.linalg.norm(mean) - 1.0) > 1e-9:
            raise ContractError("mean direction must have unit norm")
        if not kappa > 0:
            raise ConfigurationError(f"concentration must be positive, got {kappa}")
        self.mean = mean
        self.kappa = float(kappa)
        self.d = len(mean) - 1
        self.spec = ManifoldSpec(Sphere(self.d))

    def evaluate(self, x):
        val = self.kappa * (x @ self.mean)
        grad = np.broadcast_to(self.kappa * self.mean, x.shape).copy()
        return val, grad

    def sample(self, n, rng=None):
        return vmf_sample(self, n, rng)


def vmf_log_density(dist: VonMisesFisher, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dist.d + 1:
        raise ContractError(f"point dimension {x.shape[-1]} does not match S^{dist.d}")
    return dist(x)


def _rotate_from_pole(mean, w, rng):
    """Points with component ``w`` along ``mean`` and a uniform orthogonal direction.

    ``mean`` is one unit vector or one per row of ``w``.
    """
    mean = np.broadcast_to(mean, (len(w), np.shape(mean)[-1]))
    g = rng.standard_normal(mean.shape)
    g -= np.sum(g * mean, axis=1, keepdims=True) * mean
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    x = w[:, None] * mean + np.sqrt(np.clip(1.0 - w * w, 0.0, None))[:, None] * g
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _best_fisher_angles(kappa, n, rng):
    # Best & Fisher (1979) rejection sampler for the von Mises angle about 0
    tau = 1.0 + np.sqrt(1.0 + 4.0 * kappa * kappa)
    rho = (tau - np.sqrt(2.0 * tau)) / (2.0 * kappa)
    r = (1.0 + rho * rho) / (2.0 * rho)
    out = np.empty(0)
    while len(out) < n:
        m = 2 * (n - len(out)) + 16
        u1, u2, u3 = rng.random((3, m))
        z = np.cos(np.pi * u1)
        f = (1.0 + r * z) / (r + z)
        c = kappa * (r - f)
        ok = (c * (2.0 - c) - u2 > 0) | (np.log(c / u2) + 1.0 - c >= 0)
        theta = np.sign(u3[ok] - 0.5) * np.arccos(np.clip(f[ok], -1.0, 1.0))
        out = np.concatenate([out, theta])
    return out[:n]


def _wood_cosines(kappa, d, n, rng):
    # Wood (1994) rejection sampler for w = mean . x on S^d, d >= 2
    b = d / (np.sqrt(4.0 * kappa * kappa + d * d) + 2.0 * kappa)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + d * np.log(1.0 - x0 * x0)
    out = np.empty(0)
    while len(out) < n:
        m = 2 * (n - len(out)) + 16
        z = rng.beta(d / 2.0, d / 2.0, size=m)
        u = rng.random(m)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        ok = kappa * w + d * np.log(1.0 - x0 * w) - c >= np.log(u)
        out = np.concatenate([out, w[ok]])
    return out[:n]


def vmf_sample(dist: VonMisesFisher, n: int, rng=None):
    """I.i.d. draws from the normalized vMF distribution, shape ``(n, d+1)``."""
    rng = np.random.default_rng(rng)
    if dist.d == 1:
        theta = _best_fisher_angles(dist.kappa, n, rng)
        phi = np.arctan2(dist.mean[1], dist.mean[0]) + theta
        return np.stack([np.cos(phi), np.sin(phi)], axis=1)
    w = _wood_cosines(dist.kappa, dist.d, n, rng)
    return _rotate_from_pole(dist.mean, w, rng)


def vmf_sample_rows(means, kappa, rng=None):
    """One vMF draw per row of ``means`` (shared concentration)."""
    rng = np.random.default_rng(rng)
    means = np.atleast_2d(np.asarray(means, dtype=float))
    n, dim = means.shape
    if dim == 2:
        phi = np.arctan2(means[:, 1], means[:, 0]) + _best_fisher_angles(kappa, n, rng)
        return np.stack([np.cos(phi), np.sin(phi)], axis=1)
    return _rotate_from_pole(means, _wood_cosines(kappa, dim - 1, n, rng), rng)


def vmf_mean_resultant_length(kappa, d):
    """Expected ``mean . x`` under vMF on S^d: I_{(d+1)/2}(k) / I_{(d-1)/2}(k)."""
    p = d + 1
    return ive(p / 2.0, kappa) / ive(p / 2.0 - 1.0, kappa)
