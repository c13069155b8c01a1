"""Closed-form geometry of Euclidean blocks, embedded spheres and their products.

Points and tangent vectors are plain numpy arrays in ambient coordinates, either a
single vector of shape ``(D,)`` or a batch of shape ``(n, D)``. The block layout of a
:class:`ManifoldSpec` fixes which slice of the last axis belongs to which factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError, InvalidPointError

ON_MANIFOLD_TOL = 1e-6
# below this value of speed * |t| the sphere flow uses its Taylor expansion
SERIES_THRESHOLD = 1e-8


@dataclass(frozen=True)
class Euclidean:
    n: int

    @property
    def ambient_dim(self) -> int:
        return self.n

    def __post_init__(self):
        if int(self.n) < 1:
            raise ConfigurationError(f"Euclidean block needs n >= 1, got {self.n}")


@dataclass(frozen=True)
class Sphere:
    """The unit sphere S^d embedded in R^(d+1)."""

    d: int

    @property
    def ambient_dim(self) -> int:
        return self.d + 1

    def __post_init__(self):
        if int(self.d) < 1:
            raise ConfigurationError(f"Sphere block needs d >= 1, got {self.d}")


class ManifoldSpec:
    """Ordered product of :class:`Euclidean` and :class:`Sphere` blocks."""

    def __init__(self, *blocks):
        if len(blocks) == 1 and isinstance(blocks[0], (list, tuple)):
            blocks = tuple(blocks[0])
        if not blocks:
            raise ConfigurationError("a manifold needs at least one block")
        for b in blocks:
            if not isinstance(b, (Euclidean, Sphere)):
                raise ConfigurationError(f"unknown block {b!r}")
        self.blocks = tuple(blocks)
        self.slices = []
        start = 0
        for b in self.blocks:
            self.slices.append(slice(start, start + b.ambient_dim))
            start += b.ambient_dim
        self.ambient_dim = start
        self.sphere_slices = [s for b, s in zip(self.blocks, self.slices) if isinstance(b, Sphere)]
        self.euclidean_slices = [
            s for b, s in zip(self.blocks, self.slices) if isinstance(b, Euclidean)
        ]

    def __eq__(self, other):
        return isinstance(other, ManifoldSpec) and self.blocks == other.blocks

    def __hash__(self):
        return hash(self.blocks)

    def __repr__(self):
        return f"ManifoldSpec{self.blocks!r}"

    @property
    def is_euclidean(self) -> bool:
        return not self.sphere_slices

    @property
    def euclidean_dim(self) -> int:
        return sum(b.n for b in self.blocks if isinstance(b, Euclidean))

    def check_shape(self, x, name="array"):
        x = np.asarray(x, dtype=float)
        if x.ndim not in (1, 2) or x.shape[-1] != self.ambient_dim:
            raise ContractError(
                f"{name} has shape {x.shape}, expected (..., {self.ambient_dim})"
            )
        return x

    def check_point(self, x, tol=ON_MANIFOLD_TOL):
        x = self.check_shape(x, "point")
        for s in self.sphere_slices:
            err = np.max(np.abs(np.linalg.norm(x[..., s], axis=-1) - 1.0))
            if not err <= tol:
                raise InvalidPointError(f"sphere slice off the unit sphere by {err:.3e}")
        return x

    def normalize(self, x):
        """Radially project every sphere slice back to unit norm."""
        x = np.array(x, dtype=float)
        for s in self.sphere_slices:
            x[..., s] /= np.linalg.norm(x[..., s], axis=-1, keepdims=True)
        return x


def project_to_tangent(spec: ManifoldSpec, base, ambient):
    """Orthogonal projection of ``ambient`` onto the tangent space at ``base``.

    Euclidean slices are untouched; each sphere slice ``g`` becomes ``g - q (q.g)``.
    """
    base = spec.check_point(base)
    g = np.array(spec.check_shape(ambient, "ambient vector"), dtype=float)
    if g.shape != np.broadcast_shapes(g.shape, base.shape):
        raise ContractError(f"vector shape {g.shape} does not match base shape {base.shape}")
    for s in spec.sphere_slices:
        q = base[..., s]
        g[..., s] -= q * np.sum(q * g[..., s], axis=-1, keepdims=True)
    return g


def _sphere_flow(q, v, t):
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    st = s * t
    cos = np.cos(st)
    small = np.abs(st) < SERIES_THRESHOLD
    with np.errstate(invalid="ignore", divide="ignore"):
        sinc_t = np.where(small, t * (1.0 - st * st / 6.0), np.sin(st) / s)
    x = q * cos + v * sinc_t
    # v cos(st) - q s sin(st) == v cos(st) - q s^2 sinc_t
    dx = v * cos - q * (s * s * sinc_t)
    x /= np.linalg.norm(x, axis=-1, keepdims=True)
    return x, dx


def geodesic_step(spec: ManifoldSpec, base, velocity, t: float):
    """Follow the geodesic from ``base`` with initial ``velocity`` for time ``t``.

    Returns the end point and the transported velocity. Sphere slices are
    renormalized after the step.
    """
    base = spec.check_shape(base, "point")
    velocity = spec.check_shape(velocity, "velocity")
    x = np.array(base, dtype=float)
    v = np.array(velocity, dtype=float)
    for s in spec.euclidean_slices:
        x[..., s] = base[..., s] + t * velocity[..., s]
    for s in spec.sphere_slices:
        x[..., s], v[..., s] = _sphere_flow(base[..., s], velocity[..., s], t)
    return x, v


def geodesic_distance(spec: ManifoldSpec, a, b):
    a = spec.check_shape(a, "point")
    b = spec.check_shape(b, "point")
    total = 0.0
    for blk, s in zip(spec.blocks, spec.slices):
        if isinstance(blk, Sphere):
            # chord form stays accurate for nearly equal and nearly antipodal points
            diff = np.linalg.norm(a[..., s] - b[..., s], axis=-1)
            summ = np.linalg.norm(a[..., s] + b[..., s], axis=-1)
            total = total + (2.0 * np.arctan2(diff, summ)) ** 2
        else:
            total = total + np.sum((a[..., s] - b[..., s]) ** 2, axis=-1)
    return np.sqrt(total)


def sphere_log(q, x):
    """Riemannian logarithm on a sphere: tangent vector at ``q`` pointing to ``x``."""
    c = np.clip(np.sum(q * x, axis=-1, keepdims=True), -1.0, 1.0)
    theta = np.arccos(c)
    w = x - q * c
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(theta < 1e-12, 1.0, theta / np.sin(theta))
    return w * scale


def sample_uniform(spec: ManifoldSpec, rng, bounds=None, size=None):
    """Uniform draw(s): boxes on Euclidean blocks, normalized Gaussians on spheres.

    ``bounds`` is an array of ``(low, high)`` rows, one per Euclidean coordinate in
    block order. It is mandatory whenever the spec has a Euclidean block.
    """
    rng = np.random.default_rng(rng)
    n = 1 if size is None else int(size)
    out = np.empty((n, spec.ambient_dim))
    if spec.euclidean_slices:
        if bounds is None:
            raise ConfigurationError("Euclidean blocks need explicit box bounds")
        bounds = np.asarray(bounds, dtype=float)
        if bounds.shape != (spec.euclidean_dim, 2):
            raise ConfigurationError(
                f"bounds shape {bounds.shape}, expected ({spec.euclidean_dim}, 2)"
            )
    k = 0
    for blk, s in zip(spec.blocks, spec.slices):
        if isinstance(blk, Sphere):
            g = rng.standard_normal((n, blk.ambient_dim))
            out[:, s] = g / np.linalg.norm(g, axis=1, keepdims=True)
        else:
            lo, hi = bounds[k : k + blk.n, 0], bounds[k : k + blk.n, 1]
            out[:, s] = lo + (hi - lo) * rng.random((n, blk.n))
            k += blk.n
    return out[0] if size is None else out


def hand_space(n: int = 2) -> ManifoldSpec:
    """Grasp pose space R^n x S^1."""
    return ManifoldSpec(Euclidean(n), Sphere(1))
