"""Riemannian gradient ascent for the maximum a posteriori hand configuration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InitializationError
from .manifold import ManifoldSpec, geodesic_step, project_to_tangent, sample_uniform
from .seeding import substream


@dataclass
class AscentConfig:
    step_size: float = 0.05
    decay: float = 1.0
    decay_interval: int = 100
    max_iter: int = 2000
    tol: float = 1e-10
    max_halvings: int = 50
    restarts: int = 8
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0 or not self.tol > 0:
            raise ConfigurationError("step size and tolerance must be positive")
        if self.restarts < 1 or self.max_iter < 1 or self.decay_interval < 1:
            raise ConfigurationError("restarts, max_iter and decay_interval must be >= 1")
        if not 0 < self.decay <= 1:
            raise ConfigurationError("decay must lie in (0, 1]")


@dataclass
class AscentResult:
    point: np.ndarray
    value: float
    trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    runs: list = field(default_factory=list)


def riemannian_ascent(target, spec: ManifoldSpec, start, config: AscentConfig | None = None):
    """Maximize ``target`` by ``h <- exp_h(alpha * grad_h)`` with backtracking.

    The Riemannian gradient is the tangent projection of the ambient gradient. A step
    is accepted only if it strictly improves the value; otherwise alpha is halved.
    Iteration stops once the accepted geodesic step is shorter than ``tol`` or no
    halving improves.
    """
    config = config or AscentConfig()
    h = np.asarray(spec.check_point(start), dtype=float)
    val, grad = target(h)
    if not np.isfinite(val) or not np.all(np.isfinite(grad)):
        raise InitializationError("non-finite value or gradient at the ascent start")
    trace = [val]
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        alpha = config.step_size * config.decay ** ((it - 1) // config.decay_interval)
        rgrad = project_to_tangent(spec, h, grad)
        norm = float(np.linalg.norm(rgrad))
        if alpha * norm < config.tol:
            converged = True
            break
        for _ in range(config.max_halvings):
            cand, _ = geodesic_step(spec, h, alpha * rgrad, 1.0)
            cval, cgrad = target(cand)
            if cval > val and np.all(np.isfinite(cgrad)):
                break
            alpha *= 0.5
        else:
            converged = True
            break
        h, val, grad = cand, cval, cgrad
        trace.append(val)
        if alpha * norm < config.tol:
            converged = True
            break
    return AscentResult(h, val, trace, it, converged)


def map_multistart(target, spec, config: AscentConfig | None = None, pool=None, bounds=None):
    """Best of ``restarts`` ascents.

    Starts are the highest-density members of ``pool`` when given (duplicates
    dropped), otherwise uniform draws over ``bounds`` and the spheres.
    """
    config = config or AscentConfig()
    if pool is not None:
        pool = np.asarray(pool, dtype=float).reshape(-1, spec.ambient_dim)
        if len(pool) == 0:
            raise ConfigurationError("candidate pool is empty")
        vals, _ = target(pool)
        order = np.argsort(-vals, kind="stable")
        _, first = np.unique(pool[order], axis=0, return_index=True)
        starts = pool[order[np.sort(first)][: config.restarts]]
    else:
        rng = np.random.default_rng(substream(config.seed, "map"))
        starts = sample_uniform(spec, rng, bounds, size=config.restarts)
    best = None
    runs = []
    for s in starts:
        r = riemannian_ascent(target, spec, s, config)
        runs.append(r)
        if best is None or r.value > best.value:
            best = r
    best.runs = runs
    return best
