"""Hamiltonian Monte Carlo on Euclidean spaces and on products of spheres.

Both samplers run many chains at once. Chains are split into fixed-size blocks that
are vectorized internally; each chain owns its random stream, so the output does not
depend on how blocks are scheduled over threads.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .density import ConstantDensity, LogDensity, Posterior
from .errors import ConfigurationError, ContractError, InitializationError
from .manifold import ManifoldSpec, _sphere_flow, geodesic_distance, sample_uniform
from .seeding import substream


@dataclass
class SamplerConfig:
    chains: int = 100
    transitions: int = 2000
    burn_in: int = 1000
    step_size: float = 0.01
    leapfrog_steps: int = 20
    seed: int = 0
    block_size: int = 100
    threads: int = 1

    def __post_init__(self):
        if self.chains < 1 or self.transitions < 1 or self.block_size < 1 or self.threads < 1:
            raise ConfigurationError("chains, transitions, block_size and threads must be >= 1")
        if not 0 <= self.burn_in < self.transitions:
            raise ConfigurationError("burn_in must satisfy 0 <= burn_in < transitions")
        if not self.step_size > 0:
            raise ConfigurationError("step size must be positive")
        if self.leapfrog_steps < 1:
            raise ConfigurationError("leapfrog_steps must be >= 1")

    @property
    def retained(self) -> int:
        return self.transitions - self.burn_in


@dataclass
class SampleBatch:
    """Retained draws, shape ``(chains, retained, D)``, plus acceptance metadata."""

    draws: np.ndarray
    acceptance: np.ndarray
    nan_rejections: np.ndarray
    config: SamplerConfig
    wall_time: float = 0.0

    @property
    def flat(self):
        return self.draws.reshape(-1, self.draws.shape[-1])

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.acceptance))

    def to_csv(self, path):
        write_draws_csv(path, self.draws, self.config.burn_in)

    def metadata(self):
        return {
            "config": asdict(self.config),
            "acceptance": [float(a) for a in self.acceptance],
            "mean_acceptance": self.acceptance_rate,
            "nan_rejections": [int(c) for c in self.nan_rejections],
            "wall_time_seconds": self.wall_time,
        }

    def write(self, path):
        """CSV of draws plus a ``.meta.json`` sidecar next to it."""
        self.to_csv(path)
        with open(str(path) + ".meta.json", "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)


def write_draws_csv(path, draws, first_transition=0):
    draws = np.asarray(draws)
    chains, retained, dim = draws.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["chain", "transition"] + [f"x{j}" for j in range(dim)])
        for c in range(chains):
            for t in range(retained):
                w.writerow([c, first_transition + t] + [repr(float(v)) for v in draws[c, t]])


def read_draws_csv(path):
    """Inverse of :func:`write_draws_csv`; returns ``(chains, retained, D)``."""
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    chains = rows[:, 0].astype(int)
    n_chains = chains.max() + 1
    per = len(rows) // n_chains
    return rows[:, 2:].reshape(n_chains, per, -1)


def chain_generators(seed, chains):
    return [np.random.default_rng(s) for s in substream(seed, "chains").spawn(chains)]


def _momenta(rngs, dim):
    return np.stack([r.standard_normal(dim) for r in rngs])


def _uniforms(rngs):
    return np.array([r.random() for r in rngs])


def _project(spec, base, g):
    g = g.copy()
    for s in spec.sphere_slices:
        q = base[:, s]
        g[:, s] -= q * np.sum(q * g[:, s], axis=1, keepdims=True)
    return g


def _geodesic(spec, base, v, t):
    x = base.copy()
    v = v.copy()
    for s in spec.euclidean_slices:
        x[:, s] = base[:, s] + t * v[:, s]
    for s in spec.sphere_slices:
        x[:, s], v[:, s] = _sphere_flow(base[:, s], v[:, s], t)
    return x, v


def geodesic_integrate(spec, log_ratio, h, v, grad, step_size, steps):
    """Algorithm-style integrator: kick, project, geodesic flow, kick, project.

    ``grad`` is the ambient gradient of ``log_ratio`` at ``h``. Returns the end state
    and the ratio value and gradient there.
    """
    half = 0.5 * step_size
    val = None
    for _ in range(steps):
        v = _project(spec, h, v + half * grad)
        h, v = _geodesic(spec, h, v, step_size)
        val, grad = log_ratio.evaluate(h)
        v = _project(spec, h, v + half * grad)
    if val is None:
        val, grad = log_ratio.evaluate(h)
    return h, v, val, grad


def _split_target(target, log_ratio, prior):
    if log_ratio is None:
        if isinstance(target, Posterior):
            return target.log_ratio, target.prior
        if isinstance(target, LogDensity):
            return target, ConstantDensity(target.spec, 0.0)
        raise ContractError("pass a Posterior or an explicit (log_ratio, prior) pair")
    if prior is None:
        prior = ConstantDensity(log_ratio.spec, 0.0)
    return log_ratio, prior


def _blocks(n, size):
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def _run(blocks_fn, config, spec, init):
    rngs = chain_generators(config.seed, config.chains)
    blocks = _blocks(config.chains, config.block_size)
    jobs = [(init[b], rngs[b]) for b in blocks]
    t0 = time.perf_counter()
    if config.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(lambda j: blocks_fn(*j), jobs))
    else:
        results = [blocks_fn(*j) for j in jobs]
    wall = time.perf_counter() - t0
    draws = np.concatenate([r[0] for r in results])
    acc = np.concatenate([r[1] for r in results]) / config.transitions
    nans = np.concatenate([r[2] for r in results])
    return SampleBatch(draws, acc, nans, config, wall)


def _check_init(spec, init, config, bounds):
    if init is None:
        if spec.euclidean_slices and bounds is None:
            raise InitializationError("no initial points and no box to draw them from")
        rng = np.random.default_rng(substream(config.seed, "init"))
        init = sample_uniform(spec, rng, bounds, size=config.chains)
    init = np.array(spec.check_point(np.atleast_2d(init)), dtype=float)
    if len(init) != config.chains:
        raise InitializationError(f"got {len(init)} initial points for {config.chains} chains")
    return init


def geodesic_hmc(
    target=None,
    spec: ManifoldSpec | None = None,
    init=None,
    config: SamplerConfig | None = None,
    *,
    log_ratio: LogDensity | None = None,
    prior: LogDensity | None = None,
    bounds=None,
) -> SampleBatch:
    """Likelihood-free geodesic HMC.

    Momentum kicks use the gradient of ``log_ratio`` only; the prior enters through
    the accept/reject step. ``target`` may be a :class:`Posterior` (split into its
    two parts) or any log density, which is then treated as the ratio with a flat
    prior.
    """
    config = config or SamplerConfig()
    log_ratio, prior = _split_target(target, log_ratio, prior)
    spec = spec or log_ratio.spec
    init = _check_init(spec, init, config, bounds)
    eps, L, T, burn = config.step_size, config.leapfrog_steps, config.transitions, config.burn_in
    dim = spec.ambient_dim

    def block(h, rngs):
        n = len(h)
        h = h.copy()
        lr, g = log_ratio.evaluate(h)
        lp, _ = prior.evaluate(h)
        if not np.all(np.isfinite(lr + lp)):
            raise InitializationError("non-finite log density at an initial point")
        draws = np.empty((n, T - burn, dim))
        accepted = np.zeros(n, dtype=int)
        nan_count = np.zeros(n, dtype=int)
        for t in range(T):
            v0 = _project(spec, h, _momenta(rngs, dim))
            with np.errstate(invalid="ignore", over="ignore"):
                hk, vk, lrk, gk = geodesic_integrate(spec, log_ratio, h, v0, g, eps, L)
                lpk, _ = prior.evaluate(hk)
                lam_t = lr + lp - 0.5 * np.sum(v0 * v0, axis=1)
                lam_k = lrk + lpk - 0.5 * np.sum(vk * vk, axis=1)
                bad = np.isnan(lam_k) | np.isnan(hk).any(axis=1) | np.isnan(gk).any(axis=1)
                u = _uniforms(rngs)
                acc = (np.log(u) < lam_k - lam_t) & ~bad
            nan_count += bad
            accepted += acc
            h[acc], lr[acc], lp[acc], g[acc] = hk[acc], lrk[acc], lpk[acc], gk[acc]
            if t >= burn:
                draws[:, t - burn] = h
        return draws, accepted, nan_count

    return _run(block, config, spec, init)


def euclidean_hmc(
    target: LogDensity, spec: ManifoldSpec | None = None, init=None, config=None, *, bounds=None
) -> SampleBatch:
    """Plain leapfrog HMC with Metropolis correction on a Euclidean-only space."""
    config = config or SamplerConfig()
    spec = spec or target.spec
    if not spec.is_euclidean:
        raise ContractError("euclidean_hmc requires a spec without sphere blocks")
    init = _check_init(spec, init, config, bounds)
    eps, L, T, burn = config.step_size, config.leapfrog_steps, config.transitions, config.burn_in
    dim = spec.ambient_dim
    half = 0.5 * eps

    def block(x, rngs):
        n = len(x)
        x = x.copy()
        logp, grad = target.evaluate(x)
        if not np.all(np.isfinite(logp)):
            raise InitializationError("non-finite log density at an initial point")
        draws = np.empty((n, T - burn, dim))
        accepted = np.zeros(n, dtype=int)
        nan_count = np.zeros(n, dtype=int)
        for t in range(T):
            p0 = _momenta(rngs, dim)
            xn, p, gn = x, p0, grad
            with np.errstate(invalid="ignore", over="ignore"):
                for _ in range(L):
                    p = p + half * gn
                    xn = xn + eps * p
                    lpn, gn = target.evaluate(xn)
                    p = p + half * gn
                h0 = logp - 0.5 * np.sum(p0 * p0, axis=1)
                h1 = lpn - 0.5 * np.sum(p * p, axis=1)
                bad = np.isnan(h1) | np.isnan(xn).any(axis=1)
                u = _uniforms(rngs)
                acc = (np.log(u) < h1 - h0) & ~bad
            nan_count += bad
            accepted += acc
            x[acc], logp[acc], grad[acc] = xn[acc], lpn[acc], gn[acc]
            if t >= burn:
                draws[:, t - burn] = x
        return draws, accepted, nan_count

    return _run(block, config, spec, init)


def hamiltonian_error(target, spec, points, momenta, step_size, steps):
    """Energy error ``H(end) - H(start)`` per trajectory, ``H = -log p + |v|^2 / 2``."""
    log_ratio, prior = _split_target(target, None, None)
    points = np.atleast_2d(points)
    v0 = _project(spec, points, np.atleast_2d(momenta))
    lr, g = log_ratio.evaluate(points)
    lp, _ = prior.evaluate(points)
    h, v, lrk, _ = geodesic_integrate(spec, log_ratio, points, v0, g, step_size, steps)
    lpk, _ = prior.evaluate(h)
    start = -(lr + lp) + 0.5 * np.sum(v0 * v0, axis=1)
    end = -(lrk + lpk) + 0.5 * np.sum(v * v, axis=1)
    return end - start


def reversibility_check(target, spec, point, step_size, steps, rng=None):
    """Integrate forward, flip the momentum, integrate again; report the mismatch."""
    rng = np.random.default_rng(rng)
    log_ratio, _ = _split_target(target, None, None)
    spec = spec or log_ratio.spec
    h0 = np.atleast_2d(spec.check_point(point))
    v0 = _project(spec, h0, rng.standard_normal(h0.shape))
    _, g = log_ratio.evaluate(h0)
    h1, v1, _, g1 = geodesic_integrate(spec, log_ratio, h0, v0, g, step_size, steps)
    h2, v2, _, _ = geodesic_integrate(spec, log_ratio, h1, -v1, g1, step_size, steps)
    return {
        "distance": float(geodesic_distance(spec, h0, h2).max()),
        "momentum_mismatch": float(np.abs(v2 + v0).max()),
        "excursion": float(geodesic_distance(spec, h0, h1).max()),
    }
