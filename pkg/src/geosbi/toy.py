"""The orientation toy problem: vMF observations of a uniformly distributed direction.

Forward model: ``theta ~ Uniform(S^d)``, ``x ~ vMF(mean=theta, kappa)``. With a
uniform prior the exact posterior is ``vMF(mean=x, kappa)``, which makes the learned
ratio and the sampler checkable against exact draws.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import gammaln, ive

from .density import UniformSphere, VonMisesFisher, vmf_sample, vmf_sample_rows
from .diagnostics import geodesic_mean_distance, mmd_linear
from .manifold import ManifoldSpec, Sphere, sample_uniform
from .mcmc import SamplerConfig, geodesic_hmc
from .nre import RatioLogDensity, TrainConfig, fit_ratio
from .seeding import generator, substream

KAPPA = 20.0


@dataclass
class ToyConfig:
    d: int = 1
    kappa: float = KAPPA
    observations: int = 10
    oracle_draws: int = 100_000
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    seed: int = 0


def sample_prior(d):
    spec = ManifoldSpec(Sphere(d))
    return lambda rng, n: sample_uniform(spec, rng, size=n)


def simulate(theta, rng, kappa=KAPPA):
    return vmf_sample_rows(theta, kappa, rng)


def train_toy_ratio(d, train: TrainConfig, kappa=KAPPA, seed=0, log_every=None):
    rng = generator(seed, "train")
    theta = sample_prior(d)(rng, train.sample_count)
    x = simulate(theta, rng, kappa)
    return fit_ratio(theta, x, train, rng, log_every=log_every)


def true_log_ratio(theta, x, kappa=KAPPA):
    """Exact ``log p(x | theta) / p(x)`` on S^d (uniform marginal)."""
    theta = np.atleast_2d(theta)
    d = theta.shape[1] - 1
    nu = (d + 1) / 2.0 - 1.0
    # log normalizer of vMF relative to the uniform density on S^d
    log_c = (
        nu * np.log(kappa)
        - (np.log(ive(nu, kappa)) + kappa)
        - (d + 1) / 2.0 * np.log(2 * np.pi)
        + np.log(2 * np.pi ** ((d + 1) / 2.0))
        - gammaln((d + 1) / 2.0)
    )
    return kappa * (theta @ np.asarray(x)) + log_c


@dataclass
class ToyReport:
    d: int
    mmd: np.ndarray
    mean_distance: np.ndarray
    acceptance: np.ndarray
    observations: np.ndarray
    untrained: bool
    batches: list
    model: object

    @property
    def mmd_mean(self) -> float:
        return float(self.mmd.mean())

    @property
    def mmd_stderr(self) -> float:
        return float(self.mmd.std(ddof=1) / np.sqrt(len(self.mmd))) if len(self.mmd) > 1 else 0.0


def run_toy_vmf(config: ToyConfig, model=None, log_every=None) -> ToyReport:
    """Train (unless ``model`` is given), then sample the posterior for each observation."""
    d = config.d
    spec = ManifoldSpec(Sphere(d))
    if model is None:
        model = train_toy_ratio(d, config.train, config.kappa, config.seed, log_every)
    obs = sample_uniform(spec, generator(config.seed, "observations"), size=config.observations)
    mmds, dists, accs, batches = [], [], [], []
    for i, qx in enumerate(obs):
        scfg = replace(config.sampler, seed=int(substream(config.seed, f"chains-{i}").generate_state(1)[0]))
        init = sample_uniform(spec, generator(config.seed, f"init-{i}"), size=scfg.chains)
        log_ratio = RatioLogDensity(model, qx, spec)
        batch = geodesic_hmc(spec=spec, init=init, config=scfg, log_ratio=log_ratio, prior=UniformSphere(d))
        truth = vmf_sample(VonMisesFisher(qx, config.kappa), config.oracle_draws, generator(config.seed, f"oracle-{i}"))
        mmds.append(mmd_linear(batch.flat, truth).mmd_squared)
        dists.append(geodesic_mean_distance(batch.flat, truth))
        accs.append(batch.acceptance_rate)
        batches.append(batch)
    return ToyReport(d, np.array(mmds), np.array(dists), np.array(accs), obs, not model.trained, batches, model)


def density_table(report: ToyReport, kappa=KAPPA, bins=72):
    """Rows comparing exact and approximate posterior densities for the first observation.

    On S^1 the coordinate is the angle; on S^3 it is the cosine to the observation.
    Columns: coordinate, exact density, draw-histogram density, and on S^1 the
    grid-normalized learned posterior.
    """
    qx = report.observations[0]
    draws = report.batches[0].flat
    if report.d == 1:
        edges = np.linspace(-np.pi, np.pi, bins + 1)
        mid = 0.5 * (edges[1:] + edges[:-1])
        base = np.arctan2(qx[1], qx[0])
        rel = np.angle(np.exp(1j * (np.arctan2(draws[:, 1], draws[:, 0]) - base)))
        hist, _ = np.histogram(rel, edges, density=True)
        exact = np.exp(kappa * (np.cos(mid) - 1.0)) / (2 * np.pi * ive(0, kappa))
        pts = np.stack([np.cos(mid + base), np.sin(mid + base)], axis=1)
        lr = report.model.logit(pts, qx[None, :])
        approx = np.exp(lr - lr.max())
        approx /= approx.sum() * (edges[1] - edges[0])
        return ["angle", "exact", "histogram", "learned"], np.column_stack([mid, exact, hist, approx])
    edges = np.linspace(-1.0, 1.0, bins + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    hist, _ = np.histogram(draws @ qx, edges, density=True)
    half = (report.d - 2) / 2.0
    w = np.exp(kappa * (mid - 1.0)) * (1.0 - mid * mid) ** half
    exact = w / (w.sum() * (edges[1] - edges[0]))
    return ["cosine", "exact", "histogram"], np.column_stack([mid, exact, hist])


def write_toy_outputs(report: ToyReport, out_dir, kappa=KAPPA):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [
        f"d={report.d}",
        f"mmd_mean={report.mmd_mean!r}",
        f"mmd_stderr={report.mmd_stderr!r}",
        f"geodesic_mean_distance_mean={float(report.mean_distance.mean())!r}",
        f"acceptance_mean={float(report.acceptance.mean())!r}",
        f"untrained={str(report.untrained).lower()}",
    ]
    for i, (m, g, a) in enumerate(zip(report.mmd, report.mean_distance, report.acceptance)):
        lines.append(f"observation_{i}_mmd={float(m)!r}")
        lines.append(f"observation_{i}_geodesic_mean_distance={float(g)!r}")
        lines.append(f"observation_{i}_acceptance={float(a)!r}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    with open(out / "observations.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["observation"] + [f"x{j}" for j in range(report.d + 1)])
        for i, q in enumerate(report.observations):
            w.writerow([i] + [repr(float(v)) for v in q])
    for i, b in enumerate(report.batches):
        b.write(out / f"samples_obs{i}.csv")
    header, rows = density_table(report, kappa)
    with open(out / "density_grid.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
