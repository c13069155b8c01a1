"""Synthetic grasp-outcome simulator and the end-to-end grasp inference pipeline.

The outcome model is deliberately simple so that the whole chain (prior samples,
ratio training, posterior sampling, MAP) can be scored against an exact success
probability. A grasp succeeds with probability

    (1 - p_slip) * exp(-d^2 / 2 sigma_d^2) * ((1 + cos 2(theta - theta_obj)) / 2)^beta * free

where ``d`` is the distance from the grasp position to the nearest object center,
``theta_obj`` that object's axis angle and ``free`` is 0 when another object's
surface is closer than ``m_col``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .density import compose_posterior
from .diagnostics import is_antipodal_bimodal, resultant_length
from .errors import StageError
from .map_opt import AscentConfig, map_multistart
from .mcmc import SamplerConfig, geodesic_hmc
from .nre import RatioLogDensity, TrainConfig, train_ensemble
from .scene import Box, Capsule, Disk, Scene, hand_prior, position_prior_config, sample_position_prior
from .seeding import substream


@dataclass
class GraspOutcomeModel:
    sigma_d: float = 0.05
    beta: float = 4.0
    p_slip: float = 0.05
    m_col: float = 0.08

    def __post_init__(self):
        if not self.sigma_d > 0 or self.beta < 0 or not 0 <= self.p_slip < 1 or self.m_col < 0:
            raise ValueError("invalid grasp outcome parameters")

    @property
    def best_probability(self) -> float:
        return 1.0 - self.p_slip


def _split(scene, h):
    h = np.atleast_2d(np.asarray(h, dtype=float))
    return h[:, : scene.dim], h[:, scene.dim : scene.dim + 2]


def success_probability(model: GraspOutcomeModel, scene: Scene, h):
    """Ground-truth ``p(S=1 | h, scene)`` for grasp poses ``h = (x, q)``."""
    single = np.ndim(h) == 1
    x, q = _split(scene, h)
    if not scene.primitives:
        p = np.zeros(len(x))
        return float(p[0]) if single else p
    centers = scene.centers
    d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    near = np.argmin(d2, axis=1)
    angles = np.array([p.angle for p in scene.primitives])[near]
    # (1 + cos 2(theta - theta_obj)) / 2 == (q . u)^2 with u the object axis
    cos_rel = q[:, 0] * np.cos(angles) + q[:, 1] * np.sin(angles)
    align = (cos_rel**2) ** model.beta
    p = model.best_probability * np.exp(-d2[np.arange(len(x)), near] / (2 * model.sigma_d**2)) * align
    if len(scene.primitives) > 1:
        sd, _ = scene.primitive_sdfs(x)
        sd[np.arange(len(x)), near] = np.inf
        p = np.where(sd.min(axis=1) < model.m_col, 0.0, p)
    return float(p[0]) if single else p


def simulate_grasp(model, scene, h, rng):
    """Bernoulli outcomes ``S`` for each pose in ``h``."""
    p = np.atleast_1d(success_probability(model, scene, h))
    s = (np.random.default_rng(rng).random(len(p)) < p).astype(int)
    return int(s[0]) if np.ndim(h) == 1 else s


@dataclass
class PipelineConfig:
    """Desk-scale settings for every stage of :func:`end_to_end_pipeline`.

    The posterior sampler uses longer trajectories than the position prior. The
    orientation often carries little likelihood information, and short trajectories
    then turn it into a slow random walk on the circle.
    """

    prior: SamplerConfig = field(
        default_factory=lambda: position_prior_config(chains=50, transitions=2500, burn_in=500)
    )
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(sample_count=100_000, batch_size=1000, epochs=20)
    )
    members: int = 6
    posterior: SamplerConfig = field(
        default_factory=lambda: SamplerConfig(chains=50, transitions=1000, burn_in=300, leapfrog_steps=50)
    )
    ascent: AscentConfig = field(default_factory=lambda: AscentConfig(step_size=0.05))
    seed: int = 0
    threads: int = 1


@dataclass
class PipelineReport:
    map_point: np.ndarray
    map_log_density: float
    map_success: float
    draws: object
    ensemble: object
    training: tuple
    acceptance_rate: float
    low_acceptance: bool
    orientation_resultant: float
    orientation_bimodal: bool
    map_trace: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "map_point": [float(v) for v in self.map_point],
            "map_log_density": float(self.map_log_density),
            "map_success_probability": float(self.map_success),
            "acceptance_rate": float(self.acceptance_rate),
            "low_acceptance_flag": bool(self.low_acceptance),
            "orientation_resultant_length": float(self.orientation_resultant),
            "orientation_bimodal": bool(self.orientation_bimodal),
        }


def _with_seed(cfg, seed, **extra):
    return replace(cfg, seed=seed, **extra)


def generate_training_set(scene, model, config: PipelineConfig):
    """Hand poses from the scene prior and simulated grasp outcomes for them."""
    seed = config.seed
    prior_cfg = _with_seed(config.prior, int(substream(seed, "prior").generate_state(1)[0]), threads=config.threads)
    batch = sample_position_prior(scene, prior_cfg)
    pos = batch.flat
    rng = np.random.default_rng(substream(seed, "sim"))
    n = config.train.sample_count
    idx = rng.choice(len(pos), size=n, replace=len(pos) < n)
    ang = rng.uniform(-np.pi, np.pi, size=n)
    h = np.concatenate([pos[idx], np.stack([np.cos(ang), np.sin(ang)], axis=1)], axis=1)
    s = simulate_grasp(model, scene, h, rng)
    return h, s, batch


def end_to_end_pipeline(scene: Scene, model: GraspOutcomeModel, config: PipelineConfig | None = None):
    """Prior samples -> ratio ensemble -> posterior samples -> MAP -> ground-truth score."""
    config = config or PipelineConfig()
    seed = config.seed
    try:
        h, s, prior_batch = generate_training_set(scene, model, config)
    except Exception as exc:
        raise StageError("prior", exc) from exc
    try:
        ensemble = train_ensemble(
            h, s.astype(float)[:, None], config.train, config.members, substream(seed, "train"), config.threads
        )
    except Exception as exc:
        raise StageError("train", exc) from exc
    prior = hand_prior(scene)
    log_ratio = RatioLogDensity(ensemble, [1.0], prior.spec)
    posterior = compose_posterior(log_ratio, prior)
    try:
        post_cfg = _with_seed(config.posterior, int(substream(seed, "chains").generate_state(1)[0]), threads=config.threads)
        # Chains start from prior draws resampled by the learned ratio. Starting from raw
        # prior draws strands chains on objects the posterior has ruled out (collisions),
        # because low-occupancy gaps separate them from the grasp modes.
        rng = np.random.default_rng(substream(seed, "posterior-init"))
        logw = ensemble.logit(h, [1.0])
        w = np.exp(logw - logw.max())
        init = h[rng.choice(len(h), size=post_cfg.chains, replace=False, p=w / w.sum())]
        draws = geodesic_hmc(posterior, prior.spec, init, post_cfg)
    except Exception as exc:
        raise StageError("posterior", exc) from exc
    try:
        best = map_multistart(posterior, prior.spec, config.ascent, pool=draws.flat)
    except Exception as exc:
        raise StageError("map", exc) from exc
    q = draws.flat[:, scene.dim :]
    return PipelineReport(
        map_point=best.point,
        map_log_density=best.value,
        map_success=success_probability(model, scene, best.point),
        draws=draws,
        ensemble=ensemble,
        training=(h, s),
        acceptance_rate=draws.acceptance_rate,
        low_acceptance=draws.acceptance_rate < 0.1,
        orientation_resultant=resultant_length(q),
        orientation_bimodal=is_antipodal_bimodal(q),
        map_trace=best.trace,
    )


def random_single_object_scene(rng, kind=None) -> Scene:
    """One primitive at a random pose inside the unit square, away from the walls."""
    rng = np.random.default_rng(rng)
    kind = kind or rng.choice(["disk", "box", "capsule"])
    c = tuple(rng.uniform(0.3, 0.7, size=2))
    angle = float(rng.uniform(-np.pi, np.pi))
    if kind == "disk":
        prim = Disk(c, float(rng.uniform(0.04, 0.08)), angle)
    elif kind == "box":
        prim = Box(c, (float(rng.uniform(0.05, 0.09)), float(rng.uniform(0.02, 0.04))), angle)
    else:
        prim = Capsule(c, float(rng.uniform(0.04, 0.07)), float(rng.uniform(0.02, 0.035)), angle)
    return Scene(np.array([[0.0, 1.0], [0.0, 1.0]]), [prim], 0.01)


def write_training_csv(path, h, s, scene_id="scene"):
    h = np.atleast_2d(h)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"h{j}" for j in range(h.shape[1])] + ["S", "scene_id"])
        for row, label in zip(h, np.asarray(s).ravel()):
            w.writerow([repr(float(v)) for v in row] + [int(label), scene_id])


def read_training_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    k = header.index("S")
    h = np.array([[float(v) for v in r[:k]] for r in body]).reshape(len(body), k)
    s = np.array([int(r[k]) for r in body])
    ids = [r[k + 1] for r in body]
    return h, s, ids
