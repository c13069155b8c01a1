import numpy as np
import pytest

from geosbi.density import FunctionDensity, ShiftedDensity, UniformSphere, compose_posterior
from geosbi.errors import ConfigurationError, InitializationError
from geosbi.manifold import ManifoldSpec, Sphere, geodesic_distance, sample_uniform
from geosbi.map_opt import AscentConfig, map_multistart, riemannian_ascent
from geosbi.mcmc import SamplerConfig, geodesic_hmc
from geosbi.scene import Disk, Scene, hand_prior

KAPPA = 20.0
S1 = ManifoldSpec(Sphere(1))


def vmf_target(qx, kappa=KAPPA):
    qx = np.asarray(qx, dtype=float)
    return FunctionDensity(S1, lambda x: (kappa * x @ qx, np.tile(kappa * qx, (len(x), 1))))


def vmf_mixture(mean, w, kappa=KAPPA):
    means = np.stack([mean, -np.asarray(mean)])
    logw = np.log([w, 1.0 - w])

    def fn(x):
        a = logw[None, :] + kappa * x @ means.T
        m = a.max(axis=1, keepdims=True)
        e = np.exp(a - m)
        val = m[:, 0] + np.log(e.sum(axis=1))
        grad = kappa * (e @ means) / e.sum(axis=1, keepdims=True)
        return val, grad

    return FunctionDensity(S1, fn)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        AscentConfig(step_size=0)
    with pytest.raises(ConfigurationError):
        AscentConfig(tol=0)
    with pytest.raises(ConfigurationError):
        AscentConfig(restarts=0)


def test_converges_to_vmf_mode():
    res = riemannian_ascent(vmf_target([0.0, 1.0]), S1, np.array([1.0, 0.0]))
    assert res.converged
    assert geodesic_distance(S1, res.point, np.array([0.0, 1.0])) <= 1e-4


def test_start_at_mode_does_not_move():
    start = np.array([0.0, 1.0])
    res = riemannian_ascent(vmf_target(start), S1, start)
    assert res.iterations <= 2
    assert geodesic_distance(S1, res.point, start) <= 1e-10


def test_nonfinite_start_rejected():
    bad = FunctionDensity(S1, lambda x: (np.full(len(x), -np.inf), np.zeros_like(x)))
    with pytest.raises(InitializationError):
        riemannian_ascent(bad, S1, np.array([1.0, 0.0]))


def test_trace_monotone_and_on_manifold():
    target = vmf_mixture(np.array([0.6, 0.8]), 0.7)
    for start in sample_uniform(S1, np.random.default_rng(0), size=20):
        res = riemannian_ascent(target, S1, start, AscentConfig(step_size=0.5))
        assert np.all(np.diff(res.trace) >= 0)
        assert abs(np.linalg.norm(res.point) - 1.0) <= 1e-9


def grid_argmax(target, m=200_000):
    a = np.linspace(-np.pi, np.pi, m, endpoint=False)
    pts = np.stack([np.cos(a), np.sin(a)], axis=1)
    return pts[np.argmax(target.evaluate(pts)[0])]


def test_bimodal_equal_weights_finds_a_mean():
    mean = np.array([0.6, 0.8])
    res = map_multistart(vmf_mixture(mean, 0.5), S1, AscentConfig(restarts=10))
    d = min(geodesic_distance(S1, res.point, mean), geodesic_distance(S1, res.point, -mean))
    assert d <= 1e-3


def test_bimodal_unequal_weights_picks_heavier_mean():
    mean = np.array([0.6, 0.8])
    target = vmf_mixture(mean, 0.7)
    oracle = grid_argmax(target)
    res = map_multistart(target, S1, AscentConfig(restarts=10))
    assert geodesic_distance(S1, res.point, oracle) <= 1e-3
    assert geodesic_distance(S1, res.point, mean) <= 1e-3


def test_unimodal_multistart_matches_single_start():
    target = vmf_target([0.6, 0.8])
    single = riemannian_ascent(target, S1, np.array([1.0, 0.0]))
    pool = sample_uniform(S1, np.random.default_rng(3), size=50)
    multi = map_multistart(target, S1, AscentConfig(), pool=pool)
    assert geodesic_distance(S1, single.point, multi.point) <= 1e-6


def test_pool_from_sampler_is_never_worse():
    qx = np.array([0.6, 0.8])
    target = compose_posterior(vmf_target(qx), UniformSphere(1))
    batch = geodesic_hmc(target, S1, sample_uniform(S1, np.random.default_rng(4), size=10), SamplerConfig(chains=10, transitions=200, burn_in=100))
    res = map_multistart(target, S1, AscentConfig(), pool=batch.draws)
    assert res.value >= target.evaluate(batch.flat)[0].max()
    with pytest.raises(ConfigurationError):
        map_multistart(target, S1, AscentConfig(), pool=np.zeros((0, 2)))


def test_constant_shift_leaves_trajectory_unchanged():
    target = vmf_mixture(np.array([0.6, 0.8]), 0.7)
    start = np.array([-1.0, 0.0])
    a = riemannian_ascent(target, S1, start)
    b = riemannian_ascent(ShiftedDensity(target, 123.0), S1, start)
    np.testing.assert_array_equal(a.point, b.point)
    assert a.iterations == b.iterations


def grasp_log_ratio(scene, sigma=0.05, beta=4.0):
    """Analytic log success probability for a single-object scene."""
    prim = scene.primitives[0]
    c = np.asarray(prim.center)
    u = np.array([np.cos(prim.angle), np.sin(prim.angle)])

    def fn(h):
        x, q = h[:, :2], h[:, 2:]
        dot = q @ u
        with np.errstate(divide="ignore"):
            val = np.log(0.95) - np.sum((x - c) ** 2, 1) / (2 * sigma**2) + beta * np.log(dot**2)
        gq = 2 * beta * u[None, :] / np.where(dot == 0, np.inf, dot)[:, None]
        return val, np.concatenate([-(x - c) / sigma**2, gq], axis=1)

    return FunctionDensity(hand_prior(scene).spec, fn)


def test_scene_posterior_map_beats_random_search():
    scene = Scene(np.array([[0.0, 1.0], [0.0, 1.0]]), [Disk((0.45, 0.55), 0.06, 0.7)])
    prior = hand_prior(scene)
    target = compose_posterior(grasp_log_ratio(scene), prior)
    res = map_multistart(target, prior.spec, AscentConfig(), bounds=scene.workspace)
    rng = np.random.default_rng(5)
    pts = sample_uniform(prior.spec, rng, scene.workspace, size=100_000)
    assert res.value >= np.max(target.evaluate(pts)[0])
