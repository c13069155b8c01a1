from pathlib import Path

import numpy as np
import pytest

from geosbi.graspsim import (
    GraspOutcomeModel,
    random_single_object_scene,
    read_training_csv,
    simulate_grasp,
    success_probability,
    write_training_csv,
)
from geosbi.density import compose_posterior
from geosbi.nre import RatioLogDensity
from geosbi.scene import Box, Disk, Scene, hand_prior, load_scene

SCENES = Path(__file__).resolve().parent.parent / "scenes"
UNIT = np.array([[0.0, 1.0], [0.0, 1.0]])


def pose(x, theta):
    return np.array([x[0], x[1], np.cos(theta), np.sin(theta)])


def lone_box(angle=0.4):
    return Scene(UNIT, [Box((0.5, 0.5), (0.08, 0.03), angle)])


def test_model_validation():
    with pytest.raises(ValueError):
        GraspOutcomeModel(p_slip=1.0)
    with pytest.raises(ValueError):
        GraspOutcomeModel(sigma_d=0.0)


def test_probability_at_center_aligned():
    m = GraspOutcomeModel()
    assert success_probability(m, lone_box(), pose((0.5, 0.5), 0.4)) == pytest.approx(0.95, abs=1e-15)


def test_probability_perpendicular_is_zero():
    m = GraspOutcomeModel()
    assert success_probability(m, lone_box(), pose((0.5, 0.5), 0.4 + np.pi / 2)) == pytest.approx(0.0, abs=1e-30)


def test_gripper_symmetry():
    m = GraspOutcomeModel()
    rng = np.random.default_rng(0)
    for _ in range(50):
        x, t = rng.uniform(0.3, 0.7, 2), rng.uniform(-np.pi, np.pi)
        a = success_probability(m, lone_box(), pose(x, t))
        b = success_probability(m, lone_box(), pose(x, t + np.pi))
        assert a == pytest.approx(b, rel=1e-12, abs=1e-300)


def test_probability_formula_against_direct_evaluation():
    m = GraspOutcomeModel(sigma_d=0.07, beta=2.5, p_slip=0.1)
    s = lone_box(angle=-0.3)
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (200, 2))
    t = rng.uniform(-np.pi, np.pi, 200)
    h = np.column_stack([x, np.cos(t), np.sin(t)])
    d2 = np.sum((x - 0.5) ** 2, 1)
    expect = 0.9 * np.exp(-d2 / (2 * 0.07**2)) * ((1 + np.cos(2 * (t + 0.3))) / 2) ** 2.5
    np.testing.assert_allclose(success_probability(m, s, h), expect, rtol=1e-12, atol=1e-300)
    assert np.all((expect >= 0) & (expect <= 1))


def test_collision_zeroes_blocked_side():
    m = GraspOutcomeModel()
    s = load_scene(SCENES / "blocked.scene")
    # toward the box: within m_col of the box surface
    assert success_probability(m, s, pose((0.48, 0.5), 0.0)) == 0.0
    # away from the box: allowed
    assert success_probability(m, s, pose((0.43, 0.5), 0.0)) > 0.5
    # grasping the box itself is blocked by the disk
    assert success_probability(m, s, pose((0.57, 0.5), 0.0)) == 0.0


def test_simulate_deterministic_extremes_and_rate():
    s = lone_box()
    rng = np.random.default_rng(2)
    zero = np.tile(pose((0.5, 0.5), 0.4 + np.pi / 2), (1000, 1))
    assert simulate_grasp(GraspOutcomeModel(), s, zero, rng).sum() == 0
    sure = np.tile(pose((0.5, 0.5), 0.4), (1000, 1))
    assert np.all(simulate_grasp(GraspOutcomeModel(p_slip=0.0), s, sure, rng) == 1)
    h = pose((0.53, 0.48), 0.6)
    p = success_probability(GraspOutcomeModel(), s, h)
    draws = simulate_grasp(GraspOutcomeModel(), s, np.tile(h, (100_000, 1)), np.random.default_rng(3))
    assert abs(draws.mean() - p) <= 0.01
    a = simulate_grasp(GraspOutcomeModel(), s, np.tile(h, (100, 1)), 7)
    b = simulate_grasp(GraspOutcomeModel(), s, np.tile(h, (100, 1)), 7)
    np.testing.assert_array_equal(a, b)


def test_random_scenes_are_valid():
    for i in range(20):
        s = random_single_object_scene(np.random.default_rng(i))
        assert len(s.primitives) == 1
        assert np.all((s.centers >= 0.3) & (s.centers <= 0.7))


def test_training_csv_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    h = rng.standard_normal((20, 4))
    s = rng.integers(0, 2, 20)
    write_training_csv(tmp_path / "t.csv", h, s, "demo")
    h2, s2, ids = read_training_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(h, h2)
    np.testing.assert_array_equal(s, s2)
    assert ids == ["demo"] * 20
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "h0,h1,h2,h3,S,scene_id"


def test_empty_scene_never_succeeds():
    s = Scene(UNIT, [])
    assert success_probability(GraspOutcomeModel(), s, pose((0.5, 0.5), 0.0)) == 0.0


def test_disk_has_orientation_dependence_through_axis_angle():
    s = Scene(UNIT, [Disk((0.5, 0.5), 0.05, 0.0)])
    m = GraspOutcomeModel(beta=0.0)
    a = success_probability(m, s, pose((0.5, 0.5), 0.0))
    b = success_probability(m, s, pose((0.5, 0.5), 1.0))
    assert a == b == pytest.approx(0.95)


# full pipeline runs at default settings


def test_pipeline_single_disk_map_quality(pipeline_run):
    m = GraspOutcomeModel()
    rep, _ = pipeline_run("single_disk", load_scene(SCENES / "single_disk.scene"), m)
    assert rep.map_success >= 0.9 * m.best_probability
    assert not rep.low_acceptance
    assert np.all(np.abs(np.linalg.norm(rep.draws.flat[:, 2:], axis=1) - 1) <= 1e-9)
    prior = hand_prior(load_scene(SCENES / "single_disk.scene"))
    posterior = compose_posterior(RatioLogDensity(rep.ensemble, [1.0], prior.spec), prior)
    assert rep.map_log_density >= np.max(posterior.evaluate(rep.draws.flat)[0])


def test_pipeline_blocked_side_has_little_mass(pipeline_run):
    m = GraspOutcomeModel()
    scene = load_scene(SCENES / "blocked.scene")
    rep, _ = pipeline_run("blocked", scene, m)
    h = rep.draws.flat
    # oracle: the region where collision alone zeroes the analytic success probability
    free = success_probability(GraspOutcomeModel(m_col=0.0), scene, h) > 0
    blocked = free & (success_probability(m, scene, h) == 0.0)
    assert blocked.mean() <= 0.10
    h_train, s_train = rep.training
    prior_blocked = (success_probability(GraspOutcomeModel(m_col=0.0), scene, h_train) > 0) & (
        success_probability(m, scene, h_train) == 0.0
    )
    assert prior_blocked.mean() > 0.3


def test_pipeline_symmetric_model_gives_uniform_orientation(pipeline_run):
    rep, _ = pipeline_run("single_disk_beta0", load_scene(SCENES / "single_disk.scene"), GraspOutcomeModel(beta=0.0))
    assert rep.orientation_resultant <= 0.05


def test_pipeline_elongated_object_is_bimodal(pipeline_run):
    rep, _ = pipeline_run("elongated", load_scene(SCENES / "elongated.scene"), GraspOutcomeModel())
    assert rep.orientation_bimodal


def _fidelity_sample(pipeline_run):
    m = GraspOutcomeModel()
    scene = load_scene(SCENES / "single_disk.scene")
    rep, _ = pipeline_run("single_disk", scene, m)
    h, s = rep.training
    pick = np.random.default_rng(0).choice(len(h), 1000, replace=False)
    learned = rep.ensemble.logit(h[pick], [1.0])
    exact = np.log(success_probability(m, scene, h[pick]))
    return learned, exact


@pytest.mark.xfail(
    strict=True,
    reason="about a fifth of prior draws have log p(S=1|h) < -10, where the training set holds no "
    "successes; the learned logit saturates there (near -6) while the exact value reaches -45",
)
def test_pipeline_ratio_tracks_analytic_likelihood(pipeline_run):
    learned, exact = _fidelity_sample(pipeline_run)
    assert np.corrcoef(learned - learned.mean(), exact - exact.mean())[0, 1] > 0.9


def test_pipeline_ratio_tracks_likelihood_where_data_resolves_it(pipeline_run):
    learned, exact = _fidelity_sample(pipeline_run)
    # 1e5 training pairs at a ~13% success rate resolve probabilities down to roughly e^-10
    seen = exact > -10.0
    assert seen.mean() > 0.7
    assert np.corrcoef(learned[seen], exact[seen])[0, 1] > 0.95
    assert np.corrcoef(np.exp(learned), np.exp(exact))[0, 1] > 0.95


def test_pipeline_seed_stability(pipeline_run):
    scene = load_scene(SCENES / "single_disk.scene")
    m = GraspOutcomeModel()
    reps = [pipeline_run("single_disk" if seed == 0 else f"single_disk_seed{seed}", scene, m, seed=seed)[0] for seed in range(5)]
    pos = np.array([r.map_point[:2] for r in reps])
    spread = np.max(np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2))
    assert spread <= 0.05
    assert min(r.map_success for r in reps) >= 0.9 * m.best_probability
