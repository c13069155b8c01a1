import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import ive

from geosbi.density import vmf_sample_rows
from geosbi.errors import ConfigurationError, ContractError, TrainingDivergedError
from geosbi.manifold import ManifoldSpec, Sphere, sample_uniform
from geosbi.nre import (
    Mlp,
    RatioEnsemble,
    RatioModel,
    TrainConfig,
    classification_accuracy,
    dumps_models,
    ensemble_logit,
    fit_ratio,
    loads_models,
    mlp_forward_backward,
)
from geosbi.toy import true_log_ratio
from oracles import assert_gradient_close, central_difference, circle_grid

KAPPA = 20.0


def bayes_accuracy_s1(kappa):
    """Accuracy of the optimal joint-vs-marginal classifier on S^1, by quadrature."""
    log_i0 = np.log(ive(0, kappa)) + kappa
    a0 = np.arccos(log_i0 / kappa)
    p_pos = quad(lambda a: np.exp(kappa * np.cos(a) - log_i0) / (2 * np.pi), -a0, a0)[0]
    return 0.5 * (p_pos + 1 - a0 / np.pi)


def held_out_pairs(d, n, seed):
    rng = np.random.default_rng(seed)
    theta = sample_uniform(ManifoldSpec(Sphere(d)), rng, size=n)
    return theta, vmf_sample_rows(theta, KAPPA, rng)


def test_linear_layer_example():
    net = Mlp([np.array([[2.0], [-1.0]])], [np.array([0.5])])
    out, g, (gw, gb) = mlp_forward_backward(net, np.array([1.0, 1.0]))
    assert out == 1.5
    np.testing.assert_array_equal(g, [2.0, -1.0])
    np.testing.assert_array_equal(gw[0][:, 0], [1.0, 1.0])
    np.testing.assert_array_equal(gb[0], [1.0])


def test_zero_weights():
    net = Mlp([np.zeros((3, 4)), np.zeros((4, 1))], [np.zeros(4), np.array([0.7])])
    out, g, _ = mlp_forward_backward(net, np.array([1.0, -2.0, 3.0]))
    assert out == 0.7
    np.testing.assert_array_equal(g, 0.0)


def test_dimension_mismatch():
    net = Mlp.init([2, 8, 1], 0)
    with pytest.raises(ContractError):
        mlp_forward_backward(net, np.ones(3))


@pytest.mark.parametrize("hidden", [(), (64,), (64, 64), (64, 64, 64)])
def test_input_gradient_finite_difference(hidden):
    rng = np.random.default_rng(len(hidden))
    net = Mlp.init([2, *hidden, 1], rng)
    for x in rng.standard_normal((100, 2)):
        _, g, _ = mlp_forward_backward(net, x)
        fd = central_difference(lambda y: net.forward(y[None])[0], x)
        assert_gradient_close(g, fd)


@pytest.mark.parametrize("hidden", [(16,), (16, 16, 16)])
def test_weight_gradient_finite_difference(hidden):
    rng = np.random.default_rng(9)
    net = Mlp.init([3, *hidden, 1], rng)
    x = rng.standard_normal(3)
    _, _, (gw, gb) = mlp_forward_backward(net, x)
    for param, grad in zip(net.params, gw + gb):
        flat = param.reshape(-1)
        for k in rng.choice(flat.size, size=min(10, flat.size), replace=False):
            old = flat[k]
            flat[k] = old + 1e-5
            up = net.forward(x[None])[0]
            flat[k] = old - 1e-5
            down = net.forward(x[None])[0]
            flat[k] = old
            fd = (up - down) / 2e-5
            assert abs(grad.reshape(-1)[k] - fd) <= max(1e-4 * abs(fd), 1e-6)


def test_relu_kink_convention():
    net = Mlp([np.array([[1.0]]), np.array([[1.0]])], [np.array([0.0]), np.array([0.0])])
    _, g, _ = mlp_forward_backward(net, np.array([0.0]))
    assert g[0] == 0.0


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(sample_count=10, batch_size=20)
    with pytest.raises(ConfigurationError):
        TrainConfig(learning_rate=0)


def test_divergence_reported():
    theta = np.random.default_rng(0).standard_normal((64, 2))
    x = theta.copy()
    x[5, 0] = np.nan
    with pytest.raises(TrainingDivergedError) as info:
        fit_ratio(theta, x, TrainConfig(sample_count=64, batch_size=64, epochs=1))
    assert info.value.epoch == 0 and info.value.batch == 0


def test_training_is_deterministic():
    theta, x = held_out_pairs(1, 4000, 1)
    cfg = TrainConfig(sample_count=4000, batch_size=500, epochs=3, seed=5)
    a, b = fit_ratio(theta, x, cfg), fit_ratio(theta, x, cfg)
    for wa, wb in zip(a.net.params, b.net.params):
        np.testing.assert_array_equal(wa, wb)


def test_untrained_is_chance_level():
    theta, x = held_out_pairs(1, 20_000, 2)
    model = fit_ratio(theta, x, TrainConfig(sample_count=20_000, batch_size=1000, epochs=0))
    assert not model.trained
    theta, x = held_out_pairs(1, 20_000, 3)
    logits = model.logit(theta, x)
    assert logits.std() <= 0.05
    assert abs(classification_accuracy(model, theta, x) - 0.5) <= 0.02


def test_bayes_accuracy_oracle_by_monte_carlo():
    # the exact log-ratio, thresholded at zero, is the optimal classifier
    theta, x = held_out_pairs(1, 200_000, 4)
    log_c = true_log_ratio(np.array([[1.0, 0.0]]), np.array([0.0, 1.0]))[0]
    pos = KAPPA * np.sum(theta * x, 1) + log_c
    neg = KAPPA * np.sum(theta * np.roll(x, 1, axis=0), 1) + log_c
    acc = 0.5 * (np.mean(pos > 0) + np.mean(neg <= 0))
    assert abs(acc - bayes_accuracy_s1(KAPPA)) < 0.005


def test_trained_accuracy_near_bayes(toy_model_s1):
    theta, x = held_out_pairs(1, 200_000, 5)
    acc = classification_accuracy(toy_model_s1, theta, x)
    assert abs(acc - bayes_accuracy_s1(KAPPA)) <= 0.02


def test_trained_logit_correlates_with_likelihood(toy_model_s1):
    rng = np.random.default_rng(6)
    spec = ManifoldSpec(Sphere(1))
    theta = sample_uniform(spec, rng, size=1000)
    x = sample_uniform(spec, rng, size=1000)
    learned = toy_model_s1.logit(theta, x)
    assert np.corrcoef(learned, KAPPA * np.sum(theta * x, 1))[0, 1] > 0.95


def _centered_mae(model, qx, grid):
    learned = model.logit(grid, qx[None, :])
    exact = true_log_ratio(grid, qx)
    return np.abs((learned - learned.mean()) - (exact - exact.mean())), exact


@pytest.mark.xfail(
    strict=True,
    reason="binary cross-entropy gives no signal in the exp(-2 kappa) tails; the learned "
    "log-ratio saturates there, so the whole-circle error is far above 0.3",
)
def test_centered_log_ratio_whole_circle(toy_model_s1):
    _, grid = circle_grid(64)
    err, _ = _centered_mae(toy_model_s1, np.array([0.6, 0.8]), grid)
    assert err.mean() <= 0.3


def test_log_ratio_shape_where_posterior_lives(toy_model_s1):
    # within one radian of the observation the posterior holds all but ~1e-4 of its mass
    qx = np.array([0.6, 0.8])
    a, grid = circle_grid(64)
    near = np.abs(np.angle(np.exp(1j * (a - np.arctan2(qx[1], qx[0]))))) <= 1.0
    learned = toy_model_s1.logit(grid[near], qx[None, :])
    exact = true_log_ratio(grid[near], qx)
    assert np.mean(np.abs((learned - learned.mean()) - (exact - exact.mean()))) <= 0.3


def test_ensemble_mean_and_gradient():
    rng = np.random.default_rng(7)
    members = [RatioModel(Mlp.init([2 + 2, 32, 32, 1], rng), 2, 2) for _ in range(3)]
    single = RatioEnsemble(members[:1])
    theta = np.array([0.6, 0.8])
    x = np.array([1.0, 0.0])
    assert ensemble_logit(single, theta, x)[0] == members[0].logit(theta, x)[0]
    pair = RatioEnsemble(members[:2])
    a, b = members[0].logit(theta, x)[0], members[1].logit(theta, x)[0]
    assert ensemble_logit(pair, theta, x)[0] == pytest.approx((a + b) / 2, rel=1e-15)
    ens = RatioEnsemble(members)
    for t in rng.standard_normal((100, 2)):
        _, g = ensemble_logit(ens, t, x)
        fd = central_difference(lambda y: ens.logit(y, x)[0], t)
        assert_gradient_close(g, fd)
    with pytest.raises(ContractError):
        RatioEnsemble([])


def test_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    models = [RatioModel(Mlp.init([3, 64, 64, 64, 1], rng), 2, 1, True, 0.25) for _ in range(2)]
    text = dumps_models(models)
    assert text.startswith("geosbi-mlp 1\n")
    back = loads_models(text)
    for a, b in zip(models, back):
        assert (a.theta_dim, a.x_dim, a.trained, a.final_loss) == (b.theta_dim, b.x_dim, b.trained, b.final_loss)
        for pa, pb in zip(a.net.params, b.net.params):
            np.testing.assert_array_equal(pa, pb)
    assert dumps_models(back) == text
    with pytest.raises(ContractError):
        loads_models(text.replace("geosbi-mlp 1", "geosbi-mlp 7"))
