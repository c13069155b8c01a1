"""Multilayer perceptron with hand-written backpropagation and neural ratio estimation.

A ratio model is a binary classifier trained to tell joint pairs ``(theta, x)`` from
pairs whose observation was shuffled within the batch. For the Bayes-optimal
classifier the logit equals ``log p(x | theta) / p(x)``, so the network output is
used directly as the log likelihood-to-evidence ratio.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .density import LogDensity
from .errors import ConfigurationError, ContractError, TrainingDivergedError
from .manifold import ManifoldSpec

FORMAT_MAGIC = "geosbi-mlp"
FORMAT_VERSION = 1


class Mlp:
    """Fully connected network with ReLU hidden layers and a linear scalar output."""

    def __init__(self, weights, biases, dtype=np.float64):
        self.weights = [np.asarray(w, dtype=dtype) for w in weights]
        self.biases = [np.asarray(b, dtype=dtype) for b in biases]
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ContractError(f"inconsistent layer shapes {w.shape}, {b.shape}")
        for w0, w1 in zip(self.weights[:-1], self.weights[1:]):
            if w0.shape[1] != w1.shape[0]:
                raise ContractError("consecutive layer sizes do not chain")
        if self.weights[-1].shape[1] != 1:
            raise ContractError("output layer must be scalar")

    @classmethod
    def init(cls, sizes, rng=None):
        """Weights and biases uniform in +-1/sqrt(fan_in).

        This is the common deep-learning library default for linear layers; an
        untrained network then has a nearly constant logit.
        """
        rng = np.random.default_rng(rng)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases)

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def activations(self):
        return ["relu"] * (len(self.weights) - 1) + ["linear"]

    @property
    def params(self):
        return self.weights + self.biases

    @property
    def dtype(self):
        return self.weights[0].dtype

    def astype(self, dtype):
        return Mlp(self.weights, self.biases, dtype=dtype)

    def _check_input(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[-1] != self.sizes[0]:
            raise ContractError(f"input width {x.shape[-1]} != {self.sizes[0]}")
        return x

    def forward(self, x, keep=False):
        """Output of shape ``(n,)``; with ``keep`` also the per-layer activations."""
        x = self._check_input(x)
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        out = h[..., 0]
        return (out, acts) if keep else out

    def backward(self, acts, upstream, want_weights=True, want_input=True):
        """Backpropagate ``upstream = dL/d(output)`` of shape ``(n,)``.

        Returns the input gradient ``(n, in)`` and, if requested, weight and bias
        gradients summed over the batch. ReLU has derivative 0 at exactly 0.
        """
        delta = np.asarray(upstream, dtype=self.dtype)[:, None]
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            if want_weights:
                gw[i] = acts[i].T @ delta
                gb[i] = delta.sum(axis=0)
            if i == 0 and not want_input:
                break
            delta = delta @ self.weights[i].T
            if i > 0:
                delta *= acts[i] > 0.0
        return delta, gw, gb

    def value_and_input_grad(self, x):
        x2 = np.atleast_2d(self._check_input(x))
        out, acts = self.forward(x2, keep=True)
        g, _, _ = self.backward(acts, np.ones(len(x2)), want_weights=False)
        if np.ndim(x) == 1:
            return float(out[0]), g[0]
        return out, g


def mlp_forward_backward(net: Mlp, x):
    """Output, input gradient and weight gradients of a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ContractError("mlp_forward_backward expects a single input vector")
    out, acts = net.forward(x[None, :], keep=True)
    g, gw, gb = net.backward(acts, np.ones(1))
    return float(out[0]), g[0], (gw, gb)


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainConfig:
    sample_count: int = 1_000_000
    batch_size: int = 8000
    epochs: int = 50
    learning_rate: float = 1e-3
    hidden: tuple = (64, 64, 64)
    seed: int = 0
    # arithmetic precision of the training loop; trained weights are stored as float64
    precision: str = "float32"
    # z-score every input column with training-set statistics before the first layer
    standardize: bool = True

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.sample_count < 1 or self.batch_size < 2 or self.epochs < 0:
            raise ConfigurationError("sample_count, batch_size and epochs must be positive")
        if self.batch_size > self.sample_count:
            raise ConfigurationError("batch_size exceeds sample_count")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning rate must be positive")
        if self.precision not in ("float32", "float64"):
            raise ConfigurationError(f"unknown precision {self.precision!r}")


@dataclass
class RatioModel:
    """Classifier network over ``concat(theta, x)`` whose logit is ``log r``."""

    net: Mlp
    theta_dim: int
    x_dim: int
    trained: bool = False
    final_loss: float = float("nan")
    history: list = field(default_factory=list)
    shift: np.ndarray | None = None
    scale: np.ndarray | None = None

    def raw_inputs(self, theta, x):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if theta.shape[1] != self.theta_dim or x.shape[1] != self.x_dim:
            raise ContractError(
                f"expected theta width {self.theta_dim} and x width {self.x_dim}, "
                f"got {theta.shape[1]} and {x.shape[1]}"
            )
        if len(x) == 1 and len(theta) > 1:
            x = np.repeat(x, len(theta), axis=0)
        elif len(theta) == 1 and len(x) > 1:
            theta = np.repeat(theta, len(x), axis=0)
        return np.concatenate([theta, x], axis=1)

    def inputs(self, theta, x):
        z = self.raw_inputs(theta, x)
        if self.shift is not None:
            z = (z - self.shift) / self.scale
        return z

    def logit(self, theta, x):
        return self.net.forward(self.inputs(theta, x))

    def logit_and_grad(self, theta, x):
        """Logits and their gradient with respect to ``theta``."""
        out, g = self.net.value_and_input_grad(self.inputs(theta, x))
        g = g[:, : self.theta_dim]
        if self.scale is not None:
            g = g / self.scale[: self.theta_dim]
        return out, g


class RatioEnsemble:
    """Members' logits averaged arithmetically (a geometric mean of ratios)."""

    def __init__(self, members):
        members = list(members)
        if not members:
            raise ContractError("an ensemble needs at least one member")
        td, xd = members[0].theta_dim, members[0].x_dim
        for m in members:
            if (m.theta_dim, m.x_dim) != (td, xd):
                raise ContractError("ensemble members disagree on input layout")
        self.members = members
        self.theta_dim = td
        self.x_dim = xd
        self._stack = None

    def __len__(self):
        return len(self.members)

    def _stacked(self):
        """Member parameters stacked along a leading axis, or None if layouts differ."""
        if self._stack is None:
            nets = [m.net for m in self.members]
            if len({tuple(n.sizes) for n in nets}) != 1:
                self._stack = False
            else:
                dim = self.theta_dim + self.x_dim
                ws = [np.stack(layer) for layer in zip(*(n.weights for n in nets))]
                bs = [np.stack(layer)[:, None, :] for layer in zip(*(n.biases for n in nets))]
                shift = np.stack([np.zeros(dim) if m.shift is None else m.shift for m in self.members])[:, None, :]
                scale = np.stack([np.ones(dim) if m.scale is None else m.scale for m in self.members])[:, None, :]
                self._stack = (ws, bs, shift, scale)
        return self._stack or None

    def _forward(self, theta, x):
        ws, bs, shift, scale = self._stacked()
        h = (self.members[0].raw_inputs(theta, x)[None] - shift) / scale
        acts = [h]
        for i, (w, b) in enumerate(zip(ws, bs)):
            h = h @ w + b
            if i < len(ws) - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h[..., 0], acts

    def logit(self, theta, x):
        if self._stacked() is None:
            return np.mean([m.logit(theta, x) for m in self.members], axis=0)
        out, _ = self._forward(theta, x)
        return out.mean(axis=0)

    def logit_and_grad(self, theta, x):
        stack = self._stacked()
        if stack is None:
            vals, grads = zip(*(m.logit_and_grad(theta, x) for m in self.members))
            return np.mean(vals, axis=0), np.mean(grads, axis=0)
        ws, _, _, scale = stack
        out, acts = self._forward(theta, x)
        delta = np.ones(out.shape + (1,))
        for i in range(len(ws) - 1, -1, -1):
            delta = delta @ np.swapaxes(ws[i], 1, 2)
            if i > 0:
                delta *= acts[i] > 0.0
        grad = (delta / scale)[..., : self.theta_dim]
        return out.mean(axis=0), grad.mean(axis=0)


def ensemble_logit(ens: RatioEnsemble, theta, x):
    theta = np.asarray(theta, dtype=float)
    val, grad = ens.logit_and_grad(theta, x)
    if theta.ndim == 1:
        return float(val[0]), grad[0]
    return val, grad


class RatioLogDensity(LogDensity):
    """``theta -> log r(x_obs | theta)`` for a fixed observation, as a log density."""

    def __init__(self, ratio, observation, spec: ManifoldSpec):
        if not isinstance(ratio, RatioEnsemble):
            ratio = RatioEnsemble([ratio])
        if spec.ambient_dim != ratio.theta_dim:
            raise ContractError("spec dimension does not match the ratio's theta width")
        self.ratio = ratio
        self.observation = np.atleast_1d(np.asarray(observation, dtype=float))
        self.spec = spec

    def evaluate(self, theta):
        return self.ratio.logit_and_grad(theta, self.observation[None, :])


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def bce_loss_and_grad(logits, labels):
    """Mean binary cross-entropy on logits and its gradient with respect to them."""
    n = len(logits)
    with np.errstate(invalid="ignore"):
        loss = np.mean(np.where(labels > 0.5, _softplus(-logits), _softplus(logits)))
    return loss, (_sigmoid(logits) - labels) / n


def fit_ratio(theta, x, config: TrainConfig, rng=None, log_every=None) -> RatioModel:
    """Train a ratio classifier on simulated pairs ``(theta[i], x[i])``.

    Each epoch reshuffles the data; inside a batch the negatives pair every theta
    with the next row's observation (a cyclic shift, so never with its own).
    """
    rng = np.random.default_rng(config.seed if rng is None else rng)
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(theta)
    if len(x) != n:
        raise ContractError("theta and x must have the same number of rows")
    td, xd = theta.shape[1], x.shape[1]
    model = RatioModel(Mlp.init([td + xd, *config.hidden, 1], rng), td, xd)
    if config.standardize:
        z = np.concatenate([theta, x], axis=1)
        scale = z.std(axis=0)
        model.shift, model.scale = z.mean(axis=0), np.where(scale > 1e-12, scale, 1.0)
        theta = (theta - model.shift[:td]) / model.scale[:td]
        x = (x - model.shift[td:]) / model.scale[td:]
    if config.epochs == 0:
        return model
    dtype = np.dtype(config.precision)
    net = model.net.astype(dtype)
    theta, x = theta.astype(dtype), x.astype(dtype)
    opt = Adam(net.params, lr=config.learning_rate)
    bs = min(config.batch_size, n)
    nb = n // bs
    labels = np.concatenate([np.ones(bs), np.zeros(bs)]).astype(dtype)
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for b in range(nb):
            idx = perm[b * bs : (b + 1) * bs]
            tb, xb = theta[idx], x[idx]
            inp = np.concatenate(
                [np.concatenate([tb, xb], axis=1), np.concatenate([tb, np.roll(xb, 1, axis=0)], axis=1)]
            )
            out, acts = net.forward(inp, keep=True)
            loss, dlogit = bce_loss_and_grad(out, labels)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, b, loss)
            _, gw, gb = net.backward(acts, dlogit, want_input=False)
            opt.step(net.params, gw + gb)
            total += float(loss)
        model.history.append(total / nb)
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}/{config.epochs} loss {total / nb:.5f}", flush=True)
    model.net = net.astype(np.float64)
    model.trained = True
    model.final_loss = float(model.history[-1])
    return model


def simulate_pairs(sample_prior, simulate, n, rng):
    """Draw ``n`` joint pairs: ``theta = sample_prior(rng, n)``, ``x = simulate(theta, rng)``."""
    theta = np.asarray(sample_prior(rng, n), dtype=float)
    x = np.asarray(simulate(theta, rng), dtype=float)
    return theta, x


def train_ratio(simulate, sample_prior, config: TrainConfig, rng=None) -> RatioModel:
    rng = np.random.default_rng(config.seed if rng is None else rng)
    theta, x = simulate_pairs(sample_prior, simulate, config.sample_count, rng)
    return fit_ratio(theta, x, config, rng)


def train_ensemble(theta, x, config: TrainConfig, members=6, seed_seq=None, threads=1):
    """Train ``members`` ratio models on the same data with independent RNG streams."""
    seed_seq = seed_seq if seed_seq is not None else np.random.SeedSequence(config.seed)
    streams = seed_seq.spawn(members)

    def one(ss):
        return fit_ratio(theta, x, config, np.random.default_rng(ss))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            models = list(pool.map(one, streams))
    else:
        models = [one(s) for s in streams]
    return RatioEnsemble(models)


# serialization: text, one value per token, floats as exact hex


def dumps_models(models) -> str:
    if isinstance(models, RatioEnsemble):
        models = models.members
    if isinstance(models, RatioModel):
        models = [models]
    lines = [f"{FORMAT_MAGIC} {FORMAT_VERSION}", f"members {len(models)}"]
    for k, m in enumerate(models):
        net = m.net
        lines.append(f"member {k}")
        lines.append(f"layout {m.theta_dim} {m.x_dim}")
        lines.append(f"trained {int(m.trained)} {float(m.final_loss).hex()}")
        if m.shift is None:
            lines.append("standardize 0")
        else:
            lines.append("standardize 1")
            lines.append(" ".join(float(v).hex() for v in m.shift))
            lines.append(" ".join(float(v).hex() for v in m.scale))
        lines.append("layers " + " ".join(str(s) for s in net.sizes))
        lines.append("activations " + " ".join(net.activations))
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            lines.append(f"weight {i} {w.shape[0]} {w.shape[1]}")
            for row in w:
                lines.append(" ".join(float(v).hex() for v in row))
            lines.append(f"bias {i} {b.shape[0]}")
            lines.append(" ".join(float(v).hex() for v in b))
    return "\n".join(lines) + "\n"


def loads_models(text: str):
    lines = iter(text.splitlines())

    def expect(tag):
        parts = next(lines).split()
        if not parts or parts[0] != tag:
            raise ContractError(f"expected {tag!r} record, got {' '.join(parts)!r}")
        return parts[1:]

    head = expect(FORMAT_MAGIC)
    if int(head[0]) != FORMAT_VERSION:
        raise ContractError(f"unsupported model format version {head[0]}")
    count = int(expect("members")[0])
    models = []
    for _ in range(count):
        expect("member")
        td, xd = map(int, expect("layout"))
        tr, loss = expect("trained")
        shift = scale = None
        if expect("standardize") == ["1"]:
            shift = np.array([float.fromhex(t) for t in next(lines).split()])
            scale = np.array([float.fromhex(t) for t in next(lines).split()])
        sizes = list(map(int, expect("layers")))
        acts = expect("activations")
        if acts != ["relu"] * (len(sizes) - 2) + ["linear"]:
            raise ContractError(f"unsupported activation layout {acts}")
        weights, biases = [], []
        for i in range(len(sizes) - 1):
            _, r, c = map(int, expect("weight"))
            w = np.array([[float.fromhex(t) for t in next(lines).split()] for _ in range(r)])
            weights.append(w.reshape(r, c))
            expect("bias")
            biases.append(np.array([float.fromhex(t) for t in next(lines).split()]))
        models.append(
            RatioModel(Mlp(weights, biases), td, xd, bool(int(tr)), float.fromhex(loss), shift=shift, scale=scale)
        )
    return models


def save_models(path, models):
    with open(path, "w") as fh:
        fh.write(dumps_models(models))


def load_ensemble(path) -> RatioEnsemble:
    with open(path) as fh:
        return RatioEnsemble(loads_models(fh.read()))


def classification_accuracy(model, theta, x, rng=None):
    """Held-out accuracy on balanced joint/shuffled pairs built like the training batches."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    pos = model.logit(theta, x)
    neg = model.logit(theta, np.roll(x, 1, axis=0))
    return 0.5 * (np.mean(pos > 0) + np.mean(neg <= 0))

