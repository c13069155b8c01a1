"""Analytic occupancy scenes standing in for a learned occupancy network.

A scene is a workspace box plus primitives (disk, box, capsule). Their signed
distances are merged with a log-sum-exp smooth minimum and turned into an
occupancy probability ``sigmoid(-sdf / temperature)``.

Scene file format (``#`` starts a comment)::

    scene-format 1
    workspace 0 1 0 1
    temperature 0.01
    disk    center=0.3,0.4 radius=0.08 angle=0.0
    box     center=0.7,0.6 half=0.10,0.04 angle=0.5
    capsule center=0.5,0.2 half_length=0.1 radius=0.03 angle=1.2
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .density import BoxUniform, LogDensity, SumDensity, UniformSphere
from .errors import ConfigurationError, SceneParseError
from .manifold import Euclidean, ManifoldSpec, Sphere
from .mcmc import SamplerConfig, euclidean_hmc
from .seeding import substream

SCENE_FORMAT_VERSION = 1


def _rot(angle, n):
    """Rotation by ``angle`` in the first two axes of R^n."""
    r = np.eye(n)
    c, s = np.cos(angle), np.sin(angle)
    r[:2, :2] = [[c, -s], [s, c]]
    return r


@dataclass(frozen=True)
class Disk:
    center: tuple
    radius: float
    angle: float = 0.0

    shape = "disk"

    def sdf(self, x):
        d = x - np.asarray(self.center)
        r = np.linalg.norm(d, axis=1)
        safe = np.where(r > 0, r, 1.0)
        return r - self.radius, d / safe[:, None] * (r > 0)[:, None]

    @property
    def extent(self):
        return self.radius


@dataclass(frozen=True)
class Box:
    center: tuple
    half: tuple
    angle: float = 0.0

    shape = "box"

    def sdf(self, x):
        n = x.shape[1]
        rot = _rot(self.angle, n)
        p = (x - np.asarray(self.center)) @ rot
        sgn = np.where(p >= 0, 1.0, -1.0)
        q = np.abs(p) - np.asarray(self.half)
        out = np.maximum(q, 0.0)
        out_norm = np.linalg.norm(out, axis=1)
        inside_term = np.minimum(q.max(axis=1), 0.0)
        dist = out_norm + inside_term
        g_out = sgn * out / np.where(out_norm > 0, out_norm, 1.0)[:, None]
        g_in = np.zeros_like(p)
        k = np.argmax(q, axis=1)
        g_in[np.arange(len(p)), k] = sgn[np.arange(len(p)), k]
        g_local = np.where((out_norm > 0)[:, None], g_out, g_in)
        return dist, g_local @ rot.T

    @property
    def extent(self):
        return float(np.linalg.norm(self.half))


@dataclass(frozen=True)
class Capsule:
    """Segment of half-length ``half_length`` along ``angle``, thickened by ``radius``."""

    center: tuple
    half_length: float
    radius: float
    angle: float = 0.0

    shape = "capsule"

    def sdf(self, x):
        n = x.shape[1]
        axis = np.zeros(n)
        axis[:2] = np.cos(self.angle), np.sin(self.angle)
        d = x - np.asarray(self.center)
        t = np.clip(d @ axis, -self.half_length, self.half_length)
        w = d - t[:, None] * axis
        r = np.linalg.norm(w, axis=1)
        safe = np.where(r > 0, r, 1.0)
        return r - self.radius, w / safe[:, None] * (r > 0)[:, None]

    @property
    def extent(self):
        return self.half_length + self.radius


SHAPES = {"disk": Disk, "box": Box, "capsule": Capsule}


@dataclass
class Scene:
    workspace: np.ndarray
    primitives: list = field(default_factory=list)
    temperature: float = 0.01

    def __post_init__(self):
        self.workspace = np.asarray(self.workspace, dtype=float)
        if self.workspace.ndim != 2 or self.workspace.shape[1] != 2 or self.workspace.shape[0] not in (2, 3):
            raise ConfigurationError("workspace must be 2 or 3 (min, max) rows")
        if np.any(self.workspace[:, 1] <= self.workspace[:, 0]):
            raise ConfigurationError("workspace rows need min < max")
        if not self.temperature > 0:
            raise ConfigurationError("temperature must be positive")
        for p in self.primitives:
            c = np.asarray(p.center, dtype=float)
            if c.shape != (self.dim,):
                raise ConfigurationError(f"primitive center {p.center} has wrong dimension")
            if np.any(c < self.workspace[:, 0]) or np.any(c > self.workspace[:, 1]):
                raise ConfigurationError(f"primitive center {p.center} lies outside the workspace")

    @property
    def dim(self) -> int:
        return len(self.workspace)

    @property
    def centers(self):
        return np.array([p.center for p in self.primitives], dtype=float).reshape(-1, self.dim)

    def primitive_sdfs(self, x):
        """Per-primitive distances ``(n, k)`` and gradients ``(n, k, dim)``."""
        x = np.atleast_2d(x)
        ds, gs = zip(*(p.sdf(x) for p in self.primitives))
        return np.stack(ds, axis=1), np.stack(gs, axis=1)

    def sdf(self, x):
        """Smooth-min signed distance and its gradient; 0 everywhere for an empty scene."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if not self.primitives:
            return np.zeros(len(x)), np.zeros_like(x)
        d, g = self.primitive_sdfs(x)
        tau = self.temperature
        m = d.min(axis=1, keepdims=True)
        e = np.exp(-(d - m) / tau)
        z = e.sum(axis=1, keepdims=True)
        smin = m[:, 0] - tau * np.log(z[:, 0])
        w = e / z
        return smin, np.einsum("nk,nkd->nd", w, g)

    def bounding_box(self):
        """Box around all primitives, clipped to the workspace."""
        if not self.primitives:
            return self.workspace.copy()
        ext = np.array([p.extent for p in self.primitives])[:, None]
        lo = (self.centers - ext).min(axis=0)
        hi = (self.centers + ext).max(axis=0)
        return np.stack(
            [np.maximum(lo, self.workspace[:, 0]), np.minimum(hi, self.workspace[:, 1])], axis=1
        )


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def occupancy_log_prob(scene: Scene, x):
    """``log p(o=1 | x) = log sigmoid(-sdf(x) / temperature)`` and its gradient."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    s, gs = scene.sdf(np.atleast_2d(x))
    z = -s / scene.temperature
    val = _log_sigmoid(z)
    # d/dz log sigmoid(z) = sigmoid(-z)
    dz = 0.5 * (1.0 - np.tanh(0.5 * z))
    grad = (dz / -scene.temperature)[:, None] * gs
    return (float(val[0]), grad[0]) if single else (val, grad)


def occupancy_probability(scene: Scene, x):
    return np.exp(occupancy_log_prob(scene, x)[0])


class OccupancyDensity(LogDensity):
    def __init__(self, scene: Scene):
        self.scene = scene
        self.spec = ManifoldSpec(Euclidean(scene.dim))

    def evaluate(self, x):
        return occupancy_log_prob(self.scene, x)


class PositionPrior(SumDensity):
    """``log p(o=1 | x) + log p(x)`` with ``p(x)`` uniform on the workspace box."""

    def __init__(self, scene: Scene):
        super().__init__(OccupancyDensity(scene), BoxUniform(scene.workspace))
        self.scene = scene


class HandPrior(LogDensity):
    """Position prior times a uniform orientation on S^1, over R^n x S^1."""

    def __init__(self, scene: Scene):
        self.scene = scene
        self.position = PositionPrior(scene)
        self.orientation = UniformSphere(1)
        self.spec = ManifoldSpec(Euclidean(scene.dim), Sphere(1))

    def evaluate(self, h):
        n = self.scene.dim
        val, gx = self.position.evaluate(h[:, :n])
        vq, gq = self.orientation.evaluate(h[:, n:])
        return val + vq, np.concatenate([gx, gq], axis=1)


def hand_prior(scene: Scene) -> HandPrior:
    return HandPrior(scene)


def position_prior_config(**overrides) -> SamplerConfig:
    """Sampler settings for the position prior: 100 chains x 5000, burn-in 1000."""
    kw = dict(chains=100, transitions=5000, burn_in=1000, step_size=0.01, leapfrog_steps=20)
    kw.update(overrides)
    return SamplerConfig(**kw)


def sample_position_prior(scene: Scene, config: SamplerConfig | None = None):
    """HMC draws from the position prior, chains started uniformly in the objects' box."""
    config = config or position_prior_config()
    prior = PositionPrior(scene)
    rng = np.random.default_rng(substream(config.seed, "prior-init"))
    box = scene.bounding_box()
    init = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((config.chains, scene.dim))
    return euclidean_hmc(prior, prior.spec, init, config)


def primitive_masses(scene: Scene, x):
    """Fraction of points whose nearest primitive (by signed distance) is each one."""
    x = np.atleast_2d(x)
    d, _ = scene.primitive_sdfs(x)
    near = np.argmin(d, axis=1)
    return np.bincount(near, minlength=len(scene.primitives)) / len(x)


def outside_fraction(scene: Scene, x) -> float:
    x = np.atleast_2d(x)
    inside = np.all((x >= scene.workspace[:, 0]) & (x <= scene.workspace[:, 1]), axis=1)
    return float(1.0 - inside.mean())


# scene files


def _floats(text, line, key):
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise SceneParseError(f"bad number list for {key!r}: {text!r}", line) from None


_FIELDS = {
    "disk": {"center": "vec", "radius": "num", "angle": "num"},
    "box": {"center": "vec", "half": "vec", "angle": "num"},
    "capsule": {"center": "vec", "half_length": "num", "radius": "num", "angle": "num"},
}


def parse_scene(text: str) -> Scene:
    version = None
    workspace = None
    temperature = 0.01
    prims = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if version is None:
            if tag != "scene-format" or len(rest) != 1:
                raise SceneParseError("first record must be 'scene-format <version>'", lineno)
            if rest[0] != str(SCENE_FORMAT_VERSION):
                raise SceneParseError(f"unsupported scene format version {rest[0]!r}", lineno)
            version = int(rest[0])
        elif tag == "workspace":
            vals = _floats(",".join(rest), lineno, "workspace")
            if len(vals) not in (4, 6):
                raise SceneParseError("workspace needs 4 or 6 numbers (min max per axis)", lineno)
            workspace = np.array(vals).reshape(-1, 2)
        elif tag == "temperature":
            if len(rest) != 1:
                raise SceneParseError("temperature takes one value", lineno)
            temperature = _floats(rest[0], lineno, "temperature")[0]
        elif tag in _FIELDS:
            kw = {}
            for item in rest:
                key, sep, val = item.partition("=")
                if not sep or key not in _FIELDS[tag]:
                    raise SceneParseError(f"unknown field {key!r} for {tag}", lineno)
                v = _floats(val, lineno, key)
                if _FIELDS[tag][key] == "num":
                    if len(v) != 1:
                        raise SceneParseError(f"{key!r} takes one number", lineno)
                    v = v[0]
                kw[key] = v
            missing = [k for k in _FIELDS[tag] if k not in kw and k != "angle"]
            if missing:
                raise SceneParseError(f"{tag} is missing {', '.join(missing)}", lineno)
            prims.append((lineno, SHAPES[tag](**kw)))
        else:
            raise SceneParseError(f"unknown shape tag {tag!r}", lineno)
    if version is None:
        raise SceneParseError("empty scene file")
    if workspace is None:
        raise SceneParseError("missing workspace record")
    for lineno, p in prims:
        try:
            Scene(workspace, [p], temperature)
        except ConfigurationError as exc:
            raise SceneParseError(str(exc), lineno) from None
    try:
        return Scene(workspace, [p for _, p in prims], temperature)
    except ConfigurationError as exc:
        raise SceneParseError(str(exc)) from None


def load_scene(path) -> Scene:
    with open(path) as fh:
        return parse_scene(fh.read())


def format_scene(scene: Scene) -> str:
    lines = [f"scene-format {SCENE_FORMAT_VERSION}"]
    lines.append("workspace " + " ".join(repr(float(v)) for v in scene.workspace.ravel()))
    lines.append(f"temperature {scene.temperature!r}")
    for p in scene.primitives:
        parts = [p.shape]
        for key, kind in _FIELDS[p.shape].items():
            val = getattr(p, key)
            if kind == "vec":
                parts.append(f"{key}=" + ",".join(repr(float(v)) for v in val))
            else:
                parts.append(f"{key}={float(val)!r}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"
