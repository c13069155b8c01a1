"""Command-line entry point: ``geosbi <command> [options]``.

Every command writes CSV tables, a ``report.txt`` of ``key=value`` lines and a
``config.json`` echo of the fully resolved settings into ``--out``. Settings are
resolved as: built-in defaults, then values from ``--config FILE`` (JSON object with
the same keys as the flags, dashes written as underscores), then flags given on the
command line.

Exit codes: 0 success, 1 usage error, 2 runtime or numerical error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .density import compose_posterior
from .diagnostics import ess, frechet_mean, geodesic_mean_distance, mmd_linear
from .errors import ConfigurationError, GeosbiError, StageError
from .graspsim import (
    GraspOutcomeModel,
    PipelineConfig,
    end_to_end_pipeline,
    generate_training_set,
    read_training_csv,
    success_probability,
    write_training_csv,
)
from .manifold import Euclidean, ManifoldSpec, Sphere
from .map_opt import AscentConfig, AscentResult, map_multistart
from .mcmc import SamplerConfig, geodesic_hmc, read_draws_csv
from .nre import RatioLogDensity, TrainConfig, load_ensemble, save_models, train_ensemble
from .scene import hand_prior, load_scene, outside_fraction, primitive_masses, sample_position_prior
from .seeding import substream
from .toy import ToyConfig, run_toy_vmf, write_toy_outputs

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# option tables: name -> (type, default, help)

_COMMON = {
    "seed": (int, 0, "global seed; every random stream is derived from it by name"),
    "threads": (int, 1, "worker threads for chains and ensemble members (results do not depend on it)"),
}


def _sampler_opts(chains, transitions, burn_in, step_size=0.01, leapfrog_steps=20):
    return {
        "chains": (int, chains, "number of Markov chains"),
        "transitions": (int, transitions, "transitions per chain, burn-in included"),
        "burn_in": (int, burn_in, "discarded initial transitions"),
        "step_size": (float, step_size, "leapfrog step size"),
        "leapfrog_steps": (int, leapfrog_steps, "leapfrog steps per trajectory"),
        "block_size": (int, 100, "chains advanced together in one vectorized block"),
    }


def _train_opts(samples, batch_size, epochs):
    return {
        "samples": (int, samples, "simulated training pairs"),
        "batch_size": (int, batch_size, "positive pairs per minibatch"),
        "epochs": (int, epochs, "training epochs (0 leaves the network untrained)"),
        "learning_rate": (float, 1e-3, "Adam learning rate"),
        "hidden": (str, "64,64,64", "hidden layer widths, comma separated"),
        "precision": (str, "float32", "training arithmetic: float32 or float64"),
    }


_GRASP = {
    "sigma_d": (float, 0.05, "grasp distance scale"),
    "beta": (float, 4.0, "alignment sharpness"),
    "p_slip": (float, 0.05, "slip probability"),
    "m_col": (float, 0.08, "collision margin"),
}

_ASCENT = {
    "ascent_step": (float, 0.05, "initial ascent step size"),
    "ascent_max_iter": (int, 2000, "maximum ascent iterations per restart"),
    "ascent_tol": (float, 1e-10, "stop when the geodesic step is shorter than this"),
    "restarts": (int, 8, "ascent restarts"),
}

def _prefixed(prefix, opts):
    return {f"{prefix}_{k}": v for k, v in opts.items()}


COMMANDS = {
    "toy-vmf": {
        "help": "vMF orientation benchmark: train a ratio, sample posteriors, score against exact draws",
        "paths": {"out": "output directory", "model": "reuse a saved ratio model instead of training"},
        "opts": {
            "d": (int, 1, "sphere dimension (1 or 3)"),
            "kappa": (float, 20.0, "vMF concentration of the forward model"),
            "observations": (int, 10, "random observations to score"),
            "oracle_draws": (int, 100_000, "exact posterior draws per observation"),
            **_train_opts(1_000_000, 8000, 50),
            **_sampler_opts(100, 2000, 1000),
        },
    },
    "scene-prior": {
        "help": "sample the occupancy position prior of a scene",
        "paths": {"scene": "scene file", "out": "output directory"},
        "opts": {**_sampler_opts(100, 5000, 1000), "bins": (int, 100, "histogram bins per axis")},
    },
    "train-ratio": {
        "help": "train a ratio ensemble on simulated grasps (or on a training CSV)",
        "paths": {"scene": "scene file", "out": "output directory", "training": "training CSV to use instead of simulating"},
        "opts": {
            **_GRASP,
            **_train_opts(100_000, 1000, 20),
            "members": (int, 6, "ensemble members"),
            **_prefixed("prior", _sampler_opts(50, 2500, 500)),
        },
    },
    "sample-posterior": {
        "help": "geodesic HMC on the grasp posterior of a trained ensemble",
        "paths": {"scene": "scene file", "models": "ensemble file", "out": "output directory"},
        "opts": {**_sampler_opts(50, 1000, 300, leapfrog_steps=50), **_GRASP},
    },
    "map": {
        "help": "multi-start Riemannian ascent for the MAP grasp",
        "paths": {"scene": "scene file", "models": "ensemble file", "out": "output directory", "draws": "posterior draws CSV used as start pool"},
        "opts": {**_ASCENT, **_GRASP},
    },
    "grasp-pipeline": {
        "help": "prior -> ratio ensemble -> posterior -> MAP -> ground-truth score",
        "paths": {"scene": "scene file", "out": "output directory"},
        "opts": {
            **_GRASP,
            **_train_opts(100_000, 1000, 20),
            "members": (int, 6, "ensemble members"),
            **_prefixed("prior", _sampler_opts(50, 2500, 500)),
            **_sampler_opts(50, 1000, 300, leapfrog_steps=50),
            **_ASCENT,
            "angle_bins": (int, 72, "orientation histogram bins"),
        },
    },
    "diagnostics": {
        "help": "ESS, Frechet means and MMD for a draws CSV",
        "paths": {"draws": "draws CSV", "out": "output directory", "reference": "second draws CSV to compare against"},
        "opts": {"manifold": (str, "", "block layout such as 'R2,S1' (default: all Euclidean)")},
    },
}

_REQUIRED_PATHS = {"out", "scene", "models", "draws"}


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    threads: int = 1
    paths: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        data = json.loads(text)
        return cls(data["command"], data["seed"], data["threads"], data["paths"], data["options"])


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="geosbi",
        description=__doc__.split("\n\n")[0],
        epilog="Precedence: flags > --config file > defaults.",
    )
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name, spec in COMMANDS.items():
        sp = sub.add_parser(name, help=spec["help"], description=spec["help"], epilog="Precedence: flags > --config file > defaults.")
        sp.add_argument("--config", help="JSON file with option values (keys as flag names, '_' for '-')")
        for key, hlp in spec["paths"].items():
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=None, help=hlp)
        for key, (typ, default, hlp) in {**_COMMON, **spec["opts"]}.items():
            sp.add_argument(
                "--" + key.replace("_", "-"), dest=key, type=typ, default=None, help=f"{hlp} (default {default})"
            )
    return p


def resolve(args) -> RunConfig:
    spec = COMMANDS[args.command]
    file_vals = {}
    if args.config:
        try:
            file_vals = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from None
        if not isinstance(file_vals, dict):
            raise UsageError("config file must hold a JSON object")
        # accept an echoed config.json as input too
        if "options" in file_vals and "command" in file_vals:
            echoed = file_vals
            file_vals = {**echoed.get("options", {}), **echoed.get("paths", {})}
            file_vals.update(seed=echoed.get("seed", 0), threads=echoed.get("threads", 1))
    table = {**_COMMON, **spec["opts"]}
    known = set(table) | set(spec["paths"])
    unknown = sorted(set(file_vals) - known)
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    vals = {}
    for key, (typ, default, _) in table.items():
        v = getattr(args, key)
        if v is None:
            v = file_vals.get(key, default)
        try:
            vals[key] = typ(v)
        except (TypeError, ValueError):
            raise UsageError(f"bad value for {key}: {v!r}") from None
    paths = {}
    for key in spec["paths"]:
        v = getattr(args, key) or file_vals.get(key)
        optional = key == "scene" and (getattr(args, "training", None) or file_vals.get("training"))
        if v is None and key in _REQUIRED_PATHS and not optional:
            raise UsageError(f"--{key} is required for {args.command}")
        if v is not None:
            paths[key] = str(v)
    seed, threads = vals.pop("seed"), vals.pop("threads")
    return RunConfig(args.command, seed, threads, paths, vals)


# helpers


def _sampler(o, seed, threads, prefix=""):
    g = lambda k: o[prefix + k]  # noqa: E731
    return SamplerConfig(
        chains=g("chains"),
        transitions=g("transitions"),
        burn_in=g("burn_in"),
        step_size=g("step_size"),
        leapfrog_steps=g("leapfrog_steps"),
        seed=seed,
        block_size=g("block_size"),
        threads=threads,
    )


def _train(o, seed):
    try:
        hidden = tuple(int(h) for h in o["hidden"].split(",") if h.strip())
    except ValueError:
        raise ConfigurationError(f"bad hidden layer list {o['hidden']!r}") from None
    return TrainConfig(
        sample_count=o["samples"],
        batch_size=o["batch_size"],
        epochs=o["epochs"],
        learning_rate=o["learning_rate"],
        hidden=hidden,
        seed=seed,
        precision=o["precision"],
    )


def _grasp(o):
    return GraspOutcomeModel(o["sigma_d"], o["beta"], o["p_slip"], o["m_col"])


def _ascent(o, seed):
    return AscentConfig(
        step_size=o["ascent_step"], max_iter=o["ascent_max_iter"], tol=o["ascent_tol"], restarts=o["restarts"], seed=seed
    )


def _write_report(path, items):
    lines = []
    for k, v in items.items():
        if isinstance(v, (list, tuple, np.ndarray)):
            v = ",".join(repr(float(x)) for x in np.ravel(v))
        elif isinstance(v, bool):
            v = str(v).lower()
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k}={v}")
    Path(path).write_text("\n".join(lines) + "\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _histograms(out, x, ranges, bins, stem="histogram"):
    """Per-axis and pairwise histogram tables; returns the per-axis modes."""
    dim = x.shape[1]
    rows, modes = [], []
    for j in range(dim):
        h, edges = np.histogram(x[:, j], bins=bins, range=tuple(ranges[j]), density=True)
        modes.append(0.5 * (edges[np.argmax(h)] + edges[np.argmax(h) + 1]))
        rows += [(j, edges[i], edges[i + 1], h[i]) for i in range(bins)]
    _write_rows(out / f"{stem}_axes.csv", ["axis", "lo", "hi", "density"], rows)
    rows = []
    for a in range(dim):
        for b in range(a + 1, dim):
            h, ea, eb = np.histogram2d(x[:, a], x[:, b], bins=bins, range=[ranges[a], ranges[b]], density=True)
            for i in range(bins):
                for k in range(bins):
                    rows.append((a, b, ea[i], ea[i + 1], eb[k], eb[k + 1], h[i, k]))
    if rows:
        _write_rows(out / f"{stem}_pairs.csv", ["axis_a", "axis_b", "a_lo", "a_hi", "b_lo", "b_hi", "density"], rows)
    return np.array(modes)


def _orientation_histogram(out, q, bins):
    ang = np.arctan2(q[:, 1], q[:, 0])
    h, edges = np.histogram(ang, bins=bins, range=(-np.pi, np.pi), density=True)
    _write_rows(out / "orientation_histogram.csv", ["angle_lo", "angle_hi", "density"], zip(edges[:-1], edges[1:], h))


def parse_manifold(text, dim) -> ManifoldSpec:
    """``'R2,S1'`` -> ``ManifoldSpec(Euclidean(2), Sphere(1))``; empty means ``R^dim``."""
    if not text:
        return ManifoldSpec(Euclidean(dim))
    blocks = []
    for tok in text.replace("x", ",").split(","):
        tok = tok.strip()
        if len(tok) < 2 or tok[0] not in "RS" or not tok[1:].isdigit():
            raise ConfigurationError(f"bad manifold block {tok!r}; use e.g. 'R2,S1'")
        blocks.append(Euclidean(int(tok[1:])) if tok[0] == "R" else Sphere(int(tok[1:])))
    spec = ManifoldSpec(*blocks)
    if spec.ambient_dim != dim:
        raise ConfigurationError(f"manifold {text!r} has {spec.ambient_dim} coordinates, draws have {dim}")
    return spec


def _posterior(scene, models_path):
    ensemble = load_ensemble(models_path)
    prior = hand_prior(scene)
    if ensemble.theta_dim != prior.spec.ambient_dim:
        raise ConfigurationError("ensemble input layout does not match the scene's hand space")
    return compose_posterior(RatioLogDensity(ensemble, [1.0], prior.spec), prior), prior


# commands


def cmd_toy_vmf(rc: RunConfig, out: Path):
    o = rc.options
    if o["d"] not in (1, 3):
        raise ConfigurationError("toy-vmf supports d = 1 or d = 3")
    cfg = ToyConfig(
        d=o["d"],
        kappa=o["kappa"],
        observations=o["observations"],
        oracle_draws=o["oracle_draws"],
        train=_train(o, rc.seed),
        sampler=_sampler(o, rc.seed, rc.threads),
        seed=rc.seed,
    )
    model = None
    if "model" in rc.paths:
        model = load_ensemble(rc.paths["model"]).members[0]
    try:
        report = run_toy_vmf(cfg, model=model)
    except GeosbiError as exc:
        raise StageError("toy-vmf", exc) from exc
    write_toy_outputs(report, out, cfg.kappa)
    save_models(out / "model.txt", [report.model])
    status = "untrained" if report.untrained else "trained"
    return f"MMD {report.mmd_mean:.5g} +- {report.mmd_stderr:.2g} over {len(report.mmd)} observations ({status})"


def cmd_scene_prior(rc: RunConfig, out: Path):
    scene = load_scene(rc.paths["scene"])
    batch = sample_position_prior(scene, _sampler(rc.options, rc.seed, rc.threads))
    batch.write(out / "draws.csv")
    modes = _histograms(out, batch.flat, scene.workspace, rc.options["bins"])
    masses = primitive_masses(scene, batch.flat) if scene.primitives else np.zeros(0)
    _write_report(
        out / "report.txt",
        {
            "draws": len(batch.flat),
            "acceptance_mean": batch.acceptance_rate,
            "outside_fraction": outside_fraction(scene, batch.flat),
            "primitive_mass": masses,
            "primitives_covered": int(np.sum(masses >= 0.02)),
            "histogram_mode": modes,
        },
    )
    return f"{len(batch.flat)} draws, {int(np.sum(masses >= 0.02))}/{len(masses)} primitives with >= 2% mass"


def cmd_train_ratio(rc: RunConfig, out: Path):
    o = rc.options
    train = _train(o, rc.seed)
    if "training" in rc.paths:
        h, s, _ = read_training_csv(rc.paths["training"])
    else:
        scene = load_scene(rc.paths["scene"])
        pcfg = PipelineConfig(prior=_sampler(o, rc.seed, rc.threads, "prior_"), train=train, seed=rc.seed, threads=rc.threads)
        try:
            h, s, _ = generate_training_set(scene, _grasp(o), pcfg)
        except GeosbiError as exc:
            raise StageError("prior", exc) from exc
        write_training_csv(out / "training.csv", h, s, Path(rc.paths["scene"]).stem)
    try:
        ens = train_ensemble(h, s.astype(float)[:, None], train, o["members"], substream(rc.seed, "train"), rc.threads)
    except GeosbiError as exc:
        raise StageError("train", exc) from exc
    save_models(out / "models.txt", ens.members)
    _write_report(
        out / "report.txt",
        {"pairs": len(h), "success_rate": float(np.mean(s)), "final_loss": [m.final_loss for m in ens.members]},
    )
    return f"trained {len(ens)} members on {len(h)} pairs"


def cmd_sample_posterior(rc: RunConfig, out: Path):
    scene = load_scene(rc.paths["scene"])
    target, prior = _posterior(scene, rc.paths["models"])
    cfg = _sampler(rc.options, rc.seed, rc.threads)
    bounds = scene.bounding_box()
    batch = geodesic_hmc(target, prior.spec, None, cfg, bounds=bounds)
    batch.write(out / "draws.csv")
    _orientation_histogram(out, batch.flat[:, scene.dim :], 72)
    _write_report(
        out / "report.txt",
        {
            "draws": len(batch.flat),
            "acceptance_mean": batch.acceptance_rate,
            "low_acceptance_flag": batch.acceptance_rate < 0.1,
            "nan_rejections": int(batch.nan_rejections.sum()),
        },
    )
    return f"{len(batch.flat)} draws, acceptance {batch.acceptance_rate:.3f}"


def _write_map(out, res, success):
    _write_rows(
        out / "map.csv",
        [f"h{j}" for j in range(len(res.point))] + ["log_density", "success_probability"],
        [list(res.point) + [res.value, success]],
    )
    _write_rows(out / "map_trace.csv", ["iteration", "log_density"], enumerate(res.trace))


def cmd_map(rc: RunConfig, out: Path):
    o = rc.options
    scene = load_scene(rc.paths["scene"])
    target, prior = _posterior(scene, rc.paths["models"])
    pool = read_draws_csv(rc.paths["draws"]) if "draws" in rc.paths else None
    res = map_multistart(target, prior.spec, _ascent(o, rc.seed), pool=pool, bounds=scene.bounding_box())
    p = success_probability(_grasp(o), scene, res.point)
    _write_map(out, res, p)
    _write_report(out / "report.txt", {"map_point": res.point, "map_log_density": res.value, "map_success_probability": p})
    return f"MAP {np.round(res.point, 4).tolist()} success probability {p:.4f}"


def cmd_grasp_pipeline(rc: RunConfig, out: Path):
    o = rc.options
    scene = load_scene(rc.paths["scene"])
    cfg = PipelineConfig(
        prior=_sampler(o, rc.seed, rc.threads, "prior_"),
        train=_train(o, rc.seed),
        members=o["members"],
        posterior=_sampler(o, rc.seed, rc.threads),
        ascent=_ascent(o, rc.seed),
        seed=rc.seed,
        threads=rc.threads,
    )
    rep = end_to_end_pipeline(scene, _grasp(o), cfg)
    rep.draws.write(out / "posterior_draws.csv")
    write_training_csv(out / "training.csv", *rep.training, Path(rc.paths["scene"]).stem)
    save_models(out / "models.txt", rep.ensemble.members)
    _write_map(out, AscentResult(rep.map_point, rep.map_log_density, rep.map_trace), rep.map_success)
    _orientation_histogram(out, rep.draws.flat[:, scene.dim :], o["angle_bins"])
    _write_report(out / "report.txt", rep.summary())
    return f"MAP success probability {rep.map_success:.4f}, acceptance {rep.acceptance_rate:.3f}"


def cmd_diagnostics(rc: RunConfig, out: Path):
    draws = read_draws_csv(rc.paths["draws"])
    spec = parse_manifold(rc.options["manifold"], draws.shape[-1])
    flat = draws.reshape(-1, draws.shape[-1])
    rep = ess(draws)
    _write_rows(
        out / "ess.csv",
        ["coordinate", "pooled", "per_chain_mean", "per_chain_min", "degenerate"],
        [(j, rep.pooled[j], rep.per_chain[:, j].mean(), rep.per_chain[:, j].min(), str(bool(rep.degenerate[j])).lower()) for j in range(flat.shape[1])],
    )
    items = {"chains": draws.shape[0], "retained": draws.shape[1], "mean": flat.mean(axis=0)}
    meta = Path(str(rc.paths["draws"]) + ".meta.json")
    if meta.exists():
        m = json.loads(meta.read_text())
        items["acceptance_mean"] = float(m["mean_acceptance"])
        items["acceptance_min"] = float(min(m["acceptance"]))
    for k, s in enumerate(spec.sphere_slices):
        items[f"sphere{k}_frechet_mean"] = frechet_mean(flat[:, s])
    if "reference" in rc.paths:
        ref = read_draws_csv(rc.paths["reference"]).reshape(-1, flat.shape[1])
        items["mmd_squared"] = mmd_linear(flat, ref).mmd_squared
        for k, s in enumerate(spec.sphere_slices):
            items[f"sphere{k}_geodesic_mean_distance"] = geodesic_mean_distance(flat[:, s], ref[:, s])
    _write_report(out / "report.txt", items)
    return f"ESS (pooled, min over coordinates) {rep.pooled.min():.1f}"


HANDLERS = {
    "toy-vmf": cmd_toy_vmf,
    "scene-prior": cmd_scene_prior,
    "train-ratio": cmd_train_ratio,
    "sample-posterior": cmd_sample_posterior,
    "map": cmd_map,
    "grasp-pipeline": cmd_grasp_pipeline,
    "diagnostics": cmd_diagnostics,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        rc = resolve(args)
    except UsageError as exc:
        print(f"geosbi {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(rc.paths["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(rc.to_json())
        message = HANDLERS[rc.command](rc, out)
    except (GeosbiError, OSError, ValueError) as exc:
        print(f"geosbi {rc.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(message)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
