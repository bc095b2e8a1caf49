"""Command-line interface: ``lbl <subcommand> [options]``.

Subcommands: ``generate``, ``train``, ``sweep``, ``plot``, ``plan``,
``filter-demo``, ``report``.

Settings come from, in decreasing precedence: command-line flags, the
``--config`` file, the ``LBL_SEED`` environment variable (seed only), built-in
defaults. The config file is flat ``key = value`` text; ``#`` starts a comment
and list values are comma separated. Keys are the ``RunConfig`` field names.
"""
import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, fields, replace
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from lbl import __version__, kernels
from lbl.checkpoint import CheckpointError, load_model, save_model
from lbl.control import ControlSetup, PlanConfig, run_closed_loop, train_controlled
from lbl.env import load_trajectory, make_env, save_trajectory
from lbl.experiment import DEFAULT_SCALES, T_TEST, T_TRAIN, cell_key, run_cell, split_data
from lbl.filtering import kalman_filter, run_particle_filter, scalar_system, simulate_scalar
from lbl.models import MODEL_KINDS, TrainConfig
from lbl.plotting import RESULT_FIELDS, ResultsFormatError, read_results, results_svg
from lbl.probe import LinearProbe

log = logging.getLogger("lbl")
DEFAULT_SEED = 111


class CliError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = DEFAULT_SEED
    scales: tuple = DEFAULT_SCALES
    t_train: int = T_TRAIN
    t_test: int = T_TEST
    models: tuple = MODEL_KINDS
    out: str = "results"
    format: str = "csv"
    workers: int = 1
    timing: bool = True
    # training overrides
    steps: int = 6000
    lr: float = 1e-3
    ema_tau: float = 0.99
    beta: float = 0.01
    gamma: float = 0.1
    vae_beta: float = 0.01
    vicreg: tuple = (25.0, 25.0, 1.0)
    # controlled environment and planning
    plan_sigma: float = 4.0
    plan_steps: int = 50
    plan_horizon: int = 5
    plan_samples: int = 256
    plan_lambda: float = 0.01
    plan_goal: tuple = (0.0, 0.0, 0.0, 0.0)
    plan_sample_rollouts: bool = True
    ctrl_episodes: int = 20
    ctrl_length: int = 300
    # particle-filter demo
    pf_particles: int = 10000
    pf_steps: int = 100
    pf_a: float = 0.9
    pf_q: float = 0.1
    pf_r: float = 0.5

    def __post_init__(self):
        s = list(self.scales)
        if not s or any(v < 0 for v in s) or any(b <= a for a, b in zip(s, s[1:])):
            raise CliError(f"scales must be non-negative and strictly increasing, got {s}")
        bad = [m for m in self.models if m not in MODEL_KINDS]
        if bad or not self.models:
            raise CliError(f"unknown models {bad}; choose from {','.join(MODEL_KINDS)}")
        if self.format not in ("csv", "json"):
            raise CliError(f"--format must be csv or json, got {self.format!r}")
        if self.workers < 1:
            raise CliError("--workers must be >= 1")

    def train_config(self):
        return TrainConfig(lr=self.lr, steps=self.steps, ema_tau=self.ema_tau, beta=self.beta,
                           gamma=self.gamma, vae_beta=self.vae_beta, vicreg=tuple(self.vicreg))

    def plan_config(self):
        return PlanConfig(horizon=self.plan_horizon, num_samples=self.plan_samples,
                          lam=self.plan_lambda, sample_rollouts=self.plan_sample_rollouts)


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _names(text):
    return tuple(v.strip().lower() for v in text.split(",") if v.strip())


_PARSERS = {f.name: {int: int, float: float, str: str, bool: _parse_bool}.get(type(f.default))
            for f in fields(RunConfig)}
_PARSERS.update(scales=_floats, vicreg=_floats, plan_goal=_floats, models=_names)


def read_config_file(path):
    """Parse a flat ``key = value`` file into typed ``RunConfig`` overrides."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _PARSERS:
                raise CliError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                out[key] = _PARSERS[key](value)
            except ValueError as exc:
                raise CliError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def resolve_config(args, environ=None):
    environ = os.environ if environ is None else environ
    values = {}
    if environ.get("LBL_SEED"):
        try:
            values["seed"] = int(environ["LBL_SEED"])
        except ValueError:
            raise CliError(f"LBL_SEED must be an integer, got {environ['LBL_SEED']!r}") from None
    if args.config:
        values.update(read_config_file(args.config))
    if args.seed is not None:
        values["seed"] = args.seed
    if args.scales:
        values["scales"] = _floats(args.scales)
    if args.models:
        values["models"] = _names(args.models)
    for name in ("out", "format", "workers"):
        if getattr(args, name) is not None:
            values[name] = getattr(args, name)
    if args.no_timing:
        values["timing"] = False
    return RunConfig(**values)


# ---------------------------------------------------------------------------
# formatting helpers
# ---------------------------------------------------------------------------

def _f(v, digits=6):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.{digits}f}"


def _result_row(cell, timing):
    r = cell.report
    return {
        "scale": repr(float(cell.sigma)),
        "snr_db": _f(cell.snr_db, 4),
        "model": cell.kind,
        "signal_r2_train": _f(r.signal_r2_train),
        "signal_r2_test": _f(r.signal_r2_test),
        "noise_r2_train": _f(r.noise_r2_train),
        "noise_r2_test": _f(r.noise_r2_test),
        "train_s": _f(r.train_s, 3) if timing else "",
        "eval_s": _f(r.eval_s, 3) if timing else "",
    }


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _config_snapshot(cfg):
    snap = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in snap.items()}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _sweep_job(job):
    cfg, sigma, kind = job
    cell = run_cell(cfg.seed, sigma, kind, cfg.train_config(), cfg.t_train, cfg.t_test)
    cell.model = None
    cell.losses = None
    return cell


def cmd_sweep(cfg, args):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    env = make_env(cfg.seed)
    jobs = [(cfg, s, k) for s in cfg.scales for k in cfg.models]
    t0 = time.perf_counter()
    if cfg.workers > 1:
        with Pool(cfg.workers) as pool:
            cells = pool.map(_sweep_job, jobs, chunksize=1)
    else:
        cells = []
        for job in jobs:
            cells.append(_sweep_job(job))
            log.info("sigma=%g %s: signal R2 test %.3f", job[1], job[2], cells[-1].report.signal_r2_test)
    rows = [_result_row(c, cfg.timing) for c in cells]
    if cfg.format == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=RESULT_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        (out / "results.csv").write_text(buf.getvalue())
    else:
        _write_json(out / "results.json", rows)
    manifest = {
        "artifact": "lbl",
        "version": __version__,
        "backend": kernels.BACKEND,
        "config": _config_snapshot(cfg),
        "env": {"seed": cfg.seed, "checksum": env.checksum()},
        "cells": [{"scale": c.sigma, "model": c.kind, "status": c.status, "error": c.error,
                   "key": list(cell_key(cfg.seed, c.sigma, c.kind))} for c in cells],
    }
    if cfg.timing:
        manifest["wall_time_s"] = round(time.perf_counter() - t0, 3)
        manifest["cell_train_s"] = [round(c.report.train_s, 3) for c in cells]
    _write_json(out / "manifest.json", manifest)
    failed = [c for c in cells if c.status != "ok"]
    for c in failed:
        log.warning("cell sigma=%g %s: %s", c.sigma, c.kind, c.error or c.status)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def cmd_generate(cfg, args):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    env = make_env(cfg.seed)
    ext = "csv" if args.traj_format == "csv" else "npz"
    for sigma in cfg.scales:
        tr, te = split_data(env, cfg.seed, sigma, cfg.t_train, cfg.t_test)
        for name, traj in (("train", tr), ("test", te)):
            save_trajectory(traj, out / f"traj_s{sigma:g}_{name}.{ext}", fmt=args.traj_format)
    _write_json(out / "env.json", {"seed": cfg.seed, "checksum": env.checksum(),
                                   "A_rot": env.A_rot.tolist(), "C": env.C.tolist(), "D_mix": env.D_mix.tolist()})
    print(f"wrote {2 * len(cfg.scales)} trajectories to {out}")
    return 0


def cmd_train(cfg, args):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.controlled:
        env = make_env(cfg.seed, controlled=True, d_u=2)
        setup = train_controlled(env, cfg.plan_sigma, cfg.seed, cfg.ctrl_episodes, cfg.ctrl_length,
                                 replace(cfg.train_config(), seed=cfg.seed), np.array(cfg.plan_goal))
        path = out / "controlled_vjepa.npz"
        save_model(setup.model, path, seed=cfg.seed,
                   extra={"probe_coef": setup.probe.coef_, "goal_signal": setup.goal_signal,
                          "env_seed": np.int64(cfg.seed), "sigma": np.float64(cfg.plan_sigma)})
        print(f"wrote {path}")
        return 0
    env = make_env(cfg.seed)
    for sigma in cfg.scales:
        data = split_data(env, cfg.seed, sigma, cfg.t_train, cfg.t_test)
        for kind in cfg.models:
            cell = run_cell(cfg.seed, sigma, kind, cfg.train_config(), env=env, data=data)
            stem = out / f"{kind}_s{sigma:g}"
            save_model(cell.model, f"{stem}.npz", seed=list(cell_key(cfg.seed, sigma, kind)))
            report = cell.report.as_dict()
            report.update(status=cell.status, error=cell.error, snr_db=cell.snr_db)
            if not cfg.timing:
                report.pop("train_s")
                report.pop("eval_s")
            _write_json(f"{stem}_probe.json", {k: (None if isinstance(v, float) and not math.isfinite(v)
                                                    else v) for k, v in report.items()})
            if cell.losses is not None:
                with open(f"{stem}_loss.csv", "w") as fh:
                    fh.write("step,loss\n")
                    fh.writelines(f"{k},{v!r}\n" for k, v in enumerate(cell.losses.tolist()))
            print(f"sigma={sigma:g} {kind}: signal R2 {_f(cell.report.signal_r2_train, 3)} / "
                  f"{_f(cell.report.signal_r2_test, 3)} ({cell.status})")
    return 0


def _results_path(cfg, args):
    return Path(args.results) if args.results else Path(cfg.out) / "results.csv"


def cmd_plot(cfg, args):
    src = _results_path(cfg, args)
    try:
        rows = read_results(src)
    except ResultsFormatError as exc:
        raise CliError(f"{src}: {exc}") from None
    dest = Path(args.output) if args.output else src.with_suffix(".svg")
    dest.write_text(results_svg(rows))
    print(f"wrote {dest}")
    return 0


def cmd_report(cfg, args):
    src = _results_path(cfg, args)
    try:
        rows = read_results(src)
    except ResultsFormatError as exc:
        raise CliError(f"{src}: {exc}") from None

    def pair(a, b):
        return " / ".join("NA" if v is None else f"{v:.3f}" for v in (a, b))

    lines = ["| Scale (SNR) | Model | Signal R2 (Tr/Te) | Noise R2 (Tr/Te) | Time (Tr/Te) |",
             "|---|---|---|---|---|"]
    for r in rows:
        snr = "inf" if r["snr_db"] is None or math.isinf(r["snr_db"]) else f"{r['snr_db']:.1f}"
        times = "NA" if r["train_s"] is None else f"{r['train_s']:.1f}s / {r['eval_s']:.2f}s"
        lines.append(f"| {r['scale']:.1f} ({snr} dB) | {r['model'].upper()} | "
                     f"{pair(r['signal_r2_train'], r['signal_r2_test'])} | "
                     f"{pair(r['noise_r2_train'], r['noise_r2_test'])} | {times} |")
    text = "\n".join(lines) + "\n"
    dest = Path(args.output) if args.output else src.with_name("report.md")
    dest.write_text(text)
    sys.stdout.write(text)
    return 0


def _load_checkpoint(args, flag="--checkpoint"):
    if not args.checkpoint:
        raise CliError(f"missing {flag} PATH (create one with `lbl train --controlled`)")
    try:
        return load_model(args.checkpoint)
    except FileNotFoundError:
        raise CliError(f"{flag} {args.checkpoint}: no such file") from None
    except CheckpointError as exc:
        raise CliError(f"{flag}: {exc}") from None


def _floatlist(a):
    return np.asarray(a, dtype=np.float64).tolist()


def cmd_plan(cfg, args):
    model, meta, extra = _load_checkpoint(args)
    if model.kind != "vjepa" or not model.d_u:
        raise CliError("--checkpoint must hold an action-conditioned vjepa model")
    env = make_env(int(extra["env_seed"]), controlled=True, d_u=model.d_u)
    probe = LinearProbe()
    probe.coef_ = extra["probe_coef"]
    goal = extra["goal_signal"]
    setup = ControlSetup(model, probe, goal, model.encode(env.C @ goal))
    sigma = float(extra["sigma"])
    pcfg = cfg.plan_config()
    mpc = run_closed_loop(env, setup, sigma, cfg.plan_steps, pcfg, cfg.seed)
    base = run_closed_loop(env, setup, sigma, cfg.plan_steps, pcfg, cfg.seed, policy="zero")
    z = model.encode(mpc.trajectory.x)
    u = mpc.trajectory.u
    predicted = model.mean_step(z[:-1], u)
    cost = float(np.sum((z[1:] - setup.goal_latent) ** 2) + pcfg.lam * np.sum(u * u))
    record = {
        "sigma": sigma,
        "seed": cfg.seed,
        "lambda": pcfg.lam,
        "horizon": pcfg.horizon,
        "num_samples": pcfg.num_samples,
        "sample_rollouts": pcfg.sample_rollouts,
        "goal_signal": _floatlist(goal),
        "goal_latent": _floatlist(setup.goal_latent),
        "actions": _floatlist(u),
        "latents": _floatlist(z),
        "predicted": _floatlist(predicted),
        "distances": _floatlist(mpc.distances),
        "cost": cost,
        "mpc_mean_distance": mpc.mean_distance,
        "zero_action_mean_distance": base.mean_distance,
    }
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "plan.json", record)
    print(f"goal distance {mpc.mean_distance:.3f} (zero-action {base.mean_distance:.3f}); wrote {out / 'plan.json'}")
    return 0


def cmd_filter_demo(cfg, args):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.checkpoint:
        model, meta, extra = _load_checkpoint(args)
        if model.kind not in ("vjepa", "bjepa"):
            raise CliError("--checkpoint must hold a vjepa or bjepa model")
        if args.trajectory:
            xs = load_trajectory(args.trajectory).x[:cfg.pf_steps]
        else:
            env = make_env(cfg.seed)
            xs = split_data(env, cfg.seed, cfg.scales[-1], cfg.t_train, cfg.t_test)[1].x[:cfg.pf_steps]
        run = run_particle_filter(model, xs, cfg.pf_particles, np.random.default_rng([cfg.seed, 0xF17]))
        # Kalman columns: linear-Gaussian surrogate. q(z|x) / N(z; 0, I) with
        # q = N(mu, v), v < 1, is N(z; mu / (1 - v), v / (1 - v)) up to a constant;
        # variances are replaced by their averages over the sequence
        q = model.target(xs)
        v = q.var.mean(axis=0)
        if np.any(v >= 1.0):
            raise CliError("target variance >= 1: the pseudo-likelihood has no Gaussian surrogate")
        fz, _ = model.mean_jacobians()
        qv = model.predict(model.encode(xs)).var.mean(axis=0)
        km, _ = kalman_filter(fz, np.diag(qv), np.eye(model.d_z), np.diag(v / (1.0 - v)),
                              q.mean / (1.0 - v), np.zeros(model.d_z), np.eye(model.d_z))
    else:
        model = scalar_system(cfg.pf_a, cfg.pf_q, cfg.pf_r)
        _, x = simulate_scalar(cfg.pf_a, cfg.pf_q, cfg.pf_r, cfg.pf_steps, np.random.default_rng([cfg.seed, 0xF11]))
        xs = x[:, None]
        run = run_particle_filter(model, xs, cfg.pf_particles, np.random.default_rng([cfg.seed, 0xF17]))
        km, _ = kalman_filter(cfg.pf_a, cfg.pf_q, 1.0, cfg.pf_r, xs, 0.0, 1.0)
    d = run.means.shape[1]
    header = ["t", *(f"pf_mean_{i}" for i in range(d)), *(f"kf_mean_{i}" for i in range(d)), "ess"]
    lines = [",".join(header)]
    for t in range(len(run.means)):
        vals = [*run.means[t], *km[t], run.ess[t]]
        lines.append(",".join([str(t), *(repr(float(v)) for v in vals)]))
    dest = out / "filter.csv"
    dest.write_text("\n".join(lines) + "\n")
    mad = float(np.mean(np.abs(run.means - km)))
    print(f"mean |pf - kf| = {mad:.4f}; wrote {dest}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "plot": cmd_plot,
    "plan": cmd_plan,
    "filter-demo": cmd_filter_demo,
    "report": cmd_report,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="master seed (falls back to $LBL_SEED, then 111)")
    common.add_argument("--scales", metavar="a,b,...", help="noise scales sigma")
    common.add_argument("--models", metavar="list", help=f"comma list from {','.join(MODEL_KINDS)}")
    common.add_argument("--out", metavar="DIR", help="output directory (default: results)")
    common.add_argument("--format", choices=("csv", "json"), help="results format")
    common.add_argument("--no-timing", action="store_true", help="omit wall times for byte-stable output")
    common.add_argument("--workers", type=int, help="parallel sweep workers")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lbl", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sweep", parents=[common], help="train and probe every (scale, model) cell")
    g = sub.add_parser("generate", parents=[common], help="write train/test trajectories")
    g.add_argument("--traj-format", choices=("csv", "npz"), default="csv")
    t = sub.add_parser("train", parents=[common], help="train models and save checkpoints")
    t.add_argument("--controlled", action="store_true", help="action-conditioned VJEPA for planning")
    for name in ("plot", "report"):
        p = sub.add_parser(name, parents=[common], help=f"{name} a results CSV")
        p.add_argument("results", nargs="?", help="results CSV (default: OUT/results.csv)")
        p.add_argument("-o", "--output", metavar="PATH")
    p = sub.add_parser("plan", parents=[common], help="closed-loop VJEPA-MPC from a checkpoint")
    p.add_argument("--checkpoint", metavar="PATH")
    f = sub.add_parser("filter-demo", parents=[common], help="particle filter versus Kalman filter")
    f.add_argument("--checkpoint", metavar="PATH")
    f.add_argument("--trajectory", metavar="PATH", help="observations to filter with --checkpoint")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except CliError as exc:
        print(f"lbl {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
