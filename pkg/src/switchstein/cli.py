"""Command-line front end.

    switchstein converge      --config run.yaml [--scheme S] [--seed N] [--out DIR]
    switchstein chain-stats   --config run.yaml
    switchstein simulate      --config run.yaml [--h H] [--dump-path]
    switchstein validate-model --config run.yaml

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

import argparse
import os
import platform
import re
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import yaml

from . import __version__
from . import report as rpt
from .chain import sample_chain_path, validate_generator
from .convergence import ExperimentPlan, run_chain_statistics, run_strong_error
from .errors import ConfigError, GeneratorError, PlanInvalid, StepTooLarge
from .model import CATALOG, get_problem, validate_problem
from .noise import build_merged_grid, sample_noise
from .rng import make_stream, path_streams
from .scheme import SCHEMES, check_step_size, scheme_name, simulate_trajectory

THREADS_ENV = "SWITCHSTEIN_THREADS"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


@dataclass
class ExperimentConfig:
    """Flat run configuration; every field maps to one YAML key."""

    problem: str = "p1_switching_gbm"
    # keyword overrides for the catalog builder, e.g. {"s": 0.0} for p3
    params: dict = None
    generator: list = None
    horizon: float = 1.0
    steps: list = field(default_factory=lambda: [2.0**-k for k in range(4, 10)])
    n_paths: int = 2000
    seed: int = 1
    schemes: list = field(default_factory=lambda: ["milstein", "euler"])
    reference: str = "auto"
    h_ref: float = None
    output: str = "switchstein-out"
    initial_regime: int = 0
    n_intervals: int = 1_000_000
    probes: int = 1000
    batch_size: int = None
    plots: bool = True
    timings: bool = False

    def problem_instance(self):
        if self.problem not in CATALOG:
            raise ConfigError(f"unknown problem {self.problem!r}; known problems: {', '.join(sorted(CATALOG))}")
        params = self.params or {}
        if not isinstance(params, dict):
            raise ConfigError("params must be a mapping of builder keywords")
        try:
            p = get_problem(self.problem, horizon=self.horizon, **params)
        except TypeError as exc:
            raise ConfigError(f"bad params for {self.problem}: {exc}") from None
        if self.generator is not None:
            try:
                p = p.with_generator(self.generator)
            except GeneratorError:
                raise
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if not 0 <= self.initial_regime < p.regimes:
            raise ConfigError(f"initial_regime {self.initial_regime} outside 0..{p.regimes - 1}")
        return replace(p, initial_regime=int(self.initial_regime))


_POWER = re.compile(r"^\s*2\s*(\^|\*\*)\s*(-?\d+)\s*$")


def _step_value(v):
    if isinstance(v, str):
        m = _POWER.match(v)
        if m:
            return 2.0 ** int(m.group(2))
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"cannot read step {v!r}; use a number or 2^-k") from None
    return float(v)


def load_config(path=None, overrides=None):
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must be a mapping of keys to values")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cfg = ExperimentConfig(**data)
    try:
        steps = cfg.steps if isinstance(cfg.steps, (list, tuple)) else [cfg.steps]
        cfg.steps = [_step_value(h) for h in steps]
        cfg.schemes = [scheme_name(s) for s in ([cfg.schemes] if isinstance(cfg.schemes, str) else cfg.schemes)]
        cfg.horizon = float(cfg.horizon)
        cfg.n_paths, cfg.seed, cfg.n_intervals, cfg.probes = (
            int(cfg.n_paths), int(cfg.seed), int(cfg.n_intervals), int(cfg.probes))
        if cfg.h_ref is not None:
            cfg.h_ref = _step_value(cfg.h_ref)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def thread_count():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def write_manifest(cfg, command, out_dir, extra=None):
    """Everything needed to rerun: the resolved config, seed and versions."""
    import matplotlib
    import scipy

    manifest = {
        "command": command,
        "config": asdict(cfg),
        "seed": cfg.seed,
        "versions": {
            "switchstein": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__,
        },
    }
    manifest.update(extra or {})
    rpt.write_json(manifest, os.path.join(out_dir, "manifest.json"))


def _out_dir(cfg):
    os.makedirs(cfg.output, exist_ok=True)
    return cfg.output


def cmd_converge(cfg):
    p = cfg.problem_instance()
    plan = ExperimentPlan(p, cfg.steps, cfg.n_paths, cfg.seed, tuple(cfg.schemes), cfg.reference, cfg.h_ref,
                          cfg.batch_size, thread_count())
    for note in plan.validate():
        print(f"warning: {note}", file=sys.stderr)
    result = run_strong_error(plan)
    out = _out_dir(cfg)
    rpt.write_convergence_csv(result, os.path.join(out, "convergence.csv"), timings=cfg.timings)
    rpt.write_json(result.summary(), os.path.join(out, "summary.json"))
    rpt.write_loglog_data(result, out)
    if cfg.plots:
        rpt.plot_convergence(result, os.path.join(out, "convergence.png"))
    write_manifest(cfg, "converge", out, {"timings": result.timings, "threads": plan.threads})
    for scheme, fit in result.fits.items():
        print(f"{scheme:18s} slope {fit.slope:.4f}  95% CI [{fit.ci_low:.4f}, {fit.ci_high:.4f}]")
    for line in result.diagnostics:
        print(f"diagnostic: {line}", file=sys.stderr)
    return EXIT_OK


def cmd_chain_stats(cfg):
    if cfg.generator is not None:
        gen = validate_generator(cfg.generator)
    else:
        gen = cfg.problem_instance().generator
    reports = [run_chain_statistics(gen, h, cfg.n_intervals, cfg.seed, cfg.initial_regime) for h in cfg.steps]
    out = _out_dir(cfg)
    rpt.write_chain_stats_csv(reports, os.path.join(out, "chain_stats.csv"))
    if cfg.plots:
        for k, r in enumerate(reports):
            rpt.plot_chain_stats(r, os.path.join(out, f"chain_stats_{k}.png"))
    write_manifest(cfg, "chain-stats", out)
    for r in reports:
        for row in r.rows:
            flag = "ok" if row.passed else "VIOLATED"
            print(f"h={r.h:<10g} {row.quantity:9s} {row.empirical:.6g} <= {row.bound:.6g} + {row.slack:.3g}  {flag}")
    return EXIT_OK


def cmd_simulate(cfg, dump_path=False):
    if len(cfg.steps) != 1:
        raise ConfigError(f"simulate needs exactly one step size, got {len(cfg.steps)}; pass --h")
    h = cfg.steps[0]
    p = cfg.problem_instance()
    check_step_size(h, p.generator.max_rate)
    h_ref = cfg.h_ref if cfg.h_ref is not None else h
    chain_s, noise_s, init_s = path_streams(cfg.seed, 0)
    chain = sample_chain_path(p.generator, p.initial_regime, p.horizon, chain_s)
    noise = sample_noise(build_merged_grid(p.horizon, h_ref, chain), p.dim_w, noise_s)
    traj = simulate_trajectory(p, cfg.schemes[0], h, chain, noise, p.sample_initial(init_s))
    out = _out_dir(cfg)
    rpt.write_trajectory_csv(traj, os.path.join(out, "trajectory.csv"))
    if dump_path:
        rpt.write_jumps_csv(chain, os.path.join(out, "jumps.csv"))
        noise.dump_csv(os.path.join(out, "brownian.csv"))
    if cfg.plots:
        rpt.plot_trajectory(traj, os.path.join(out, "trajectory.png"))
    write_manifest(cfg, "simulate", out)
    print(f"{traj.scheme}: {traj.values.shape[0] - 1} steps, {chain.n_jumps} chain jumps, Y(T) = {traj.values[-1]}")
    return EXIT_OK


def cmd_validate_model(cfg):
    p = cfg.problem_instance()
    result = validate_problem(p, cfg.probes, make_stream(cfg.seed, 0, 4))
    out = _out_dir(cfg)
    rpt.write_json(
        {"problem": result.problem, "probes": result.probes, "box": result.box, "passed": result.passed,
         "checks": {k: {"worst": c.worst, "bound": c.bound, "passed": c.passed} for k, c in result.checks.items()}},
        os.path.join(out, "validation.json"),
    )
    write_manifest(cfg, "validate-model", out)
    for name, worst, bound, ok in result.rows():
        print(f"{name:30s} worst {worst:12.6g}  bound {bound:10.6g}  {'ok' if ok else 'FAIL'}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="switchstein", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("converge", "strong-error convergence experiment"),
                       ("chain-stats", "jump-count statistics of the switching chain"),
                       ("simulate", "simulate and dump one trajectory"),
                       ("validate-model", "probe model assumptions")):
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument("--config", metavar="PATH", help="YAML config file")
        cmd.add_argument("--seed", type=int)
        cmd.add_argument("--out", metavar="DIR", help="output directory")
        cmd.add_argument("--problem", choices=sorted(CATALOG))
        cmd.add_argument("--no-plots", action="store_true")
        if name in ("converge", "simulate"):
            cmd.add_argument("--scheme", choices=[s.replace("_", "-") for s in SCHEMES])
        if name == "converge":
            cmd.add_argument("--n-paths", type=int)
            cmd.add_argument("--timings", action="store_true", help="fill the wall_ms CSV column")
        if name == "simulate":
            cmd.add_argument("--h", type=str, help="step size (number or 2^-k)")
            cmd.add_argument("--dump-path", action="store_true",
                             help="also write the chain jump list and the Brownian path")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "output": args.out, "problem": args.problem}
    if getattr(args, "scheme", None):
        overrides["schemes"] = [args.scheme]
    if getattr(args, "n_paths", None):
        overrides["n_paths"] = args.n_paths
    if getattr(args, "timings", False):
        overrides["timings"] = True
    if getattr(args, "h", None):
        overrides["steps"] = [args.h]
    if args.no_plots:
        overrides["plots"] = False
    started = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            cfg = load_config(args.config, overrides)
            if args.command == "converge":
                code = cmd_converge(cfg)
            elif args.command == "chain-stats":
                code = cmd_chain_stats(cfg)
            elif args.command == "simulate":
                code = cmd_simulate(cfg, args.dump_path)
            else:
                code = cmd_validate_model(cfg)
    except (ConfigError, PlanInvalid, GeneratorError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StepTooLarge as exc:
        print(f"config error: step-size constraint h < 1/q violated: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit code
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"done in {time.perf_counter() - started:.1f}s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
