"""Command-line front end: solve, sweep, calibrate, metrics.

Every run writes CSV outputs plus a manifest.json listing the resolved
configuration, the seed, and a sha256 hash of each output file.  All
randomness flows from the single --seed value, so equal invocations
produce byte-identical CSVs (timestamps live only in the manifest).

Exit codes: 0 success, 2 config error, 3 solver non-convergence
(outputs still written), 4 I/O failure.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .calibration import (calibrate_lambda, generate_behavior_data,
                          read_behavior_csv, write_behavior_csv,
                          write_calibration_csv)
from .config_io import ConfigError, load_game, read_policy_csv, write_policy_csv
from .continuous import fit_mixture, gibbs_density_on_grid, quadratic_q
from .dynamics import (EvoQREConfig, TemperatureSchedule, TwoTimescaleSchedule,
                       integrate_errd, run_evoqre)
from .games import (GameValidationError, JointPolicy, bellman_residual,
                    evaluate_joint_q)
from .metrics import make_report, write_diagnostics_csv
from .oracle import solve_qre_fixed_point
from .scenarios import (MATRIX_BUILDERS, TRAFFIC_SCENARIOS, ScenarioSpec,
                        build_scenario, lambda_sweep, write_sweep_csv)

OUT_DIR_ENV = "QRELAB_OUT_DIR"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_IO = 4

TRACE_HEADER = ["k", "lambda", "alpha", "eta_pi", "eta_q", "qre_gap",
                "kl_to_oracle", "bellman_residual", "displacement"]


def _write_trace_csv(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for row in trace:
            writer.writerow([row.k] + [repr(float(v)) for v in (
                row.lam, row.alpha, row.eta_pi, row.eta_q, row.qre_gap,
                row.kl_to_oracle, row.bellman_residual, row.displacement)])


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class _Manifest:
    def __init__(self, out_dir, args):
        self.out_dir = out_dir
        self.config = {k: v for k, v in sorted(vars(args).items())
                       if k != "func"}
        self.started = time.time()
        self.files = []

    def add(self, path):
        self.files.append(path)
        return path

    def write(self):
        payload = {
            "version": __version__,
            "config": self.config,
            "seed": self.config.get("seed"),
            "started": self.started,
            "finished": time.time(),
            "outputs": {os.path.basename(p): _sha256(p) for p in self.files},
        }
        with open(os.path.join(self.out_dir, "manifest.json"), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)


def _resolve_out_dir(args):
    out = args.out_dir or os.environ.get(OUT_DIR_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _resolve_game(args):
    """Game plus the ScenarioSpec when one was built (None otherwise)."""
    if getattr(args, "game", None):
        return load_game(args.game), None
    name = getattr(args, "scenario", None)
    if name in MATRIX_BUILDERS:
        return MATRIX_BUILDERS[name](), None
    if name in TRAFFIC_SCENARIOS:
        spec = ScenarioSpec(scenario=name,
                            sigma=getattr(args, "sigma_perturb", 0.0),
                            sigma_seed=getattr(args, "seed", 0))
        return build_scenario(spec), spec
    raise ConfigError(
        "need --game PATH or --scenario from "
        f"{sorted(MATRIX_BUILDERS) + list(TRAFFIC_SCENARIOS)}")


def _parse_grid(text):
    try:
        grid = [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad lambda grid {text!r}") from exc
    if not grid:
        raise ConfigError("lambda grid is empty")
    return grid


def cmd_solve(args):
    out_dir = _resolve_out_dir(args)
    manifest = _Manifest(out_dir, args)
    if args.continuous:
        return _solve_continuous(args, out_dir, manifest)
    game, _ = _resolve_game(args)
    lam = args.lam
    if lam < 0.0:
        raise ConfigError("lambda must be nonnegative")

    if args.mode == "ode":
        if lam <= 0.0:
            raise ConfigError("ode mode needs lambda > 0")
        traj = integrate_errd(game, JointPolicy.uniform(game), tau=1.0 / lam,
                              dt=args.dt, steps=args.iters,
                              record_every=max(1, args.iters // 200))
        final = traj[-1]
        policy = final.policy
        converged = True
        trace = []
    else:
        config = EvoQREConfig(mode=args.mode,
                              retrace_lambda=args.retrace_lambda,
                              record_every=max(1, args.iters // 1000))
        result = run_evoqre(game, TwoTimescaleSchedule(),
                            TemperatureSchedule.fixed(lam), args.iters,
                            seed=args.seed, config=config)
        policy = result.state.policy
        converged = result.converged
        trace = result.trace

    q = evaluate_joint_q(game, policy, tol=1e-10)
    residual = bellman_residual(game, policy, q)
    write_policy_csv(manifest.add(os.path.join(out_dir, "policy.csv")),
                     policy, lam, residual)
    _write_trace_csv(manifest.add(os.path.join(out_dir, "trace.csv")), trace)
    report = make_report(game, policy, lam, q=q)
    write_diagnostics_csv(
        manifest.add(os.path.join(out_dir, "diagnostics.csv")), [report])
    manifest.write()
    return EXIT_OK if converged else EXIT_NO_CONVERGENCE


def _solve_continuous(args, out_dir, manifest):
    """1-D quadratic benchmark: fit a mixture and dump its density grid."""
    if args.lam <= 0.0:
        raise ConfigError("continuous benchmark needs lambda > 0")
    q = quadratic_q(center=0.3, curvature=4.0, lo=-2.0, hi=2.0, dim=1)
    alpha = 1.0 / args.lam
    mix = fit_mixture(q, alpha, n_components=args.mixture_m,
                      iters=min(args.iters, 200), seed=args.seed)
    pts, exact, cell = gibbs_density_on_grid(q, args.lam, 201)
    approx = mix.density(pts)
    approx /= approx.sum() * cell
    path = manifest.add(os.path.join(out_dir, "density.csv"))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "gibbs", "mixture"])
        for p, g, a in zip(pts, exact, approx):
            writer.writerow([repr(float(p[0])), repr(float(g)), repr(float(a))])
    manifest.write()
    return EXIT_OK


def cmd_sweep(args):
    out_dir = _resolve_out_dir(args)
    manifest = _Manifest(out_dir, args)
    if args.scenario not in TRAFFIC_SCENARIOS:
        raise ConfigError(f"sweep needs a traffic scenario {TRAFFIC_SCENARIOS}")
    spec = ScenarioSpec(scenario=args.scenario, sigma=args.sigma_perturb,
                        sigma_seed=args.seed)
    rows = lambda_sweep(spec, _parse_grid(args.lambda_grid), iters=args.iters,
                        seed=args.seed, episodes=args.episodes,
                        horizon=args.horizon)
    write_sweep_csv(manifest.add(os.path.join(out_dir, "sweep.csv")), rows)
    manifest.write()
    return EXIT_OK if all(r.error is None for r in rows) else EXIT_NO_CONVERGENCE


def cmd_calibrate(args):
    out_dir = _resolve_out_dir(args)
    manifest = _Manifest(out_dir, args)
    game, _ = _resolve_game(args)
    if args.data:
        data = read_behavior_csv(args.data)
    else:
        sol = solve_qre_fixed_point(game, args.lambda_true)
        if not sol.converged:
            raise ConfigError("synthetic generator: oracle solve failed")
        data = generate_behavior_data(game, sol.policy, args.observations,
                                      seed=args.seed)
        write_behavior_csv(
            manifest.add(os.path.join(out_dir, "behavior.csv")), data)
    result = calibrate_lambda(game, data, grid=_parse_grid(args.lambda_grid),
                              seed=args.seed)
    write_calibration_csv(
        manifest.add(os.path.join(out_dir, "calibration.csv")), result)
    manifest.write()
    return EXIT_OK


def cmd_metrics(args):
    out_dir = _resolve_out_dir(args)
    manifest = _Manifest(out_dir, args)
    game, _ = _resolve_game(args)
    policy, lam = read_policy_csv(args.policy, game)
    lam = args.lam if args.lam is not None else lam
    report = make_report(game, policy, lam, mu_pairs=args.mu_pairs,
                         seed=args.seed)
    write_diagnostics_csv(
        manifest.add(os.path.join(out_dir, "diagnostics.csv")), [report])
    manifest.write()
    return EXIT_OK


def _add_game_flags(p):
    p.add_argument("--game", help="path to a YAML game config")
    p.add_argument("--scenario", help="built-in game name")
    p.add_argument("--sigma-perturb", type=float, default=0.0,
                   help="reward perturbation scale for traffic scenarios")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=None,
                   help=f"output directory (default ${OUT_DIR_ENV} or .)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qrelab",
        description="Logit-equilibrium solvers and diagnostics for Markov games")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="compute an equilibrium policy")
    _add_game_flags(p)
    p.add_argument("--lambda", dest="lam", type=float, default=2.0)
    p.add_argument("--mode", choices=["exact", "sampled", "ode"], default="exact")
    p.add_argument("--iters", type=int, default=5000)
    p.add_argument("--dt", type=float, default=0.05, help="ode step size")
    p.add_argument("--retrace-lambda", type=float, default=0.9)
    p.add_argument("--continuous", action="store_true",
                   help="run the 1-D continuous-action benchmark instead")
    p.add_argument("--mixture-m", dest="mixture_m", type=int, default=3)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="rationality sweep on a traffic scenario")
    _add_game_flags(p)
    p.add_argument("--lambda-grid", default="2,5,10,15")
    p.add_argument("--iters", type=int, default=4000)
    p.add_argument("--episodes", type=int, default=400)
    p.add_argument("--horizon", type=int, default=40)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", help="fit lambda to behavior data")
    _add_game_flags(p)
    p.add_argument("--data", help="behavior CSV (omit to generate synthetic)")
    p.add_argument("--lambda-true", dest="lambda_true", type=float, default=5.0)
    p.add_argument("--observations", type=int, default=10_000)
    p.add_argument("--lambda-grid", default="1,2,5,8,10,15,20")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("metrics", help="recompute diagnostics for a stored policy")
    _add_game_flags(p)
    p.add_argument("--policy", required=True, help="policy CSV to evaluate")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--mu-pairs", type=int, default=0,
                   help="policy pairs for the monotonicity residual (0 = skip)")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, GameValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
