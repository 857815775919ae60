"""Command-line entry point.

Exit codes: 0 on success, 2 on configuration or usage errors, 1 on runtime
errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from fedcomp import baselines, info_model
from fedcomp.errors import CheckpointError, ConfigError, NumericalStateError, ValidityError
from fedcomp.harness import seeding
from fedcomp.harness.config import ExperimentConfig
from fedcomp.harness.runner import build_env, run_to_directory, run_many

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _int_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fedcomp", description="Federated multi-agent actor-critic for CoMP clustering.")
    p.add_argument("--seed", type=int, default=None, help="override the configured master seed")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    run = sub.add_parser("run", help="train and write metrics, sync events and a final checkpoint")
    run.add_argument("--config", help="JSON experiment config (defaults when omitted)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--resume", help="checkpoint to start from")

    bound = sub.add_parser("bound", help="informational-model bounds over a K_star x F grid")
    bound.add_argument("--params", help="JSON info-model parameters, optionally with k_grid and f_values")
    bound.add_argument("--out", default="-", help="CSV path, '-' for stdout (default)")

    sweep = sub.add_parser("sweep-fed", help="train once per federation period")
    sweep.add_argument("--config", help="JSON experiment config")
    sweep.add_argument("--f-values", type=_int_list, required=True, help="comma-separated periods")
    sweep.add_argument("--out", default="-", help="CSV path, '-' for stdout (default)")

    base = sub.add_parser("baseline", help="evaluate a non-learning clustering policy on random worlds")
    base.add_argument("--kind", choices=["fixed", "greedy", "random"], required=True)
    base.add_argument("--worlds", type=int, default=20)
    base.add_argument("--config", help="JSON experiment config")

    sub.add_parser("gradcheck", help="finite-difference check of the approximator gradients")
    return p


def _config(path: Optional[str], seed: Optional[int]) -> ExperimentConfig:
    cfg = ExperimentConfig() if path is None else ExperimentConfig.load(path)
    return cfg if seed is None else cfg.replace(seed=seed)


def _open_out(path: str):
    return sys.stdout if path == "-" else open(path, "w", newline="")


def cmd_run(args) -> int:
    from fedcomp.harness.checkpoint import load_checkpoint

    cfg = _config(args.config, args.seed)
    learner = None
    if args.resume:
        learner = load_checkpoint(args.resume, cfg).to_learner()
    result = run_to_directory(cfg, args.out, learner)
    print(f"ran {result.steps_run} steps; final mean reward {result.final_mean():.4f}; output in {args.out}")
    return EXIT_OK


def cmd_bound(args) -> int:
    data = {}
    if args.params:
        try:
            data = json.loads(Path(args.params).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read parameters {args.params}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("parameter file must hold a JSON object")
    data = dict(data)
    k_grid = data.pop("k_grid", None)
    f_values = data.pop("f_values", [1, 10, 100])
    params = info_model.InfoParams.from_dict({**vars(info_model.reference_params()), **data})
    if k_grid is None:
        k_grid = info_model.reference_k_grid()
    rows = info_model.sweep(params, k_grid, f_values)
    out = _open_out(args.out)
    try:
        out.write(info_model.rows_to_csv(rows))
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args.config, args.seed)
    cfgs = [cfg.replace(federation=dataclasses.replace(cfg.federation, period_F=f)) for f in args.f_values]
    results = run_many(cfgs)
    finals = [r.final_mean() for r in results]
    out = _open_out(args.out)
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["F", "final_mean_reward", "n_syncs"])
        for f, v, r in zip(args.f_values, finals, results):
            w.writerow([f, repr(v), len(r.sync_log.events)])
    finally:
        if out is not sys.stdout:
            out.close()
    lo, hi = min(finals), max(finals)
    spread = (hi - lo) / abs(hi) if hi else 0.0
    print(f"final rewards within {100 * spread:.1f}% of each other", file=sys.stderr)
    return EXIT_OK


def cmd_baseline(args) -> int:
    if args.worlds < 1:
        raise ConfigError("--worlds must be >= 1")
    cfg = _config(args.config, args.seed)
    env = build_env(cfg)
    world_rng = seeding.generator(cfg.seed, seeding.BASELINE, 0)
    pick_rng = seeding.generator(cfg.seed, seeding.BASELINE, 1)
    values = []
    for _ in range(args.worlds):
        world = env.reset(world_rng)
        a = baselines.baseline_assignment(
            args.kind, world, env.topo, env.ch, env.traffic, env.reward_mode, rng=pick_rng
        )
        values.append(env.global_reward(world, a))
    values = np.asarray(values)
    print(json.dumps({"kind": args.kind, "worlds": args.worlds, "mean_reward": values.mean(), "std_reward": values.std()}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from fedcomp.marl.approximators import Approximator
    from fedcomp.marl.gradcheck import run_grad_check

    rng = seeding.generator(0 if args.seed is None else args.seed, seeding.INIT)
    ok = True
    for approx in (Approximator.linear(17, 13), Approximator.mlp(17, 13, (32, 32))):
        res = run_grad_check(approx, rng)
        ok &= res.passed
        print(f"{res.kind}: max relative error {res.max_error:.3e} (tolerance {res.tolerance:.0e}) {'ok' if res.passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {"run": cmd_run, "bound": cmd_bound, "sweep-fed": cmd_sweep, "baseline": cmd_baseline, "gradcheck": cmd_gradcheck}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_CONFIG
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValidityError, NumericalStateError, CheckpointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
