"""Command-line entry point: ``fhcompress <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .harness import (SEED_ENV_VAR, ExperimentConfig, default_seed, evaluate, run_fixed,
                      run_reference)
from .oracles import run_suite
from .traffic import dump_trace, init_traffic
from .train import train


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help=f"base seed (default: ${SEED_ENV_VAR} or 0)")
    common.add_argument("--config", default="default",
                        help="profile name or path to an INI experiment file (default: default)")
    common.add_argument("--out", default=None, help="output directory (default: config out_dir)")
    common.add_argument("-v", "--verbose", action="store_true")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="fhcompress",
                                     description="Constrained RL for fronthaul compression control.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train an agent, write metrics and checkpoint")
    p.add_argument("--agent", choices=("dqn", "sac"))
    p.add_argument("--steps", type=int)
    p.add_argument("--update-every", type=int)
    p.add_argument("--eval-slots", type=int, default=0,
                   help="evaluate the trained agent on this many slots afterwards (0 = skip)")

    p = sub.add_parser("evaluate", parents=[common], help="greedy evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--slots", type=int)
    p.add_argument("--seeds", type=int, nargs="+")

    p = sub.add_parser("baseline", parents=[common], help="evaluate the reference or a fixed config")
    p.add_argument("--fixed", metavar="Q,B,R", help="physical (q, b_w, r_w) instead of the reference")
    p.add_argument("--slots", type=int)
    p.add_argument("--seeds", type=int, nargs="+")

    p = sub.add_parser("oracle-suite", parents=[common], help="run the tabular property corpus")
    p.add_argument("--quick", action="store_true", help="smaller corpora and step budgets")

    p = sub.add_parser("traffic-trace", parents=[common], help="dump a PRB trace to CSV")
    p.add_argument("--slots", type=int, default=1000)

    p = sub.add_parser("sweep", parents=[common], help="train and evaluate several seeds in parallel")
    p.add_argument("--seeds", type=int, nargs="+", required=True)
    p.add_argument("--workers", type=int, default=2)
    p.add_argument("--agent", choices=("dqn", "sac"))
    p.add_argument("--steps", type=int)
    p.add_argument("--eval-slots", type=int)

    p = sub.add_parser("write-config", parents=[common], help="write the resolved config as INI")
    return parser


def _resolve(args) -> tuple[ExperimentConfig, int, Path]:
    cfg = ExperimentConfig.load(args.config)
    seed = args.seed if args.seed is not None else default_seed()
    updates = {}
    for name, field_name in (("agent", "agent"), ("steps", "train_steps"),
                             ("update_every", "update_every")):
        value = getattr(args, name, None)
        if value is not None:
            updates[field_name] = value
    if getattr(args, "slots", None) is not None:
        updates["eval_slots"] = args.slots
    if getattr(args, "eval_slots", None):
        updates["eval_slots"] = args.eval_slots
    seeds = getattr(args, "seeds", None)
    updates["seeds"] = tuple(seeds) if seeds else (seed,)
    cfg = replace(cfg, **updates)
    out = Path(args.out if args.out is not None else cfg.out_dir)
    return cfg, seed, out


def cmd_train(args) -> int:
    cfg, seed, out = _resolve(args)
    if cfg.agent not in ("dqn", "sac"):
        raise ValueError(f"agent {cfg.agent!r} is not trainable; use the baseline command")
    cfg.validate()
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.ini")
    env_cfg = cfg.env_config()
    result = train(env_cfg, cfg.train_config(seed), out)
    print(f"metrics: {result.metrics_path}\ncheckpoint: {result.checkpoint}")
    if args.eval_slots:
        report = evaluate(result.checkpoint, env_cfg, cfg.eval_slots, cfg.seeds)
        path = report.to_csv(out / "report.csv")
        print(report.summary())
        print(f"report: {path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg, _, out = _resolve(args)
    cfg.validate()
    out.mkdir(parents=True, exist_ok=True)
    env_cfg = cfg.env_config()
    report = evaluate(args.checkpoint, env_cfg, cfg.eval_slots, cfg.seeds)
    path = report.to_csv(out / "report.csv")
    print(report.summary())
    print(f"report: {path}")
    return 0


def cmd_baseline(args) -> int:
    cfg, _, out = _resolve(args)
    if args.fixed:
        cfg = replace(cfg, agent=f"fixed:{args.fixed}")
    elif cfg.agent in ("dqn", "sac"):
        cfg = replace(cfg, agent="reference")
    cfg.validate()
    out.mkdir(parents=True, exist_ok=True)
    env_cfg = cfg.env_config()
    reference = run_reference(env_cfg, cfg.eval_slots, cfg.seeds)
    if cfg.agent == "reference":
        report, name = reference, "reference.csv"
    else:
        report = run_fixed(cfg.fixed_config(), env_cfg, cfg.eval_slots, cfg.seeds,
                           label=cfg.agent).with_gain(reference)
        name = "fixed.csv"
    path = report.to_csv(out / name)
    print(report.summary())
    print(f"report: {path}")
    return 0


def cmd_oracle_suite(args) -> int:
    _, seed, _ = _resolve(args)
    results = run_suite(seed, quick=args.quick)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    return 0 if all(r.passed for r in results) else 1


def cmd_traffic_trace(args) -> int:
    cfg, seed, out = _resolve(args)
    cfg.validate()
    if args.slots < 1:
        raise ValueError("--slots must be positive")
    out.mkdir(parents=True, exist_ok=True)
    params = cfg.params
    state = init_traffic(params, cfg.traffic_bounds, seed=seed, sigma=cfg.sigma)
    path = out / "traffic.csv"
    dump_trace(path, params, state, args.slots)
    print(f"trace: {path}")
    return 0


def _sweep_one(cfg: ExperimentConfig, seed: int, out: Path):
    run_dir = out / f"seed_{seed}"
    env_cfg = cfg.env_config()
    result = train(env_cfg, cfg.train_config(seed), run_dir)
    report = evaluate(result.checkpoint, env_cfg, cfg.eval_slots, (seed,))
    report.to_csv(run_dir / "report.csv")
    return seed, report


def cmd_sweep(args) -> int:
    cfg, _, out = _resolve(args)
    if cfg.agent not in ("dqn", "sac"):
        raise ValueError(f"agent {cfg.agent!r} is not trainable")
    cfg.validate()
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.ini")
    if args.workers < 1:
        raise ValueError("--workers must be positive")
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        futures = [pool.submit(_sweep_one, cfg, s, out) for s in cfg.seeds]
        results = [f.result() for f in futures]
    with open(out / "sweep.csv", "w") as fh:
        fh.write("seed,mean_rho,p_latency_violation,p_loss,mid_gain_pct\n")
        for seed, rep in results:
            fh.write(f"{seed},{rep.overall_rho!r},{rep.overall_p_latency!r},"
                     f"{rep.overall_p_loss!r},{rep.mean_gain()!r}\n")
            print(f"seed {seed}: {rep.summary()}")
    return 0


def cmd_write_config(args) -> int:
    cfg, _, out = _resolve(args)
    cfg.validate()
    out.mkdir(parents=True, exist_ok=True)
    print(f"config: {cfg.save(out / 'config.ini')}")
    return 0


COMMANDS = {
    "train": cmd_train, "evaluate": cmd_evaluate, "baseline": cmd_baseline,
    "oracle-suite": cmd_oracle_suite, "traffic-trace": cmd_traffic_trace, "sweep": cmd_sweep,
    "write-config": cmd_write_config,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # unknown flags exit 2 with usage
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"fhcompress {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
