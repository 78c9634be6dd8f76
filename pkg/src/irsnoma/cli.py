"""Command-line experiment runner: ``train``, ``evaluate``, ``sweep`` and ``oracle``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import drl
from .baselines import BudgetExceeded, grid_oracle
from .config import SCHEMES, ConfigError, ExperimentConfig, load_config
from .environment import IrsNomaEnv
from .neural import CheckpointError

log = logging.getLogger("irsnoma")

OUT_ENV = "IRSNOMA_OUT"
SWEEP_COLUMNS = ("axis", "value", "scheme", "seed", "sum_rate", "see", "jain", "objective")
SWEEP_AXES = ("power", "mirrors", "users")
EXIT_CONFIG, EXIT_RUNTIME = 2, 3


def write_csv(path, columns: Sequence[str], rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else v


def run_id(cfg: ExperimentConfig, scheme: str) -> str:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True)
    return f"{scheme}-{zlib.crc32(canonical.encode()):08x}"


def out_root(arg: Optional[str], cfg: ExperimentConfig) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or cfg.run.out)


def resolve(args) -> ExperimentConfig:
    overrides = list(args.set or [])
    cfg = load_config(args.config, overrides)
    scheme = getattr(args, "scheme", None)
    if scheme:
        cfg = load_config(args.config, overrides + [f"run.scheme={scheme}"])
    if cfg.run.scheme not in SCHEMES:
        raise ConfigError("run.scheme", f"unknown scheme {cfg.run.scheme!r}; choose from {', '.join(SCHEMES)}")
    return cfg


def seeds_of(args, cfg: ExperimentConfig) -> list:
    if getattr(args, "seeds", None):
        return list(args.seeds)
    if getattr(args, "seed", None) is not None:
        return [args.seed]
    return list(cfg.run.seeds)


# ---------------------------------------------------------------- train

def train_run(cfg: ExperimentConfig, seeds: Sequence[int], root: Path) -> Path:
    """Train ``cfg.run.scheme`` once per seed; write metrics, resolved config and checkpoints."""
    scheme = cfg.run.scheme
    used = drl.scheme_class(scheme).prepare_config(cfg)
    rid = run_id(used, scheme)
    run_dir = root / rid
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.resolved").write_text(used.dump())
    every = cfg.run.checkpoint_every
    rows = []
    for seed in seeds:
        def on_episode(ep, result, seed=seed):
            if every and (ep + 1) % every == 0:
                drl.save_checkpoint(ckpt_dir / f"seed{seed}-ep{ep + 1:05d}.ckpt", result)
            log.info("seed %d episode %d reward %.4f", seed, ep, result.records[-1]["mean_reward"])

        result = drl.train(cfg, seed, scheme, rid, on_episode)
        drl.save_checkpoint(ckpt_dir / f"seed{seed}-final.ckpt", result)
        rows += result.records
    write_csv(run_dir / "metrics.csv", drl.METRIC_COLUMNS, rows)
    return run_dir


def cmd_train(args) -> int:
    cfg = resolve(args)
    run_dir = train_run(cfg, seeds_of(args, cfg), out_root(args.out, cfg))
    print(run_dir)
    return 0


# ---------------------------------------------------------------- evaluate

def evaluate_checkpoint(path, episodes: int, seed: Optional[int] = None, overrides: Sequence[str] = ()) -> list:
    """Noise-free rollouts of a saved policy; ``overrides`` may change the scene but not network sizes."""
    ck = drl.load_checkpoint(path)
    cfg = ck.cfg
    if overrides:
        from .config import _set_path, from_dict, parse_override
        data = cfg.to_dict()
        for item in overrides:
            _set_path(data, *parse_override(item))
        cfg = from_dict(data)
    seed = ck.header["seed"] if seed is None else seed
    rid = run_id(ck.cfg, ck.header["scheme"])
    return drl.evaluate(ck.scheme, ck.learner, cfg, episodes, seed, rid)


def cmd_evaluate(args) -> int:
    episodes = args.episodes
    rows = evaluate_checkpoint(args.checkpoint, episodes, args.seed, args.set or [])
    if args.out:
        write_csv(args.out, drl.METRIC_COLUMNS, rows)
        print(args.out)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(drl.METRIC_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in drl.METRIC_COLUMNS])
    return 0


# ---------------------------------------------------------------- sweep

def axis_overrides(axis: str, value: float) -> list:
    if axis == "power":
        return [f"link.p_opt={float(value)!r}"]
    if axis == "mirrors":
        side = math.isqrt(int(value))
        if side * side != value:
            raise ConfigError("sweep.values", f"mirror count {value} is not a square number")
        return [f"scene.irs_rows={side}", f"scene.irs_cols={side}"]
    if axis == "users":
        if int(value) != value:
            raise ConfigError("sweep.values", f"user count {value} is not an integer")
        return [f"scene.users={int(value)}"]
    raise ConfigError("sweep.axis", f"unknown axis {axis!r}")


def _sweep_cell(cell) -> dict:
    config, overrides, axis, value, scheme, label, seed = cell
    cfg = load_config(config, list(overrides) + axis_overrides(axis, value) + [f"run.scheme={scheme}"])
    result = drl.train(cfg, seed, scheme)
    summary = drl.summarize(drl.evaluate(result.scheme, result.learner, cfg, cfg.run.eval_episodes, seed))
    return {"axis": axis, "value": value, "scheme": label, "seed": seed,
            **{k: summary[k] for k in ("sum_rate", "see", "jain", "objective")}}


def sweep_cells(args, cfg: ExperimentConfig) -> list:
    schemes = args.schemes or [cfg.run.scheme]
    for s in schemes:
        if s not in SCHEMES:
            raise ConfigError("sweep.schemes", f"unknown scheme {s!r}")
    # optional minimum-rate families (Mbit/s); each family gets its own scheme label
    families = [(s, s, []) for s in schemes]
    if args.r_min:
        families = [(s, f"{s}[r_min={m:g}]", [f"env.r_min_range=[{m * 1e6!r}, {m * 1e6!r}]"])
                    for m in args.r_min for s in schemes]
    cells = []
    for value in args.values:
        axis_overrides(args.axis, value)  # validate before launching anything
        for scheme, label, extra in families:
            for seed in seeds_of(args, cfg):
                cells.append((args.config, tuple((args.set or []) + extra), args.axis, value, scheme, label, seed))
    return cells


def cmd_sweep(args) -> int:
    cfg = resolve(args)
    cells = sweep_cells(args, cfg)
    if len(cells) > args.max_cells:
        raise BudgetExceeded(f"{len(cells)} sweep cells exceed --max-cells {args.max_cells}")
    jobs = args.jobs or cfg.run.jobs
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    rows.sort(key=lambda r: (r["value"], r["scheme"], r["seed"]))
    root = out_root(args.out, cfg)
    root.mkdir(parents=True, exist_ok=True)
    path = root / f"sweep-{args.axis}.csv"
    write_csv(path, SWEEP_COLUMNS, rows)
    print(path)
    return 0


# ---------------------------------------------------------------- oracle

def run_oracle(cfg: ExperimentConfig, seed: int, alpha_steps: int, angle_steps: int):
    env = IrsNomaEnv(cfg, drl.eval_seed(seed))
    env.reset()
    return env, grid_oracle(env, None, alpha_steps, angle_steps, cfg.baseline.oracle_budget, keep_table=True)


def cmd_oracle(args) -> int:
    cfg = resolve(args)
    a_steps = args.alpha_steps or cfg.baseline.oracle_alpha_steps
    g_steps = args.angle_steps or cfg.baseline.oracle_angle_steps
    root = out_root(args.out, cfg)
    root.mkdir(parents=True, exist_ok=True)
    for seed in seeds_of(args, cfg):
        env, res = run_oracle(cfg, seed, a_steps, g_steps)
        alpha_cols = [f"alpha_{i}" for i in range(env.k)]
        angle_cols = [f"{n}_{j}" for j in range(env.m) for n in ("yaw", "roll")]
        cols = ["seed", *alpha_cols, *angle_cols, "objective", "feasible"]

        def row(alpha, angles, obj, feas):
            return {"seed": seed, **dict(zip(alpha_cols, map(float, alpha))),
                    **dict(zip(angle_cols, map(float, angles))), "objective": float(obj), "feasible": int(feas)}

        write_csv(root / f"oracle-seed{seed}.csv", cols,
                  [row(res.alpha, res.angles.reshape(-1), res.objective, res.feasible)])
        table = res.table
        if args.sample and len(table) > args.sample:
            step = len(table) / args.sample
            table = [table[int(i * step)] for i in range(args.sample)]
        write_csv(root / f"grid-seed{seed}.csv", cols, [row(*t) for t in table])
        print(root / f"oracle-seed{seed}.csv")
    return 0


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="default", help="YAML config file or 'default'")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted override, repeatable")
    common.add_argument("--seed", type=int, help="single seed")
    common.add_argument("--seeds", type=int, nargs="+", help="several seeds")
    common.add_argument("--out", help=f"output root (default: ${OUT_ENV} or run.out)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="irsnoma", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train a scheme per seed")
    t.add_argument("--scheme", choices=SCHEMES)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", parents=[common], help="noise-free rollouts of a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--episodes", type=int, default=10)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", parents=[common], help="train and evaluate across one axis")
    s.add_argument("--axis", choices=SWEEP_AXES, required=True)
    s.add_argument("--values", type=float, nargs="+", required=True)
    s.add_argument("--schemes", nargs="+")
    s.add_argument("--r-min", type=float, nargs="+", help="minimum-rate families in Mbit/s")
    s.add_argument("--jobs", type=int)
    s.add_argument("--max-cells", type=int, default=200)
    s.set_defaults(func=cmd_sweep)

    o = sub.add_parser("oracle", parents=[common], help="grid-search optimum on a frozen snapshot")
    o.add_argument("--alpha-steps", type=int)
    o.add_argument("--angle-steps", type=int)
    o.add_argument("--sample", type=int, help="keep at most this many grid rows")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, BudgetExceeded) as exc:
        print(f"irsnoma: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, OSError, ValueError, ArithmeticError) as exc:
        print(f"irsnoma: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
