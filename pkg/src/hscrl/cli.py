"""Command-line entry point: ``hscrl <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from hscrl import harness
from hscrl.demand import generate_series
from hscrl.env import MismatchMode, read_replay
from hscrl.errors import ConfigurationError, InsufficientDataError
from hscrl.network import dump_instance, generate_instance, load_instance, validate
from hscrl.records import write_csv

log = logging.getLogger("hscrl")

DEFAULT_H = (0.1, 0.25, 0.5, 1.0, 2.0)
DEFAULT_V = (25.0, 50.0, 100.0, 200.0, 400.0)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _key_value(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), value.strip()


def _common(p: argparse.ArgumentParser, default_runs: int | None = None):
    p.add_argument("--config", help="key=value file; keys are parameter names (see README)")
    p.add_argument("--set", dest="overrides", action="append", type=_key_value, default=[],
                   metavar="KEY=VALUE", help="override one parameter (repeatable)")
    p.add_argument("--seed", type=int, help="first run seed; runs use seed, seed+1, ...")
    p.add_argument("--runs", type=int, default=default_runs, help="number of training runs")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--demand", choices=["gbm", "poisson", "merton"])
    p.add_argument("--clip-max", type=float, help="upper demand clip (typically 1000, 2000 or 3000)")
    p.add_argument("--mismatch-mode", choices=[m.value for m in MismatchMode])
    p.add_argument("--jobs", type=int, help="parallel worker processes for independent runs")
    p.add_argument("--dump-instance", metavar="PATH", help="also write the generated network instance")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hscrl", description="Humanitarian supply chain activation experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train PPO agents and summarize first/last-10 rewards")
    _common(p, default_runs=5)
    p.add_argument("--no-checkpoints", action="store_true")
    p.add_argument("--plot", action="store_true", help="write SVG learning curves (needs matplotlib)")

    p = sub.add_parser("sensitivity", help="train on the parameter variants 1-9")
    _common(p, default_runs=3)
    p.add_argument("--variants", default="1,2,3,4,5,6,7,8,9", help="comma-separated ids (1-9 or circled)")

    p = sub.add_parser("sweep", help="final reward as a function of transport cost h and kit value V")
    _common(p, default_runs=3)
    p.add_argument("--h", type=_floats, default=list(DEFAULT_H), help="comma-separated h values")
    p.add_argument("--V", type=_floats, default=list(DEFAULT_V), help="comma-separated V values")
    p.add_argument("--grid", action="store_true", help="train every (h, V) pair instead of per axis")
    p.add_argument("--variant", help="apply a sensitivity variant (1-9) before sweeping")

    p = sub.add_parser("compare", help="PPO vs NSGA-II (BS, BE) vs PSO on one instance")
    _common(p, default_runs=3)
    p.add_argument("--eval-seed", type=int)

    p = sub.add_parser("demand", help="write a demand series as CSV")
    _common(p)
    p.add_argument("--model", choices=["gbm", "poisson", "merton"], help="alias of --demand")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--points", type=int, help="number of demand points (default: network n_points)")

    p = sub.add_parser("replay", help="step the environment through a recorded action file")
    _common(p)
    p.add_argument("actions", help="file of lines t,<center bits>,<warehouse bits>")
    p.add_argument("--instance", help="instance file written by --dump-instance (default: generate)")
    p.add_argument("--env-seed", type=int, default=0, help="environment noise seed")
    return ap


def resolve_config(args, kind: harness.ExperimentKind) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig(kind=kind)
    if kind is not harness.ExperimentKind.TRAIN:
        cfg = replace(cfg, run_seeds=(0, 1, 2))
    if args.config:
        cfg = harness.load_config_file(args.config, cfg)
    ov: dict[str, object] = {}
    if args.runs is not None:
        ov["runs"] = args.runs
    if args.seed is not None:
        # demand export has no training runs; its seed selects the series
        ov["demand_seed" if kind is harness.ExperimentKind.DEMAND else "seed"] = args.seed
    model = getattr(args, "model", None) or args.demand
    if model:
        ov["demand_model"] = model
    if args.clip_max is not None:
        ov["clip_max"] = args.clip_max
    if args.mismatch_mode:
        ov["mismatch_mode"] = args.mismatch_mode
    if args.jobs is not None:
        ov["jobs"] = args.jobs
    if getattr(args, "eval_seed", None) is not None:
        ov["eval_seed"] = args.eval_seed
    ov.update(dict(args.overrides))
    return replace(harness.apply_overrides(cfg, ov), out_dir=args.out)


def _maybe_dump(args, cfg):
    if args.dump_instance:
        inst = generate_instance(cfg.network)
        dump_instance(inst, args.dump_instance)
        log.info("instance written to %s", args.dump_instance)


def _plot(cfg, curves, name):
    try:
        path = harness.plot_curves(curves, Path(cfg.out_dir) / name)
        print(f"plot: {path}")
    except ImportError:
        log.warning("matplotlib not installed; skipping plot")


def cmd_train(args):
    cfg = resolve_config(args, harness.ExperimentKind.TRAIN)
    _maybe_dump(args, cfg)
    result = harness.run_training_experiment(cfg, write_checkpoints=not args.no_checkpoints)
    s = result.summary
    print(f"{cfg.demand.model.value} clip {cfg.demand.clip_low:g}-{cfg.demand.clip_high:g}, {cfg.n_runs} runs: "
          f"first10={s.avg_reward_first10:.4f} last10={s.avg_reward_last10:.4f} std={s.reward_std:.4f}")
    if args.plot:
        _plot(cfg, {"mean": result.averaged()}, "train_curves.svg")


def cmd_sensitivity(args):
    cfg = resolve_config(args, harness.ExperimentKind.SENSITIVITY)
    _maybe_dump(args, cfg)
    ids = [v for v in args.variants.split(",") if v.strip()]
    for vid in ids:
        harness.variant_configs(cfg, vid)  # fail fast on unknown ids
    table = harness.run_sensitivity_suite(cfg, ids)
    for label, s in table:
        print(f"{label:>6}: first10={s.avg_reward_first10:.4f} last10={s.avg_reward_last10:.4f} std={s.reward_std:.4f}")


def cmd_sweep(args):
    cfg = resolve_config(args, harness.ExperimentKind.PRICE_SWEEP)
    _maybe_dump(args, cfg)
    targets = [("", cfg)]
    if args.variant:
        targets = [(label, replace(vcfg, out_dir=str(Path(cfg.out_dir) / f"variant_{label.replace(':', '_')}")))
                   for label, vcfg in harness.variant_configs(cfg, args.variant)]
    for label, tcfg in targets:
        for c in harness.run_price_sweep(tcfg, args.h, args.V, grid=args.grid):
            prefix = f"{label} " if label else ""
            print(f"{prefix}{c.axis}: h={c.h:g} V={c.V:g} final={c.final_avg_reward:.4f}")


def cmd_compare(args):
    cfg = resolve_config(args, harness.ExperimentKind.COMPARE)
    _maybe_dump(args, cfg)
    report = harness.run_comparison(cfg)
    print("method    " + " ".join(f"{m:>16}" for m in harness.METRICS))
    for m in harness.METHODS:
        print(f"{m:<9} " + " ".join(f"{v:16.4f}" for v in report.totals[m]))


def cmd_demand(args):
    cfg = resolve_config(args, harness.ExperimentKind.DEMAND)
    n_points = args.points if args.points is not None else cfg.network.n_points
    if args.steps < 1 or n_points < 1:
        raise ConfigurationError("--steps and --points must be positive")
    series = generate_series(cfg.demand, args.steps, n_points)
    path = write_csv(Path(cfg.out_dir) / "demand.csv", harness.demand_header(series),
                     harness.demand_rows(series), cfg.hash(steps=args.steps, points=n_points))
    print(f"demand: {path}")


def cmd_replay(args):
    cfg = resolve_config(args, harness.ExperimentKind.DEMAND)
    try:
        actions = read_replay(args.actions)
    except OSError as exc:
        raise ConfigurationError(f"cannot read {args.actions}: {exc.strerror}") from None
    except ValueError as exc:
        raise ConfigurationError(f"{args.actions}: {exc}") from None
    if args.instance:
        instance = load_instance(args.instance)
        problems = validate(instance)
        if problems:
            raise ConfigurationError(f"{args.instance}: {problems[0]}")
    else:
        instance = generate_instance(cfg.network)
    if not actions:
        raise ConfigurationError("replay file has no actions")
    C, W = instance.n_centers, instance.n_warehouses
    if len(actions[0].x_c) != C or len(actions[0].x_w) != W:
        raise ConfigurationError(f"replay actions have {len(actions[0].x_c)}+{len(actions[0].x_w)} bits, "
                                 f"instance needs {C}+{W}")
    series = generate_series(cfg.demand, len(actions), instance.n_points)
    rows = harness.replay(instance, series, actions, args.env_seed, cfg.mismatch_mode)
    path = write_csv(Path(cfg.out_dir) / "trajectory.csv", harness.TRAJECTORY_HEADER, rows,
                     cfg.hash(env_seed=args.env_seed, actions=Path(args.actions).read_text()))
    total = sum(r[3] for r in rows)
    print(f"trajectory: {path} ({len(rows)} steps, total reward {total:.4f})")


COMMANDS = {
    "train": cmd_train,
    "sensitivity": cmd_sensitivity,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "demand": cmd_demand,
    "replay": cmd_replay,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ConfigurationError, InsufficientDataError) as exc:
        print(f"hscrl {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
