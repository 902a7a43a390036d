"""Command line entry point: ``resdob {train,eval,plot,calibrate-dob,qp-check,gradcheck}``."""
import argparse
import json
import os
import sys
import time

from resdob.config import FILTER_MODES, load_config


def _config(args):
    cfg = load_config(args.config)
    run = {}
    if args.seed is not None:
        run["seed"] = args.seed
    if args.mode is not None:
        run["filter_mode"] = args.mode
    if args.out is not None:
        run["out"] = args.out
    if getattr(args, "iterations", None) is not None:
        run["iterations"] = args.iterations
    return cfg.with_overrides(run=run) if run else cfg


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_train(args):
    from resdob.harness import train

    cfg = _config(args)
    start = time.perf_counter()
    log, _ = train(cfg)
    last = log[-1] if len(log) else {}
    _emit({"out": cfg.run.out, "iterations": len(log), "wall_time": round(time.perf_counter() - start, 3),
           "final_reward": last.get("mean_episode_reward"), "final_cost": last.get("mean_episode_cost")})
    return 0


def cmd_eval(args):
    from resdob.harness import evaluate

    cfg = _config(args)
    ckpt = args.checkpoint or os.path.join(cfg.run.out, "checkpoint.json")
    summary = evaluate(ckpt, cfg, args.episodes, dump=args.dump, trips=args.trips)
    _emit(summary)
    return 0


def _mode_of(path):
    directory = path if os.path.isdir(path) else os.path.dirname(path)
    ini = os.path.join(directory, "config.ini")
    if os.path.exists(ini):
        return load_config(ini).run.filter_mode
    return os.path.basename(os.path.normpath(directory)) or path


def cmd_plot(args):
    from resdob.harness import RunLog
    from resdob.plot import plot_runs

    if not args.logs:
        raise ValueError("plot needs at least one run directory or runlog.jsonl")
    runs = [(_mode_of(p), RunLog.read(p).records) for p in args.logs]
    out = args.out or "plots"
    for path in plot_runs(runs, out):
        print(path)
    return 0


def cmd_calibrate(args):
    from resdob.harness import calibrate_dob

    cfg = _config(args)
    if not cfg.components[1]:
        cfg = cfg.with_overrides(run={"filter_mode": "dob_cbf"}, dob={"enabled": True})
    _emit(calibrate_dob(cfg, steps=args.steps))
    return 0


def cmd_qp_check(args):
    from resdob.harness import qp_check

    start = time.perf_counter()
    result = qp_check(n=args.instances, seed=0 if args.seed is None else args.seed)
    result["wall_time"] = round(time.perf_counter() - start, 3)
    _emit(result)
    return 0 if result["passed"] else 1


def cmd_gradcheck(args):
    from resdob.harness import gradcheck

    start = time.perf_counter()
    result = gradcheck(n_nets=args.nets, seed=0 if args.seed is None else args.seed)
    result["wall_time"] = round(time.perf_counter() - start, 3)
    _emit(result)
    return 0 if result["passed"] else 1


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--mode", choices=FILTER_MODES)
    common.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(prog="resdob", description="Residual-model + observer CBF safe RL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="run the training loop")
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="deterministic evaluation of a checkpoint")
    p.add_argument("--checkpoint", help="defaults to OUT/checkpoint.json")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--trips", type=int, help="arena task: stop once this many commutes are done")
    p.add_argument("--dump", help="write layout and trajectory records as JSON lines")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", parents=[common], help="SVG reward/cost curves from run logs")
    p.add_argument("logs", nargs="*", help="run directories or runlog.jsonl files")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("calibrate-dob", parents=[common], help="empirical observer error bound")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("qp-check", parents=[common], help="QP solver against a grid oracle")
    p.add_argument("--instances", type=int, default=100)
    p.set_defaults(func=cmd_qp_check)

    p = sub.add_parser("gradcheck", parents=[common], help="MLP gradients against finite differences")
    p.add_argument("--nets", type=int, default=50)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        sys.stderr.write(f"resdob {args.command}: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
