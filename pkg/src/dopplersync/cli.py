"""``sim`` command line: bounds, mse, ber, converge and sweep experiments."""

from __future__ import annotations

import argparse
import os
import sys

from . import harness
from .config import ConfigError, SimConfig, load_config

# Full-scale trial counts, used with --full.
FULL_BURSTS = 1000
FULL_FRAMES = 20000


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--snr", type=_floats, help="Es/N0 points in dB, comma separated")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--full", action="store_true", help="full-scale trial counts")
    common.add_argument("--workers", type=int, help="worker processes")

    p = argparse.ArgumentParser(prog="sim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bounds", parents=[common], help="JCRB and WBCRB diagonals")
    b.add_argument("--snr-list", type=_floats, help="alias of --snr")
    b.add_argument("--frame-len", type=int, help="burst length L (default: preamble + code length)")
    b.add_argument("--omega-max", type=float)
    b.add_argument("--eps-max", type=float)
    b.add_argument("--h", type=float, help="weighting index, > 0.5")

    m = sub.add_parser("mse", parents=[common], help="estimator MSE vs SNR with bounds")
    m.add_argument("--estimator", choices=("rw", "pf"))
    m.add_argument("--bursts", type=int)

    r = sub.add_parser("ber", parents=[common], help="receiver BER vs SNR with genie baseline")
    r.add_argument("--frames", type=int)
    r.add_argument("--nodes", type=int)
    r.add_argument("--no-genie", action="store_true")

    c = sub.add_parser("converge", parents=[common], help="PF per-symbol error traces")
    c.add_argument("--bursts", type=int)

    s = sub.add_parser("sweep", parents=[common], help="BER over particles, iterations or nodes")
    s.add_argument("--kind", choices=("particles", "iters", "nodes"), default="nodes")
    s.add_argument("--values", type=_floats, help="sweep values (default depends on kind)")
    s.add_argument("--frames", type=int)
    return p


SWEEP_DEFAULTS = {"particles": [100, 200, 400, 800], "iters": [1, 2, 3, 4], "nodes": [1, 2]}


def resolve_config(args) -> SimConfig:
    cfg = load_config(args.config) if args.config else SimConfig()
    over = {}
    if args.seed is not None:
        over["sim__seed"] = args.seed
    if args.workers is not None:
        over["sim__workers"] = args.workers
    snr = getattr(args, "snr_list", None) or args.snr
    if snr:
        over["sim__snr_db"] = tuple(snr)
    if getattr(args, "omega_max", None) is not None:
        over["channel__omega_max"] = args.omega_max
    if getattr(args, "eps_max", None) is not None:
        over["channel__epsilon_max"] = args.eps_max
    if getattr(args, "h", None) is not None:
        over["bounds__h"] = args.h
    if getattr(args, "estimator", None):
        over["fg__estimator"] = args.estimator
    if getattr(args, "nodes", None):
        over["channel__n_nodes"] = args.nodes
    if args.full:
        over["sim__n_bursts"] = FULL_BURSTS
        over["sim__n_frames"] = FULL_FRAMES
    return cfg.with_overrides(**over) if over else cfg


def run(args) -> tuple[str, list]:
    cfg = resolve_config(args)
    snr = list(cfg["sim.snr_db"])
    cmd = args.command
    if cmd == "bounds":
        L = args.frame_len or cfg["frame.n_preamble"] + harness.code_for(cfg)[0].n_cols
        return cfg, harness.bound_rows(cfg, snr, L)
    if cmd == "mse":
        return cfg, harness.run_mse(cfg, snr, args.bursts)
    if cmd == "ber":
        return cfg, harness.run_ber(cfg, snr, args.frames, genie=not args.no_genie)
    if cmd == "converge":
        return cfg, harness.run_convergence(cfg, snr[0], args.bursts)
    values = args.values or SWEEP_DEFAULTS[args.kind]
    return cfg, harness.sweep(cfg, args.kind, values, snr, args.frames)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, rows = run(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"sim: error: {exc}", file=sys.stderr)
        return 2
    name = args.command if args.command != "sweep" else f"sweep_{args.kind}"
    try:
        os.makedirs(args.out, exist_ok=True)
        path = harness.emit_csv(rows, os.path.join(args.out, f"{name}.csv"), cfg)
        script = harness.emit_plotscript(rows, path)
    except OSError as exc:
        print(f"sim: error: cannot write output: {exc}", file=sys.stderr)
        return 2
    print(path)
    print(script)
    return 0


if __name__ == "__main__":
    sys.exit(main())
