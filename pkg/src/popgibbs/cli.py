"""Command line front end: corpus generation, training, evaluation.

Exit codes: 0 ok, 2 configuration error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import sys

from . import harness


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="popgibbs",
                                description="population-Gibbs experiments")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a corpus file pair")
    g.add_argument("--model", required=True, choices=["gmm", "dmm"])
    g.add_argument("--instances", type=int, required=True)
    g.add_argument("--n", type=int, required=True, help="points per instance")
    g.add_argument("--m", type=int, default=0, help="clusters (0 = default)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output path base")
    g.add_argument("--alpha0", type=float, default=2.0)
    g.add_argument("--beta0", type=float, default=2.0)

    t = sub.add_parser("train", help="run a training loop")
    t.add_argument("--config", required=True, help="JSON config file")
    t.add_argument("--override", nargs="*", default=[], metavar="k=v")
    t.add_argument("--resume", default=None, help="checkpoint base to resume")

    e = sub.add_parser("eval", help="evaluate a method on a corpus")
    e.add_argument("--checkpoint", default=None, help="checkpoint base")
    e.add_argument("--method", required=True, choices=list(harness.METHODS))
    e.add_argument("--sweeps", type=int, required=True)
    e.add_argument("--particles", type=int, required=True)
    e.add_argument("--lf", type=int, default=5, help="leapfrog steps (hmc-rws)")
    e.add_argument("--model", default="gmm", choices=["gmm", "dmm"])
    e.add_argument("--corpus", required=True, help="corpus path base")
    e.add_argument("--out", required=True, help="metrics CSV path")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--instances", type=int, default=None)
    e.add_argument("--blocks", default="split", choices=["split", "joint"])
    e.add_argument("--dump-latents", type=int, default=0)
    e.add_argument("--alpha0", type=float, default=2.0)
    e.add_argument("--beta0", type=float, default=2.0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            harness.generate(args.model, args.instances, args.n,
                             args.m if args.m > 0 else (3 if args.model == "gmm" else 4),
                             args.seed, args.out, alpha0=args.alpha0,
                             beta0=args.beta0)
        elif args.command == "train":
            cfg = harness.load_config(args.config, args.override)
            harness.run_training(cfg, resume=args.resume)
        elif args.command == "eval":
            cfg = harness.make_config({
                "model": args.model, "method": args.method,
                "sweeps": args.sweeps, "particles": args.particles,
                "hmc_leapfrog": args.lf, "test_corpus": args.corpus,
                "corpus": args.corpus, "seed": args.seed,
                "blocks": args.blocks, "alpha0": args.alpha0,
                "beta0": args.beta0})
            harness.run_eval(cfg, args.checkpoint, args.out,
                             n_instances=args.instances,
                             dump_latents=args.dump_latents)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except harness.NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
