#!/usr/bin/env python3
"""Desk-scale mixture experiment: corpora, training, and the method
comparison, writing CSVs consumable by the plotting frontend.

Roughly 30 minutes on one core.  Outputs land under runs/gmm_desk/.
"""

import argparse
import json
import os

from popgibbs import harness


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/gmm_desk")
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--train-instances", type=int, default=2000)
    ap.add_argument("--test-instances", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--alpha0", type=float, default=0.2)
    ap.add_argument("--beta0", type=float, default=0.2)
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    train_base = os.path.join(args.out, "train_corpus")
    test_base = os.path.join(args.out, "test_corpus")
    harness.generate("gmm", args.train_instances, 60, 3, args.seed, train_base,
                     alpha0=args.alpha0, beta0=args.beta0)
    harness.generate("gmm", args.test_instances, 100, 3, args.seed + 1,
                     test_base, alpha0=args.alpha0, beta0=args.beta0)

    cfg = harness.make_config(dict(
        harness.desk_profile("gmm"), corpus=train_base, test_corpus=test_base,
        seed=args.seed, steps=args.steps, alpha0=args.alpha0,
        beta0=args.beta0, out_dir=os.path.join(args.out, "train")))
    ckpt = harness.run_training(cfg)

    for method, sweeps, particles, lf in [
            ("apg", 20, 10, 0), ("gibbs", 20, 10, 0), ("bpg", 20, 10, 0),
            ("rws", 20, 10, 0), ("hmc-rws", 20, 10, 10)]:
        ecfg = harness.make_config({
            "model": "gmm", "method": method, "sweeps": sweeps,
            "particles": particles, "hmc_leapfrog": max(lf, 1),
            "corpus": train_base, "test_corpus": test_base,
            "seed": args.seed, "alpha0": args.alpha0, "beta0": args.beta0})
        harness.run_eval(ecfg, None if method in ("bpg",) else ckpt,
                         os.path.join(args.out, f"eval_{method}.csv"),
                         dump_latents=4 if method == "apg" else 0)

    # fixed-budget sweep study (K * L = 1000)
    for sweeps, particles in [(2, 500), (10, 100), (20, 50)]:
        ecfg = harness.make_config({
            "model": "gmm", "method": "apg", "sweeps": sweeps,
            "particles": particles, "corpus": train_base,
            "test_corpus": test_base, "seed": args.seed,
            "alpha0": args.alpha0, "beta0": args.beta0})
        harness.run_eval(ecfg, ckpt,
                         os.path.join(args.out, f"eval_budget_K{sweeps}.csv"),
                         n_instances=100)
    print(json.dumps({"checkpoint": ckpt, "out": args.out}))


if __name__ == "__main__":
    main()
