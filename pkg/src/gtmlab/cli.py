"""Command-line front door.

Verbs: gen-data, train, eval, generate, gradcheck, selftest.
Exit codes: 0 success, 1 usage error, 2 runtime/numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from gtmlab import harness, selfcheck
from gtmlab import tasks as task_mod
from gtmlab.engine import NumericError
from gtmlab.harness import MODEL_KINDS, TrainConfig
from gtmlab.seeds import derive_seed

USAGE_EXIT = 1
RUNTIME_EXIT = 2


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(USAGE_EXIT)


def add_shared_flags(p):
    p.add_argument("--task", default="perfect-recall", choices=task_mod.TASK_KINDS)
    p.add_argument("--model", default="introspection", choices=MODEL_KINDS)
    p.add_argument("--l", type=int, default=10, help="pre-recall length")
    p.add_argument("--k", type=int, default=5, help="recall length")
    p.add_argument("--latent", type=int, default=8)
    p.add_argument("--heads", type=int, default=5)
    p.add_argument("--slots", type=int, default=0, help="0 = auto from task length")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=10)
    p.add_argument("--steps", type=int, default=2000, help="training steps")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replica", type=int, default=0)
    p.add_argument("--out", default="runs/run")
    p.add_argument("--dataset", default="synthetic",
                   help="'synthetic' or a directory of IDX files")
    p.add_argument("--precision", default="f32", choices=["f32", "f64"])
    p.add_argument("--image", type=int, default=8, help="square frame side")
    p.add_argument("--grid", type=int, default=4)
    p.add_argument("--walk-steps", type=int, default=25)
    p.add_argument("--eval-every", type=int, default=100)


def config_from_args(args):
    return TrainConfig(model=args.model, task=args.task, l=args.l, k=args.k,
                       grid=args.grid, walk_steps=args.walk_steps, image=args.image,
                       latent=args.latent, heads=args.heads, slots=args.slots,
                       hidden=args.hidden, lr=args.lr, batch=args.batch,
                       steps=args.steps, seed=args.seed, replica=args.replica,
                       eval_every=args.eval_every, out=args.out,
                       dataset=args.dataset, precision=args.precision)


def build_parser():
    parser = CliParser(prog="gtm", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=CliParser)

    p = sub.add_parser("gen-data",
                       help="dump task sequences to a binary file")
    add_shared_flags(p)
    p.add_argument("--n", type=int, default=16, help="number of sequences")
    p.add_argument("--split", default="train", choices=["train", "test"])

    p = sub.add_parser("train", help="train one run")
    add_shared_flags(p)

    p = sub.add_parser("eval",
                       help="average per-frame KL over fresh batches")
    add_shared_flags(p)
    p.add_argument("--from", dest="ckpt", required=True, help="checkpoint path")
    p.add_argument("--n-batches", type=int, default=5)
    p.add_argument("--split", default="train", choices=["train", "test"])
    p.add_argument("--json-out", default="", help="optional result JSON path")

    p = sub.add_parser("generate",
                       help="sample sequences from a trained prior")
    add_shared_flags(p)
    p.add_argument("--from", dest="ckpt", required=True, help="checkpoint path")
    p.add_argument("--n", type=int, default=8, help="sequences in the strip")

    p = sub.add_parser("gradcheck",
                       help="run the float64 finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=100,
                   help="random shapes/seeds per primitive")

    p = sub.add_parser("selftest",
                       help="run every module's property suite")
    p.add_argument("--fast", action="store_true", help="reduced sample sizes")
    return parser


def cmd_gen_data(args):
    config = config_from_args(args)
    ds = harness.make_dataset(config)
    cfg = config.task_config()
    samples = []
    for i in range(args.n):
        s_seed = derive_seed(config.run_seed, "data", i)
        if config.task == "one-shot-recall":
            samples.append(task_mod.generate(config.task, ds, cfg, s_seed,
                                             split=args.split))
        else:
            samples.append(task_mod.generate(config.task, ds, cfg, s_seed))
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    task_mod.dump_samples(args.out, samples)
    print(f"wrote {args.n} '{config.task}' sequences to {args.out}")
    return 0


def cmd_train(args):
    config = config_from_args(args)
    rows, ckpt = harness.train(config)
    final = rows[-1]
    print(f"run '{config.out}': {config.steps} steps, "
          f"final neg_elbo {final['neg_elbo']:.4f} nats/frame, "
          f"last-frame KL {final['last_frame_kl']:.4f}")
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_eval(args):
    res = harness.evaluate(args.ckpt, n_batches=args.n_batches,
                           seed=args.seed, split=args.split)
    print(f"neg_elbo {res.neg_elbo:.4f} +- {res.neg_elbo_se:.4f} nats/frame "
          f"({res.n_batches} batches)")
    print("kl_per_frame " + " ".join(f"{v:.3f}" for v in res.kl_per_frame))
    if args.json_out:
        with open(args.json_out, "w") as fh:
            json.dump({"neg_elbo": res.neg_elbo, "neg_elbo_se": res.neg_elbo_se,
                       "kl_per_frame": res.kl_per_frame.tolist(),
                       "kl_se": res.kl_se.tolist()}, fh, indent=2)
    return 0


def cmd_generate(args):
    model, config, step = harness.load_checkpoint(args.ckpt)
    actions = None
    if config.context_width:
        ds = harness.make_dataset(config)
        cfg = config.task_config()
        rows = []
        for i in range(args.n):
            s = task_mod.generate(config.task, ds, cfg,
                                  derive_seed(args.seed, "gen-actions", i))
            rows.append(s.actions)
        actions = np.stack(rows)
    frames, _ = model.generate(args.n, config.seq_len, actions=actions,
                               seed=args.seed)
    out = args.out if args.out.endswith((".png", ".pgm", ".ppm")) \
        else args.out.rstrip("/") + f"/generated_{step}.png"
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    harness.dump_sequence_strip(frames, out)
    print(f"wrote {args.n}x{config.seq_len} sample strip to {out}")
    return 0


def cmd_gradcheck(args):
    results = selfcheck.gradient_suite(n_seeds=args.seeds)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else RUNTIME_EXIT


def cmd_selftest(args):
    results = selfcheck.all_suites(fast=args.fast)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return 0 if not failed else RUNTIME_EXIT


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else USAGE_EXIT
    handlers = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
                "generate": cmd_generate, "gradcheck": cmd_gradcheck,
                "selftest": cmd_selftest}
    try:
        return handlers[args.verb](args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return RUNTIME_EXIT
    except (ValueError, OSError, task_mod.TaskError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
