"""Command-line surface: train, eval, traverse, verify-ot, gen-data.

Exit codes: 0 success, 1 usage problems, 2 runtime failures.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="flowfact", description="flow-factorized representation learning")
    sub = p.add_subparsers(dest="command")

    t = sub.add_parser("train", help="run the training loop from a config file")
    t.add_argument("--config", required=True, help="path to a key = value config file")
    t.add_argument("--out", default="runs/latest", help="output directory")

    e = sub.add_parser("eval", help="evaluate a checkpoint on the held-out set")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--metric", required=True, choices=["equiv-out", "equiv-latent", "elbo"])
    e.add_argument("--out", default="", help="metrics CSV path (default: stdout)")

    tr = sub.add_parser("traverse", help="decode a latent traversal to a PPM grid")
    tr.add_argument("--ckpt", required=True)
    tr.add_argument("--schedule", required=True, help="e.g. '0:8' or '0:4,1:4' or '0+2:8'")
    tr.add_argument("--out", required=True, help="output PPM path")
    tr.add_argument("--index", type=int, default=0, help="test image index to start from")

    v = sub.add_parser("verify-ot", help="optimal-transport verification")
    g = v.add_mutually_exclusive_group(required=True)
    g.add_argument("--demo", action="store_true", help="train the 1D N(0,1)->N(2,1) demo")
    g.add_argument("--ckpt", help="report transport costs of a trained checkpoint")

    d = sub.add_parser("gen-data", help="write a dataset cache")
    d.add_argument("--preset", required=True, choices=["toy"])
    d.add_argument("--out", default="toy_bases.ffds")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--count", type=int, default=256)
    d.add_argument("--size", type=int, default=16)
    return p


def _parse_schedule(text: str):
    """'0:4,1:4' switches; '0+2:8' superposes; entries run in order."""
    schedule = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise ValueError(f"schedule entry {part!r} must look like k:steps")
        ks, _, steps = part.partition(":")
        idx = tuple(int(k) for k in ks.split("+") if k != "")
        schedule.append((idx if len(idx) != 1 else idx[0], int(steps)))
    if not schedule:
        raise ValueError("empty traversal schedule")
    return schedule


def _cmd_train(args) -> int:
    from . import training

    cfg = training.load_config(args.config)
    result = training.train(cfg, out_dir=args.out)
    final = result.metrics[-1] if result.metrics else {}
    print(f"trained {cfg.iterations} iterations; final loss {final.get('loss', float('nan')):.4f}")
    print(f"checkpoint: {os.path.join(args.out, 'checkpoint.ffckpt')}")
    return 0


def _cmd_eval(args) -> int:
    from . import evaluation, training, vae

    ckpt = training.load_checkpoint(args.ckpt)
    cfg, model, bank = training.restore_from_checkpoint(ckpt)
    dataset = training.build_dataset(cfg)
    rows = []
    if args.metric in ("equiv-out", "equiv-latent"):
        n, k_count = dataset.test.shape[0], dataset.test.shape[1]
        seqs = dataset.test.reshape(n * k_count, *dataset.test.shape[2:])
        labels = np.tile(np.arange(k_count), n)
        rows = evaluation.equivariance_report(model, bank, seqs, labels, args.metric)
    else:
        rng = np.random.Generator(np.random.PCG64(cfg.seed + 9))
        for k in range(cfg.k_count):
            vals = []
            for i in range(dataset.test.shape[0]):
                noise = rng.standard_normal(cfg.latent_dim)
                val, _ = vae.elbo_supervised(model, bank, dataset.test[i, k], k, noise)
                vals.append(val)
            rows.append(evaluation.MetricRow("elbo", k, float(np.mean(vals)), len(vals)))
    if args.out:
        evaluation.write_metrics_csv(args.out, rows)
        print(f"wrote {args.out}")
    else:
        print("metric,k,value,n_sequences")
        for r in rows:
            print(f"{r.metric},{r.k},{r.value:.9g},{r.n_sequences}")
    return 0


def _cmd_traverse(args) -> int:
    from . import evaluation, training

    schedule = _parse_schedule(args.schedule)
    ckpt = training.load_checkpoint(args.ckpt)
    cfg, model, bank = training.restore_from_checkpoint(ckpt)
    dataset = training.build_dataset(cfg)
    x0 = dataset.test[args.index % dataset.test.shape[0], 0, 0]
    frames = evaluation.traverse(model, bank, np.asarray(x0, dtype=np.float64), schedule)
    evaluation.export_grid([frames], args.out)
    print(f"wrote {args.out} ({len(frames)} frames)")
    return 0


def _cmd_verify_ot(args) -> int:
    from . import oracle

    if args.demo:
        from .bb_demo import run_bb_demo

        report = run_bb_demo()
        print(f"transport cost      : {report.transport_cost:.4f} (target 0.5*W2^2 = {report.half_w2_sq:.4f})")
        print(f"cost relative error : {report.cost_rel_err * 100:.1f}%")
        print(f"HJ residual msr     : {report.final_msr:.5f} (initial {report.initial_msr:.5f})")
        ok = report.cost_rel_err <= 0.15 and report.final_msr < 0.1 * report.initial_msr
        print("PASS" if ok else "FAIL")
        return 0 if ok else 2
    from . import flows, training

    ckpt = training.load_checkpoint(args.ckpt)
    cfg, model, bank = training.restore_from_checkpoint(ckpt)
    dataset = training.build_dataset(cfg)
    rng = np.random.Generator(np.random.PCG64(cfg.seed + 17))
    from .vae import encode, reparameterize

    print("k,transport_cost,n_sequences")
    for k in range(cfg.k_count):
        trajs = []
        for i in range(min(32, dataset.test.shape[0])):
            mu, logvar = encode(model.encoder, np.asarray(dataset.test[i, k, 0], dtype=np.float64))
            z0, lq = reparameterize(mu, logvar, rng.standard_normal(cfg.latent_dim))
            trajs.append(flows.evolve_posterior(bank, k, z0, lq, cfg.horizon))
        print(f"{k},{oracle.transport_cost(bank, k, trajs):.6g},{len(trajs)}")
    return 0


def _cmd_gen_data(args) -> int:
    from . import data

    bases = data.make_toy_dataset(args.seed, args.count, args.size)
    data.save_cache(args.out, bases)
    print(f"wrote {args.out}: {bases.shape} float32")
    return 0


def run_cli(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --help paths
        return 0 if exc.code in (0, None) else int(exc.code)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    handlers = {
        "train": _cmd_train,
        "eval": _cmd_eval,
        "traverse": _cmd_traverse,
        "verify-ot": _cmd_verify_ot,
        "gen-data": _cmd_gen_data,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, OSError, RuntimeError, IndexError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
