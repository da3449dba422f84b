"""Command-line entry point.

Commands cover the full workflow on embedding archives: generate synthetic
data, train the adapters, evaluate any of the three methods (optionally on
the base/novel split), search cache-model hyperparameters, verify
gradients, and merge metrics files into comparison tables.

Every command is deterministic given its flags: one --seed fans out into
named sub-seeds (recorded in the run manifest), and all outputs are
written atomically with a manifest next to the first output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

# Honor the thread cap before numpy loads its BLAS (the imports below pull
# numpy in transitively, so this must stay at the top of the module).
_threads = os.environ.get("ATTN_ADAPTER_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from . import __version__
from .archive import ArchiveError, load_archive, load_checkpoint, save_archive, save_checkpoint
from .adapters import init_params
from .episodes import base_novel_split, derive_seed, synth_dataset
from .losses import LossConfig, TipConfig
from .numerics import grad_check
from .trainer import (
    TrainConfig,
    TrainingDivergedError,
    evaluate,
    evaluate_tip,
    evaluate_zero_shot,
    make_gradcheck_instance,
    tip_hyperparam_search,
    train,
)

# Default generator setting doubles as the standard test fixture: zero-shot
# accuracy lands near 0.65, leaving headroom the adapters can close.
DEFAULT_SYNTH = dict(n_classes=10, k_support=16, q_query=50, d=64, m=8, noise=0.22)


def _atomic_write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_manifest(command: str, args: argparse.Namespace, seeds: dict,
                    inputs: list[str], outputs: list[str], t0: float) -> None:
    manifest = {
        "command": command,
        "config": {k: v for k, v in vars(args).items() if k != "func"},
        "seeds": seeds,
        "inputs": inputs,
        "outputs": outputs,
        "wall_clock_s": round(time.time() - t0, 3),
        "tool_version": __version__,
    }
    _atomic_write_text(outputs[0] + ".manifest.json",
                       json.dumps(manifest, sort_keys=True, indent=2, default=str) + "\n")


def _require_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def cmd_synth(args) -> int:
    t0 = time.time()
    archive = synth_dataset(args.seed, args.n_classes, args.k_support, args.q_query,
                            args.dim, args.m_locals, args.noise, args.text_noise)
    save_archive(args.out, archive)
    _write_manifest("synth", args, {"master": args.seed}, [], [args.out], t0)
    print(f"wrote {args.out}: {archive.n_classes} classes x "
          f"{archive.n_samples // archive.n_classes} samples, d={archive.d}, m={archive.m}")
    print(f"mean zero-shot accuracy {archive.per_class_zero_shot_acc.mean():.4f}")
    return 0


def cmd_train(args) -> int:
    t0 = time.time()
    archive = load_archive(_require_file(args.data, "archive"))
    cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        weight_decay=args.weight_decay, seed=args.seed, k_shots=args.k,
        hidden_dim=args.hidden_dim, head_count=args.heads,
        loss=LossConfig(tau=args.tau, lam=args.lam),
        resample_support=not args.fixed_support,
    )
    params, history = train(archive, cfg)
    save_checkpoint(args.out, params)
    history_path = args.history or args.out + ".history.jsonl"
    _atomic_write_text(history_path,
                       "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in history))
    seeds = {"master": args.seed,
             "init": derive_seed(args.seed, "init"),
             "support:0": derive_seed(args.seed, "support:0")}
    _write_manifest("train", args, seeds, [args.data], [args.out, history_path], t0)
    if history:
        print(f"trained {args.epochs} epochs: loss {history[0]['loss']:.4f} -> "
              f"{history[-1]['loss']:.4f}, train_acc {history[-1]['train_acc']:.4f}")
    else:
        print("epochs=0: wrote the zero-gate initialization")
    print(f"wrote {args.out}")
    return 0


def _resolve_split(archive, split: str) -> tuple[int, ...] | None:
    if split == "all":
        return None
    if archive.per_class_zero_shot_acc is None:
        raise ValueError(f"--split {split} needs per-class accuracies in the archive")
    base, novel = base_novel_split(archive.per_class_zero_shot_acc)
    return tuple(base if split == "base" else novel)


def cmd_eval(args) -> int:
    t0 = time.time()
    archive = load_archive(_require_file(args.data, "archive"))
    subset = _resolve_split(archive, args.split)
    loss_cfg = LossConfig(tau=args.tau, lam=args.lam)

    if args.method == "zeroshot":
        result = evaluate_zero_shot(archive, subset, args.k, args.seed, loss_cfg)
    elif args.method == "tip":
        result = evaluate_tip(archive, TipConfig(args.alpha, args.beta),
                              subset, args.k, args.seed, loss_cfg)
    else:
        if args.checkpoint:
            params = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
        else:
            params = init_params(derive_seed(args.seed, "init"), archive.d)
        result = evaluate(params, archive, subset, args.k, args.seed, loss_cfg)

    metrics = {
        "method": args.method,
        "archive": args.data,
        "split": args.split,
        "k": args.k,
        "seed": args.seed,
        "accuracy": result.accuracy,
        "per_class_acc": [float(a) for a in result.per_class_acc],
    }
    print(f"method={args.method} split={args.split} accuracy={result.accuracy:.4f} "
          f"mean_loss={result.mean_loss:.4f} ({len(result.predictions)} queries)")
    if args.report:
        _atomic_write_text(args.report, json.dumps(metrics, sort_keys=True, indent=2) + "\n")
        inputs = [args.data] + ([args.checkpoint] if args.checkpoint else [])
        _write_manifest("eval", args, {"master": args.seed}, inputs, [args.report], t0)
        print(f"wrote {args.report}")
    return 0


def cmd_tip_search(args) -> int:
    t0 = time.time()
    archive = load_archive(_require_file(args.data, "archive"))
    alphas = [float(a) for a in args.alphas.split(",")]
    betas = [float(b) for b in args.betas.split(",")]
    cfg, acc = tip_hyperparam_search(archive, alphas, betas, args.k, args.seed)
    print(f"best alpha={cfg.alpha} beta={cfg.beta} accuracy={acc:.4f}")
    if args.report:
        out = {"alpha": cfg.alpha, "beta": cfg.beta, "accuracy": acc,
               "archive": args.data, "k": args.k, "seed": args.seed}
        _atomic_write_text(args.report, json.dumps(out, sort_keys=True, indent=2) + "\n")
        _write_manifest("tip-search", args, {"master": args.seed},
                        [args.data], [args.report], t0)
    return 0


def cmd_gradcheck(args) -> int:
    from .adapters import params_to_vector

    params, loss_and_grad = make_gradcheck_instance(
        args.seed, args.n_classes, args.k, args.dim, args.hidden_dim or args.dim,
        args.m_locals, args.batch, args.heads)
    fn = loss_and_grad
    if args.corrupt_gradient:
        def fn(theta):  # negative control for the exit path
            loss, grad = loss_and_grad(theta)
            grad = grad.copy()
            grad[0] += 1e-2
            return loss, grad
    err = grad_check(fn, params_to_vector(params), args.eps)
    ok = err < args.tol
    print(f"max relative error {err:.3e} (tolerance {args.tol:.1e}): "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_report(args) -> int:
    t0 = time.time()
    rows = []
    for path in args.metrics:
        with open(_require_file(path, "metrics file")) as fh:
            data = json.load(fh)
        if "accuracy" not in data:
            raise ValueError(f"metrics file {path} lacks an 'accuracy' key")
        rows.append(data)

    baseline = rows[0]["accuracy"]
    cols = ["method", "archive", "split", "k", "seed", "accuracy", "delta"]
    table = []
    for r in rows:
        delta = (r["accuracy"] - baseline) * 100.0
        table.append([str(r.get(c, "-")) for c in cols[:5]]
                     + [f"{r['accuracy']:.4f}", f"{delta:+.2f}"])

    if args.format == "md":
        lines = ["| " + " | ".join(cols) + " |",
                 "|" + "|".join("---" for _ in cols) + "|"]
        lines += ["| " + " | ".join(row) + " |" for row in table]
        text = "\n".join(lines) + "\n"
    else:
        lines = [",".join(cols)] + [",".join(row) for row in table]
        text = "\n".join(lines) + "\n"

    if args.out:
        _atomic_write_text(args.out, text)
        _write_manifest("report", args, {}, list(args.metrics), [args.out], t0)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attn-adapter",
        description="Few-shot adaptation of precomputed embeddings via "
                    "dual cross-attention adapters.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic embedding archive")
    p.add_argument("--n-classes", type=int, default=DEFAULT_SYNTH["n_classes"])
    p.add_argument("--k-support", type=int, default=DEFAULT_SYNTH["k_support"])
    p.add_argument("--q-query", type=int, default=DEFAULT_SYNTH["q_query"])
    p.add_argument("--dim", type=int, default=DEFAULT_SYNTH["d"])
    p.add_argument("--m-locals", type=int, default=DEFAULT_SYNTH["m"])
    p.add_argument("--noise", type=float, default=DEFAULT_SYNTH["noise"])
    p.add_argument("--text-noise", type=float, default=None,
                   help="category-side noise (defaults to --noise)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train adapters on an archive")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=2e-2)
    p.add_argument("--weight-decay", type=float, default=1e-2)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--hidden-dim", type=int, default=None)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--fixed-support", action="store_true",
                   help="reuse the epoch-0 support instead of resampling")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None,
                   help="history JSONL path (default: <out>.history.jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a method on an archive")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", default=None,
                   help="adapter checkpoint (method=attn; omitted = untrained init)")
    p.add_argument("--method", choices=("attn", "tip", "zeroshot"), default="attn")
    p.add_argument("--split", choices=("all", "base", "novel"), default="all")
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=5.5)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--report", default=None, help="write metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tip-search", help="grid-search cache-model hyperparameters")
    p.add_argument("--data", required=True)
    p.add_argument("--alphas", default="0,0.5,1,2,4")
    p.add_argument("--betas", default="1,2.5,5.5,8")
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_tip_search)

    p = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    p.add_argument("--n-classes", type=int, default=5)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--hidden-dim", type=int, default=None)
    p.add_argument("--m-locals", type=int, default=4)
    p.add_argument("--batch", type=int, default=6)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--corrupt-gradient", action="store_true",
                   help="debug: perturb the analytic gradient; must FAIL")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="tabulate metrics files (delta vs the first)")
    p.add_argument("metrics", nargs="+")
    p.add_argument("--format", choices=("csv", "md"), default="csv")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ArchiveError, TrainingDivergedError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
