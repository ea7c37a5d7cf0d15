"""Command line entry point: ``camfuse {synth,pretrain,train,eval,gradcheck,shapes}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .data import SynthConfig, load_manifest, save_dataset, synth_generate
from .harness.config import TASKS, load_config

logger = logging.getLogger("camfuse")


def _bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {v!r}")


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' file; flags override it")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--pretrain-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--volume-size", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--freeze-specific", type=_bool, nargs="?", const=True)
    p.add_argument("--mse-paper-exact", type=_bool, nargs="?", const=True)
    p.add_argument("--manifest", help="dataset manifest (TSV); synthetic data when omitted")
    p.add_argument("--n-subjects", type=int, default=120, help="synthetic subjects when no manifest")
    p.add_argument("--out", default="runs", help="output directory")


def _config(args):
    keys = ("task", "epochs", "pretrain_epochs", "batch_size", "lr", "lam", "seed", "volume_size",
            "folds", "freeze_specific", "mse_paper_exact")
    return load_config(args.config, {k: getattr(args, k, None) for k in keys})


def _subjects(args, cfg):
    if args.manifest:
        return load_manifest(args.manifest)
    return synth_generate(SynthConfig(n_subjects=args.n_subjects, volume_size=cfg.volume_size, seed=cfg.seed))


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_subjects=args.n_subjects,
        volume_size=args.volume_size,
        atrophy_radius_delta=args.atrophy,
        hypometabolism_delta=args.hypometabolism,
        noise_sigma=args.noise,
        seed=args.seed,
    )
    manifest = save_dataset(synth_generate(cfg), args.out)
    print(f"wrote {cfg.n_subjects} subjects; manifest {manifest}")
    return 0


def cmd_pretrain(args) -> int:
    from .harness.checkpoint import save_checkpoint
    from .harness.training import prepare_volumes, pretrain_specific
    from .model import FusionNet

    cfg = _config(args)
    X, y = prepare_volumes(_subjects(args, cfg), cfg.volume_size)
    model = FusionNet(n_prototypes=cfg.n_prototypes, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    trace = pretrain_specific(model, X, y, cfg.pretrain_epochs, cfg.batch_size, cfg.lr, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "pretrain_trace.csv", "w") as fh:
        fh.write("epoch,l_mri,l_pet\n")
        for e, a, b in trace:
            fh.write(f"{e},{a!r},{b!r}\n")
    save_checkpoint(model, out / "pretrain.ckpt", cfg.to_dict(), rng.bit_generator.state)
    print(f"pretrained specific extractors for {cfg.pretrain_epochs} epochs -> {out / 'pretrain.ckpt'}")
    return 0


def cmd_train(args) -> int:
    from .harness.crossval import cross_validate

    cfg = _config(args)
    report, _ = cross_validate(cfg, _subjects(args, cfg), out_dir=args.out, max_folds=args.max_folds)
    print(report.format())
    print(f"metrics -> {Path(args.out) / 'metrics.csv'}")
    return 0


def cmd_eval(args) -> int:
    from .harness.checkpoint import load_checkpoint
    from .harness.metrics import MetricsReport
    from .harness.training import evaluate, prepare_volumes

    model, saved, _ = load_checkpoint(args.checkpoint)
    size = args.volume_size or saved.get("volume_size", 32)
    if args.manifest:
        subjects = load_manifest(args.manifest)
    else:
        subjects = synth_generate(SynthConfig(n_subjects=args.n_subjects, volume_size=size, seed=args.seed))
    X, y = prepare_volumes(subjects, size)
    report = MetricsReport()
    report.add(evaluate(model, X, y))
    print(report.format())
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        report.to_csv(Path(args.out) / "metrics.csv")
    return 0


def cmd_gradcheck(args) -> int:
    from .verify import gradient_suite

    worst = 0.0
    for name, err in gradient_suite(seeds=range(args.seeds)):
        status = "ok" if err < args.tol else "FAIL"
        print(f"{name:<28} max rel err {err:.3e}  {status}")
        worst = max(worst, err)
    return 0 if worst < args.tol else 1


def cmd_shapes(args) -> int:
    from .verify import pipeline_shapes

    for stage, shape in pipeline_shapes(args.volume_size):
        print(f"{stage:<12} {' x '.join(map(str, shape))}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="camfuse", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--threads", type=int, default=1, help="BLAS threads (1 keeps runs bit-reproducible)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic NIfTI dataset and manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--n-subjects", type=int, default=120)
    p.add_argument("--volume-size", type=int, default=32)
    p.add_argument("--atrophy", type=float, default=SynthConfig.atrophy_radius_delta)
    p.add_argument("--hypometabolism", type=float, default=SynthConfig.hypometabolism_delta)
    p.add_argument("--noise", type=float, default=SynthConfig.noise_sigma)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="pretrain the modality-specific extractors")
    _run_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="joint training with k-fold cross-validation")
    _run_flags(p)
    p.add_argument("--max-folds", type=int, help="stop after this many folds")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest")
    p.add_argument("--n-subjects", type=int, default=40)
    p.add_argument("--volume-size", type=int)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("shapes", help="print the pipeline shape table")
    p.add_argument("--volume-size", type=int, default=128)
    p.set_defaults(func=cmd_shapes)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=args.threads):
        return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
