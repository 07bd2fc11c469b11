"""Command-line entry point.

Subcommands: gen-synth, label, train, eval, report, gradcheck, sweep. All
honor --seed; outputs are plain CSV/JSON so any external tool can plot them.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import sys
import time
from pathlib import Path

import numpy as np

from . import data, evaluation, gradcheck
from .geometry import Label, SiouRule, classify_pair, overlap
from .model import ArchConfig, DescriptorModel
from .serialization import read_json, unpack_array, write_json
from .trainer import Trainer, load_config


def _cmd_gen_synth(args) -> int:
    spec_dict = read_json(args.spec) if args.spec else {}
    if args.seed is not None:
        spec_dict["seed"] = args.seed
    spec = data.SynthSpec.from_dict(spec_dict)
    manifest = data.generate_synthetic(spec, args.out)
    n = sum(len(e.frames(None)) for e in manifest.environments)
    print(f"wrote {n} frames across {len(manifest.environments)} environments to {args.out}")
    return 0


def _cmd_label(args) -> int:
    manifest = data.load_manifest(args.manifest)
    names = manifest.env_names()
    if args.env is None:
        if len(names) > 1:
            raise ValueError(f"--env is required, manifest has environments {names}")
        args.env = names[0]
    env = next((e for e in manifest.environments if e.name == args.env), None)
    if env is None:
        raise ValueError(f"unknown environment {args.env!r}")
    frames = env.frames(args.split)
    with_siou = isinstance(env.rule, SiouRule)
    rows = 0
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seq_a", "idx_a", "seq_b", "idx_b", "label", "siou"])
        for i in range(len(frames)):
            for j in range(i + 1, len(frames)):
                a, b = frames[i], frames[j]
                if with_siou:
                    res = overlap(a, b, env.rule.grid, env.rule.occlusion, env.rule.mode)
                    if res.siou > env.rule.positive:
                        lab = Label.POSITIVE
                    elif res.siou < env.rule.negative:
                        lab = Label.NEGATIVE
                    else:
                        lab = Label.AMBIGUOUS
                    extra = f"{res.siou:.6f}"
                else:
                    lab = classify_pair(a, b, env.rule)
                    extra = ""
                writer.writerow([a.seq, a.index, b.seq, b.index, lab.name, extra])
                rows += 1
    print(f"wrote {rows} pair labels to {args.out}")
    return 0


def _cmd_train(args) -> int:
    manifest = data.load_manifest(args.manifest)
    if args.resume:
        trainer = Trainer.resume(args.resume, manifest, out_dir=args.out)
    else:
        config = load_config(args.config)
        if args.method:
            config.method = args.method
        if args.seed is not None:
            config.seed = args.seed
        trainer = Trainer(config, manifest, out_dir=args.out)
    report = trainer.run(save_every=args.save_every)
    print(f"trained {report['global_steps']} steps "
          f"({report['elapsed_seconds']:.1f}s); artifacts in {args.out}")
    return 0


def _load_models(ckpt_dir: Path) -> list[DescriptorModel]:
    paths = sorted(ckpt_dir.glob("env_*.ckpt"),
                   key=lambda p: int(p.stem.split("_")[1]))
    if not paths:
        raise ValueError(f"no env_*.ckpt checkpoints in {ckpt_dir}")
    models = []
    for p in paths:
        blob = read_json(p)
        models.append(DescriptorModel(ArchConfig.from_dict(blob["arch"]),
                                      theta=unpack_array(blob["theta"])))
    return models


def _cmd_eval(args) -> int:
    manifest = data.load_manifest(args.manifest)
    models = _load_models(Path(args.checkpoints))
    r = evaluation.build_performance_matrix(
        models, manifest, window=args.window, per_query=args.per_query
    )
    names = manifest.env_names()
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["checkpoint"] + names)
        for i, row in enumerate(r):
            writer.writerow([f"env_{i + 1}"] + [f"{v:.10g}" for v in row])
    print(f"wrote {r.shape[0]}x{r.shape[1]} performance matrix to {args.out}")
    return 0


def read_matrix(path) -> tuple[np.ndarray, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    r = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    return r, names


def _cmd_report(args) -> int:
    r, names = read_matrix(args.matrix)
    summary = evaluation.summarize(r)
    payload = summary.to_dict()
    payload["matrix"] = r.tolist()
    payload["environments"] = names
    payload["generated_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    write_json(args.out, payload)
    bwt = "n/a" if summary.bwt is None else f"{summary.bwt:.4f}"
    fwt = "n/a" if summary.fwt is None else f"{summary.fwt:.4f}"
    print(f"AP={summary.ap:.4f} BWT={bwt} FWT={fwt} -> {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(seed=args.seed if args.seed is not None else 0)
    width = max(len(r.name) for r in results)
    failed = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max rel err {r.max_rel_error:.3e}  {status}")
        failed += not r.passed
    print(f"{len(results) - failed}/{len(results)} gradient checks passed "
          f"(tolerance {gradcheck.TOLERANCE:g})")
    return 1 if failed else 0


def _cmd_sweep(args) -> int:
    spec = data.SynthSpec(envs=2, places=12, latent_dim=8,
                          image_shape=(3, 12, 12), frames_per_env=args.frames,
                          noise=0.02, seed=args.seed if args.seed is not None else 0)
    workdir = Path(args.out).parent if Path(args.out).parent != Path("") else Path(".")
    dataset_dir = Path(args.workdir) if args.workdir else workdir / "sweep_data"
    manifest = data.generate_synthetic(spec, dataset_dir)

    grid = list(itertools.product(args.lambda1, args.lambda2, args.margin))
    rows = []
    for lam1, lam2, margin in grid:
        config = load_config(args.config)
        config.method = "airloop"
        config.lambda1, config.lambda2, config.margin = lam1, lam2, margin
        config.seed = spec.seed
        config.input_shape = spec.image_shape
        config.memory_capacity = min(config.memory_capacity, 128)
        trainer = Trainer(config, manifest, out_dir=None)
        models = []
        for env in manifest.environments:
            trainer.begin_environment(env)
            for frame in env.frames("train"):
                trainer.train_step(frame)
            trainer.finish_environment()
            trainer.env_pos += 1
            models.append(DescriptorModel(config.arch(), theta=trainer.model.theta))
        r = evaluation.build_performance_matrix(models, manifest)
        s = evaluation.summarize(r)
        rows.append((lam1, lam2, margin, s.ap, s.bwt, s.fwt))
        print(f"lambda1={lam1} lambda2={lam2} margin={margin}: "
              f"AP={s.ap:.4f} BWT={s.bwt:.4f} FWT={s.fwt:.4f}")

    rows.sort(key=lambda row: (-(row[4] if row[4] is not None else -1), -row[3]))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "lambda1", "lambda2", "margin", "ap", "bwt", "fwt"])
        for rank, row in enumerate(rows, start=1):
            writer.writerow([rank] + [f"{v:.6g}" for v in row])
    print(f"wrote ranking of {len(rows)} configurations to {args.out}")
    return 0


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="looplearn",
        description="Lifelong training and evaluation of loop-closure descriptors",
    )
    parser.add_argument("--verbose", action="store_true", help="print tracebacks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="materialize a synthetic dataset")
    p.add_argument("--spec", help="JSON file of generator parameters")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_gen_synth)

    p = sub.add_parser("label", help="write ground-truth pair labels as CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--env", help="environment name (required for multi-env manifests)")
    p.add_argument("--split", default=None, help="restrict to one split")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_label)

    p = sub.add_parser("train", help="run lifelong training over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--method", choices=("finetune", "mas", "kd", "rmas", "rkd", "airloop"))
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--save-every", type=int, help="extra checkpoint every N steps")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="build the T x T performance matrix")
    p.add_argument("--checkpoints", required=True, help="directory of env_*.ckpt")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="matrix CSV path")
    p.add_argument("--window", type=int, help="temporal exclusion window")
    p.add_argument("--per-query", action="store_true")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="summarize a performance matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--out", required=True, help="summary JSON path")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("sweep", help="grid-search loss weights on a synthetic benchmark")
    p.add_argument("--config", help="base JSON config file")
    p.add_argument("--out", required=True, help="ranking CSV path")
    p.add_argument("--lambda1", type=_float_list, default=[0.03, 0.1, 0.3])
    p.add_argument("--lambda2", type=_float_list, default=[0.03, 0.1, 0.3])
    p.add_argument("--margin", type=_float_list, default=[0.2])
    p.add_argument("--frames", type=int, default=400, help="frames per environment")
    p.add_argument("--workdir", help="directory for the generated dataset")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:
        if getattr(args, "verbose", False):
            raise
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
