"""Command-line entry point.

Subcommands: gen-data, train, transfer, eval, gradcheck, skinning.
Exit codes: 0 success, 2 user/config error, 3 I/O error, 4 numerical-
check failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_USER = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posetransfer",
        description="Skeleton-free pose transfer between 3D characters.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic character dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None, help="dataset config file (key = value)")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="train the pose-transfer networks")
    p.add_argument("--data", required=True, help="dataset directory from gen-data")
    p.add_argument("--config", default=None, help="training config file (key = value)")
    p.add_argument("--out", required=True, help="checkpoint + metrics directory")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--ablate", action="append", default=[],
                   choices=["edge", "pseudo", "skinning"],
                   help="disable a loss component (repeatable)")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("transfer", help="transfer a pose onto a target mesh")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--source-posed", required=True)
    p.add_argument("--source-rest", required=True)
    p.add_argument("--target-rest", required=True)
    p.add_argument("--out", required=True, help="output OBJ")
    p.add_argument("--dump-skinning", default=None,
                   help="write predicted target skinning to this file")
    p.add_argument("--dump-transforms", default=None,
                   help="write predicted part transforms to this file")

    p = sub.add_parser("eval", help="evaluate PMD and part consistency")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="output CSV")

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("skinning", help="export part-colored skinning for a mesh")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True, help="output OBJ with vertex colors")
    return parser


def _load_mesh(path):
    from .mesh import MeshError, load_obj

    if not os.path.isfile(path):
        raise CliError(f"no such file: {path}", EXIT_USER)
    try:
        return load_obj(path)
    except MeshError as exc:
        raise CliError(f"{path}: {exc}", EXIT_USER)


def _load_ckpt(path):
    from .train import load_checkpoint

    if not os.path.isfile(path):
        raise CliError(f"no such checkpoint: {path}", EXIT_USER)
    try:
        return load_checkpoint(path)
    except Exception as exc:
        raise CliError(f"cannot load checkpoint {path}: {exc}", EXIT_USER)


def cmd_gen_data(args) -> int:
    from .synth import DatasetConfig, make_dataset, save_dataset
    from .train import ConfigError

    values = {}
    if args.config:
        defaults = dataclasses.asdict(DatasetConfig())
        try:
            with open(args.config) as fh:
                for lineno, raw in enumerate(fh, start=1):
                    line = raw.split("#", 1)[0].strip()
                    if not line:
                        continue
                    if "=" not in line:
                        raise CliError(
                            f"{args.config}:{lineno}: expected 'key = value'", EXIT_USER)
                    key, _, val = line.partition("=")
                    key, val = key.strip(), val.strip()
                    if key not in defaults:
                        raise CliError(
                            f"{args.config}:{lineno}: unknown key {key!r}", EXIT_USER)
                    try:
                        values[key] = type(defaults[key])(val)
                    except ValueError as exc:
                        raise CliError(f"{args.config}:{lineno}: {exc}", EXIT_USER)
        except OSError as exc:
            raise CliError(f"cannot read {args.config}: {exc}", EXIT_IO)
    if args.seed is not None:
        values["seed"] = args.seed
    try:
        config = DatasetConfig(**values)
        dataset = make_dataset(config)
    except (ValueError, ConfigError) as exc:
        raise CliError(str(exc), EXIT_USER)
    try:
        save_dataset(dataset, args.out)
    except OSError as exc:
        raise CliError(f"cannot write dataset: {exc}", EXIT_IO)
    n = len(dataset.all_characters)
    print(f"wrote {n} characters to {args.out} "
          f"({len(dataset.paired)} paired, {len(dataset.static)} static, "
          f"{len(dataset.held)} held-out)")
    return EXIT_OK


def cmd_train(args) -> int:
    from .synth import SynthError, load_dataset
    from .train import ConfigError, fit, parse_config

    overrides = {}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    for name in args.ablate:
        overrides[{"edge": "use_edge", "pseudo": "use_pseudo",
                   "skinning": "use_skin"}[name]] = False
    try:
        config = parse_config(args.config, overrides=overrides)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_USER)
    try:
        dataset = load_dataset(args.data)
    except (OSError, SynthError) as exc:
        raise CliError(f"cannot load dataset: {exc}", EXIT_USER)

    def log(row):
        if not args.quiet:
            print(f"step {row['step']:5d} [{row['mode']:8s}] "
                  f"total {row['total']:.5f} pmd {row['pmd_probe']:.3f}")

    try:
        result = fit(dataset, config, out_dir=args.out,
                     resume_from=args.resume, log=log)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_USER)
    except OSError as exc:
        raise CliError(f"I/O failure during training: {exc}", EXIT_IO)
    print(f"final checkpoint: {result.final_checkpoint}")
    return EXIT_OK


def cmd_transfer(args) -> int:
    from .articulation import save_skinning, save_transforms
    from .mesh import save_obj
    from .networks import pose_transfer

    params, _, _, _ = _load_ckpt(args.ckpt)
    source_posed = _load_mesh(args.source_posed)
    source_rest = _load_mesh(args.source_rest)
    target_rest = _load_mesh(args.target_rest)
    if source_posed.n_vertices != source_rest.n_vertices:
        raise CliError("posed and rest source meshes must share vertices", EXIT_USER)
    result = pose_transfer(source_posed, source_rest, target_rest, params)
    try:
        save_obj(result.mesh, args.out)
        if args.dump_skinning:
            save_skinning(result.w_target, args.dump_skinning)
        if args.dump_transforms:
            save_transforms(result.transforms, args.dump_transforms)
    except OSError as exc:
        raise CliError(f"cannot write output: {exc}", EXIT_IO)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .articulation import hard_assignment
    from .evaluation import consistency_scores, pmd, write_report
    from .mesh import vertex_features
    from .networks import char_context, pose_transfer, predict_skinning
    from .synth import SynthError, load_dataset

    params, _, _, _ = _load_ckpt(args.ckpt)
    try:
        dataset = load_dataset(args.data)
    except (OSError, SynthError) as exc:
        raise CliError(f"cannot load dataset: {exc}", EXIT_USER)

    rows = []
    for split, chars in (("held", dataset.held), ("paired", dataset.paired)):
        if len(chars) < 2 or not chars[0].poses:
            continue
        values = []
        for si, src in enumerate(chars):
            for ti, tgt in enumerate(chars):
                if si == ti:
                    continue
                for p, (_, posed) in enumerate(src.poses):
                    result = pose_transfer(posed, src.rest, tgt.rest, params)
                    values.append(pmd(result.mesh, tgt.poses[p][1].vertices))
        rows.append(("pmd", split, float(np.mean(values))))

    eval_chars = dataset.held if len(dataset.held) >= 2 else dataset.paired
    if len(eval_chars) >= 2:
        pred_labels, gt_labels = [], []
        for ch in eval_chars:
            ctx = char_context(ch.rest)
            w = predict_skinning(ctx.features, ctx.graph, params.skinning,
                                 params.config.leak)
            pred_labels.append(np.argmax(w.data, axis=1))
            gt_labels.append(np.array(ch.part_names)[np.argmax(ch.gt_skinning, axis=1)])
        report = consistency_scores(pred_labels, gt_labels)
        split = "held" if len(dataset.held) >= 2 else "paired"
        rows.append(("consistency_pred_to_gt", split, report.pred_to_gt))
        rows.append(("consistency_gt_to_pred", split, report.gt_to_pred))

    try:
        write_report(args.report, rows)
    except OSError as exc:
        raise CliError(f"cannot write report: {exc}", EXIT_IO)
    for metric, split, value in rows:
        print(f"{metric:26s} {split:8s} {value:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_gradient_suite

    reports = run_gradient_suite(seed=args.seed)
    failed = [name for name, rep in reports if not rep.passed]
    for name, rep in reports:
        status = "ok" if rep.passed else "FAIL"
        print(f"{status:4s} {name:42s} max_rel_err {rep.max_rel_err:.3e} "
              f"({rep.n_checked} coords, {rep.n_kink_suspect} kink-suspect)")
    if failed:
        print(f"{len(failed)} gradient check(s) failed")
        return EXIT_NUMERIC
    print(f"all {len(reports)} gradient checks passed")
    return EXIT_OK


def cmd_skinning(args) -> int:
    from .articulation import hard_assignment
    from .evaluation import save_part_colored_obj
    from .networks import char_context, predict_skinning

    params, _, _, _ = _load_ckpt(args.ckpt)
    mesh = _load_mesh(args.mesh)
    ctx = char_context(mesh)
    w = predict_skinning(ctx.features, ctx.graph, params.skinning, params.config.leak)
    labels = np.argmax(w.data, axis=1)
    try:
        save_part_colored_obj(mesh, labels, args.out)
    except OSError as exc:
        raise CliError(f"cannot write output: {exc}", EXIT_IO)
    print(f"wrote {args.out}")
    return EXIT_OK


_HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "transfer": cmd_transfer,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "skinning": cmd_skinning,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
