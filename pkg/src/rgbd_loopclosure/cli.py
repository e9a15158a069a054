"""Command-line entry point: label, eval, gradcheck, train-toy, synth, stats."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import descriptor as desc
from . import evaluator, labeler, synth
from .rgbd_io import ManifestError, load_frame, load_manifest

log = logging.getLogger("rgbd_loopclosure")


class CliError(Exception):
    pass


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise CliError(f"output directory is not writable: {out}")
    return out


def _echo_config(out: Path, values: dict) -> None:
    # worker count is left out: it never changes results
    text = "".join(f"{k} = {v}\n" for k, v in sorted(values.items()) if k not in ("workers", "func", "out"))
    (out / "effective_config.txt").write_text(text, encoding="utf-8")


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {p}")
    return p


def _label_config(args) -> labeler.LabelConfig:
    values = labeler.read_config_file(_require(args.config, "config file")) if args.config else {}
    for f in fields(labeler.LabelConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return labeler.LabelConfig.from_mapping(values)


def cmd_label(args) -> int:
    cfg = _label_config(args)
    manifest = load_manifest(_require(args.manifest, "manifest"))
    out = _out_dir(args.out)
    gt, report = labeler.label_dataset(manifest, cfg, workers=args.workers)
    labeler.write_ground_truth(out / "ground_truth.txt", gt)
    labeler.write_report(out / "pairs.txt", report)
    _echo_config(out, {**asdict(cfg), "manifest": args.manifest})
    st = labeler.pair_stats(gt)
    print(f"positives {st.positives}  negatives {st.negatives}  unusable {st.unusable}  "
          f"negative:positive {st.ratio:.2f}")
    return 0


def _embed_manifest(manifest, gem, wh, size, workers) -> np.ndarray:
    k = len(gem.exponents)
    c = len(gem.exponents[0]) if len(gem.exponents[0]) > 1 else wh.weight.shape[1] // k

    def one(fid):
        img = desc.prepare_input(load_frame(manifest, fid), size)
        return desc.embed(desc.stub_pyramid(img, k, c), gem, wh)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(one, manifest.ids)))
    return np.array([one(i) for i in manifest.ids])


def cmd_eval(args) -> int:
    gt = labeler.read_ground_truth(_require(args.ground_truth, "ground-truth file"))
    if args.embeddings:
        ids, z = evaluator.read_embeddings(_require(args.embeddings, "embeddings file"))
    else:
        if not (args.model and args.manifest):
            raise CliError("eval needs --embeddings, or --model together with --manifest")
        manifest = load_manifest(_require(args.manifest, "manifest"))
        gem, wh = desc.load_model(_require(args.model, "model file"))
        ids, z = manifest.ids, _embed_manifest(manifest, gem, wh, args.input_size, args.workers)
    if list(ids) != list(gt.ids):
        raise CliError("frame ids of the embeddings do not match the ground-truth matrix")
    out = _out_dir(args.out)
    s = evaluator.similarity_matrix(z, ids)
    curve = evaluator.pr_sweep(s, gt, args.steps)
    evaluator.export_pr(curve, out / "pr.csv")
    evaluator.write_similarity(out / "similarity.txt", s)
    _echo_config(out, {k: v for k, v in vars(args).items() if k != "command"})
    print(f"max recall at 100% precision: {curve.max_recall_at_precision(1.0):.6f}")
    return 0


def cmd_gradcheck(args) -> int:
    r = desc.gradcheck(args.seed if args.seed is not None else 0, args.trials, corrupt=args.corrupt)
    line = f"checked {r.checked} partials, worst relative error {r.worst_error:.3e} at {r.worst_param}"
    if r.passed(args.tol):
        print(line)
        return 0
    print(f"gradient check FAILED: {line} (tolerance {args.tol:g})", file=sys.stderr)
    return 1


def cmd_train_toy(args) -> int:
    if args.seed is None:
        raise CliError("train-toy requires --seed")
    out = _out_dir(args.out)
    sched = desc.StageSchedule(
        steps=args.steps, stage_length=args.stage_length, tuples_a=args.tuples_a,
        negatives_a=args.negatives_a, negatives_b=args.negatives_b,
    )
    cfg = desc.TrainConfig(learning_rate=args.lr, margin=args.margin, seed=args.seed)
    if args.manifest:
        if not args.ground_truth:
            raise CliError("training from a dataset needs --ground-truth")
        manifest = load_manifest(_require(args.manifest, "manifest"))
        gt = labeler.read_ground_truth(_require(args.ground_truth, "ground-truth file"))
        if gt.ids != manifest.ids:
            raise CliError("frame ids of the manifest do not match the ground-truth matrix")
        pyrs = [desc.stub_pyramid(desc.prepare_input(load_frame(manifest, i), args.input_size)) for i in manifest.ids]
        source = desc.pair_tuple_source(pyrs, gt.entries, sched)
        channels = pyrs[0].channels
        data = None
    else:
        data = desc.make_cluster_pyramids(args.seed, per_cluster=args.per_cluster)
        source = data.tuple_source(sched)
        channels = data.pyramids[0].channels
    trace_path = out / "loss_trace.csv"
    try:
        result = desc.train_desk_scale(source, sched, cfg, channels)
        trace = [(s, st, l) for s, st, l in result.trace]
    except desc.TrainingDiverged as exc:
        _write_trace(trace_path, [(i, "?", l) for i, l in enumerate(exc.trace)])
        raise CliError(f"training diverged: {exc}; trace written to {trace_path}") from exc
    _write_trace(trace_path, trace)
    desc.save_model(out / "model.txt", result.gem, result.whitening)
    _echo_config(out, {k: v for k, v in vars(args).items() if k != "command"})
    msg = f"final step loss {trace[-1][2]:.6g}"
    if data is not None:
        final = desc.mean_tuple_loss(data, result.gem, result.whitening, margin=args.margin)
        sep = desc.separation(data, result.gem, result.whitening, args.margin)
        msg += f"  mean training loss {final:.6g}  separation {sep:.4f}"
    print(msg)
    return 0


def _write_trace(path: Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "stage", "loss"])
        for step, stage, loss in rows:
            w.writerow([step, stage, repr(float(loss))])


def cmd_synth(args) -> int:
    if args.seed is None:
        raise CliError("synth requires --seed")
    scene = synth.scene_from_spec(args.spec, args.seed)
    out = _out_dir(args.out)
    manifest = synth.write_dataset(scene, out, oracle=not args.no_oracle)
    load_manifest(manifest)
    print(f"wrote {len(scene)} frames to {manifest}")
    return 0


def cmd_stats(args) -> int:
    st = labeler.pair_stats(labeler.read_ground_truth(_require(args.ground_truth, "ground-truth file")))
    print(f"positives {st.positives}  negatives {st.negatives}  unusable {st.unusable}  "
          f"negative:positive {st.ratio:.2f}")
    return 0


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    def add_globals(parser, default):
        parser.add_argument("--workers", type=_positive_int, default=default(os.cpu_count() or 1))
        parser.add_argument("--seed", type=int, default=default(None))
        parser.add_argument("--config", default=default(None), help="flat key = value file of labeling options")
        parser.add_argument("-v", "--verbose", action="store_true", default=default(False))

    # global options are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    add_globals(common, lambda v: argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="loopclosure", description=__doc__)
    add_globals(p, lambda v: v)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("label", parents=[common], help="label loop closures of a posed RGB-D dataset")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    for f in fields(labeler.LabelConfig):
        kind = {"int": int, "float": float, "bool": lambda t: t.lower() in ("1", "true", "yes", "on")}[str(f.type)]
        s.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=kind, default=None)
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("eval", parents=[common], help="precision-recall sweep of descriptor similarities")
    s.add_argument("--ground-truth", required=True)
    s.add_argument("--manifest")
    s.add_argument("--model")
    s.add_argument("--embeddings")
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=evaluator.DEFAULT_STEPS)
    s.add_argument("--input-size", type=int, default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of descriptor gradients")
    s.add_argument("--trials", type=_positive_int, default=100)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("train-toy", parents=[common], help="desk-scale training of pooling exponents and whitening")
    s.add_argument("--out", required=True)
    s.add_argument("--manifest")
    s.add_argument("--ground-truth")
    s.add_argument("--input-size", type=int, default=None)
    s.add_argument("--per-cluster", type=int, default=12)
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--stage-length", type=int, default=50)
    s.add_argument("--tuples-a", type=int, default=4)
    s.add_argument("--negatives-a", type=int, default=5)
    s.add_argument("--negatives-b", type=int, default=20)
    s.add_argument("--lr", type=float, default=0.5)
    s.add_argument("--margin", type=float, default=desc.DEFAULT_MARGIN)
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("synth", parents=[common], help="render a synthetic RGB-D dataset with overlap oracle")
    s.add_argument("--spec", default="two_rooms", help="preset name or JSON scene file")
    s.add_argument("--out", required=True)
    s.add_argument("--no-oracle", action="store_true")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("stats", parents=[common], help="pair counts of a ground-truth matrix")
    s.add_argument("--ground-truth", required=True)
    s.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ManifestError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
