"""Command-line entry point: ``homctx <command> [options]``.

Commands
--------
synth           generate a synthetic dataset directory
fit             learn parameters for one ablation mode
infer           MAP inference on every frame of a split
eval            fit (or load) the ablation modes and write accuracy tables
oracle          compare iterative inference with exhaustive search
export-context  context tables of a parameter file

Failures print one JSON object ``{"error": ..., "message": ...}`` on stderr and
exit with status 2 (bad input) or 1 (anything else).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io
from .evaluation import EVAL_LEARNING, MODES, AblationSpec, run_eval, write_context_tables
from .inference import InferenceConfig, infer
from .labels import LabelSpaceError, gtea_label_space, load_label_space
from .learning import fit
from .oracle import run_oracle_suite
from .synth import SynthConfig, synth_generate

log = logging.getLogger("homctx")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("threshold must be in (0, 1)")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="homctx", description="Hand-object manipulation context model.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        return sub.add_parser(name, help=help_)

    s = add("synth", "generate a synthetic dataset")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-train", type=int, default=2000)
    s.add_argument("--n-test", type=int, default=500)
    s.add_argument("--sizes", type=int, nargs=3, metavar=("NA", "NG", "NO"), default=(5, 6, 5))
    s.add_argument("--sharpness", type=float, default=5.0)
    s.add_argument("--noise", type=float, default=0.6)

    f = add("fit", "learn parameters")
    f.add_argument("--manifest", required=True, type=Path)
    f.add_argument("--out", required=True, type=Path)
    f.add_argument("--mode", choices=sorted(MODES), default="full")
    f.add_argument("--split", default="train")
    f.add_argument("--l2", type=float, default=EVAL_LEARNING.l2_strength)

    i = add("infer", "MAP inference on a split")
    i.add_argument("--manifest", required=True, type=Path)
    i.add_argument("--params", required=True, type=Path)
    i.add_argument("--out", required=True, type=Path)
    i.add_argument("--split", default="test")
    i.add_argument("--threshold", type=_fraction, default=0.8)
    i.add_argument("--max-iter", type=_positive_int, default=10)

    e = add("eval", "accuracy tables, ablations and downsizing curve")
    e.add_argument("--manifest", type=Path)
    e.add_argument("--out", required=True, type=Path)
    e.add_argument("--params", nargs="*", metavar="MODE=PATH",
                   help="pre-fitted parameters per mode instead of fitting")
    e.add_argument("--mode", choices=sorted(MODES), action="append")
    e.add_argument("--downsize", type=float, nargs="*", default=[])
    e.add_argument("--seed", type=int, default=0, help="synthetic dataset seed when no manifest is given")
    e.add_argument("--threshold", type=_fraction, default=0.8)
    e.add_argument("--max-iter", type=_positive_int, default=10)

    o = add("oracle", "iterative vs exhaustive inference on random instances")
    o.add_argument("--count", type=_positive_int, default=200)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--sizes", type=int, nargs=3, metavar=("NA", "NG", "NO"), default=(4, 5, 4))
    o.add_argument("--threshold", type=_fraction, default=0.8)
    o.add_argument("--max-iter", type=_positive_int, default=10)

    x = add("export-context", "context tables of a parameter file")
    x.add_argument("--params", required=True, type=Path)
    x.add_argument("--labels", type=Path, help="label-space JSON (default: bundled GTEA taxonomy)")
    x.add_argument("--out", required=True, type=Path)
    x.add_argument("--reduce", choices=("sum", "logsumexp"), default="sum")

    for sp in (f, i, e):
        sp.add_argument("--labels", type=Path, help="label-space JSON overriding the manifest's")
    return p


def _space(args, manifest=None):
    if getattr(args, "labels", None):
        return load_label_space(args.labels)
    if manifest is not None:
        return manifest.load_label_space()
    return gtea_label_space()


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def cmd_synth(args):
    na, ng, no = args.sizes
    cfg = SynthConfig(n_actions=na, n_grasps=ng, n_attributes=no, n_train=args.n_train, n_test=args.n_test,
                      sharpness=args.sharpness, noise=args.noise, seed=args.seed)
    ds = synth_generate(cfg)
    ds.save(args.out)
    _emit({"out": str(args.out), "frames": len(ds.records), "label_space": ds.space.fingerprint})


def cmd_fit(args):
    from .learning import LearningConfig

    manifest = io.read_manifest(args.manifest)
    space = _space(args, manifest)
    frames = [r.training_frame(space) for r in io.read_frames(manifest, args.split)]
    if not frames:
        raise UsageError(f"split {args.split!r} has no frames")
    res = fit(frames, space, LearningConfig(l2_strength=args.l2), frozen=MODES[args.mode])
    io.write_params(res.params, args.out, space)
    _emit({"out": str(args.out), "mode": args.mode, "objective": res.objective, "epochs": res.epochs,
           "converged": res.converged})


def cmd_infer(args):
    manifest = io.read_manifest(args.manifest)
    space = _space(args, manifest)
    params = io.read_params(args.params, space)
    cfg = InferenceConfig(hand_detection_threshold=args.threshold, max_iterations=args.max_iter)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for rec in io.read_frames(manifest, args.split):
            res = infer(rec.evidence, params, cfg, space)
            st = res.state
            fh.write(json.dumps({
                "frame_id": rec.frame_id, "action": st.action, "grasp": list(st.grasp),
                "attribute": list(st.attribute), "hand": list(st.hand), "obj": list(st.obj),
                "potential": res.potential, "iterations": res.iterations_used,
            }) + "\n")
            n += 1
    _emit({"out": str(args.out), "frames": n})


def _parse_params(items, space):
    out = {}
    for item in items or []:
        mode, sep, path = str(item).partition("=")
        if not sep or mode not in MODES:
            raise UsageError(f"--params expects MODE=PATH with MODE in {sorted(MODES)}, got {item!r}")
        out[mode] = io.read_params(path, space)
    return out


def cmd_eval(args):
    modes = tuple(args.mode) if args.mode else tuple(MODES)
    ablation = AblationSpec(modes=modes, downsizing=tuple(args.downsize))
    inference = InferenceConfig(hand_detection_threshold=args.threshold, max_iterations=args.max_iter)
    if args.manifest:
        source = io.read_manifest(args.manifest)
        space = _space(args, source)
    else:
        source = SynthConfig(noise=0.6, seed=args.seed)
        space = source.label_space()
    params = _parse_params(args.params, space) or None
    report = run_eval(source, ablation, params, inference=inference)
    written = io.write_results(report, args.out)
    _emit({"out": str(args.out), "files": len(written), **report.summary()})


def cmd_oracle(args):
    cfg = InferenceConfig(hand_detection_threshold=args.threshold, max_iterations=args.max_iter)
    report = run_oracle_suite(args.count, tuple(args.sizes), args.seed, config=cfg)
    _emit(report.to_dict())


def cmd_export_context(args):
    space = _space(args)
    params = io.read_params(args.params, space)
    written = write_context_tables(params, space, args.out, mode=args.reduce)
    _emit({"out": str(args.out), "files": [str(p) for p in written]})


COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "oracle": cmd_oracle,
    "export-context": cmd_export_context,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
        return 0
    except (UsageError, io.SchemaError, LabelSpaceError, OSError, ValueError, KeyError) as exc:
        _report(exc)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported, not swallowed
        _report(exc)
        return 1


def _report(exc: BaseException) -> None:
    detail = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("line", "field"):
        if getattr(exc, attr, None) is not None:
            detail[attr] = getattr(exc, attr)
    print(json.dumps(detail), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
