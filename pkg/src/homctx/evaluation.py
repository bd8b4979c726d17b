"""Accuracy protocol: ablation modes, confusion matrices and downsizing curves.

Three models are compared by holding parameter blocks at zero during fitting:

================== =====================================
evidence-only      alpha, beta, gamma zero (classifier argmax baseline)
evidence+physical  alpha zero (grasp/attribute context only)
full               every block learned
================== =====================================
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .inference import InferenceConfig, infer
from .io import FrameRecord, per_class_accuracy, write_accuracy_csv, write_confusion_csv, write_matrix_csv
from .labels import SIDES, LabelSpace
from .learning import CONTEXT_AXES, FitResult, FrameBatch, LearningConfig, fit, marginalize_context
from .potentials import ModelParams

log = logging.getLogger(__name__)

MODES = {
    "evidence-only": ("alpha", "beta", "gamma"),
    "evidence+physical": ("alpha",),
    "full": (),
}
TASKS = ("grasp", "attribute", "action")
CURVE_TASKS = ("grasp", "attribute")
# the context tensor has far more entries than a desk-scale training set has frames
EVAL_LEARNING = LearningConfig(l2_strength=1.0)


@dataclass(frozen=True)
class AblationSpec:
    modes: tuple[str, ...] = tuple(MODES)
    downsizing: tuple[float, ...] = ()

    def __post_init__(self):
        unknown = set(self.modes) - set(MODES)
        if unknown:
            raise ValueError(f"unknown modes {sorted(unknown)}")
        fr = list(self.downsizing)
        if any(not 0 <= f < 1 for f in fr) or any(b <= a for a, b in zip(fr, fr[1:])):
            raise ValueError("downsizing fractions must be strictly increasing in [0, 1)")


@dataclass
class Predictions:
    """Predicted labels, one row per frame: (action, grasp_l, grasp_r, attr_l, attr_r)."""

    frame_ids: list[str]
    labels: np.ndarray
    potentials: np.ndarray

    def to_rows(self) -> list[dict]:
        return [
            {"frame_id": fid, "action": int(r[0]), "grasp": [int(r[1]), int(r[2])],
             "attribute": [int(r[3]), int(r[4])], "potential": float(p)}
            for fid, r, p in zip(self.frame_ids, self.labels, self.potentials)
        ]


def predict(records: Sequence[FrameRecord], params: ModelParams,
            config: InferenceConfig = InferenceConfig()) -> Predictions:
    labels = np.zeros((len(records), 5), dtype=int)
    pots = np.zeros(len(records))
    for i, rec in enumerate(records):
        res = infer(rec.evidence, params, config)
        labels[i] = res.state.labels()
        pots[i] = res.potential
    return Predictions([r.frame_id for r in records], labels, pots)


def truth_labels(records: Sequence[FrameRecord]) -> np.ndarray:
    out = np.zeros((len(records), 5), dtype=int)
    for i, rec in enumerate(records):
        t = rec.truth
        out[i] = (t.action, t.grasp[0], t.grasp[1], t.attribute[0], t.attribute[1])
    return out


def confusions(truth: np.ndarray, pred: np.ndarray, space: LabelSpace) -> dict[str, np.ndarray]:
    """Per-task (true x predicted) counts.

    Grasps are scored on annotated hands and attributes on annotated objects,
    pooling both sides; a missed hand or object counts as a prediction of the
    null class.
    """
    na, ng, no = space.sizes
    out = {
        "action": np.zeros((na, na), dtype=int),
        "grasp": np.zeros((ng + 1, ng + 1), dtype=int),
        "attribute": np.zeros((no + 1, no + 1), dtype=int),
    }
    np.add.at(out["action"], (truth[:, 0], pred[:, 0]), 1)
    for s in SIDES:
        g_mask = truth[:, 1 + s] > 0
        np.add.at(out["grasp"], (truth[g_mask, 1 + s], pred[g_mask, 1 + s]), 1)
        o_mask = truth[:, 3 + s] > 0
        np.add.at(out["attribute"], (truth[o_mask, 3 + s], pred[o_mask, 3 + s]), 1)
    return out


def overall_accuracy(conf: dict[str, np.ndarray]) -> dict[str, float]:
    return {task: per_class_accuracy(conf[task])[1] for task in TASKS}


@dataclass
class ModeResult:
    mode: str
    confusion: dict[str, np.ndarray]
    overall: dict[str, float]
    predictions: Predictions
    fit: Optional[FitResult] = None


@dataclass
class EvalReport:
    space: LabelSpace
    modes: dict[str, ModeResult]
    curve: dict[float, dict[str, dict[str, float]]] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    params: dict[str, ModelParams] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "label_space": self.space.fingerprint,
            "overall": {m: r.overall for m, r in self.modes.items()},
            "objective": {m: (r.fit.objective if r.fit else None) for m, r in self.modes.items()},
            "downsizing": {repr(f): v for f, v in self.curve.items()},
            "notes": self.notes,
        }


def fit_modes(train: Sequence[FrameRecord], space: LabelSpace, modes: Sequence[str],
              config: LearningConfig = EVAL_LEARNING) -> dict[str, FitResult]:
    batch = FrameBatch([r.training_frame(space) for r in train], space)
    return {m: fit(batch, space, config, frozen=MODES[m]) for m in modes}


def evaluate_modes(test: Sequence[FrameRecord], space: LabelSpace, params: dict[str, ModelParams],
                   inference: InferenceConfig = InferenceConfig(),
                   fits: Optional[dict[str, FitResult]] = None) -> dict[str, ModeResult]:
    truth = truth_labels(test)
    out = {}
    for mode, p in params.items():
        pred = predict(test, p, inference)
        conf = confusions(truth, pred.labels, space)
        out[mode] = ModeResult(mode, conf, overall_accuracy(conf), pred, (fits or {}).get(mode))
    return out


_NOTE = ("ablation modes hold parameter blocks at zero while fitting: evidence-only zeroes "
         "alpha, beta, gamma; evidence+physical zeroes alpha")


def run_eval(source, ablation: AblationSpec = AblationSpec(), params: Optional[dict[str, ModelParams]] = None,
             learning: LearningConfig = EVAL_LEARNING, inference: InferenceConfig = InferenceConfig(),
             train_split: str = "train", test_split: str = "test") -> EvalReport:
    """Fit (unless ``params`` is given) and score every mode on the test split.

    ``source`` is a :class:`~homctx.synth.SynthConfig`, a
    :class:`~homctx.synth.SynthDataset` or a :class:`~homctx.io.DatasetManifest`.
    With downsizing fractions each mode is refit on the first ``1 - f`` share
    of the training frames; for synthetic sources the grasp and the attribute
    classifier are in turn regenerated with the noise a classifier trained on
    that share would have (see :func:`homctx.synth.degraded`).
    """
    from .io import DatasetManifest, read_frames
    from .synth import SynthConfig, SynthDataset, synth_generate

    synth_cfg = None
    if isinstance(source, SynthConfig):
        synth_cfg = source
        source = synth_generate(source)
    if isinstance(source, SynthDataset):
        synth_cfg = synth_cfg or source.config
        space, train, test = source.space, source.split("train"), source.split("test")
    elif isinstance(source, DatasetManifest):
        space = source.load_label_space()
        train = list(read_frames(source, train_split)) if params is None or ablation.downsizing else []
        test = list(read_frames(source, test_split))
    else:
        raise TypeError(f"unsupported source {type(source).__name__}")

    fits = None
    if params is None:
        fits = fit_modes(train, space, ablation.modes, learning)
        params = {m: r.params for m, r in fits.items()}
    missing = set(ablation.modes) - set(params)
    if missing:
        raise KeyError(f"no parameters for modes {sorted(missing)}")
    params = {m: params[m] for m in ablation.modes}
    report = EvalReport(space, evaluate_modes(test, space, params, inference, fits), notes=[_NOTE], params=params)

    for frac in ablation.downsizing:
        report.curve[frac] = _downsized(frac, synth_cfg, train, test, space, ablation.modes, learning, inference)
        log.info("downsizing %.2f: %s", frac, report.curve[frac])
    return report


def _downsized(frac, synth_cfg, train, test, space, modes, learning, inference) -> dict[str, dict[str, float]]:
    """Accuracy of each downsized task after refitting on the first ``1 - frac`` of training.

    Synthetic sources degrade one classifier at a time (grasp, then attribute),
    the other evidence staying intact; file-backed evidence is fixed, so only
    the context model sees less data.
    """
    from .synth import degraded, synth_generate

    def score(tr, te):
        keep = tr[: max(1, int(round(len(tr) * (1 - frac))))]
        fits = fit_modes(keep, space, modes, learning)
        return evaluate_modes(te, space, {m: r.params for m, r in fits.items()}, inference)

    if synth_cfg is None or frac == 0:
        res = score(train, test)
        return {m: {t: res[m].overall[t] for t in CURVE_TASKS} for m in modes}
    out = {m: {} for m in modes}
    for task in CURVE_TASKS:
        ds = synth_generate(degraded(synth_cfg, frac, task))
        res = score(ds.split("train"), ds.split("test"))
        for m in modes:
            out[m][task] = res[m].overall[task]
    return out


def write_report(report: EvalReport, out_dir) -> list[Path]:
    """CSV tables per mode and task, context tables of the full model and a JSON summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    space = report.space
    names = {
        "action": space.action_names(),
        "grasp": space.grasp_names(),
        "attribute": space.attribute_names(),
    }
    written = []
    for mode, res in report.modes.items():
        tag = mode.replace("+", "_")
        for task in TASKS:
            conf = res.confusion[task]
            p = out / f"accuracy_{task}_{tag}.csv"
            write_accuracy_csv(p, names[task], conf, first=0 if task == "action" else 1)
            written.append(p)
            p = out / f"confusion_{task}_{tag}.csv"
            write_confusion_csv(p, names[task], conf)
            written.append(p)
        p = out / f"predictions_{tag}.jsonl"
        with open(p, "w", encoding="utf-8") as fh:
            for row in res.predictions.to_rows():
                fh.write(json.dumps(row) + "\n")
        written.append(p)
    full = report.params.get("full")
    if full is not None:
        written += write_context_tables(full, space, out)
    if report.curve:
        p = out / "downsizing_curve.csv"
        with open(p, "w", encoding="utf-8") as fh:
            fh.write("fraction,mode," + ",".join(CURVE_TASKS) + "\n")
            for frac, by_mode in report.curve.items():
                for mode, acc in by_mode.items():
                    fh.write(f"{frac!r},{mode}," + ",".join(repr(acc[t]) for t in CURVE_TASKS) + "\n")
        written.append(p)
    p = out / "summary.json"
    p.write_text(json.dumps(report.summary(), indent=2) + "\n", encoding="utf-8")
    written.append(p)
    return written


def write_context_tables(params: ModelParams, space: LabelSpace, out_dir, mode: str = "sum", top_k: int = 5) -> list[Path]:
    from .learning import most_probable_combinations

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    axes_names = {
        "action-grasp": (space.action_names(), space.grasp_names()),
        "action-attribute": (space.action_names(), space.attribute_names()),
        "grasp-attribute": (space.grasp_names(), space.attribute_names()),
    }
    written = []
    for axis in CONTEXT_AXES:
        rows, cols = axes_names[axis]
        p = out / f"context_{axis}_{mode}.csv"
        write_matrix_csv(p, rows, cols, marginalize_context(params, axis, mode), corner=f"alpha {mode}")
        written.append(p)
    p = out / "context_physical_beta.csv"
    write_matrix_csv(p, space.grasp_names(), space.attribute_names(), params.beta, corner="beta")
    written.append(p)
    p = out / "context_top_combinations.csv"
    g, o = space.grasp_names(), space.attribute_names()
    with open(p, "w", encoding="utf-8") as fh:
        fh.write("action,rank,grasp_left,grasp_right,attribute_left,attribute_right,alpha\n")
        for k, name in enumerate(space.action_names()):
            for rank, ((gl, gr, ml, mr), v) in enumerate(most_probable_combinations(params, k, top_k), start=1):
                fh.write(f'"{name}",{rank},"{g[gl]}","{g[gr]}","{o[ml]}","{o[mr]}",{v!r}\n')
    written.append(p)
    return written
