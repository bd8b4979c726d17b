"""Reading and writing frames, parameters, probability maps and result tables.

Formats
-------
frames (JSON lines)
    line 1 is a header ``{"schema_version", "kind": "homctx-frames",
    "label_space": <fingerprint>, "sizes": [Na, Ng, No]}``; every further line
    is one frame record (see ``docs/formats.md``).
params (JSON)
    ``{"schema_version", "kind": "homctx-params", "label_space", "sizes",
    "alpha": [...], ...}`` with row-major nested arrays.
probability maps
    binary PGM (P5), 8 bit, probability = value / 255.
tables (CSV)
    per-class accuracy, confusion matrices, context tables.

Floats are written with Python's shortest round-trip repr, so every value
reads back bit-exactly.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np

from .geometry import BoundingBox, ProbabilityMap
from .labels import SIDES, LabelSpace, load_label_space
from .potentials import PARAM_BLOCKS, Evidence, ModelParams, SceneState, SideEvidence, ShapeMismatch

SCHEMA_VERSION = 1
FRAMES_KIND = "homctx-frames"
PARAMS_KIND = "homctx-params"
SIDE_KEYS = ("left", "right")

PathLike = Union[str, Path]


class SchemaError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(field)
        super().__init__(f"{': '.join(where)}: {message}" if where else message)


class FingerprintMismatch(SchemaError):
    pass


# --- frame records --------------------------------------------------------------


@dataclass
class GroundTruth:
    """Annotated labels and boxes, with classifier scores evaluated at those boxes."""

    action: int
    grasp: tuple[int, int] = (0, 0)
    attribute: tuple[int, int] = (0, 0)
    hand_box: tuple[Optional[BoundingBox], Optional[BoundingBox]] = (None, None)
    object_box: tuple[Optional[BoundingBox], Optional[BoundingBox]] = (None, None)
    phi_h: tuple[Optional[np.ndarray], Optional[np.ndarray]] = (None, None)
    phi_g: tuple[Optional[np.ndarray], Optional[np.ndarray]] = (None, None)
    offset: tuple[Optional[np.ndarray], Optional[np.ndarray]] = (None, None)
    phi_o: tuple[Optional[np.ndarray], Optional[np.ndarray]] = (None, None)

    def has_scores(self) -> bool:
        return all(
            (self.hand_box[s] is None or (self.phi_h[s] is not None and self.phi_g[s] is not None and self.offset[s] is not None))
            and (self.object_box[s] is None or self.phi_o[s] is not None)
            for s in SIDES
        )

    def training_frame(self, phi_a: np.ndarray, space: LabelSpace):
        """Evidence restricted to the annotated boxes, for parameter learning."""
        from .learning import TrainingFrame

        if not self.has_scores():
            raise SchemaError("ground truth lacks scores at the annotated boxes")
        ng, no = space.n_grasps, space.n_attributes
        sides, hand, obj = [], [None, None], [None, None]
        for s in SIDES:
            hb = self.hand_box[s]
            if hb is None:
                sides.append(SideEvidence.empty(ng, no, 0))
                continue
            ob = self.object_box[s]
            k = 0 if ob is None else 1
            sides.append(SideEvidence(
                hb.as_array()[None],
                np.asarray(self.phi_h[s], dtype=float)[None],
                np.asarray(self.phi_g[s], dtype=float)[None],
                np.asarray(self.offset[s], dtype=float)[None],
                (ob.as_array()[None, None] if ob is not None else np.zeros((1, 0, 4))),
                (np.asarray(self.phi_o[s], dtype=float)[None, None] if ob is not None else np.zeros((1, 0, no))),
            ))
            hand[s] = 0
            obj[s] = 0 if k else None
        truth = SceneState(self.action, tuple(self.grasp), tuple(self.attribute), tuple(hand), tuple(obj))
        return TrainingFrame(Evidence(np.asarray(phi_a, dtype=float), (sides[0], sides[1])), truth)


@dataclass
class FrameRecord:
    frame_id: str
    evidence: Evidence
    truth: Optional[GroundTruth] = None
    subject: Optional[str] = None

    def training_frame(self, space: LabelSpace):
        if self.truth is None:
            raise SchemaError(f"frame {self.frame_id}: no ground truth")
        return self.truth.training_frame(self.evidence.phi_a, space)


def _floats(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def _box(b) -> dict:
    b = np.asarray(b, dtype=float).tolist()
    return {"cx": b[0], "cy": b[1], "w": b[2], "h": b[3]}


def frame_to_dict(rec: FrameRecord) -> dict:
    sides = {}
    for s, key in zip(SIDES, SIDE_KEYS):
        ev = rec.evidence.sides[s]
        hands = []
        for h in range(ev.n_hands):
            hands.append({
                "box": _box(ev.hand_boxes[h]),
                "phi_h": _floats(ev.phi_h[h]),
                "phi_g": _floats(ev.phi_g[h]),
                "offset": _floats(ev.offsets[h]),
                "objects": [
                    {"box": _box(ev.object_boxes[h, o]), "phi_o": _floats(ev.phi_o[h, o])}
                    for o in range(ev.n_objects)
                ],
            })
        sides[key] = {"hands": hands}
    doc = {"frame_id": rec.frame_id, "phi_a": _floats(rec.evidence.phi_a), "sides": sides}
    if rec.subject is not None:
        doc["subject"] = rec.subject
    if rec.truth is not None:
        t = rec.truth
        truth = {"action": int(t.action)}
        for s, key in zip(SIDES, SIDE_KEYS):
            side = {"grasp": int(t.grasp[s]), "attribute": int(t.attribute[s])}
            side["hand_box"] = None if t.hand_box[s] is None else _box(t.hand_box[s].as_array())
            side["object_box"] = None if t.object_box[s] is None else _box(t.object_box[s].as_array())
            for name in ("phi_h", "phi_g", "offset", "phi_o"):
                v = getattr(t, name)[s]
                if v is not None:
                    side[name] = _floats(v)
            truth[key] = side
        doc["truth"] = truth
    return doc


def _need(doc, key, line, path):
    if not isinstance(doc, dict) or key not in doc:
        raise SchemaError("missing field", line, f"{path}{key}")
    return doc[key]


def _vector(value, length, line, path, unit=False):
    if not isinstance(value, list) or len(value) != length:
        got = len(value) if isinstance(value, list) else type(value).__name__
        raise SchemaError(f"expected a list of length {length}, got {got}", line, path)
    arr = np.array(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise SchemaError("non-finite entry", line, path)
    if unit and np.any((arr < 0) | (arr > 1)):
        raise SchemaError("entries must lie in [0, 1]", line, path)
    return arr


def _parse_box(value, line, path) -> BoundingBox:
    if not isinstance(value, dict):
        raise SchemaError("expected a box record", line, path)
    try:
        vals = [float(value[k]) for k in ("cx", "cy", "w", "h")]
    except (KeyError, TypeError, ValueError):
        raise SchemaError("box needs numeric cx, cy, w, h", line, path) from None
    if not all(np.isfinite(vals)):
        raise SchemaError("non-finite box field", line, path)
    try:
        return BoundingBox(*vals)
    except ValueError as exc:
        raise SchemaError(str(exc), line, path) from None


def _parse_offset(value, line, path) -> np.ndarray:
    arr = _vector(value, 4, line, path)
    if arr[2] <= 0 or arr[3] <= 0:
        raise SchemaError("offset size ratios must be positive", line, path)
    return arr


def frame_from_dict(doc: dict, space: LabelSpace, line: Optional[int] = None) -> FrameRecord:
    na, ng, no = space.sizes
    frame_id = str(_need(doc, "frame_id", line, ""))
    phi_a = _vector(_need(doc, "phi_a", line, ""), na, line, "phi_a")
    sides_doc = _need(doc, "sides", line, "")
    sides = []
    for key in SIDE_KEYS:
        side = _need(sides_doc, key, line, "sides.")
        hands = _need(side, "hands", line, f"sides.{key}.")
        if not isinstance(hands, list):
            raise SchemaError("expected a list", line, f"sides.{key}.hands")
        boxes, ph, pg, offs, obox, po = [], [], [], [], [], []
        n_obj = None
        for h, hand in enumerate(hands):
            p = f"sides.{key}.hands[{h}]."
            boxes.append(_parse_box(_need(hand, "box", line, p), line, p + "box").as_array())
            ph.append(_vector(_need(hand, "phi_h", line, p), 3, line, p + "phi_h", unit=True))
            pg.append(_vector(_need(hand, "phi_g", line, p), ng, line, p + "phi_g"))
            offs.append(_parse_offset(_need(hand, "offset", line, p), line, p + "offset"))
            objects = hand.get("objects", [])
            if not isinstance(objects, list):
                raise SchemaError("expected a list", line, p + "objects")
            if n_obj is None:
                n_obj = len(objects)
            elif len(objects) != n_obj:
                raise SchemaError("all hands of a side need the same number of object candidates", line, p + "objects")
            obox.append([_parse_box(_need(o, "box", line, f"{p}objects[{i}]."), line, f"{p}objects[{i}].box").as_array()
                         for i, o in enumerate(objects)])
            po.append([_vector(_need(o, "phi_o", line, f"{p}objects[{i}]."), no, line, f"{p}objects[{i}].phi_o")
                       for i, o in enumerate(objects)])
        n_h = len(hands)
        k = n_obj or 0
        sides.append(SideEvidence(
            np.array(boxes, dtype=float).reshape(n_h, 4),
            np.array(ph, dtype=float).reshape(n_h, 3),
            np.array(pg, dtype=float).reshape(n_h, ng),
            np.array(offs, dtype=float).reshape(n_h, 4),
            np.array(obox, dtype=float).reshape(n_h, k, 4),
            np.array(po, dtype=float).reshape(n_h, k, no),
        ))
    evidence = Evidence(phi_a, (sides[0], sides[1]))
    truth = None
    if doc.get("truth") is not None:
        truth = _parse_truth(doc["truth"], space, line)
    subject = doc.get("subject")
    return FrameRecord(frame_id, evidence, truth, None if subject is None else str(subject))


def _label(value, upper, line, path, lower=0):
    if not isinstance(value, int) or isinstance(value, bool) or not lower <= value <= upper:
        raise SchemaError(f"expected an integer label in [{lower}, {upper}]", line, path)
    return value


def _parse_truth(doc, space: LabelSpace, line) -> GroundTruth:
    na, ng, no = space.sizes
    action = _label(_need(doc, "action", line, "truth."), na - 1, line, "truth.action")
    vals = {k: [None, None] for k in ("grasp", "attribute", "hand_box", "object_box", "phi_h", "phi_g", "offset", "phi_o")}
    for s, key in zip(SIDES, SIDE_KEYS):
        p = f"truth.{key}."
        side = _need(doc, key, line, "truth.")
        g = _label(_need(side, "grasp", line, p), ng, line, p + "grasp")
        m = _label(_need(side, "attribute", line, p), no, line, p + "attribute")
        hb = side.get("hand_box")
        ob = side.get("object_box")
        if (g == 0) != (hb is None):
            raise SchemaError("grasp 0 must coincide with a missing hand box", line, p + "hand_box")
        if (m == 0) != (ob is None):
            raise SchemaError("attribute 0 must coincide with a missing object box", line, p + "object_box")
        if ob is not None and hb is None:
            raise SchemaError("object box without hand box", line, p + "object_box")
        vals["grasp"][s], vals["attribute"][s] = g, m
        vals["hand_box"][s] = None if hb is None else _parse_box(hb, line, p + "hand_box")
        vals["object_box"][s] = None if ob is None else _parse_box(ob, line, p + "object_box")
        if "phi_h" in side:
            vals["phi_h"][s] = _vector(side["phi_h"], 3, line, p + "phi_h", unit=True)
        if "phi_g" in side:
            vals["phi_g"][s] = _vector(side["phi_g"], ng, line, p + "phi_g")
        if "offset" in side:
            vals["offset"][s] = _parse_offset(side["offset"], line, p + "offset")
        if "phi_o" in side:
            vals["phi_o"][s] = _vector(side["phi_o"], no, line, p + "phi_o")
    return GroundTruth(action, **{k: tuple(v) for k, v in vals.items()})


def frames_header(space: LabelSpace) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": FRAMES_KIND,
            "label_space": space.fingerprint, "sizes": list(space.sizes)}


def write_frames(records: Iterable[FrameRecord], path: PathLike, space: LabelSpace) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(frames_header(space)) + "\n")
        for rec in records:
            rec.evidence.check(space)
            fh.write(json.dumps(frame_to_dict(rec), separators=(",", ":")) + "\n")
            n += 1
    return n


def read_frame_file(path: PathLike, space: LabelSpace) -> Iterator[FrameRecord]:
    """Stream validated records from one frames file; an empty file yields nothing."""
    with open(path, encoding="utf-8") as fh:
        header = None
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", lineno) from None
            if header is None:
                header = doc
                _check_header(header, space, lineno, FRAMES_KIND)
                continue
            yield frame_from_dict(doc, space, lineno)


def _check_header(header, space: LabelSpace, line, kind):
    if not isinstance(header, dict) or header.get("kind") != kind:
        raise SchemaError(f"expected a {kind} header", line, "kind")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {header.get('schema_version')}", line, "schema_version")
    if header.get("label_space") != space.fingerprint:
        raise FingerprintMismatch(
            f"label-space fingerprint {header.get('label_space')} does not match {space.fingerprint}",
            line, "label_space")


# --- manifests ----------------------------------------------------------------------


@dataclass
class DatasetManifest:
    label_space: Path
    frames: list[Path]
    prob_map_dir: Optional[Path] = None
    splits: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        missing = [str(p) for p in [self.label_space, *self.frames] if not Path(p).exists()]
        if self.prob_map_dir is not None and not Path(self.prob_map_dir).is_dir():
            missing.append(str(self.prob_map_dir))
        if missing:
            raise SchemaError(f"referenced files do not exist: {missing}")
        seen: dict[str, str] = {}
        for name, ids in self.splits.items():
            for fid in ids:
                if fid in seen and seen[fid] != name:
                    raise SchemaError(f"frame {fid!r} appears in splits {seen[fid]!r} and {name!r}")
                seen[fid] = name

    def load_label_space(self) -> LabelSpace:
        return load_label_space(self.label_space)

    def to_dict(self, base: Optional[Path] = None) -> dict:
        def rel(p):
            p = Path(p)
            if base is not None:
                try:
                    return str(p.resolve().relative_to(Path(base).resolve()))
                except ValueError:
                    pass
            return str(p)

        doc = {"schema_version": SCHEMA_VERSION, "label_space": rel(self.label_space),
               "frames": [rel(p) for p in self.frames], "splits": self.splits}
        if self.prob_map_dir is not None:
            doc["prob_map_dir"] = rel(self.prob_map_dir)
        return doc


def read_manifest(path: PathLike) -> DatasetManifest:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {doc.get('schema_version')}", field="schema_version")
    for key in ("label_space", "frames"):
        if key not in doc:
            raise SchemaError("missing field", field=key)
    pm = doc.get("prob_map_dir")
    return DatasetManifest(
        label_space=base / doc["label_space"],
        frames=[base / p for p in doc["frames"]],
        prob_map_dir=None if pm is None else base / pm,
        splits={k: [str(v) for v in vs] for k, vs in doc.get("splits", {}).items()},
    )


def write_manifest(manifest: DatasetManifest, path: PathLike) -> None:
    path = Path(path)
    path.write_text(json.dumps(manifest.to_dict(base=path.parent), indent=2) + "\n", encoding="utf-8")


def read_frames(manifest: DatasetManifest, split: Optional[str] = None) -> Iterator[FrameRecord]:
    """Records of every frames file in manifest order, optionally one split only."""
    space = manifest.load_label_space()
    wanted = None if split is None else set(manifest.splits.get(split, ()))
    if split is not None and split not in manifest.splits:
        raise SchemaError(f"unknown split {split!r}")
    for path in manifest.frames:
        for rec in read_frame_file(path, space):
            if wanted is None or rec.frame_id in wanted:
                yield rec


# --- params ------------------------------------------------------------------------


def params_to_dict(params: ModelParams, space: LabelSpace) -> dict:
    params.check(space)
    doc = {"schema_version": SCHEMA_VERSION, "kind": PARAMS_KIND,
           "label_space": space.fingerprint, "sizes": list(space.sizes)}
    for name in PARAM_BLOCKS:
        doc[name] = getattr(params, name).tolist()
    return doc


def params_from_dict(doc: dict, space: LabelSpace) -> ModelParams:
    _check_header(doc, space, None, PARAMS_KIND)
    blocks = {}
    for name, shape in ModelParams.shapes(space).items():
        if name not in doc:
            raise SchemaError("missing block", field=name)
        arr = np.array(doc[name], dtype=float)
        if arr.shape != shape:
            raise ShapeMismatch(f"{name}: expected shape {shape}, got {arr.shape}")
        blocks[name] = arr
    params = ModelParams(**blocks)
    params.check(space)
    return params


def write_params(params: ModelParams, path: PathLike, space: LabelSpace) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params, space)) + "\n", encoding="utf-8")


def read_params(path: PathLike, space: LabelSpace) -> ModelParams:
    return params_from_dict(json.loads(Path(path).read_text(encoding="utf-8")), space)


# --- probability maps ------------------------------------------------------------------


def write_pgm(prob_map: ProbabilityMap, path: PathLike) -> None:
    data = np.rint(prob_map.values * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{prob_map.width} {prob_map.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path: PathLike) -> ProbabilityMap:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval
    if tokens[0] != b"P5":
        raise SchemaError("not a binary PGM (P5) file")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise SchemaError("only 8-bit PGM maps are supported")
    data = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos)
    return ProbabilityMap(data.reshape(height, width) / 255.0)


# --- result tables ----------------------------------------------------------------------


def per_class_accuracy(confusion: np.ndarray) -> tuple[np.ndarray, float]:
    """Row-wise accuracy of a square (true x predicted) count matrix and the overall accuracy.

    Classes with no true instances get NaN.
    """
    confusion = np.asarray(confusion, dtype=float)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
        raise ValueError(f"confusion matrix must be square, got shape {confusion.shape}")
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.diag(confusion) / support
    total = support.sum()
    overall = float(np.trace(confusion) / total) if total else float("nan")
    return acc, overall


def write_accuracy_csv(path: PathLike, class_names: Sequence[str], confusion: np.ndarray, first: int = 0) -> None:
    """One row per class from index ``first`` on, then Overall.

    ``first=1`` leaves out a null class that is never a true label but may be
    predicted (a missed hand or object still counts as an error).
    """
    acc, overall = per_class_accuracy(confusion)
    support = np.asarray(confusion).sum(axis=1)
    if support[:first].any():
        raise ValueError("skipped classes must have no true instances")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "support", "accuracy"])
        for name, n, a in zip(class_names[first:], support[first:], acc[first:]):
            w.writerow([name, int(n), "" if np.isnan(a) else repr(float(a))])
        w.writerow(["Overall", int(support.sum()), repr(overall)])


def write_confusion_csv(path: PathLike, class_names: Sequence[str], confusion: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred", *class_names])
        for name, row in zip(class_names, np.asarray(confusion)):
            w.writerow([name, *(int(v) for v in row)])


def write_matrix_csv(path: PathLike, row_names: Sequence[str], col_names: Sequence[str], matrix: np.ndarray,
                     corner: str = "") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([corner, *col_names])
        for name, row in zip(row_names, np.asarray(matrix, dtype=float)):
            w.writerow([name, *(repr(float(v)) for v in row)])


def read_accuracy_csv(path: PathLike) -> dict[str, float]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["class"]] = float(row["accuracy"]) if row["accuracy"] else float("nan")
    return out


def write_results(results, path: PathLike) -> list[Path]:
    """Write an evaluation report (:class:`homctx.evaluation.EvalReport`) as tables under ``path``.

    Per-class accuracy and confusion CSVs per mode and task, the full model's
    context tables, the downsizing curve if any, and ``summary.json``.
    """
    from .evaluation import write_report

    if not results.modes:
        raise ValueError("results are empty")
    return write_report(results, path)
