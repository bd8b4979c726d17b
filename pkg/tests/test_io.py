import copy
import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homctx import io
from homctx.geometry import ProbabilityMap
from homctx.labels import LabelSpace, gtea_label_space
from homctx.potentials import ModelParams, ShapeMismatch
from homctx.synth import SynthConfig, synth_generate

from conftest import random_full_params

SMALL = SynthConfig(n_actions=3, n_grasps=4, n_attributes=3, n_train=15, n_test=5, burn_in=20, seed=3)


@pytest.fixture(scope="module")
def dataset():
    return synth_generate(SMALL)


def assert_records_equal(a, b):
    assert a.frame_id == b.frame_id and a.subject == b.subject
    assert np.array_equal(a.evidence.phi_a, b.evidence.phi_a)
    for sa, sb in zip(a.evidence.sides, b.evidence.sides):
        for name in ("hand_boxes", "phi_h", "phi_g", "offsets", "object_boxes", "phi_o"):
            x, y = getattr(sa, name), getattr(sb, name)
            assert x.shape == y.shape and np.array_equal(x, y), name
    ta, tb = a.truth, b.truth
    assert (ta is None) == (tb is None)
    if ta is not None:
        assert (ta.action, ta.grasp, ta.attribute) == (tb.action, tb.grasp, tb.attribute)
        assert ta.hand_box == tb.hand_box and ta.object_box == tb.object_box
        for name in ("phi_h", "phi_g", "offset", "phi_o"):
            for x, y in zip(getattr(ta, name), getattr(tb, name)):
                assert (x is None and y is None) or np.array_equal(x, y)


def test_frames_round_trip_bit_exact(dataset, tmp_path):
    path = tmp_path / "f.jsonl"
    assert io.write_frames(dataset.records, path, dataset.space) == len(dataset.records)
    back = list(io.read_frame_file(path, dataset.space))
    assert len(back) == len(dataset.records)
    for a, b in zip(dataset.records, back):
        assert_records_equal(a, b)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=3, max_size=3))
def test_extreme_floats_round_trip(tmp_path_factory, vals):
    ds = synth_generate(SynthConfig(n_actions=3, n_grasps=2, n_attributes=2, n_train=1, n_test=0, burn_in=1))
    rec = ds.records[0]
    rec.evidence.phi_a[:] = vals
    path = tmp_path_factory.mktemp("x") / "f.jsonl"
    io.write_frames([rec], path, ds.space)
    (back,) = io.read_frame_file(path, ds.space)
    assert back.evidence.phi_a.tobytes() == rec.evidence.phi_a.tobytes()


def test_empty_file_gives_empty_stream(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    assert list(io.read_frame_file(p, gtea_label_space())) == []


def _valid_doc(dataset):
    return io.frame_to_dict(dataset.records[0])


def _write_lines(tmp_path, space, docs):
    p = tmp_path / "f.jsonl"
    p.write_text("\n".join([json.dumps(io.frames_header(space))] + [json.dumps(d) for d in docs]) + "\n")
    return p


def test_wrong_phi_g_length_names_field(dataset, tmp_path):
    doc = _valid_doc(dataset)
    side = "left" if doc["sides"]["left"]["hands"] else "right"
    doc["sides"][side]["hands"][0]["phi_g"].append(0.0)
    p = _write_lines(tmp_path, dataset.space, [doc])
    with pytest.raises(io.SchemaError) as err:
        list(io.read_frame_file(p, dataset.space))
    assert err.value.line == 2
    assert err.value.field == f"sides.{side}.hands[0].phi_g"
    assert "phi_g" in str(err.value)


def test_fingerprint_mismatch(dataset, tmp_path):
    p = tmp_path / "f.jsonl"
    io.write_frames(dataset.records, p, dataset.space)
    other = LabelSpace.from_sizes(3, 4, 4)
    with pytest.raises(io.FingerprintMismatch):
        list(io.read_frame_file(p, other))


# --- mutation property -------------------------------------------------------------

# each entry: (description, mutator) producing an invalid record
INVALID = [
    ("phi_a length", lambda d: d["phi_a"].append(0.0)),
    ("phi_a non-finite", lambda d: d["phi_a"].__setitem__(0, float("nan"))),
    ("phi_h above one", lambda d: _hand(d)["phi_h"].__setitem__(0, 1.5)),
    ("phi_h negative", lambda d: _hand(d)["phi_h"].__setitem__(1, -0.1)),
    ("phi_h length", lambda d: _hand(d)["phi_h"].pop()),
    ("box width", lambda d: _hand(d)["box"].__setitem__("w", -1.0)),
    ("box missing key", lambda d: _hand(d)["box"].pop("cx")),
    ("box string", lambda d: _hand(d)["box"].__setitem__("cy", "x")),
    ("offset ratio", lambda d: _hand(d)["offset"].__setitem__(2, 0.0)),
    ("phi_o length", lambda d: _hand(d)["objects"][0]["phi_o"].append(0.0)),
    ("missing sides", lambda d: d.pop("sides")),
    ("missing frame id", lambda d: d.pop("frame_id")),
    ("truth action range", lambda d: d["truth"].__setitem__("action", 99)),
    ("truth grasp type", lambda d: d["truth"]["left"].__setitem__("grasp", 1.5)),
    ("truth grasp without box", lambda d: d["truth"]["left"].update(grasp=1, hand_box=None)),
]


def _hand(d):
    for key in ("left", "right"):
        if d["sides"][key]["hands"]:
            return d["sides"][key]["hands"][0]
    raise AssertionError("no hand in the template record")


def _template(dataset):
    for rec in dataset.records:
        d = io.frame_to_dict(rec)
        try:
            if _hand(d)["objects"]:
                return d
        except AssertionError:
            continue
    raise AssertionError("no usable record")


@pytest.mark.parametrize("name, mutate", INVALID, ids=[n for n, _ in INVALID])
def test_invalid_mutations_rejected(dataset, name, mutate):
    d = copy.deepcopy(_template(dataset))
    mutate(d)
    with pytest.raises(io.SchemaError):
        io.frame_from_dict(d, dataset.space)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(-1e6, 1e6), st.floats(0.001, 1e3), st.floats(-1e3, 1e3))
def test_valid_mutations_accepted(dataset, ph, score, size, shift):
    d = copy.deepcopy(_template(dataset))
    h = _hand(d)
    h["phi_h"][0] = ph
    h["phi_g"][0] = score
    h["box"]["w"] = size
    h["box"]["cx"] = shift
    h["offset"][3] = size
    h["objects"][0]["phi_o"][-1] = score
    d["phi_a"][0] = score
    rec = io.frame_from_dict(d, dataset.space)
    assert io.frame_to_dict(rec) == d


# --- params ------------------------------------------------------------------------


def test_params_round_trip(tmp_path, rng):
    space = gtea_label_space()
    for p in (ModelParams.zeros(space), random_full_params(space, rng, 3.0)):
        io.write_params(p, tmp_path / "p.json", space)
        q = io.read_params(tmp_path / "p.json", space)
        for name, arr in p.blocks().items():
            assert np.array_equal(arr, getattr(q, name))
            assert np.max(np.abs(arr - getattr(q, name)), initial=0.0) == 0.0


def test_params_under_other_space_rejected(tmp_path, rng):
    big = LabelSpace.from_sizes(10, 13, 9)
    small = LabelSpace.from_sizes(10, 12, 9)
    io.write_params(random_full_params(big, rng), tmp_path / "p.json", big)
    with pytest.raises(io.FingerprintMismatch):
        io.read_params(tmp_path / "p.json", small)


def test_params_shape_checked(tmp_path, rng):
    space = LabelSpace.from_sizes(2, 2, 2)
    doc = io.params_to_dict(random_full_params(space, rng), space)
    doc["beta"] = [[0.0]]
    with pytest.raises(ShapeMismatch):
        io.params_from_dict(doc, space)


# --- manifests ------------------------------------------------------------------------


def test_manifest_round_trip(dataset, tmp_path):
    path = dataset.save(tmp_path / "ds")
    m = io.read_manifest(path)
    assert [r.frame_id for r in io.read_frames(m, "test")] == dataset.test_ids
    assert len(list(io.read_frames(m))) == len(dataset.records)
    with pytest.raises(io.SchemaError):
        list(io.read_frames(m, "validation"))


def test_manifest_rejects_missing_files_and_overlap(dataset, tmp_path):
    path = dataset.save(tmp_path / "ds")
    m = io.read_manifest(path)
    with pytest.raises(io.SchemaError):
        io.DatasetManifest(m.label_space, [tmp_path / "nope.jsonl"])
    with pytest.raises(io.SchemaError):
        io.DatasetManifest(m.label_space, m.frames, splits={"a": ["x"], "b": ["x"]})


# --- probability maps --------------------------------------------------------------------


def test_pgm_round_trip(tmp_path, rng):
    values = rng.integers(0, 256, (37, 53)) / 255.0
    io.write_pgm(ProbabilityMap(values), tmp_path / "m.pgm")
    back = io.read_pgm(tmp_path / "m.pgm")
    assert np.array_equal(back.values, values)


def test_pgm_with_comment(tmp_path):
    data = bytes([0, 255, 128, 64])
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 2\n255\n" + data)
    m = io.read_pgm(tmp_path / "c.pgm")
    assert m.values.tolist() == [[0.0, 1.0], [128 / 255, 64 / 255]]


def test_pgm_rejects_other_formats(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(io.SchemaError):
        io.read_pgm(tmp_path / "a.pgm")


# --- result tables -----------------------------------------------------------------------


def test_perfect_predictions(tmp_path):
    conf = np.diag([3, 5, 2])
    io.write_accuracy_csv(tmp_path / "a.csv", ["x", "y", "z"], conf)
    assert io.read_accuracy_csv(tmp_path / "a.csv") == {"x": 1.0, "y": 1.0, "z": 1.0, "Overall": 1.0}


def test_one_class_always_wrong(tmp_path):
    conf = np.array([[4, 0, 0], [0, 0, 6], [0, 0, 2]])
    io.write_accuracy_csv(tmp_path / "a.csv", ["x", "y", "z"], conf)
    acc = io.read_accuracy_csv(tmp_path / "a.csv")
    assert acc["y"] == 0.0
    assert acc["Overall"] == pytest.approx((4 * 1.0 + 6 * 0.0 + 2 * 1.0) / 12)


def test_class_without_support_is_blank(tmp_path):
    io.write_accuracy_csv(tmp_path / "a.csv", ["x", "y"], np.array([[2, 0], [0, 0]]))
    rows = list(csv.DictReader(open(tmp_path / "a.csv")))
    assert rows[1]["accuracy"] == "" and rows[2]["accuracy"] == "1.0"


def test_confusion_csv(tmp_path):
    io.write_confusion_csv(tmp_path / "c.csv", ["a", "b"], np.array([[1, 2], [3, 4]]))
    assert open(tmp_path / "c.csv").read().splitlines() == ["true\\pred,a,b", "a,1,2", "b,3,4"]


def test_write_results_rejects_empty(tmp_path):
    from homctx.evaluation import EvalReport

    with pytest.raises(ValueError):
        io.write_results(EvalReport(gtea_label_space(), {}), tmp_path)


def test_null_class_row_skipped_but_counted(tmp_path):
    # class 0 is never true; a prediction of 0 is an error for its true class
    conf = np.array([[0, 0, 0], [2, 3, 0], [0, 1, 4]])
    io.write_accuracy_csv(tmp_path / "a.csv", ["none", "x", "y"], conf, first=1)
    acc = io.read_accuracy_csv(tmp_path / "a.csv")
    assert acc == {"x": 0.6, "y": 0.8, "Overall": 0.7}
    with pytest.raises(ValueError):
        io.write_accuracy_csv(tmp_path / "b.csv", ["none", "x", "y"], conf.T, first=1)


def test_non_square_confusion_rejected():
    with pytest.raises(ValueError):
        io.per_class_accuracy(np.ones((2, 3)))
