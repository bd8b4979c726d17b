import json
from pathlib import Path

import numpy as np
import pytest

from homctx import io
from homctx.labels import gtea_label_space

EXAMPLES = Path(__file__).resolve().parents[1] / "docs" / "examples"


@pytest.fixture(scope="module")
def manifest():
    return io.read_manifest(EXAMPLES / "manifest.json")


def test_manifest_and_frames_parse(manifest):
    space = manifest.load_label_space()
    assert (space.n_actions, space.n_grasps, space.n_attributes) == (2, 2, 2)
    assert [r.frame_id for r in io.read_frames(manifest, "train")] == ["f000000", "f000001"]
    assert [r.frame_id for r in io.read_frames(manifest, "test")] == ["f000002"]


def test_params_parse(manifest):
    space = manifest.load_label_space()
    p = io.read_params(EXAMPLES / "params.json", space)
    assert p.alpha.shape == (2, 3, 3, 3, 3)
    assert p.beta.shape == (3, 3) and p.eta.shape == (3, 2) and p.lam.shape == (3, 2)
    assert p.zeta.shape == (2, 3) and p.xi.shape == (2, 2)


def test_pgm_parse():
    m = io.read_pgm(EXAMPLES / "hand_map.pgm")
    assert (m.width, m.height) == (8, 6)
    assert np.all((m.values >= 0) & (m.values <= 1))


def test_documented_error_message(manifest, tmp_path):
    lines = (EXAMPLES / "frames.jsonl").read_text().splitlines()
    doc = json.loads(lines[2])
    doc["sides"]["left"]["hands"][0]["phi_g"].append(0.0)
    bad = tmp_path / "frames.jsonl"
    bad.write_text("\n".join([lines[0], json.dumps(doc)]) + "\n")
    with pytest.raises(io.SchemaError) as exc:
        list(io.read_frame_file(bad, manifest.load_label_space()))
    assert "line 2" in str(exc.value) and "sides.left.hands[0].phi_g" in str(exc.value)


def test_bundled_taxonomy_sizes():
    space = gtea_label_space()
    assert (space.n_actions, space.n_grasps, space.n_attributes) == (10, 13, 9)
