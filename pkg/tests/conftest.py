import numpy as np
import pytest

from homctx.labels import LabelSpace
from homctx.potentials import Evidence, ModelParams, SideEvidence


def side(phi_h, phi_g, hand=(100.0, 100.0, 50.0, 60.0), offset=(0.0, 0.0, 1.0, 1.0), objects=None, phi_o=None):
    """One-hand side; ``objects`` is a (K, 4) list of object boxes with ``phi_o`` (K, No)."""
    n_att = 0 if phi_o is None else np.asarray(phi_o).shape[-1]
    objects = np.zeros((0, 4)) if objects is None else np.asarray(objects, dtype=float)
    phi_o = np.zeros((0, n_att)) if phi_o is None else np.asarray(phi_o, dtype=float)
    return SideEvidence(
        np.asarray([hand], dtype=float),
        np.asarray([phi_h], dtype=float),
        np.asarray([phi_g], dtype=float),
        np.asarray([offset], dtype=float),
        objects[None],
        phi_o[None],
    )


def random_training_frames(space: LabelSpace, n: int, rng: np.random.Generator):
    """Annotated frames with random presence, labels and scores at the annotated boxes."""
    from homctx.learning import TrainingFrame
    from homctx.potentials import SceneState

    na, ng, no = space.sizes
    frames = []
    for _ in range(n):
        sides, grasp, attr, hand, obj = [], [0, 0], [0, 0], [None, None], [None, None]
        for s in range(2):
            if rng.random() < 0.2:
                sides.append(SideEvidence.empty(ng, no, 0))
                continue
            has_obj = rng.random() < 0.75
            grasp[s] = int(rng.integers(1, ng + 1))
            hand[s] = 0
            if has_obj:
                attr[s] = int(rng.integers(1, no + 1))
                obj[s] = 0
            hb = np.array([rng.uniform(50, 300), rng.uniform(50, 300), rng.uniform(20, 80), rng.uniform(20, 80)])
            off = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5)])
            ob = hb + rng.normal(0, 5, 4)
            ob[2:] = np.abs(ob[2:]) + 5
            k = 1 if has_obj else 0
            sides.append(SideEvidence(hb[None], rng.dirichlet(np.ones(3))[None], rng.normal(size=(1, ng)),
                                      off[None], ob[None, None][:, :k], rng.normal(size=(1, k, no))))
        state = SceneState(int(rng.integers(na)), tuple(grasp), tuple(attr), tuple(hand), tuple(obj))
        frames.append(TrainingFrame(Evidence(rng.normal(size=na), (sides[0], sides[1])), state))
    return frames


def random_full_params(space: LabelSpace, rng: np.random.Generator, scale: float = 1.0) -> ModelParams:
    p = ModelParams.zeros(space)
    for arr in p.blocks().values():
        arr[...] = scale * rng.standard_normal(arr.shape)
    return p.zero_null_rows()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one verdict line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
