"""Model parameters, scene states, per-frame evidence and the six potential terms.

The total potential of a scene is

    functional + physical + spatial + grasp evidence + object evidence + action evidence

Every term is linear in its parameter block.  Null labels (index 0) switch a
side off: it then contributes nothing to the physical, spatial and evidence
terms, while the functional tensor ``alpha`` is still indexed by it.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .geometry import apply_offsets_array, iou_array
from .labels import SIDES, LabelSpace

N_HAND_SCORES = 3  # background, left hand, right hand

PARAM_BLOCKS = ("alpha", "beta", "gamma", "zeta", "eta", "lam", "xi")


class ShapeMismatch(ValueError):
    pass


@dataclass
class ModelParams:
    """All weights of the potential.

    Shapes, with ``Na, Ng, No`` the action/grasp/attribute counts:

    ========  ==========================  =======================================
    alpha     (Na, Ng+1, Ng+1, No+1, No+1)  action x left/right grasp x left/right attribute
    beta      (Ng+1, No+1)                row 0 and column 0 are held at zero
    gamma     (2,)                        spatial weight per side
    zeta      (2, 3)                      hand-detection score weights per side
    eta       (Ng+1, Ng)                  grasp-score weights per grasp, row 0 zero
    lam       (No+1, No)                  attribute-score weights, row 0 zero
    xi        (Na, Na)                    action-score weights per action
    ========  ==========================  =======================================
    """

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    zeta: np.ndarray
    eta: np.ndarray
    lam: np.ndarray
    xi: np.ndarray

    @staticmethod
    def shapes(space: LabelSpace) -> dict[str, tuple[int, ...]]:
        na, ng, no = space.sizes
        return {
            "alpha": (na, ng + 1, ng + 1, no + 1, no + 1),
            "beta": (ng + 1, no + 1),
            "gamma": (2,),
            "zeta": (2, N_HAND_SCORES),
            "eta": (ng + 1, ng),
            "lam": (no + 1, no),
            "xi": (na, na),
        }

    @classmethod
    def zeros(cls, space: LabelSpace) -> "ModelParams":
        return cls(**{k: np.zeros(s) for k, s in cls.shapes(space).items()})

    @classmethod
    def identity(cls, space: LabelSpace, hand_weight: float = 1.0, spatial_weight: float = 1.0) -> "ModelParams":
        """Context-free model that scores each label by its own classifier output."""
        p = cls.zeros(space)
        na, ng, no = space.sizes
        p.eta[1:] = np.eye(ng)
        p.lam[1:] = np.eye(no)
        p.xi[:] = np.eye(na)
        p.zeta[0, 1] = hand_weight
        p.zeta[1, 2] = hand_weight
        p.gamma[:] = spatial_weight
        return p

    def blocks(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_BLOCKS}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.blocks().items()})

    def check(self, space: LabelSpace) -> None:
        for name, shape in self.shapes(space).items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ShapeMismatch(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite entries")

    def zero_null_rows(self) -> "ModelParams":
        """Clear the entries that no state can ever address."""
        self.beta[0, :] = 0.0
        self.beta[:, 0] = 0.0
        self.eta[0] = 0.0
        self.lam[0] = 0.0
        return self

    def zeroed(self, names: Sequence[str]) -> "ModelParams":
        out = self.copy()
        for n in names:
            getattr(out, n)[...] = 0.0
        return out

    def flatten(self) -> np.ndarray:
        return np.concatenate([getattr(self, k).ravel() for k in PARAM_BLOCKS])

    @classmethod
    def unflatten(cls, vec: np.ndarray, space: LabelSpace) -> "ModelParams":
        out = {}
        pos = 0
        for name, shape in cls.shapes(space).items():
            n = int(np.prod(shape))
            out[name] = np.array(vec[pos:pos + n], dtype=float).reshape(shape)
            pos += n
        if pos != vec.size:
            raise ShapeMismatch(f"vector of length {vec.size}, expected {pos}")
        return cls(**out)

    def sq_norm(self) -> float:
        return float(sum(np.sum(v * v) for v in self.blocks().values()))


@dataclass
class SideEvidence:
    """Classifier outputs for one side's candidate hands and their object candidates.

    ``H`` hand candidates, each with ``K`` object candidates.
    """

    hand_boxes: np.ndarray  # (H, 4)
    phi_h: np.ndarray  # (H, 3)
    phi_g: np.ndarray  # (H, Ng)
    offsets: np.ndarray  # (H, 4) predicted hand->object offsets
    object_boxes: np.ndarray  # (H, K, 4)
    phi_o: np.ndarray  # (H, K, No)

    @classmethod
    def empty(cls, n_grasps: int, n_attributes: int, n_objects: int = 0) -> "SideEvidence":
        return cls(
            np.zeros((0, 4)),
            np.zeros((0, N_HAND_SCORES)),
            np.zeros((0, n_grasps)),
            np.zeros((0, 4)),
            np.zeros((0, n_objects, 4)),
            np.zeros((0, n_objects, n_attributes)),
        )

    @property
    def n_hands(self) -> int:
        return self.hand_boxes.shape[0]

    @property
    def n_objects(self) -> int:
        return self.object_boxes.shape[1]

    def reference_objects(self) -> np.ndarray:
        """Offset-regressed object box of every hand candidate, ``(H, 4)``."""
        return apply_offsets_array(self.hand_boxes, self.offsets)

    def subset(self, keep: np.ndarray) -> "SideEvidence":
        return SideEvidence(
            self.hand_boxes[keep],
            self.phi_h[keep],
            self.phi_g[keep],
            self.offsets[keep],
            self.object_boxes[keep],
            self.phi_o[keep],
        )

    def check(self, space: LabelSpace, where: str = "") -> None:
        h = self.hand_boxes.shape[0]
        ng, no = space.n_grasps, space.n_attributes
        expected = {
            "hand_boxes": (h, 4),
            "phi_h": (h, N_HAND_SCORES),
            "phi_g": (h, ng),
            "offsets": (h, 4),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeMismatch(f"{where}{name}: expected shape {shape}, got {getattr(self, name).shape}")
        if self.object_boxes.ndim != 3 or self.object_boxes.shape[0] != h or self.object_boxes.shape[2] != 4:
            raise ShapeMismatch(f"{where}object_boxes: expected shape ({h}, K, 4), got {self.object_boxes.shape}")
        k = self.object_boxes.shape[1]
        if self.phi_o.shape != (h, k, no):
            raise ShapeMismatch(f"{where}phi_o: expected shape {(h, k, no)}, got {self.phi_o.shape}")
        for name in ("hand_boxes", "phi_h", "phi_g", "offsets", "object_boxes", "phi_o"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{where}{name}: non-finite entries")
        if np.any((self.phi_h < 0) | (self.phi_h > 1)):
            raise ValueError(f"{where}phi_h: entries must lie in [0, 1]")
        if np.any(self.hand_boxes[:, 2:] <= 0) or np.any(self.object_boxes[..., 2:] <= 0):
            raise ValueError(f"{where}boxes must have positive size")
        if np.any(self.offsets[:, 2:] <= 0):
            raise ValueError(f"{where}offsets: size ratios must be positive")


@dataclass
class Evidence:
    phi_a: np.ndarray  # (Na,)
    sides: tuple[SideEvidence, SideEvidence]

    def check(self, space: LabelSpace) -> None:
        if self.phi_a.shape != (space.n_actions,):
            raise ShapeMismatch(f"phi_a: expected shape {(space.n_actions,)}, got {self.phi_a.shape}")
        if not np.all(np.isfinite(self.phi_a)):
            raise ValueError("phi_a: non-finite entries")
        for s in SIDES:
            self.sides[s].check(space, where=f"{s.name.lower()}.")

    def filtered(self, threshold: float) -> "Evidence":
        """Keep hand candidates whose side-specific detection score reaches ``threshold``."""
        sides = []
        for s in SIDES:
            ev = self.sides[s]
            sides.append(ev.subset(ev.phi_h[:, 1 + s] >= threshold))
        return Evidence(self.phi_a, (sides[0], sides[1]))


@dataclass(frozen=True)
class SceneState:
    """One joint assignment.

    ``hand[s]`` and ``obj[s]`` are candidate indices into the side's evidence
    (``None`` when absent); grasp 0 means no hand and attribute 0 no object.
    """

    action: int
    grasp: tuple[int, int] = (0, 0)
    attribute: tuple[int, int] = (0, 0)
    hand: tuple[Optional[int], Optional[int]] = (None, None)
    obj: tuple[Optional[int], Optional[int]] = (None, None)

    def __post_init__(self):
        for s in SIDES:
            g, m, h, o = self.grasp[s], self.attribute[s], self.hand[s], self.obj[s]
            if (g == 0) != (h is None):
                raise ValueError(f"side {s.name}: grasp 0 must coincide with an absent hand")
            if (m == 0) != (o is None):
                raise ValueError(f"side {s.name}: attribute 0 must coincide with an absent object")
            if o is not None and h is None:
                raise ValueError(f"side {s.name}: object without hand")

    def with_side(self, side: int, **changes) -> "SceneState":
        fields_ = {"grasp": list(self.grasp), "attribute": list(self.attribute), "hand": list(self.hand), "obj": list(self.obj)}
        for k, v in changes.items():
            fields_[k][side] = v
        return replace(self, **{k: tuple(v) for k, v in fields_.items()})

    def labels(self) -> tuple[int, int, int, int, int]:
        return (self.action, self.grasp[0], self.grasp[1], self.attribute[0], self.attribute[1])

    def hand_box(self, evidence: Evidence, side: int) -> Optional[np.ndarray]:
        h = self.hand[side]
        return None if h is None else evidence.sides[side].hand_boxes[h]

    def object_box(self, evidence: Evidence, side: int) -> Optional[np.ndarray]:
        h, o = self.hand[side], self.obj[side]
        return None if o is None else evidence.sides[side].object_boxes[h, o]


def check_state(state: SceneState, space: LabelSpace, evidence: Optional[Evidence] = None) -> None:
    na, ng, no = space.sizes
    if not 0 <= state.action < na:
        raise IndexError(f"action {state.action} out of range")
    for s in SIDES:
        if not 0 <= state.grasp[s] <= ng:
            raise IndexError(f"grasp {state.grasp[s]} out of range")
        if not 0 <= state.attribute[s] <= no:
            raise IndexError(f"attribute {state.attribute[s]} out of range")
        if evidence is not None:
            ev = evidence.sides[s]
            if state.hand[s] is not None and not 0 <= state.hand[s] < ev.n_hands:
                raise IndexError(f"side {s.name}: no evidence for hand candidate {state.hand[s]}")
            if state.obj[s] is not None and not 0 <= state.obj[s] < ev.n_objects:
                raise IndexError(f"side {s.name}: no evidence for object candidate {state.obj[s]}")


# --- the six terms -------------------------------------------------------------


def score_functional(params: ModelParams, state: SceneState) -> float:
    return float(params.alpha[state.labels()])


def score_physical(params: ModelParams, state: SceneState) -> float:
    total = 0.0
    for s in SIDES:
        g, m = state.grasp[s], state.attribute[s]
        if g > 0 and m > 0:
            total += float(params.beta[g, m])
    return total


def score_spatial(params: ModelParams, state: SceneState, evidence: Evidence) -> float:
    total = 0.0
    for s in SIDES:
        if state.obj[s] is None:
            continue
        ev = evidence.sides[s]
        h, o = state.hand[s], state.obj[s]
        reference = apply_offsets_array(ev.hand_boxes[h], ev.offsets[h])
        total += float(params.gamma[s]) * float(iou_array(ev.object_boxes[h, o], reference))
    return total


def score_grasp_evidence(params: ModelParams, state: SceneState, evidence: Evidence) -> float:
    total = 0.0
    for s in SIDES:
        g, h = state.grasp[s], state.hand[s]
        if g == 0:
            continue
        ev = evidence.sides[s]
        total += float(params.zeta[s] @ ev.phi_h[h])
        total += float(params.eta[g] @ ev.phi_g[h])
    return total


def score_object_evidence(params: ModelParams, state: SceneState, evidence: Evidence) -> float:
    total = 0.0
    for s in SIDES:
        m = state.attribute[s]
        if m == 0:
            continue
        total += float(params.lam[m] @ evidence.sides[s].phi_o[state.hand[s], state.obj[s]])
    return total


def score_action_evidence(params: ModelParams, state: SceneState, evidence: Evidence) -> float:
    return float(params.xi[state.action] @ evidence.phi_a)


def score_terms(params: ModelParams, state: SceneState, evidence: Evidence) -> tuple[float, ...]:
    return (
        score_functional(params, state),
        score_physical(params, state),
        score_spatial(params, state, evidence),
        score_grasp_evidence(params, state, evidence),
        score_object_evidence(params, state, evidence),
        score_action_evidence(params, state, evidence),
    )


def total_potential(params: ModelParams, state: SceneState, evidence: Evidence) -> float:
    fc, pc, sc, g, o, a = score_terms(params, state, evidence)
    return fc + pc + sc + g + o + a


def features(state: SceneState, evidence: Evidence, space: LabelSpace) -> ModelParams:
    """Sufficient statistics: ``total_potential == <params, features>`` blockwise."""
    f = ModelParams.zeros(space)
    f.alpha[state.labels()] = 1.0
    f.xi[state.action] = evidence.phi_a
    for s in SIDES:
        g, m, h, o = state.grasp[s], state.attribute[s], state.hand[s], state.obj[s]
        ev = evidence.sides[s]
        if g > 0:
            f.zeta[s] += ev.phi_h[h]
            f.eta[g] += ev.phi_g[h]
        if m > 0:
            f.lam[m] += ev.phi_o[h, o]
            ref = apply_offsets_array(ev.hand_boxes[h], ev.offsets[h])
            f.gamma[s] += float(iou_array(ev.object_boxes[h, o], ref))
            if g > 0:
                f.beta[g, m] += 1.0
    return f


def inner(params: ModelParams, other: ModelParams) -> float:
    return float(sum(np.sum(getattr(params, k) * getattr(other, k)) for k in PARAM_BLOCKS))
