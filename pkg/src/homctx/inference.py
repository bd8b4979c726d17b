"""MAP inference by coordinate ascent, plus a brute-force oracle.

Initialization keeps the hand candidates that pass the detection threshold,
picks the best-scoring one per side as the reference hand, and reads the
grasp, attribute and action labels off the classifier argmaxes.  Each sweep
then maximizes the potential exactly over one block at a time:

* grasp label and hand box of each side,
* attribute label and object box of each side,
* the action label.

A side without surviving candidates stays empty for the whole run.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import iou_array
from .labels import SIDES, LabelSpace
from .potentials import (
    Evidence,
    ModelParams,
    SceneState,
    check_state,
    score_grasp_evidence,
    score_object_evidence,
    score_physical,
    score_spatial,
    total_potential,
)

UPDATE_STEPS = ("grasp", "object", "action")


class StateSpaceTooLarge(RuntimeError):
    pass


@dataclass(frozen=True)
class InferenceConfig:
    hand_detection_threshold: float = 0.8
    max_iterations: int = 10
    stop_when_unchanged: bool = True
    order: tuple[str, ...] = UPDATE_STEPS

    def __post_init__(self):
        if not 0 < self.hand_detection_threshold < 1:
            raise ValueError("hand_detection_threshold must be in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if sorted(self.order) != sorted(UPDATE_STEPS):
            raise ValueError(f"order must be a permutation of {UPDATE_STEPS}")


@dataclass
class InferenceResult:
    state: SceneState
    potential: float
    iterations_used: int
    trace: list[float] = field(default_factory=list)
    converged: bool = False


class _Tables:
    """Per-frame score tables that do not change during coordinate ascent.

    For side ``s`` with ``H`` hands and ``K`` objects per hand:

    * ``hand[s]``: (H,) hand-detection term
    * ``grasp[s]``: (H, Ng+1) grasp-classifier term, column 0 unused
    * ``obj[s]``: (H, K, No+1) attribute-classifier term, slot 0 unused
    * ``spatial[s]``: (H, K) spatial term
    * ``action``: (Na,) action-classifier term
    """

    def __init__(self, params: ModelParams, evidence: Evidence):
        self.hand, self.grasp, self.obj, self.spatial, self.iou = [], [], [], [], []
        for s in SIDES:
            ev = evidence.sides[s]
            self.hand.append(ev.phi_h @ params.zeta[s])
            self.grasp.append(ev.phi_g @ params.eta.T)
            self.obj.append(ev.phi_o @ params.lam.T)
            ious = iou_array(ev.object_boxes, ev.reference_objects()[:, None, :])
            self.iou.append(ious)
            self.spatial.append(params.gamma[s] * ious)
        self.action = params.xi @ evidence.phi_a


def _alpha_row(params: ModelParams, state: SceneState, side: int, axis: str) -> np.ndarray:
    """Slice of alpha over one side's grasp (or attribute) with everything else fixed."""
    k, gl, gr, ml, mr = state.labels()
    a = params.alpha
    if axis == "grasp":
        return a[k, :, gr, ml, mr] if side == 0 else a[k, gl, :, ml, mr]
    return a[k, gl, gr, :, mr] if side == 0 else a[k, gl, gr, ml, :]


def initialize(evidence: Evidence, params: ModelParams, config: InferenceConfig = InferenceConfig(),
               space: Optional[LabelSpace] = None) -> SceneState:
    """Starting state from classifier argmaxes on ``evidence`` (already thresholded or not)."""
    if space is not None:
        evidence.check(space)
        params.check(space)
    ev = evidence.filtered(config.hand_detection_threshold)
    return _initialize_filtered(ev)


def _initialize_filtered(evidence: Evidence) -> SceneState:
    grasp, attribute, hand, obj = [0, 0], [0, 0], [None, None], [None, None]
    for s in SIDES:
        ev = evidence.sides[s]
        if ev.n_hands == 0:
            continue
        h = int(np.argmax(ev.phi_h[:, 1 + s]))
        hand[s] = h
        grasp[s] = int(np.argmax(ev.phi_g[h])) + 1
        if ev.n_objects == 0:
            continue
        # the candidate closest to the regressed reference box (the reference itself
        # when the grid contains the identity shift)
        ious = iou_array(ev.object_boxes[h], ev.reference_objects()[h])
        o = int(np.argmax(ious))
        obj[s] = o
        attribute[s] = int(np.argmax(ev.phi_o[h, o])) + 1
    return SceneState(
        action=int(np.argmax(evidence.phi_a)),
        grasp=tuple(grasp),
        attribute=tuple(attribute),
        hand=tuple(hand),
        obj=tuple(obj),
    )


def update_grasp(state: SceneState, evidence: Evidence, params: ModelParams, side: int,
                 tables: Optional[_Tables] = None) -> SceneState:
    """Best (grasp label, hand box) for ``side`` with all other labels held.

    The object keeps its candidate slot, so when the hand moves the object box
    moves with it; its spatial and attribute terms are re-scored for the new
    hand, which makes this an exact block maximization.
    """
    if state.hand[side] is None:
        return state
    t = tables or _Tables(params, evidence)
    m, o = state.attribute[side], state.obj[side]
    # (Ng+1, H) with grasp 0 excluded below
    score = _alpha_row(params, state, side, "grasp")[:, None] + params.beta[:, m][:, None]
    score = score + t.hand[side][None, :] + t.grasp[side].T
    if m > 0:
        score = score + (t.spatial[side][:, o] + t.obj[side][:, o, m])[None, :]
    score = score[1:]
    i, h = np.unravel_index(int(np.argmax(score)), score.shape)
    return state.with_side(side, grasp=int(i) + 1, hand=int(h))


def update_object(state: SceneState, evidence: Evidence, params: ModelParams, side: int,
                  tables: Optional[_Tables] = None) -> SceneState:
    """Best (attribute label, object box) for ``side``; attribute 0 drops the object."""
    h = state.hand[side]
    if h is None:
        return state
    t = tables or _Tables(params, evidence)
    g = state.grasp[side]
    row = _alpha_row(params, state, side, "attribute") + params.beta[g, :]
    best_val, best = row[0], (0, None)
    n_obj = evidence.sides[side].n_objects
    if n_obj:
        # (No, K) for attributes 1..No
        score = row[1:, None] + t.spatial[side][h][None, :] + t.obj[side][h][:, 1:].T
        m, o = np.unravel_index(int(np.argmax(score)), score.shape)
        if score[m, o] > best_val:
            best = (int(m) + 1, int(o))
    return state.with_side(side, attribute=best[0], obj=best[1])


def update_action(state: SceneState, evidence: Evidence, params: ModelParams,
                  tables: Optional[_Tables] = None) -> SceneState:
    t = tables or _Tables(params, evidence)
    _, gl, gr, ml, mr = state.labels()
    score = params.alpha[:, gl, gr, ml, mr] + t.action
    return SceneState(int(np.argmax(score)), state.grasp, state.attribute, state.hand, state.obj)


def _fast_potential(params: ModelParams, state: SceneState, t: _Tables) -> float:
    """Same value as :func:`total_potential`, read from the precomputed tables."""
    fc = float(params.alpha[state.labels()])
    pc = sc = g = o = 0.0
    for s in SIDES:
        gs, ms, hs, os_ = state.grasp[s], state.attribute[s], state.hand[s], state.obj[s]
        if gs > 0 and ms > 0:
            pc += float(params.beta[gs, ms])
        if ms > 0:
            sc += float(t.spatial[s][hs, os_])
            o += float(t.obj[s][hs, os_, ms])
        if gs > 0:
            g += float(t.hand[s][hs]) + float(t.grasp[s][hs, gs])
    return fc + pc + sc + g + o + float(t.action[state.action])


def infer(evidence: Evidence, params: ModelParams, config: InferenceConfig = InferenceConfig(),
          space: Optional[LabelSpace] = None) -> InferenceResult:
    """Coordinate-ascent MAP estimate.

    Candidate indices in the returned state refer to the *thresholded*
    evidence, ``evidence.filtered(config.hand_detection_threshold)``.
    """
    if space is not None:
        evidence.check(space)
        params.check(space)
    ev = evidence.filtered(config.hand_detection_threshold)
    t = _Tables(params, ev)
    state = _initialize_filtered(ev)
    trace = [_fast_potential(params, state, t)]
    converged = False
    iterations = 0
    for _ in range(config.max_iterations):
        iterations += 1
        before = state
        for step in config.order:
            if step == "grasp":
                for s in SIDES:
                    state = update_grasp(state, ev, params, s, t)
            elif step == "object":
                for s in SIDES:
                    state = update_object(state, ev, params, s, t)
            else:
                state = update_action(state, ev, params, t)
        trace.append(_fast_potential(params, state, t))
        if state == before:
            converged = True
            if config.stop_when_unchanged:
                break
    return InferenceResult(state, trace[-1], iterations, trace, converged)


# --- brute-force oracle ---------------------------------------------------------


def _side_options(params: ModelParams, evidence: Evidence, side: int, space: LabelSpace):
    """Every feasible (grasp, attribute, hand, obj) for one side and its local score.

    The local score is the side's share of the physical, spatial and evidence
    terms, computed with the public term scorers on a one-sided state.
    """
    ev = evidence.sides[side]
    if ev.n_hands == 0:
        return [(0, 0, None, None)], np.zeros(1)
    options = []
    for g in range(1, space.n_grasps + 1):
        for h in range(ev.n_hands):
            options.append((g, 0, h, None))
            for m in range(1, space.n_attributes + 1):
                for o in range(ev.n_objects):
                    options.append((g, m, h, o))
    scores = np.empty(len(options))
    for idx, (g, m, h, o) in enumerate(options):
        st = SceneState(0).with_side(side, grasp=g, attribute=m, hand=h, obj=o)
        scores[idx] = (
            score_physical(params, st)
            + score_spatial(params, st, evidence)
            + score_grasp_evidence(params, st, evidence)
            + score_object_evidence(params, st, evidence)
        )
    return options, scores


def state_space_size(evidence: Evidence, space: LabelSpace) -> int:
    size = space.n_actions
    for s in SIDES:
        ev = evidence.sides[s]
        if ev.n_hands:
            size *= ev.n_hands * space.n_grasps * (1 + ev.n_objects * space.n_attributes)
    return size


def exhaustive_map(evidence: Evidence, params: ModelParams, space: LabelSpace,
                   threshold: Optional[float] = 0.8, cap: int = 10**7) -> tuple[SceneState, float]:
    """Maximize the total potential by enumerating every feasible state.

    Feasibility matches :func:`infer`: after thresholding, a side with
    candidates always has a hand (its object may be absent) and a side without
    candidates is empty.  Ties go to the first state in enumeration order
    (action, then left option, then right option).
    """
    ev = evidence.filtered(threshold) if threshold is not None else evidence
    n = state_space_size(ev, space)
    if n > cap:
        raise StateSpaceTooLarge(f"{n} states exceed the cap of {cap}")
    left, sl = _side_options(params, ev, 0, space)
    right, sr = _side_options(params, ev, 1, space)
    gl = np.array([o[0] for o in left])
    ml = np.array([o[1] for o in left])
    gr = np.array([o[0] for o in right])
    mr = np.array([o[1] for o in right])
    act = params.xi @ ev.phi_a
    alpha = params.alpha[:, gl[:, None], gr[None, :], ml[:, None], mr[None, :]]  # (Na, L, R)
    total = alpha + act[:, None, None] + sl[None, :, None] + sr[None, None, :]
    k, i, j = np.unravel_index(int(np.argmax(total)), total.shape)
    lo, ro = left[i], right[j]
    state = SceneState(
        action=int(k),
        grasp=(lo[0], ro[0]),
        attribute=(lo[1], ro[1]),
        hand=(lo[2], ro[2]),
        obj=(lo[3], ro[3]),
    )
    return state, total_potential(params, state, ev)


def enumerate_states(evidence: Evidence, space: LabelSpace):
    """Yield every feasible state of already-thresholded evidence (tiny instances only)."""
    per_side = []
    for s in SIDES:
        ev = evidence.sides[s]
        if ev.n_hands == 0:
            per_side.append([(0, 0, None, None)])
            continue
        opts = []
        for g in range(1, space.n_grasps + 1):
            for h in range(ev.n_hands):
                opts.append((g, 0, h, None))
                opts.extend((g, m, h, o) for m in range(1, space.n_attributes + 1) for o in range(ev.n_objects))
        per_side.append(opts)
    for k, lo, ro in itertools.product(range(space.n_actions), per_side[0], per_side[1]):
        yield SceneState(k, (lo[0], ro[0]), (lo[1], ro[1]), (lo[2], ro[2]), (lo[3], ro[3]))


def check_result(result: InferenceResult, evidence: Evidence, space: LabelSpace, threshold: float) -> None:
    check_state(result.state, space, evidence.filtered(threshold))
