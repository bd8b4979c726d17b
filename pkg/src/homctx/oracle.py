"""Random small instances on which coordinate ascent is checked against exhaustive search."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import apply_offsets_array, generate_candidates_array, CandidateGrid
from .inference import InferenceConfig, exhaustive_map, infer
from .labels import SIDES, LabelSpace
from .potentials import N_HAND_SCORES, Evidence, ModelParams, SideEvidence

DEFAULT_SIZES = (4, 5, 4)  # upper bounds on (actions, grasps, attributes)
MAX_CANDIDATES = 5


def random_params(space: LabelSpace, rng: np.random.Generator, context_scale: float = 1.0) -> ModelParams:
    """Normal weights in every block, null rows held at zero."""
    p = ModelParams.zeros(space)
    for name, arr in p.blocks().items():
        scale = context_scale if name in ("alpha", "beta") else 1.0
        arr[...] = scale * rng.standard_normal(arr.shape)
    p.zero_null_rows()
    return p


def random_evidence(space: LabelSpace, rng: np.random.Generator, max_hands: int = MAX_CANDIDATES,
                    max_objects: int = MAX_CANDIDATES) -> Evidence:
    """Evidence with 0..max_hands hand candidates per side, some below the detection threshold."""
    na, ng, no = space.sizes
    k = int(rng.integers(1, max_objects + 1))
    grid = CandidateGrid(shift_multipliers=(-1.0, 0.0, 1.0), scales=(1.0,))
    sides = []
    for s in SIDES:
        h = int(rng.integers(0, max_hands + 1))
        hands = np.column_stack([rng.uniform(100, 500, h), rng.uniform(100, 400, h),
                                 rng.uniform(40, 120, h), rng.uniform(40, 120, h)])
        phi_h = rng.dirichlet(np.ones(N_HAND_SCORES), size=h)
        side_score = rng.uniform(0.6, 1.0, h)
        phi_h[:, 1 + s] = side_score
        rest = phi_h[:, [0, 2 - s]]
        phi_h[:, [0, 2 - s]] = (1 - side_score)[:, None] * rest / rest.sum(axis=1, keepdims=True)
        offsets = np.column_stack([rng.uniform(-0.5, 0.5, h), rng.uniform(-0.5, 0.5, h),
                                   rng.uniform(0.5, 1.5, h), rng.uniform(0.5, 1.5, h)])
        ref = apply_offsets_array(hands, offsets)
        objs = generate_candidates_array(ref, grid)[:, :k]
        sides.append(SideEvidence(hands, phi_h, rng.dirichlet(np.ones(ng), size=h), offsets, objs,
                                  rng.dirichlet(np.ones(no), size=(h, k))))
    return Evidence(rng.dirichlet(np.ones(na)), (sides[0], sides[1]))


def random_instance(rng: np.random.Generator, sizes=DEFAULT_SIZES, max_candidates: int = MAX_CANDIDATES):
    """(label space, params, evidence) with label counts drawn from ``1..sizes``."""
    na, ng, no = (int(rng.integers(1, n + 1)) for n in sizes)
    space = LabelSpace.from_sizes(na, ng, no)
    return space, random_params(space, rng), random_evidence(space, rng, max_candidates, max_candidates)


@dataclass
class OracleReport:
    count: int
    tolerance: float
    gaps: np.ndarray = field(repr=False)  # relative gap per instance, >= 0
    monotone_violations: int

    @property
    def match_fraction(self) -> float:
        return float(np.mean(self.gaps <= self.tolerance)) if self.count else 1.0

    @property
    def max_gap(self) -> float:
        return float(self.gaps.max()) if self.count else 0.0

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "tolerance": self.tolerance,
            "match_fraction": self.match_fraction,
            "max_relative_gap": self.max_gap,
            "mean_relative_gap": float(self.gaps.mean()) if self.count else 0.0,
            "monotone_violations": self.monotone_violations,
        }


def run_oracle_suite(count: int = 200, sizes=DEFAULT_SIZES, seed: int = 0, tolerance: float = 0.01,
                     config: InferenceConfig = InferenceConfig()) -> OracleReport:
    """Compare :func:`infer` with :func:`exhaustive_map` on ``count`` random instances.

    The relative gap is ``(exhaustive - infer) / |exhaustive|``; an instance
    matches when the gap is at most ``tolerance``.
    """
    rng = np.random.default_rng(seed)
    gaps = np.zeros(count)
    violations = 0
    for i in range(count):
        space, params, evidence = random_instance(rng, sizes)
        res = infer(evidence, params, config)
        _, best = exhaustive_map(evidence, params, space, config.hand_detection_threshold)
        trace = np.asarray(res.trace)
        if np.any(np.diff(trace) < -1e-9 * (1.0 + np.abs(trace[1:]))):
            violations += 1
        gaps[i] = max(best - res.potential, 0.0) / max(abs(best), 1e-12)
    return OracleReport(count, tolerance, gaps, violations)
