"""Synthetic annotated frames drawn from a known model.

Ground-truth labels are Gibbs samples from the functional and physical
context of a generating model; classifier outputs are the one-hot truth plus
Gaussian noise, shared between boxes that overlap the annotated box; boxes are the truth plus pixel jitter and the predicted
offsets are the exact hand-to-object offsets plus jitter.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
import numpy as np

from .geometry import (
    BoundingBox,
    CandidateGrid,
    apply_offsets_array,
    compute_offsets_array,
    generate_candidates_array,
    iou_array,
)
from .io import DatasetManifest, FrameRecord, GroundTruth, write_frames, write_manifest, write_params
from .labels import SIDES, LabelSpace
from .potentials import Evidence, ModelParams, SideEvidence

HAND_CENTERS = ((200.0, 330.0), (440.0, 330.0))


@dataclass(frozen=True)
class SynthConfig:
    n_actions: int = 5
    n_grasps: int = 6
    n_attributes: int = 5
    n_train: int = 2000
    n_test: int = 500
    sharpness: float = 5.0
    noise: float = 0.1
    box_noise: float = 3.0
    seed: int = 0
    p_missing_hand: float = 0.1
    p_missing_object: float = 0.1
    burn_in: int = 500
    thin: int = 3
    # extra multipliers on the grasp and attribute classifier noise (weaker classifiers)
    grasp_noise_scale: float = 1.0
    attribute_noise_scale: float = 1.0
    grid: CandidateGrid = field(default_factory=lambda: CandidateGrid(scales=(1.0,)))
    false_hands: int = 1

    def __post_init__(self):
        if min(self.n_actions, self.n_grasps, self.n_attributes) < 1:
            raise ValueError("label-space sizes must be >= 1")
        if self.n_train < 0 or self.n_test < 0 or self.n_train + self.n_test < 1:
            raise ValueError("need at least one frame")
        if self.sharpness <= 0:
            raise ValueError("sharpness must be > 0")
        if self.noise < 0 or self.box_noise < 0 or min(self.grasp_noise_scale, self.attribute_noise_scale) < 0:
            raise ValueError("noise scales must be >= 0")
        if not (0 <= self.p_missing_hand < 1 and 0 <= self.p_missing_object < 1):
            raise ValueError("missing probabilities must be in [0, 1)")

    @property
    def n_frames(self) -> int:
        return self.n_train + self.n_test

    def label_space(self) -> LabelSpace:
        return LabelSpace.from_sizes(self.n_actions, self.n_grasps, self.n_attributes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = self.grid.to_dict()
        return d


@dataclass
class SynthDataset:
    space: LabelSpace
    records: list[FrameRecord]
    params: ModelParams
    train_ids: list[str]
    test_ids: list[str]
    config: SynthConfig

    def split(self, name: str) -> list[FrameRecord]:
        ids = set(self.train_ids if name == "train" else self.test_ids)
        return [r for r in self.records if r.frame_id in ids]

    def save(self, out_dir) -> Path:
        """Write labels, frames, generating params and a manifest; returns the manifest path."""
        import json

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "labels.json").write_text(json.dumps(self.space.to_dict(), indent=2) + "\n", encoding="utf-8")
        write_frames(self.records, out / "frames.jsonl", self.space)
        write_params(self.params, out / "generating_params.json", self.space)
        manifest = DatasetManifest(out / "labels.json", [out / "frames.jsonl"],
                                   splits={"train": list(self.train_ids), "test": list(self.test_ids)})
        write_manifest(manifest, out / "manifest.json")
        (out / "synth_config.json").write_text(json.dumps(self.config.to_dict(), indent=2) + "\n", encoding="utf-8")
        return out / "manifest.json"


def generating_params(space: LabelSpace, sharpness: float, rng: np.random.Generator,
                      noise: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> ModelParams:
    """Sharp context model with evidence weights matched to the classifier noise.

    Each action prefers two grasps and two attributes per hand, each grasp two
    attributes; preferred combinations score ``sharpness`` per match, plus a
    small random perturbation. ``noise`` holds the (action, grasp, attribute)
    classifier noise levels; a one-hot score plus Gaussian noise of level s
    has log-likelihood ratio ``x / s**2`` per class, so that is the weight.
    """
    na, ng, no = space.sizes
    p = ModelParams.identity(space)

    def preferred(rows, n, k):
        table = np.zeros((rows, n + 1))
        for r in range(rows):
            chosen = rng.choice(np.arange(1, n + 1), size=min(k, n), replace=False)
            table[r, chosen] = 1.0
        return table

    act_grasp = [preferred(na, ng, 2) for _ in SIDES]
    act_attr = [preferred(na, no, 2) for _ in SIDES]
    grasp_attr = preferred(ng + 1, no, 2)
    grasp_attr[0] = 0.0
    grasp_attr[:, 0] = 0.0
    alpha = (
        act_grasp[0][:, :, None, None, None]
        + act_grasp[1][:, None, :, None, None]
        + act_attr[0][:, None, None, :, None]
        + act_attr[1][:, None, None, None, :]
    )
    p.alpha[...] = sharpness * alpha + 0.25 * rng.standard_normal(alpha.shape)
    p.beta[...] = sharpness * grasp_attr + 0.25 * rng.standard_normal(p.beta.shape)
    w_a, w_g, w_o = (1.0 / max(v, 0.01) ** 2 for v in noise)
    p.xi *= w_a
    p.eta *= w_g
    p.lam *= w_o
    p.zero_null_rows()
    return p


def _gibbs_sweep(labels: list[int], present: tuple, params: ModelParams, rng: np.random.Generator) -> None:
    """One in-place sweep over (action, grasp_l, grasp_r, attr_l, attr_r) under the context terms."""
    alpha, beta = params.alpha, params.beta
    for var in range(5):
        if var in (1, 2) and not present[var - 1][0]:
            continue
        if var in (3, 4) and not present[var - 3][1]:
            continue
        idx = list(labels)
        idx[var] = slice(None)
        logits = alpha[tuple(idx)].copy()
        if var in (1, 2):
            logits += beta[:, labels[var + 2]]
            logits[0] = -np.inf
        elif var in (3, 4):
            logits += beta[labels[var - 2], :]
            logits[0] = -np.inf
        logits -= logits.max()
        prob = np.exp(logits)
        prob /= prob.sum()
        labels[var] = int(rng.choice(prob.size, p=prob))


def sample_labels(params: ModelParams, space: LabelSpace, config: SynthConfig, rng: np.random.Generator):
    """Gibbs chain over labels; returns ``(labels, present)`` per frame.

    ``present[s] = (hand, object)``; absent variables are pinned to 0.
    """
    na, ng, no = space.sizes
    labels = [int(rng.integers(na)), int(rng.integers(1, ng + 1)), int(rng.integers(1, ng + 1)),
              int(rng.integers(1, no + 1)), int(rng.integers(1, no + 1))]
    full = ((True, True), (True, True))
    for _ in range(config.burn_in):
        _gibbs_sweep(labels, full, params, rng)
    out = []
    for _ in range(config.n_frames):
        present = []
        for s in SIDES:
            hand = rng.random() >= config.p_missing_hand
            obj = hand and rng.random() >= config.p_missing_object
            present.append((hand, obj))
            if not hand:
                labels[1 + s] = 0
            elif labels[1 + s] == 0:
                labels[1 + s] = int(rng.integers(1, ng + 1))
            if not obj:
                labels[3 + s] = 0
            elif labels[3 + s] == 0:
                labels[3 + s] = int(rng.integers(1, no + 1))
        present = tuple(present)
        for _ in range(config.thin):
            _gibbs_sweep(labels, present, params, rng)
        out.append((tuple(labels), present))
    return out


def _onehot(n: int, idx: int) -> np.ndarray:
    v = np.zeros(n)
    if idx > 0:
        v[idx - 1] = 1.0
    return v


def _mix(shared: np.ndarray, iou: np.ndarray, rng) -> np.ndarray:
    """Unit-variance noise correlated with ``shared`` by ``iou ** 0.25`` (broadcast over leading axes).

    Crops of largely the same region give largely the same classifier error,
    so a box search cannot average the noise away.
    """
    rho = np.clip(iou, 0.0, 1.0)[..., None] ** 0.25
    own = rng.standard_normal(rho.shape[:-1] + shared.shape)
    return rho * shared + np.sqrt(1.0 - rho ** 2) * own


def _hand_scores(side: int, side_score: np.ndarray, rng) -> np.ndarray:
    """(N, 3) detection softmax with the given side-specific score."""
    n = side_score.size
    other = (1 - side_score) * rng.uniform(0, 0.5, size=n)
    out = np.empty((n, 3))
    out[:, 1 + side] = side_score
    out[:, 2 - side] = other
    out[:, 0] = 1 - side_score - other
    return np.clip(out, 0.0, 1.0)


def synth_generate(config: SynthConfig) -> SynthDataset:
    """Generate a dataset; identical configs give identical datasets."""
    space = config.label_space()
    na, ng, no = space.sizes
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    rng_model, rng_labels, rng_ev = (np.random.default_rng(s) for s in seeds)
    g_noise = config.noise * config.grasp_noise_scale
    o_noise = config.noise * config.attribute_noise_scale
    params = generating_params(space, config.sharpness, rng_model, (config.noise, g_noise, o_noise))
    samples = sample_labels(params, space, config, rng_labels)
    # layout draws come from their own stream so changing classifier noise keeps geometry fixed
    rng_geo = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(4)[3])
    records = []
    for f, (labels, present) in enumerate(samples):
        action = labels[0]
        phi_a = _onehot(na, action + 1) + config.noise * rng_ev.standard_normal(na)
        sides, truth = [], {k: [None, None] for k in ("hand_box", "object_box", "phi_h", "phi_g", "offset", "phi_o")}
        for s in SIDES:
            g, m = labels[1 + s], labels[3 + s]
            hand_ok, obj_ok = present[s]
            cx, cy = HAND_CENTERS[s]
            hand = np.array([cx + rng_geo.normal(0, 30), cy + rng_geo.normal(0, 30),
                             rng_geo.uniform(60, 100), rng_geo.uniform(60, 100)])
            true_off = np.array([rng_geo.uniform(-0.3, 0.3), rng_geo.uniform(-0.6, -0.2),
                                 rng_geo.uniform(0.6, 1.4), rng_geo.uniform(0.4, 1.0)])
            obj = apply_offsets_array(hand, true_off)
            ref = hand + np.concatenate([rng_geo.normal(0, config.box_noise, 2), rng_geo.normal(0, config.box_noise / 2, 2)])
            ref[2:] = np.maximum(ref[2:], 10.0)
            cands = generate_candidates_array(ref, config.grid) if hand_ok else np.zeros((0, 4))
            n_false = config.false_hands
            false = np.column_stack([rng_geo.uniform(60, 580, n_false), rng_geo.uniform(60, 420, n_false),
                                     rng_geo.uniform(40, 90, n_false), rng_geo.uniform(40, 90, n_false)])
            boxes = np.concatenate([cands, false])
            n_h = boxes.shape[0]
            quality = iou_array(boxes, hand) if hand_ok else np.zeros(n_h)
            side_score = np.clip(0.7 + 0.3 * quality + rng_ev.uniform(-0.03, 0.03, n_h), 0, 1)
            side_score[len(cands):] = rng_ev.uniform(0.05, 0.6, n_false)
            phi_h = _hand_scores(s, side_score, rng_ev)
            weight = (0.5 + 0.5 * quality)[:, None]
            # one shared classifier error per hand; overlapping boxes see correlated noise
            eps_g = rng_ev.standard_normal(ng)
            phi_g = weight * _onehot(ng, g)[None] + g_noise * _mix(eps_g, quality, rng_ev)
            offsets = compute_offsets_array(boxes, obj) + np.concatenate(
                [rng_ev.normal(0, 0.03, (n_h, 2)), np.zeros((n_h, 2))], axis=1)
            offsets[:, 2:] *= np.exp(rng_ev.normal(0, 0.03, (n_h, 2)))
            obj_boxes = generate_candidates_array(apply_offsets_array(boxes, offsets), config.grid)
            obj_quality = iou_array(obj_boxes, obj) if obj_ok else np.zeros(obj_boxes.shape[:2])
            k = obj_boxes.shape[1]
            eps_o = rng_ev.standard_normal(no)
            phi_o = ((0.5 + 0.5 * obj_quality)[..., None] * _onehot(no, m)[None, None]
                     + o_noise * _mix(eps_o, obj_quality, rng_ev))
            sides.append(SideEvidence(boxes, phi_h, phi_g, offsets, obj_boxes, phi_o))
            if hand_ok:
                truth["hand_box"][s] = BoundingBox.from_array(hand)
                truth["phi_h"][s] = _hand_scores(s, np.array([rng_ev.uniform(0.9, 1.0)]), rng_ev)[0]
                truth["phi_g"][s] = _onehot(ng, g) + g_noise * eps_g
                off = true_off.copy()
                off[:2] += rng_ev.normal(0, 0.03, 2)
                off[2:] *= np.exp(rng_ev.normal(0, 0.03, 2))
                truth["offset"][s] = off
            if obj_ok:
                truth["object_box"][s] = BoundingBox.from_array(obj)
                truth["phi_o"][s] = _onehot(no, m) + o_noise * eps_o
        gt = GroundTruth(action, (labels[1], labels[2]), (labels[3], labels[4]),
                         **{k: tuple(v) for k, v in truth.items()})
        records.append(FrameRecord(f"f{f:06d}", Evidence(phi_a, (sides[0], sides[1])), gt))
    ids = [r.frame_id for r in records]
    return SynthDataset(space, records, params, ids[: config.n_train], ids[config.n_train:], config)


def degraded(config: SynthConfig, fraction: float, task: str) -> SynthConfig:
    """Config whose ``task`` classifier ("grasp" or "attribute") saw ``1 - fraction`` of the data.

    Classifier noise grows like ``1 / sqrt(training size)``; the other
    classifiers, labels and geometry are unchanged.
    """
    if not 0 <= fraction < 1:
        raise ValueError("fraction must be in [0, 1)")
    if task not in ("grasp", "attribute"):
        raise ValueError("task must be 'grasp' or 'attribute'")
    key = f"{task}_noise_scale"
    return replace(config, **{key: getattr(config, key) / np.sqrt(1 - fraction)})
