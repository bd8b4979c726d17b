"""Box arithmetic, hand-to-object offsets, hand blob extraction and candidate grids.

Boxes are center-size ``(cx, cy, w, h)`` in pixels.  Scalar functions take
:class:`BoundingBox`; the ``*_array`` variants work on ``(..., 4)`` float
arrays and are what the inference loop uses.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class BoundingBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box size must be positive, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "BoundingBox":
        cx, cy, w, h = (float(v) for v in arr)
        return cls(cx, cy, w, h)

    def to_corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "BoundingBox":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    def scaled(self, factor: float) -> "BoundingBox":
        return BoundingBox(self.cx * factor, self.cy * factor, self.w * factor, self.h * factor)

    def to_dict(self) -> dict:
        return {"cx": self.cx, "cy": self.cy, "w": self.w, "h": self.h}


@dataclass(frozen=True)
class OffsetVector:
    """Scale-normalized hand-to-object transform.

    ``nx, ny`` are the center displacement divided by the hand width/height,
    ``nw, nh`` the object-to-hand size ratios.
    """

    nx: float
    ny: float
    nw: float
    nh: float

    def __post_init__(self):
        if not (self.nw > 0 and self.nh > 0):
            raise ValueError(f"size ratios must be positive, got nw={self.nw}, nh={self.nh}")

    def as_array(self) -> np.ndarray:
        return np.array([self.nx, self.ny, self.nw, self.nh], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "OffsetVector":
        nx, ny, nw, nh = (float(v) for v in arr)
        return cls(nx, ny, nw, nh)


# --- IoU ---------------------------------------------------------------------


def iou_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise IoU of broadcast-compatible ``(..., 4)`` center-size arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ax0 = a[..., 0] - a[..., 2] / 2
    ax1 = a[..., 0] + a[..., 2] / 2
    ay0 = a[..., 1] - a[..., 3] / 2
    ay1 = a[..., 1] + a[..., 3] / 2
    bx0 = b[..., 0] - b[..., 2] / 2
    bx1 = b[..., 0] + b[..., 2] / 2
    by0 = b[..., 1] - b[..., 3] / 2
    by1 = b[..., 1] + b[..., 3] / 2
    iw = np.clip(np.minimum(ax1, bx1) - np.maximum(ax0, bx0), 0.0, None)
    ih = np.clip(np.minimum(ay1, by1) - np.maximum(ay0, by0), 0.0, None)
    inter = iw * ih
    union = a[..., 2] * a[..., 3] + b[..., 2] * b[..., 3] - inter
    return inter / union


def iou(a: BoundingBox, b: BoundingBox) -> float:
    if a == b:
        return 1.0
    return float(iou_array(a.as_array(), b.as_array()))


# --- offsets -----------------------------------------------------------------


def apply_offsets_array(hand: np.ndarray, off: np.ndarray) -> np.ndarray:
    hand = np.asarray(hand, dtype=float)
    off = np.asarray(off, dtype=float)
    out = np.empty(np.broadcast_shapes(hand.shape, off.shape))
    out[..., 0] = hand[..., 0] + off[..., 0] * hand[..., 2]
    out[..., 1] = hand[..., 1] + off[..., 1] * hand[..., 3]
    out[..., 2] = off[..., 2] * hand[..., 2]
    out[..., 3] = off[..., 3] * hand[..., 3]
    return out


def compute_offsets_array(hand: np.ndarray, obj: np.ndarray) -> np.ndarray:
    hand = np.asarray(hand, dtype=float)
    obj = np.asarray(obj, dtype=float)
    out = np.empty(np.broadcast_shapes(hand.shape, obj.shape))
    out[..., 0] = (obj[..., 0] - hand[..., 0]) / hand[..., 2]
    out[..., 1] = (obj[..., 1] - hand[..., 1]) / hand[..., 3]
    out[..., 2] = obj[..., 2] / hand[..., 2]
    out[..., 3] = obj[..., 3] / hand[..., 3]
    return out


def apply_offsets(hand: BoundingBox, off: OffsetVector) -> BoundingBox:
    """Object box regressed from a hand box."""
    return BoundingBox(
        hand.cx + off.nx * hand.w,
        hand.cy + off.ny * hand.h,
        off.nw * hand.w,
        off.nh * hand.h,
    )


def compute_offsets(hand: BoundingBox, obj: BoundingBox) -> OffsetVector:
    return OffsetVector(
        (obj.cx - hand.cx) / hand.w,
        (obj.cy - hand.cy) / hand.h,
        obj.w / hand.w,
        obj.h / hand.h,
    )


# --- candidate grid ----------------------------------------------------------


@dataclass(frozen=True)
class CandidateGrid:
    shift_step: float = 1 / 8
    shift_multipliers: tuple[float, ...] = (-1.0, 0.0, 1.0)
    scales: tuple[float, ...] = (0.75, 1.0, 1.25)

    def __post_init__(self):
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ValueError("scales must be non-empty and positive")
        if not self.shift_multipliers:
            raise ValueError("shift_multipliers must be non-empty")

    def __len__(self) -> int:
        return len(self.shift_multipliers) ** 2 * len(self.scales)

    def reference_index(self) -> int | None:
        """Position of the unshifted, unscaled box in the generated list, if any."""
        try:
            i = self.shift_multipliers.index(0.0)
            s = self.scales.index(1.0)
        except ValueError:
            return None
        n, ns = len(self.shift_multipliers), len(self.scales)
        return (i * n + i) * ns + s

    def to_dict(self) -> dict:
        return {
            "shift_step": self.shift_step,
            "shift_multipliers": list(self.shift_multipliers),
            "scales": list(self.scales),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CandidateGrid":
        return cls(
            float(doc["shift_step"]),
            tuple(float(v) for v in doc["shift_multipliers"]),
            tuple(float(v) for v in doc["scales"]),
        )


def generate_candidates_array(reference: np.ndarray, grid: CandidateGrid = CandidateGrid()) -> np.ndarray:
    """Candidate boxes around ``(..., 4)`` references; returns ``(..., len(grid), 4)``.

    Ordering is x-shift major, then y-shift, then scale.
    """
    ref = np.asarray(reference, dtype=float)
    mult = np.asarray(grid.shift_multipliers, dtype=float)
    scales = np.asarray(grid.scales, dtype=float)
    mx, my, sc = np.meshgrid(mult, mult, scales, indexing="ij")
    mx, my, sc = mx.ravel(), my.ravel(), sc.ravel()
    r = ref[..., None, :]
    out = np.empty(ref.shape[:-1] + (mx.size, 4))
    out[..., 0] = r[..., 0] + mx * grid.shift_step * r[..., 2]
    out[..., 1] = r[..., 1] + my * grid.shift_step * r[..., 3]
    out[..., 2] = sc * r[..., 2]
    out[..., 3] = sc * r[..., 3]
    return out


def generate_candidates(reference: BoundingBox, grid: CandidateGrid = CandidateGrid()) -> list[BoundingBox]:
    return [BoundingBox.from_array(row) for row in generate_candidates_array(reference.as_array(), grid)]


# --- probability maps and hand blobs -----------------------------------------


class ProbabilityMap:
    """A hand-probability image, values in [0, 1], indexed ``values[y, x]``."""

    def __init__(self, values):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.size == 0:
            raise ValueError("probability map must be a non-empty 2-D array")
        if not np.all((values >= 0) & (values <= 1)):
            raise ValueError("probability map values must lie in [0, 1]")
        self.values = values

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    major: float  # full axis lengths
    minor: float
    angle: float  # radians, direction of the major axis (x right, y down)


_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def fit_ellipse(ys: np.ndarray, xs: np.ndarray) -> Ellipse:
    """Second-moment ellipse of a pixel set.

    For a filled ellipse the variance along a principal axis is (semi-axis)^2/4,
    so the full axis length is four standard deviations.  Pixel centers sit at
    ``index + 0.5``.
    """
    px = xs + 0.5
    py = ys + 0.5
    mx, my = px.mean(), py.mean()
    cov = np.cov(np.stack([px - mx, py - my]), bias=True)
    # the 1/12 term is the variance of a unit pixel, makes tiny blobs non-degenerate
    cov = cov + np.eye(2) / 12.0
    evals, evecs = np.linalg.eigh(cov)
    major_vec = evecs[:, 1]
    return Ellipse(
        cx=float(mx),
        cy=float(my),
        major=float(4 * np.sqrt(evals[1])),
        minor=float(4 * np.sqrt(evals[0])),
        angle=float(np.arctan2(major_vec[1], major_vec[0])),
    )


def _touched_border(ys, xs, height, width):
    counts = {
        "bottom": int(np.sum(ys == height - 1)),
        "top": int(np.sum(ys == 0)),
        "left": int(np.sum(xs == 0)),
        "right": int(np.sum(xs == width - 1)),
    }
    best = max(counts, key=lambda k: counts[k])
    return best if counts[best] > 0 else None


_BORDER_DIRECTION = {
    # unit vector pointing from the image interior toward each border
    "bottom": np.array([0.0, 1.0]),
    "top": np.array([0.0, -1.0]),
    "left": np.array([-1.0, 0.0]),
    "right": np.array([1.0, 0.0]),
}


def truncate_blob(ys: np.ndarray, xs: np.ndarray, height: int, width: int, ratio: float = 1.5):
    """Drop the forearm part of a blob; returns the retained ``(ys, xs)``.

    The retained slab along the major axis is ``ratio * minor`` long and sits
    at the ellipse end away from the border the blob touches most (the image
    bottom when it touches none).
    """
    ell = fit_ellipse(ys, xs)
    keep_len = ratio * ell.minor
    if ell.major <= keep_len:
        return ys, xs
    axis = np.array([np.cos(ell.angle), np.sin(ell.angle)])
    border = _touched_border(ys, xs, height, width) or "bottom"
    # orient the axis so it points away from the border
    if axis @ _BORDER_DIRECTION[border] > 0:
        axis = -axis
    t = (xs + 0.5 - ell.cx) * axis[0] + (ys + 0.5 - ell.cy) * axis[1]
    end = ell.major / 2
    keep = t >= end - keep_len
    return ys[keep], xs[keep]


def extract_reference_hand_boxes(
    prob_map: ProbabilityMap,
    threshold: float = 0.5,
    min_area_frac: float = 0.005,
    max_area_frac: float = 0.30,
    ratio: float = 1.5,
) -> list[BoundingBox]:
    """Reference hand boxes from a probability map.

    Threshold, label 8-connected blobs, discard blobs whose area fraction is
    outside ``[min_area_frac, max_area_frac]``, remove the forearm via the
    ellipse truncation above and box what is left.  Boxes are returned in
    blob-label order (raster order of each blob's first pixel).
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    mask = prob_map.values >= threshold
    labels, count = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    total = mask.size
    boxes = []
    for blob in range(1, count + 1):
        ys, xs = np.nonzero(labels == blob)
        frac = ys.size / total
        if frac < min_area_frac or frac > max_area_frac:
            continue
        ys, xs = truncate_blob(ys, xs, prob_map.height, prob_map.width, ratio)
        if ys.size == 0:
            continue
        boxes.append(BoundingBox.from_corners(xs.min(), ys.min(), xs.max() + 1.0, ys.max() + 1.0))
    return boxes


def boxes_to_records(boxes: Sequence[BoundingBox]) -> list[dict]:
    return [b.to_dict() for b in boxes]


def boxes_from_records(records: Sequence[dict]) -> list[BoundingBox]:
    return [BoundingBox(float(r["cx"]), float(r["cy"]), float(r["w"]), float(r["h"])) for r in records]
