"""Label taxonomies for actions, grasp types and object attributes.

Grasp and attribute lists always carry a null class at index 0 ("no hand",
"no object"), so a label index can be used directly to address parameter
tensors.  ``n_grasps`` and ``n_attributes`` count the real classes only.
"""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Union

SCHEMA_VERSION = 1


class LabelSpaceError(ValueError):
    pass


class Side(enum.IntEnum):
    LEFT = 0
    RIGHT = 1

    @property
    def short(self) -> str:
        return "l" if self is Side.LEFT else "r"


SIDES = (Side.LEFT, Side.RIGHT)


@dataclass(frozen=True)
class LabelClass:
    id: str
    name: str


@dataclass(frozen=True)
class LabelSpace:
    actions: tuple[LabelClass, ...]
    grasps: tuple[LabelClass, ...]
    attributes: tuple[LabelClass, ...]

    def __post_init__(self):
        for key in ("actions", "grasps", "attributes"):
            classes = getattr(self, key)
            minimum = 1 if key == "actions" else 2
            if len(classes) < minimum:
                raise LabelSpaceError(f"{key}: needs at least {minimum} entries")
            _check_unique(key, [c.name for c in classes])
            _check_unique(key, [c.id for c in classes])

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_grasps(self) -> int:
        return len(self.grasps) - 1

    @property
    def n_attributes(self) -> int:
        return len(self.attributes) - 1

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self.n_actions, self.n_grasps, self.n_attributes

    @property
    def fingerprint(self) -> str:
        """Content hash of the ordered class names (first 16 hex digits of sha256)."""
        h = hashlib.sha256()
        for key in ("actions", "grasps", "attributes"):
            h.update(key.encode())
            for c in getattr(self, key):
                h.update(b"\x00" + c.name.encode("utf-8"))
            h.update(b"\x01")
        return h.hexdigest()[:16]

    def action_names(self) -> list[str]:
        return [c.name for c in self.actions]

    def grasp_names(self) -> list[str]:
        return [c.name for c in self.grasps]

    def attribute_names(self) -> list[str]:
        return [c.name for c in self.attributes]

    def to_dict(self) -> dict:
        def records(classes, with_null):
            out = []
            for i, c in enumerate(classes):
                rec = {"id": c.id, "name": c.name}
                if with_null and i == 0:
                    rec["null"] = True
                out.append(rec)
            return out

        return {
            "schema_version": SCHEMA_VERSION,
            "actions": records(self.actions, False),
            "grasps": records(self.grasps, True),
            "attributes": records(self.attributes, True),
        }

    @classmethod
    def from_sizes(cls, n_actions: int, n_grasps: int, n_attributes: int) -> "LabelSpace":
        """Anonymous space with generated ids, used by the synthetic harness."""
        if min(n_actions, n_grasps, n_attributes) < 1:
            raise LabelSpaceError("all sizes must be >= 1")
        return cls(
            actions=tuple(LabelClass(f"a{k + 1:02d}", f"action{k + 1}") for k in range(n_actions)),
            grasps=(LabelClass("g00", "no hand"),)
            + tuple(LabelClass(f"g{i:02d}", f"grasp{i}") for i in range(1, n_grasps + 1)),
            attributes=(LabelClass("o00", "no object"),)
            + tuple(LabelClass(f"o{m:02d}", f"attribute{m}") for m in range(1, n_attributes + 1)),
        )


def _check_unique(key: str, values: list[str]) -> None:
    seen = set()
    for v in values:
        if v in seen:
            raise LabelSpaceError(f"{key}: duplicate entry {v!r}")
        seen.add(v)


def _parse_classes(doc: Mapping, key: str, with_null: bool) -> tuple[LabelClass, ...]:
    if key not in doc:
        raise LabelSpaceError(f"missing list {key!r}")
    records = doc[key]
    if not isinstance(records, list) or not records:
        raise LabelSpaceError(f"{key}: must be a non-empty list")
    out = []
    for pos, rec in enumerate(records):
        if not isinstance(rec, Mapping) or "name" not in rec:
            raise LabelSpaceError(f"{key}[{pos}]: expected a record with a name")
        is_null = bool(rec.get("null", False))
        if with_null and (is_null != (pos == 0)):
            raise LabelSpaceError(
                f"{key}: the null class must be declared exactly once, at index 0"
            )
        if not with_null and is_null:
            raise LabelSpaceError(f"{key}: null class not allowed")
        out.append(LabelClass(str(rec.get("id", f"{key[0]}{pos:02d}")), str(rec["name"])))
    if with_null and len(out) < 2:
        raise LabelSpaceError(f"{key}: needs at least one class besides the null class")
    return tuple(out)


def label_space_from_dict(doc: Mapping) -> LabelSpace:
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise LabelSpaceError(f"unsupported schema_version {version}")
    return LabelSpace(
        actions=_parse_classes(doc, "actions", with_null=False),
        grasps=_parse_classes(doc, "grasps", with_null=True),
        attributes=_parse_classes(doc, "attributes", with_null=True),
    )


def load_label_space(source: Union[str, Path, Mapping]) -> LabelSpace:
    """Load a label space from a JSON file path, a JSON string or a parsed mapping.

    The document holds three lists of ``{"id", "name"}`` records under
    ``actions``, ``grasps`` and ``attributes``.  The first grasp and attribute
    record must be flagged ``"null": true``.
    """
    if isinstance(source, Mapping):
        return label_space_from_dict(source)
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LabelSpaceError(f"invalid JSON: {exc}") from None
    return label_space_from_dict(doc)


def gtea_label_space() -> LabelSpace:
    """The bundled 10-action / 13-grasp / 9-attribute GTEA taxonomy."""
    text = resources.files("homctx.data").joinpath("gtea_labels.json").read_text(encoding="utf-8")
    return load_label_space(text)


# --- object shape criterion --------------------------------------------------


class Shape(str, enum.Enum):
    PRISMATIC = "prismatic"
    ROUND = "round"
    FLAT = "flat"
    NONE = "none"


@dataclass(frozen=True)
class ObjectDimensions:
    """Object extents along its three principal axes, ``a >= b >= c > 0``."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not (self.a >= self.b >= self.c > 0):
            raise ValueError(f"need a >= b >= c > 0, got {(self.a, self.b, self.c)}")


def classify_shape(dims: ObjectDimensions) -> frozenset[Shape]:
    """Return every shape class whose criterion holds.

    The criteria overlap (a long thin blade is both prismatic and flat), so a
    set is returned; ``{Shape.NONE}`` when nothing matches.
    """
    a, b, c = dims.a, dims.b, dims.c
    found = set()
    if a > 2 * b:
        found.add(Shape.PRISMATIC)
    if b <= a < 2 * b and c <= a < 2 * c:
        found.add(Shape.ROUND)
    if b > 2 * c:
        found.add(Shape.FLAT)
    return frozenset(found) if found else frozenset({Shape.NONE})


def names_to_indices(names: Iterable[str], classes: tuple[LabelClass, ...]) -> list[int]:
    lookup = {c.name: i for i, c in enumerate(classes)}
    lookup.update({c.id: i for i, c in enumerate(classes)})
    return [lookup[n] for n in names]
