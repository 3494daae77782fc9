"""Removal-target gating: per-class registry rules and bbox size limits.

An object may only become a removal target when its class carries a true
"bidirectional" flag in the registry, it is not a multi-object (plural)
node, not an implicit part or a worn item, and its box area sits inside
the configured fraction bounds of the image area.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import RegistryError
from .scene_graph import BBox, ObjectNode, SceneGraph

DEFAULT_MIN_AREA_FRAC = 2.5e-5
DEFAULT_MAX_AREA_FRAC = 0.5


class SizeVerdict(str, Enum):
    KEEP = "Keep"
    TOO_LARGE = "TooLarge"
    TOO_SMALL = "TooSmall"


class Decision(str, Enum):
    REMOVABLE = "Removable"
    REFERENCE_ONLY = "ReferenceOnly"
    TOO_LARGE = "TooLarge"
    TOO_SMALL = "TooSmall"
    IMPLICIT_PART = "ImplicitPart"
    WEARABLE = "Wearable"
    PLURAL_NODE = "PluralNode"


@dataclass(frozen=True)
class SelectionVerdict:
    """Outcome of classifying one node; non-Removable decisions carry the
    first rule that rejected. ``unknown_class`` marks names absent from
    every registry collection (treated as reference-only)."""

    decision: Decision
    unknown_class: bool = False


@dataclass(frozen=True)
class RemovabilityRegistry:
    """Per-class removability annotations; immutable after load."""

    bidirectional: dict[str, bool]
    plural_classes: frozenset[str]
    implicit_parts: frozenset[str]
    wearables: frozenset[str]

    def __post_init__(self) -> None:
        for name, flag in self.bidirectional.items():
            if flag and (
                name in self.plural_classes
                or name in self.implicit_parts
                or name in self.wearables
            ):
                raise RegistryError(
                    f"class {name!r} is flagged bidirectional but also listed as "
                    "plural, implicit part, or wearable"
                )

    def knows(self, name: str) -> bool:
        return (
            name in self.bidirectional
            or name in self.plural_classes
            or name in self.implicit_parts
            or name in self.wearables
        )

    @classmethod
    def from_dict(cls, raw: dict) -> "RemovabilityRegistry":
        bidirectional: dict[str, bool] = {}
        for name in raw.get("bidirectional_true", []):
            bidirectional[name] = True
        for name in raw.get("bidirectional_false", []):
            if bidirectional.get(name) is True:
                raise RegistryError(f"class {name!r} listed both bidirectional_true and bidirectional_false")
            bidirectional[name] = False
        return cls(
            bidirectional=bidirectional,
            plural_classes=frozenset(raw.get("plural_classes", [])),
            implicit_parts=frozenset(raw.get("implicit_parts", [])),
            wearables=frozenset(raw.get("wearables", [])),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "RemovabilityRegistry":
        with open(path, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
        if not isinstance(raw, dict):
            raise RegistryError(f"registry file {path} must hold a JSON object")
        return cls.from_dict(raw)


def default_registry() -> RemovabilityRegistry:
    """The registry shipped with the package.

    It covers the common GQA classes we curated by hand; it is a partial
    list by nature, so production corpora should extend it with their own
    registry file (unlisted classes fall back to reference-only).
    """
    data = resources.files("inpaintforge.data").joinpath("removability.json").read_text("utf-8")
    return RemovabilityRegistry.from_dict(json.loads(data))


def size_filter(
    bbox: BBox,
    image_w: int,
    image_h: int,
    min_area_frac: float = DEFAULT_MIN_AREA_FRAC,
    max_area_frac: float = DEFAULT_MAX_AREA_FRAC,
) -> SizeVerdict:
    """Gate a box by its share of the image area.

    Strict inequalities on both sides: area above ``max_area_frac`` of the
    image is TooLarge, below ``min_area_frac`` is TooSmall, and boundary
    equality keeps the box.
    """
    image_area = image_w * image_h
    area = bbox.area
    if area > max_area_frac * image_area:
        return SizeVerdict.TOO_LARGE
    if area < min_area_frac * image_area:
        return SizeVerdict.TOO_SMALL
    return SizeVerdict.KEEP


_SIZE_TO_DECISION = {
    SizeVerdict.TOO_LARGE: Decision.TOO_LARGE,
    SizeVerdict.TOO_SMALL: Decision.TOO_SMALL,
}


def classify_object(
    node: ObjectNode,
    graph: SceneGraph,
    registry: RemovabilityRegistry,
    min_area_frac: float = DEFAULT_MIN_AREA_FRAC,
    max_area_frac: float = DEFAULT_MAX_AREA_FRAC,
) -> SelectionVerdict:
    """Classify one node against the registry and size rules.

    Rejection rules run in a fixed order (plural, bidirectional flag,
    implicit part, wearable, size) so the first failing rule is reported
    deterministically. Classes absent from every registry collection are
    reference-only and flagged ``unknown_class``.
    """
    name = node.name
    if name in registry.plural_classes:
        return SelectionVerdict(Decision.PLURAL_NODE)
    if registry.bidirectional.get(name) is False:
        return SelectionVerdict(Decision.REFERENCE_ONLY)
    if name in registry.implicit_parts:
        return SelectionVerdict(Decision.IMPLICIT_PART)
    if name in registry.wearables:
        return SelectionVerdict(Decision.WEARABLE)
    if registry.bidirectional.get(name) is not True:
        return SelectionVerdict(Decision.REFERENCE_ONLY, unknown_class=not registry.knows(name))
    size = size_filter(node.bbox, graph.width, graph.height, min_area_frac, max_area_frac)
    if size is not SizeVerdict.KEEP:
        return SelectionVerdict(_SIZE_TO_DECISION[size])
    return SelectionVerdict(Decision.REMOVABLE)


@dataclass
class SelectionReport:
    """Aggregated classification tallies for one or more graphs."""

    decisions: Counter = field(default_factory=Counter)
    unknown_classes: Counter = field(default_factory=Counter)

    def as_dict(self) -> dict:
        return {
            "decisions": {key.value: count for key, count in sorted(self.decisions.items(), key=lambda kv: kv[0].value)},
            "unknown_classes": dict(sorted(self.unknown_classes.items())),
        }


def select_removal_targets(
    graph: SceneGraph,
    registry: RemovabilityRegistry,
    report: Optional[SelectionReport] = None,
    min_area_frac: float = DEFAULT_MIN_AREA_FRAC,
    max_area_frac: float = DEFAULT_MAX_AREA_FRAC,
) -> list[str]:
    """Ids of all nodes classified Removable, sorted by id."""
    selected = []
    for object_id in sorted(graph.objects):
        node = graph.objects[object_id]
        verdict = classify_object(node, graph, registry, min_area_frac, max_area_frac)
        if report is not None:
            report.decisions[verdict.decision] += 1
            if verdict.unknown_class:
                report.unknown_classes[node.name] += 1
        if verdict.decision is Decision.REMOVABLE:
            selected.append(object_id)
    return selected
