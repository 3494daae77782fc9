"""Scene-graph annotation model: parsing, validation, and name lookups.

The annotation schema is the GQA release format: one top-level JSON object
keyed by image id, each entry carrying ``width``, ``height``, and an
``objects`` map of ``id -> {name, x, y, w, h, attributes, relations}``.
Unknown keys are ignored so real GQA files load unmodified.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in integer pixels; (x, y) is the top-left corner."""

    x: int
    y: int
    w: int
    h: int

    @property
    def area(self) -> int:
        return self.w * self.h

    def clipped(self, image_w: int, image_h: int) -> Optional["BBox"]:
        """Clip to the image frame; None when nothing remains."""
        x0 = max(self.x, 0)
        y0 = max(self.y, 0)
        x1 = min(self.x + self.w, image_w)
        y1 = min(self.y + self.h, image_h)
        if x1 - x0 <= 0 or y1 - y0 <= 0:
            return None
        return BBox(x0, y0, x1 - x0, y1 - y0)


@dataclass(frozen=True)
class Relation:
    """Directed relation edge; ``target`` is None only for synthesized
    spatial relations ("at the [location]"), which never appear in
    annotation files."""

    predicate: str
    target: Optional[str] = None

    @property
    def synthesized(self) -> bool:
        return self.target is None


@dataclass(frozen=True)
class ObjectNode:
    """One annotated object: class name, attribute strings (kept verbatim),
    outgoing relations, and a validated bounding box."""

    id: str
    name: str
    attributes: tuple[str, ...]
    relations: tuple[Relation, ...]
    bbox: BBox


@dataclass(frozen=True)
class SceneGraph:
    """Validated per-image graph. Treat as immutable after construction."""

    image_id: str
    width: int
    height: int
    objects: dict[str, ObjectNode]

    def node(self, object_id: str) -> ObjectNode:
        return self.objects[object_id]


@dataclass
class ParseReport:
    """Tallies accumulated while parsing an annotation file."""

    graphs: int = 0
    skipped_records: int = 0
    invalid_nodes: int = 0
    dropped_relations: int = 0

    @property
    def warnings(self) -> int:
        return self.skipped_records + self.invalid_nodes + self.dropped_relations

    def as_dict(self) -> dict:
        return {
            "graphs": self.graphs,
            "skipped_records": self.skipped_records,
            "invalid_nodes": self.invalid_nodes,
            "dropped_relations": self.dropped_relations,
        }


def _build_node(object_id: str, raw: dict, image_w: int, image_h: int) -> Optional[ObjectNode]:
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        return None
    try:
        bbox = BBox(int(raw["x"]), int(raw["y"]), int(raw["w"]), int(raw["h"]))
    except (KeyError, TypeError, ValueError):
        return None
    if bbox.w <= 0 or bbox.h <= 0:
        return None
    bbox = bbox.clipped(image_w, image_h)
    if bbox is None:
        return None

    attributes = raw.get("attributes", [])
    if not isinstance(attributes, list) or not all(isinstance(a, str) for a in attributes):
        return None

    relations = []
    for rel in raw.get("relations", []):
        if not isinstance(rel, dict):
            continue
        predicate = rel.get("name")
        target = rel.get("object")
        if not isinstance(predicate, str) or not isinstance(target, str):
            continue
        relations.append(Relation(predicate=predicate, target=target))

    return ObjectNode(
        id=object_id,
        name=name,
        attributes=tuple(attributes),
        relations=tuple(relations),
        bbox=bbox,
    )


def _build_graph(image_id: str, entry: object, report: ParseReport) -> Optional[SceneGraph]:
    if not isinstance(entry, dict):
        report.skipped_records += 1
        return None
    width = entry.get("width")
    height = entry.get("height")
    raw_objects = entry.get("objects")
    if (
        not isinstance(width, int)
        or not isinstance(height, int)
        or width <= 0
        or height <= 0
        or not isinstance(raw_objects, dict)
    ):
        report.skipped_records += 1
        return None

    nodes: dict[str, ObjectNode] = {}
    pending_relations: dict[str, tuple[Relation, ...]] = {}
    for object_id, raw in raw_objects.items():
        if not isinstance(raw, dict):
            report.invalid_nodes += 1
            continue
        node = _build_node(str(object_id), raw, width, height)
        if node is None:
            report.invalid_nodes += 1
            continue
        pending_relations[node.id] = node.relations
        nodes[node.id] = node

    # Drop relations whose target does not resolve within this graph.
    for object_id, relations in pending_relations.items():
        kept = []
        for rel in relations:
            if rel.target in nodes:
                kept.append(rel)
            else:
                report.dropped_relations += 1
        if len(kept) != len(relations):
            node = nodes[object_id]
            nodes[object_id] = ObjectNode(
                id=node.id,
                name=node.name,
                attributes=node.attributes,
                relations=tuple(kept),
                bbox=node.bbox,
            )

    report.graphs += 1
    return SceneGraph(image_id=image_id, width=width, height=height, objects=nodes)


def iter_scene_graphs(path: str | Path, report: Optional[ParseReport] = None) -> Iterator[SceneGraph]:
    """Yield validated graphs one image at a time, in file order.

    Raises OSError when the file is unreadable and ValueError when the
    top-level JSON cannot be decoded; malformed individual entries are
    skipped and tallied on ``report`` instead.
    """
    report = report if report is not None else ParseReport()
    with open(path, "r", encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ValueError(f"annotation file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ValueError(f"annotation file {path} must hold a JSON object keyed by image id")
    for image_id, entry in payload.items():
        graph = _build_graph(str(image_id), entry, report)
        if graph is not None:
            yield graph


def parse_scene_graphs(path: str | Path) -> tuple[list[SceneGraph], ParseReport]:
    """Parse and validate every scene graph in an annotation file."""
    report = ParseReport()
    graphs = list(iter_scene_graphs(path, report=report))
    return graphs, report


def objects_of_name(graph: SceneGraph, name: str) -> list[ObjectNode]:
    """All nodes whose class label equals ``name``, sorted by id.

    The result length decides unique-instance versus multi-instance
    prompting downstream; absent names yield an empty list.
    """
    return [graph.objects[oid] for oid in sorted(graph.objects) if graph.objects[oid].name == name]


def graph_to_entry(graph: SceneGraph) -> dict:
    """Serialize one graph back to its annotation-schema entry."""
    objects = {}
    for object_id, node in graph.objects.items():
        relations = []
        for rel in node.relations:
            if rel.target is None:
                raise ValueError("synthesized relations cannot be serialized to the annotation schema")
            relations.append({"name": rel.predicate, "object": rel.target})
        objects[object_id] = {
            "name": node.name,
            "x": node.bbox.x,
            "y": node.bbox.y,
            "w": node.bbox.w,
            "h": node.bbox.h,
            "attributes": list(node.attributes),
            "relations": relations,
        }
    return {"width": graph.width, "height": graph.height, "objects": objects}


def save_scene_graphs(graphs: list[SceneGraph], path: str | Path) -> None:
    payload = {graph.image_id: graph_to_entry(graph) for graph in graphs}
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")
