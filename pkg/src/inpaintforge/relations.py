"""Relation statistics, rare-predicate pruning, and phrase assembly.

Objects that end up with no usable relation fall back to a synthesized
spatial phrase ("at the left/center/right") derived from which horizontal
third of the image the box mostly covers.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional

from .scene_graph import BBox, ObjectNode, Relation, SceneGraph

DEFAULT_RELATION_THRESHOLD = 1e-4

AttributeSampler = Callable[[ObjectNode, random.Random], Optional[str]]


@dataclass(frozen=True)
class RelationFrequencyTable:
    """Corpus-wide predicate counts and their relative frequencies."""

    counts: dict[str, int]
    total: int
    frequency: dict[str, float]

    @classmethod
    def from_counts(cls, counts: dict[str, int]) -> "RelationFrequencyTable":
        total = sum(counts.values())
        if total == 0:
            raise ValueError("empty relation corpus")
        frequency = {predicate: count / total for predicate, count in counts.items()}
        return cls(counts=dict(counts), total=total, frequency=frequency)


class Location(str, Enum):
    LEFT = "left"
    CENTER = "center"
    RIGHT = "right"


def compute_relation_frequencies(graphs: Iterable[SceneGraph]) -> RelationFrequencyTable:
    """Count every non-synthesized relation across the corpus.

    Raises ValueError("empty relation corpus") when no graph carries a
    relation at all.
    """
    counts: dict[str, int] = {}
    for graph in graphs:
        for node in graph.objects.values():
            for rel in node.relations:
                if rel.synthesized:
                    continue
                counts[rel.predicate] = counts.get(rel.predicate, 0) + 1
    return RelationFrequencyTable.from_counts(counts)


def filter_relations(
    table: RelationFrequencyTable, threshold: float = DEFAULT_RELATION_THRESHOLD
) -> set[str]:
    """Predicates whose frequency reaches the threshold.

    Strictly rarer predicates are removed; frequency exactly equal to the
    threshold is retained.
    """
    return {predicate for predicate, freq in table.frequency.items() if freq >= threshold}


def spatial_location(bbox: BBox, image_w: int) -> Location:
    """Which horizontal third of the image mostly covers the box.

    The image splits into three equal sections along the x-axis; the
    section with the greatest horizontal overlap wins. Ties prefer the
    section containing the box midpoint, then the leftmost tied section.
    All comparisons run in scaled integer arithmetic so ties are exact.
    """
    # Section i spans [i*w, (i+1)*w) in units of 1/3 px; the box spans
    # [3x, 3(x+w_box)) in the same units.
    lo = 3 * bbox.x
    hi = 3 * (bbox.x + bbox.w)
    overlaps = []
    for i in range(3):
        section_lo = i * image_w
        section_hi = (i + 1) * image_w
        overlaps.append(max(0, min(hi, section_hi) - max(lo, section_lo)))
    best = max(overlaps)
    tied = [i for i, val in enumerate(overlaps) if val == best]
    if len(tied) > 1:
        # Midpoint in units of 1/6 px against section bounds in the same units.
        midpoint = 6 * bbox.x + 3 * bbox.w
        for i in tied:
            if 2 * i * image_w <= midpoint < 2 * (i + 1) * image_w:
                return list(Location)[i]
    return list(Location)[tied[0]]


def retained_relations(node: ObjectNode, retained: set[str]) -> list[Relation]:
    """The node's relations that survive pruning, deduplicated.

    Scene-graph listing order is preserved and repeated (predicate,
    target) pairs keep their first occurrence only.
    """
    kept = []
    seen: set[tuple[str, Optional[str]]] = set()
    for rel in node.relations:
        if rel.synthesized or rel.predicate not in retained:
            continue
        key = (rel.predicate, rel.target)
        if key in seen:
            continue
        seen.add(key)
        kept.append(rel)
    return kept


def relation_phrase(
    node: ObjectNode,
    graph: SceneGraph,
    retained: set[str],
    rng: random.Random,
    augment: Optional[AttributeSampler] = None,
) -> str:
    """Render the node's referring phrase.

    Every retained relation becomes "[predicate] the [attribute?] [target
    name]" and the pieces join with " and "; a node with no retained
    relation falls back to "at the [location]". ``augment`` is the
    instruction generator's attribute sampler, called once per relation
    target in phrase order; omit it to render bare target names.
    """
    rendered = []
    for rel in retained_relations(node, retained):
        target = graph.objects[rel.target]
        attribute = augment(target, rng) if augment is not None else None
        noun = f"{attribute} {target.name}" if attribute else target.name
        rendered.append(f"{rel.predicate} the {noun}")
    if rendered:
        return " and ".join(rendered)
    return f"at the {spatial_location(node.bbox, graph.width).value}"


def corpus_hash(table: RelationFrequencyTable) -> str:
    """Stable digest of the relation counts that produced a cache file."""
    digest = hashlib.sha256()
    digest.update(str(table.total).encode())
    for predicate in sorted(table.counts):
        digest.update(f"\n{predicate}\t{table.counts[predicate]}".encode())
    return digest.hexdigest()


def save_retained_cache(
    path: str | Path, predicates: set[str], threshold: float, corpus_digest: str
) -> None:
    payload = {
        "threshold": threshold,
        "corpus_hash": corpus_digest,
        "predicates": sorted(predicates),
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def load_retained_cache(path: str | Path) -> tuple[set[str], float, str]:
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    return set(payload["predicates"]), float(payload["threshold"]), str(payload["corpus_hash"])
