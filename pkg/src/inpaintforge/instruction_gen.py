"""Removal-instruction templates and attribute augmentation.

A unique instance of its class gets the short form "remove the [object]";
when peers of the same class exist, the referring phrase from the
relations module is appended to disambiguate. Attributes are drawn at
random as augmentation, one slot each for the target and every relation
target.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Optional, Union

from .errors import ContractError
from .relations import relation_phrase, retained_relations
from .scene_graph import ObjectNode, Relation, SceneGraph, objects_of_name
from .selection import Decision, RemovabilityRegistry, classify_object

DEFAULT_ATTRIBUTE_PROBABILITY = 0.5

INSTRUCTION_PREFIX = "remove the "


@dataclass(frozen=True)
class InstructionSpec:
    """A generated instruction plus the choices that produced it.

    ``rng_seed`` is the 64-bit seed the instruction was drawn from; it is
    None only when the caller supplied an opaque generator instead of a
    seed. ``relation_phrase`` is None for unique-instance instructions.
    """

    object_id: str
    instruction: str
    used_relations: tuple[Relation, ...]
    used_attribute: Optional[str]
    rng_seed: Optional[int]
    relation_phrase: Optional[str]


def derive_seed(global_seed: int, image_id: str, object_id: str) -> int:
    """Stable per-record 64-bit seed, independent of worker scheduling."""
    digest = hashlib.sha256(f"{global_seed}:{image_id}:{object_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def attribute_augment(
    node: ObjectNode,
    rng: random.Random,
    p_use: float = DEFAULT_ATTRIBUTE_PROBABILITY,
) -> Optional[str]:
    """With probability ``p_use``, one uniformly chosen attribute of the node.

    Nodes without attributes return None without consuming randomness;
    otherwise one uniform draw decides use and a second picks the
    attribute.
    """
    if not node.attributes:
        return None
    if rng.random() >= p_use:
        return None
    return rng.choice(node.attributes)


def build_instruction(
    target: ObjectNode,
    graph: SceneGraph,
    retained: set[str],
    rng: Union[int, random.Random],
    p_use: float = DEFAULT_ATTRIBUTE_PROBABILITY,
    registry: Optional[RemovabilityRegistry] = None,
) -> InstructionSpec:
    """Generate the removal instruction for one selected object.

    ``rng`` may be an integer seed (recorded on the result) or an already
    seeded ``random.Random``. The target's attribute slot is drawn first,
    then relation-target slots in phrase order, so a fixed seed pins the
    whole instruction. Passing ``registry`` enforces the caller contract
    that the target is actually removable.
    """
    if target.id not in graph.objects or graph.objects[target.id] is not target:
        raise ContractError(f"object {target.id!r} does not belong to graph {graph.image_id!r}")
    if registry is not None:
        verdict = classify_object(target, graph, registry)
        if verdict.decision is not Decision.REMOVABLE:
            raise ContractError(
                f"object {target.id!r} ({target.name!r}) is not removable: {verdict.decision.value}"
            )

    seed: Optional[int]
    if isinstance(rng, int):
        seed = rng
        rng = random.Random(rng)
    else:
        seed = None

    attribute = attribute_augment(target, rng, p_use)
    noun = f"{attribute} {target.name}" if attribute else target.name

    if len(objects_of_name(graph, target.name)) == 1:
        return InstructionSpec(
            object_id=target.id,
            instruction=f"{INSTRUCTION_PREFIX}{noun}",
            used_relations=(),
            used_attribute=attribute,
            rng_seed=seed,
            relation_phrase=None,
        )

    used = tuple(retained_relations(target, retained))
    phrase = relation_phrase(
        target,
        graph,
        retained,
        rng,
        augment=lambda node, generator: attribute_augment(node, generator, p_use),
    )
    return InstructionSpec(
        object_id=target.id,
        instruction=f"{INSTRUCTION_PREFIX}{noun} {phrase}",
        used_relations=used,
        used_attribute=attribute,
        rng_seed=seed,
        relation_phrase=phrase,
    )


@dataclass(frozen=True)
class ParsedInstruction:
    name: str
    attribute: Optional[str]
    relation_phrase: Optional[str]


def parse_instruction(
    instruction: str, names: set[str], attributes: set[str]
) -> ParsedInstruction:
    """Recover (name, attribute, relation phrase) from an instruction.

    The template grammar is "remove the [attribute?] [name] [phrase?]"
    where names and attributes come from known vocabularies. Ambiguous
    texts resolve by longest name first, then by the attributed parse
    with the longest attribute. Raises ContractError when no parse fits.
    """
    if not instruction.startswith(INSTRUCTION_PREFIX):
        raise ContractError(f"instruction does not start with {INSTRUCTION_PREFIX!r}: {instruction!r}")
    body = instruction[len(INSTRUCTION_PREFIX) :]

    candidates: list[tuple[tuple[int, int, int, str, str], ParsedInstruction]] = []

    def consider(attribute: Optional[str], remainder: str) -> None:
        for name in sorted(names):
            if remainder == name:
                phrase = None
            elif remainder.startswith(name + " "):
                phrase = remainder[len(name) + 1 :]
            else:
                continue
            rank = (len(name), 1 if attribute else 0, len(attribute or ""), name, attribute or "")
            candidates.append((rank, ParsedInstruction(name, attribute, phrase)))

    consider(None, body)
    for attribute in sorted(attributes):
        if body.startswith(attribute + " "):
            consider(attribute, body[len(attribute) + 1 :])

    if not candidates:
        raise ContractError(f"instruction does not match the template grammar: {instruction!r}")
    return max(candidates, key=lambda entry: entry[0])[1]
