"""End-to-end dataset build: select targets, resolve masks, inpaint, emit.

Per image the flow is: pick removal targets, fetch externally predicted
mask candidates, keep the best candidate per target, optionally refine,
dilate, inpaint the masked region away, and generate the removal
instruction. The result is a JSON-lines manifest plus a machine-readable
build report; identical config and seed reproduce both byte for byte,
regardless of worker count.

Provider clients are pluggable: directory-backed clients consume files
produced elsewhere, and built-in deterministic mocks let the whole
pipeline run with no model in sight (candidates are rasterized annotation
boxes; inpainting fills the masked region with the mean color of the
unmasked 4-pixel border ring around it).
"""

from __future__ import annotations

import dataclasses
import json
import shutil
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol

import numpy as np
from PIL import Image

from .errors import CandidateManifestMissing, ConfigError, ForgeError, InpaintUnavailable
from .instruction_gen import (
    DEFAULT_ATTRIBUTE_PROBABILITY,
    InstructionSpec,
    build_instruction,
    derive_seed,
)
from .mask_ops import (
    DEFAULT_DILATION_KERNEL,
    DEFAULT_MIN_MATCH_IOU,
    BinaryMask,
    MaskCandidate,
    assign_label,
    dilate,
    load_candidates,
    mask_from_png,
    mask_to_png,
    rasterize_bbox,
    select_best_mask,
)
from .relations import (
    DEFAULT_RELATION_THRESHOLD,
    compute_relation_frequencies,
    filter_relations,
    load_retained_cache,
)
from .scene_graph import BBox, SceneGraph, parse_scene_graphs
from .selection import (
    DEFAULT_MAX_AREA_FRAC,
    DEFAULT_MIN_AREA_FRAC,
    RemovabilityRegistry,
    SelectionReport,
    default_registry,
    select_removal_targets,
)

MOCK_BORDER_RING_WIDTH = 4

SPLITS = ("train", "test")


# --- provider clients --------------------------------------------------------


class MaskProvider(Protocol):
    def candidates_for(self, graph: SceneGraph) -> list[MaskCandidate]: ...


class Refiner(Protocol):
    def refine(self, mask: BinaryMask, key: str) -> BinaryMask: ...


class Inpainter(Protocol):
    def inpaint(self, source_path: Path, mask: BinaryMask, target_path: Path) -> None: ...


class MockMaskProvider:
    """One candidate per annotated object: its box rasterized, score 1.0."""

    def candidates_for(self, graph: SceneGraph) -> list[MaskCandidate]:
        candidates = []
        for object_id in sorted(graph.objects):
            node = graph.objects[object_id]
            candidates.append(
                MaskCandidate(
                    provider="mock",
                    predicted_bbox=node.bbox,
                    mask=rasterize_bbox(node.bbox, graph.width, graph.height),
                    predicted_label=node.name,
                    score=1.0,
                )
            )
        return candidates


class DirectoryMaskProvider:
    """Reads per-image candidate manifests from ``<dir>/<image_id>.json``."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def candidates_for(self, graph: SceneGraph) -> list[MaskCandidate]:
        manifest = self.directory / f"{graph.image_id}.json"
        if not manifest.exists():
            raise CandidateManifestMissing(f"no candidate manifest for image {graph.image_id!r}")
        return load_candidates(manifest, graph.width, graph.height)


class IdentityRefiner:
    """Stand-in when no refinement client is configured."""

    def refine(self, mask: BinaryMask, key: str) -> BinaryMask:
        return mask


class DirectoryRefiner:
    """Reads pre-refined masks from ``<dir>/<key>.png``; missing files
    leave the input mask untouched."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def refine(self, mask: BinaryMask, key: str) -> BinaryMask:
        refined_path = self.directory / f"{key}.png"
        if not refined_path.exists():
            return mask
        return mask_from_png(refined_path)


def mock_inpaint_array(image: np.ndarray, mask: BinaryMask) -> np.ndarray:
    """Fill the masked region with the mean color of its border ring.

    The ring is the unmasked band within 4 pixels of the mask; when the
    mask leaves no ring the mean of all unmasked pixels is used, and a
    fully masked image falls back to mid-gray.
    """
    if image.shape[:2] != mask.pixels.shape:
        raise InpaintUnavailable(
            f"mask is {mask.width}x{mask.height} but image is "
            f"{image.shape[1]}x{image.shape[0]}"
        )
    ring = dilate(mask, k=2 * MOCK_BORDER_RING_WIDTH + 1).pixels & ~mask.pixels
    if ring.any():
        fill = image[ring].mean(axis=0, dtype=np.float64)
    elif (~mask.pixels).any():
        fill = image[~mask.pixels].mean(axis=0, dtype=np.float64)
    else:
        fill = np.full(image.shape[2], 127.0)
    out = image.copy()
    out[mask.pixels] = np.rint(fill).astype(np.uint8)
    return out


class MockInpainter:
    """Deterministic border-ring-mean fill; see ``mock_inpaint_array``."""

    def inpaint(self, source_path: Path, mask: BinaryMask, target_path: Path) -> None:
        with Image.open(source_path) as handle:
            image = np.asarray(handle.convert("RGB"))
        out = mock_inpaint_array(image, mask)
        target_path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(out, mode="RGB").save(target_path, format="PNG")


class DirectoryInpainter:
    """Copies pre-inpainted targets from ``<dir>/<target filename>``."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def inpaint(self, source_path: Path, mask: BinaryMask, target_path: Path) -> None:
        produced = self.directory / target_path.name
        if not produced.exists():
            raise InpaintUnavailable(f"no pre-inpainted target named {target_path.name!r}")
        target_path.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(produced, target_path)


class SerializingClient:
    """Wraps a client whose methods are not safe for concurrent use."""

    def __init__(self, inner: object):
        self._inner = inner
        self._lock = threading.Lock()

    def __getattr__(self, name: str):
        attr = getattr(self._inner, name)
        if not callable(attr):
            return attr
        def locked(*args, **kwargs):
            with self._lock:
                return attr(*args, **kwargs)
        return locked


@dataclass
class ProviderClients:
    mask_provider: MaskProvider
    refiner: Optional[Refiner]
    inpainter: Inpainter


# --- configuration -----------------------------------------------------------


@dataclass
class BuildConfig:
    annotations: Path
    images_dir: Path
    output_dir: Path
    registry: Optional[Path] = None
    retained_relations: Optional[Path] = None
    split_map: Optional[Path] = None
    seed: int = 0
    workers: int = 1
    relation_threshold: float = DEFAULT_RELATION_THRESHOLD
    min_area_frac: float = DEFAULT_MIN_AREA_FRAC
    max_area_frac: float = DEFAULT_MAX_AREA_FRAC
    min_match_iou: float = DEFAULT_MIN_MATCH_IOU
    dilation_kernel: int = DEFAULT_DILATION_KERNEL
    attribute_probability: float = DEFAULT_ATTRIBUTE_PROBABILITY
    providers: dict = field(default_factory=lambda: {"mask": "mock", "refiner": None, "inpainter": "mock"})

    @classmethod
    def from_file(cls, path: str | Path) -> "BuildConfig":
        """Load a JSON config; relative paths resolve against its directory."""
        path = Path(path)
        try:
            raw = json.loads(path.read_text("utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        base = path.parent

        def resolve(key: str, required: bool = False) -> Optional[Path]:
            value = raw.get(key)
            if value is None:
                if required:
                    raise ConfigError(f"config {path} is missing required key {key!r}")
                return None
            return (base / str(value)).resolve()

        providers = raw.get("providers", {})
        if not isinstance(providers, dict):
            raise ConfigError("providers must be an object")
        resolved_providers = {}
        for stage in ("mask", "refiner", "inpainter"):
            value = providers.get(stage, "mock" if stage != "refiner" else None)
            if isinstance(value, dict) and "dir" in value:
                value = dict(value)
                value["dir"] = str((base / str(value["dir"])).resolve())
            resolved_providers[stage] = value

        try:
            return cls(
                annotations=resolve("annotations", required=True),
                images_dir=resolve("images_dir", required=True),
                output_dir=resolve("output_dir", required=True),
                registry=resolve("registry"),
                retained_relations=resolve("retained_relations"),
                split_map=resolve("split_map"),
                seed=int(raw.get("seed", 0)),
                workers=int(raw.get("workers", 1)),
                relation_threshold=float(raw.get("relation_threshold", DEFAULT_RELATION_THRESHOLD)),
                min_area_frac=float(raw.get("min_area_frac", DEFAULT_MIN_AREA_FRAC)),
                max_area_frac=float(raw.get("max_area_frac", DEFAULT_MAX_AREA_FRAC)),
                min_match_iou=float(raw.get("min_match_iou", DEFAULT_MIN_MATCH_IOU)),
                dilation_kernel=int(raw.get("dilation_kernel", DEFAULT_DILATION_KERNEL)),
                attribute_probability=float(raw.get("attribute_probability", DEFAULT_ATTRIBUTE_PROBABILITY)),
                providers=resolved_providers,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config {path} holds a malformed value: {exc}") from exc


def _build_client(stage: str, value: object):
    if stage == "mask":
        if value == "mock" or value is None:
            return MockMaskProvider()
        if isinstance(value, dict) and "dir" in value:
            client = DirectoryMaskProvider(value["dir"])
            return SerializingClient(client) if value.get("serialize") else client
    elif stage == "refiner":
        if value is None or value in ("mock", "identity"):
            return IdentityRefiner()
        if isinstance(value, dict) and "dir" in value:
            client = DirectoryRefiner(value["dir"])
            return SerializingClient(client) if value.get("serialize") else client
    elif stage == "inpainter":
        if value == "mock" or value is None:
            return MockInpainter()
        if isinstance(value, dict) and "dir" in value:
            client = DirectoryInpainter(value["dir"])
            return SerializingClient(client) if value.get("serialize") else client
    raise ConfigError(f"provider {stage!r} has an unsupported spec: {value!r}")


def clients_from_config(config: BuildConfig) -> ProviderClients:
    return ProviderClients(
        mask_provider=_build_client("mask", config.providers.get("mask", "mock")),
        refiner=_build_client("refiner", config.providers.get("refiner")),
        inpainter=_build_client("inpainter", config.providers.get("inpainter", "mock")),
    )


# --- records and manifest ----------------------------------------------------


@dataclass(frozen=True)
class DatasetRecord:
    """One emitted (source image, target image, instruction) row."""

    image_id: str
    source_path: str
    target_path: str
    instruction: str
    object_id: str
    object_name: str
    object_bbox: BBox
    mask_path: str
    split: str = "train"

    def to_json_line(self) -> str:
        payload = {
            "image_id": self.image_id,
            "source_path": self.source_path,
            "target_path": self.target_path,
            "instruction": self.instruction,
            "object_id": self.object_id,
            "object_name": self.object_name,
            "object_bbox": {
                "x": self.object_bbox.x,
                "y": self.object_bbox.y,
                "w": self.object_bbox.w,
                "h": self.object_bbox.h,
            },
            "mask_path": self.mask_path,
            "split": self.split,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json_line(cls, line: str) -> "DatasetRecord":
        raw = json.loads(line)
        box = raw["object_bbox"]
        return cls(
            image_id=raw["image_id"],
            source_path=raw["source_path"],
            target_path=raw["target_path"],
            instruction=raw["instruction"],
            object_id=raw["object_id"],
            object_name=raw["object_name"],
            object_bbox=BBox(box["x"], box["y"], box["w"], box["h"]),
            mask_path=raw["mask_path"],
            split=raw["split"],
        )


def load_manifest(path: str | Path) -> list[DatasetRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(DatasetRecord.from_json_line(line))
    return records


# --- build -------------------------------------------------------------------


@dataclass
class _GraphOutcome:
    records: list[DatasetRecord] = field(default_factory=list)
    selection: SelectionReport = field(default_factory=SelectionReport)
    tallies: Counter = field(default_factory=Counter)
    errors: list[str] = field(default_factory=list)


@dataclass
class BuildResult:
    records: list[DatasetRecord]
    report: dict
    manifest_path: Path
    report_path: Path


def _record_stem(image_id: str, object_id: str) -> str:
    return f"{image_id}__{object_id}"


def _process_graph(
    graph: SceneGraph,
    config: BuildConfig,
    clients: ProviderClients,
    registry: RemovabilityRegistry,
    retained: set[str],
    split_map: dict[str, str],
) -> _GraphOutcome:
    outcome = _GraphOutcome()
    outcome.tallies["images_total"] += 1
    target_ids = select_removal_targets(
        graph,
        registry,
        report=outcome.selection,
        min_area_frac=config.min_area_frac,
        max_area_frac=config.max_area_frac,
    )
    if not target_ids:
        outcome.tallies["images_without_targets"] += 1
        return outcome

    try:
        candidates = clients.mask_provider.candidates_for(graph)
    except CandidateManifestMissing as exc:
        outcome.tallies["images_skipped_no_candidates"] += 1
        outcome.errors.append(str(exc))
        return outcome

    assigned: dict[str, list[MaskCandidate]] = {}
    for candidate in candidates:
        matched = assign_label(candidate, graph, config.min_match_iou)
        if matched is not None:
            assigned.setdefault(matched, []).append(candidate)

    source_path = config.images_dir / f"{graph.image_id}.png"
    for object_id in target_ids:
        node = graph.objects[object_id]
        best = select_best_mask(assigned.get(object_id, []), node.bbox)
        if best is None:
            outcome.tallies["targets_skipped_no_mask"] += 1
            continue
        stem = _record_stem(graph.image_id, object_id)
        mask = best.mask
        if clients.refiner is not None:
            mask = clients.refiner.refine(mask, stem)
            if mask.pixels.shape != best.mask.pixels.shape:
                outcome.tallies["targets_skipped_refiner_error"] += 1
                outcome.errors.append(f"refined mask for {stem} changed dimensions")
                continue
        mask = dilate(mask, config.dilation_kernel)

        instruction = build_instruction(
            node,
            graph,
            retained,
            derive_seed(config.seed, graph.image_id, object_id),
            p_use=config.attribute_probability,
        )

        mask_rel = f"masks/{stem}.png"
        target_rel = f"targets/{stem}.png"
        mask_to_png(mask, config.output_dir / mask_rel)
        if not source_path.exists():
            outcome.tallies["targets_skipped_missing_source"] += 1
            outcome.errors.append(f"source image missing for {graph.image_id}")
            continue
        try:
            clients.inpainter.inpaint(source_path, mask, config.output_dir / target_rel)
        except Exception as exc:  # per-record skip policy: dirty data must not kill the build
            outcome.tallies["targets_skipped_inpaint_error"] += 1
            outcome.errors.append(f"inpainting failed for {stem}: {exc}")
            continue

        split = split_map.get(graph.image_id)
        if split is None:
            split = "train"
            if split_map:
                outcome.tallies["records_defaulted_to_train"] += 1
        outcome.records.append(
            DatasetRecord(
                image_id=graph.image_id,
                source_path=f"{graph.image_id}.png",
                target_path=target_rel,
                instruction=instruction.instruction,
                object_id=object_id,
                object_name=node.name,
                object_bbox=node.bbox,
                mask_path=mask_rel,
                split=split,
            )
        )
    return outcome


def _load_split_map(path: Optional[Path]) -> dict[str, str]:
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read split map {path}: {exc}") from exc
    split_map = {}
    for image_id, split in raw.items():
        if split not in SPLITS:
            raise ConfigError(f"split map assigns unknown split {split!r} to {image_id!r}")
        split_map[str(image_id)] = split
    return split_map


def build(config: BuildConfig, clients: Optional[ProviderClients] = None) -> BuildResult:
    """Run the full dataset build described by ``config``.

    Per-record provider failures are skipped and tallied, never fatal.
    The manifest is sorted by (image_id, object_id) and, together with
    the report, is byte-identical for identical config and seed whatever
    the worker count.
    """
    graphs, parse_report = parse_scene_graphs(config.annotations)
    registry = (
        RemovabilityRegistry.from_file(config.registry)
        if config.registry is not None
        else default_registry()
    )
    if config.retained_relations is not None:
        retained, _, _ = load_retained_cache(config.retained_relations)
        retained_note = "cache"
    else:
        try:
            table = compute_relation_frequencies(graphs)
            retained = filter_relations(table, config.relation_threshold)
            retained_note = "computed"
        except ValueError:
            retained = set()
            retained_note = "empty-corpus"
    split_map = _load_split_map(config.split_map)
    clients = clients if clients is not None else clients_from_config(config)

    config.output_dir.mkdir(parents=True, exist_ok=True)

    workers = max(1, config.workers)
    if workers == 1:
        outcomes = [
            _process_graph(graph, config, clients, registry, retained, split_map)
            for graph in graphs
        ]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_process_graph, graph, config, clients, registry, retained, split_map)
                for graph in graphs
            ]
            outcomes = [future.result() for future in futures]

    records: list[DatasetRecord] = []
    tallies: Counter = Counter()
    selection = SelectionReport()
    errors: list[str] = []
    for outcome in outcomes:
        records.extend(outcome.records)
        tallies.update(outcome.tallies)
        selection.decisions.update(outcome.selection.decisions)
        selection.unknown_classes.update(outcome.selection.unknown_classes)
        errors.extend(outcome.errors)

    records.sort(key=lambda record: (record.image_id, record.object_id))
    seen_keys = set()
    for record in records:
        key = (record.image_id, record.object_id, record.instruction)
        if key in seen_keys:
            raise ForgeError(f"duplicate manifest key {key!r}")
        seen_keys.add(key)

    manifest_path = config.output_dir / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(record.to_json_line() + "\n")

    split_counts = Counter(record.split for record in records)
    report = {
        "parse": parse_report.as_dict(),
        "selection": selection.as_dict(),
        "relations": {"retained_predicates": len(retained), "source": retained_note},
        "build": {
            "records": len(records),
            **{key: tallies[key] for key in sorted(tallies)},
        },
        "splits": {split: split_counts.get(split, 0) for split in SPLITS},
        "errors": sorted(errors),
    }
    report_path = config.output_dir / "report.json"
    with open(report_path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(report, handle, indent=2, sort_keys=True)
        handle.write("\n")

    return BuildResult(records=records, report=report, manifest_path=manifest_path, report_path=report_path)


# --- splits and statistics ---------------------------------------------------


def assign_splits(
    records: list[DatasetRecord], split_map: dict[str, str]
) -> tuple[list[DatasetRecord], dict]:
    """Label every record from the image-id split map.

    Unmapped image ids default to train and are tallied. The returned
    counts report per-split record and unique-source/target totals.
    """
    labeled = []
    defaulted = 0
    for record in records:
        split = split_map.get(record.image_id)
        if split is None:
            split = "train"
            defaulted += 1
        labeled.append(dataclasses.replace(record, split=split))

    counts: dict = {"defaulted_to_train": defaulted}
    for split in SPLITS:
        subset = [record for record in labeled if record.split == split]
        counts[split] = {
            "records": len(subset),
            "source_images": len({record.image_id for record in subset}),
            "target_images": len({record.target_path for record in subset}),
        }
    return labeled, counts


@dataclass
class CorpusStats:
    """Occurrence tables: object names partitioned by role, and relation
    predicates, both emitted in descending count order (ties
    lexicographic)."""

    removable_objects: dict[str, int]
    reference_objects: dict[str, int]
    relation_occurrences: dict[str, int]


def _sorted_counts(counts: Counter) -> list[tuple[str, int]]:
    return sorted(counts.items(), key=lambda item: (-item[1], item[0]))


def emit_statistics(
    records: list[DatasetRecord],
    graphs: list[SceneGraph],
    out_dir: Optional[str | Path] = None,
) -> CorpusStats:
    """Tally object and relation occurrences over the corpus.

    A class counts as removable when it appears as a removal target in
    any record; every other annotated class is reference-only. When
    ``out_dir`` is given two TSV tables are written (``stats_objects.tsv``
    with name/role/count and ``stats_relations.tsv`` with
    predicate/count), ready for any plotting tool.
    """
    removable_names = {record.object_name for record in records}
    object_counts: Counter = Counter()
    relation_counts: Counter = Counter()
    for graph in graphs:
        for node in graph.objects.values():
            object_counts[node.name] += 1
            for rel in node.relations:
                if not rel.synthesized:
                    relation_counts[rel.predicate] += 1

    removable = {
        name: count for name, count in _sorted_counts(object_counts) if name in removable_names
    }
    reference = {
        name: count for name, count in _sorted_counts(object_counts) if name not in removable_names
    }
    relations = dict(_sorted_counts(relation_counts))
    stats = CorpusStats(
        removable_objects=removable,
        reference_objects=reference,
        relation_occurrences=relations,
    )

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "stats_objects.tsv", "w", encoding="utf-8", newline="\n") as handle:
            handle.write("name\trole\tcount\n")
            for name, count in _sorted_counts(object_counts):
                role = "removable" if name in removable_names else "reference_only"
                handle.write(f"{name}\t{role}\t{count}\n")
        with open(out_dir / "stats_relations.tsv", "w", encoding="utf-8", newline="\n") as handle:
            handle.write("predicate\tcount\n")
            for predicate, count in relations.items():
                handle.write(f"{predicate}\t{count}\n")
    return stats
