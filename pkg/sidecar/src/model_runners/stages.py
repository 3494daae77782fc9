"""Stage implementations and the adapter registry.

Every stage writes files in the forge pipeline's declared contracts:

* segment — per-image candidate manifest JSON plus mask PNGs
* refine  — mask PNG in, refined mask PNG out, same dimensions
* inpaint — source image + mask in, target image out
* clip    — similarity / classification JSON-lines sample files

Only the deterministic ``mock`` adapter ships here; real model adapters
register under their model identifier via ``register_adapter`` and pull
in their own frameworks. An unregistered model fails the stage cleanly.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .config import StageConfig
from .rasters import (
    clip_box,
    crop,
    load_mask,
    load_rgb,
    rasterize_box,
    ring_mean_fill,
    save_mask,
    save_rgb,
)


class StageError(Exception):
    """The stage could not run (missing model, missing inputs)."""


@dataclass
class StageReport:
    stage: str
    model: str
    processed: int = 0
    skipped: int = 0
    outputs: int = 0
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "stage": self.stage,
            "model": self.model,
            "processed": self.processed,
            "skipped": self.skipped,
            "outputs": self.outputs,
            "notes": sorted(self.notes),
        }

    def write(self, output_dir: Path) -> Path:
        output_dir.mkdir(parents=True, exist_ok=True)
        path = output_dir / "runner_report.json"
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            json.dump(self.as_dict(), handle, indent=2, sort_keys=True)
            handle.write("\n")
        return path


def _load_annotations(path: Path) -> dict:
    try:
        payload = json.loads(path.read_text("utf-8"))
    except OSError as exc:
        raise StageError(f"cannot read annotations {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise StageError(f"annotations {path} are not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise StageError(f"annotations {path} must hold a JSON object keyed by image id")
    return payload


def _candidate_label(name: str, attributes: list, source: str | None) -> str:
    if source == "attribute_name" and attributes:
        return f"{attributes[0]} {name}"
    return name


def mock_segment(config: StageConfig, report: StageReport) -> None:
    """One candidate per annotated object: its box as the mask, score 1.0."""
    annotations = _load_annotations(config.require("annotations"))
    out = config.output_dir
    for image_id, entry in annotations.items():
        if not isinstance(entry, dict):
            report.skipped += 1
            continue
        width, height = entry.get("width"), entry.get("height")
        objects = entry.get("objects")
        if not isinstance(width, int) or not isinstance(height, int) or not isinstance(objects, dict):
            report.skipped += 1
            continue
        entries = []
        index = 0
        for object_id in sorted(objects):
            raw = objects[object_id]
            if not isinstance(raw, dict):
                continue
            name = raw.get("name")
            try:
                box = (int(raw["x"]), int(raw["y"]), int(raw["w"]), int(raw["h"]))
            except (KeyError, TypeError, ValueError):
                continue
            if not name:
                continue
            if config.vocabulary_source == "fixed" and name not in config.vocabulary_classes:
                continue
            clipped = clip_box(*box, width, height)
            if clipped is None:
                continue
            mask_rel = f"masks/{image_id}__{index:03d}.png"
            save_mask(rasterize_box(*clipped, width, height), out / mask_rel)
            entries.append(
                {
                    "provider": "mock",
                    "predicted_label": _candidate_label(name, raw.get("attributes", []), config.vocabulary_source),
                    "score": 1.0,
                    "bbox": {"x": clipped[0], "y": clipped[1], "w": clipped[2], "h": clipped[3]},
                    "mask_path": mask_rel,
                }
            )
            index += 1
        manifest = out / f"{image_id}.json"
        manifest.parent.mkdir(parents=True, exist_ok=True)
        with open(manifest, "w", encoding="utf-8", newline="\n") as handle:
            json.dump({"image_id": image_id, "candidates": entries}, handle, indent=2, sort_keys=True)
            handle.write("\n")
        report.processed += 1
        report.outputs += 1 + len(entries)


def mock_refine(config: StageConfig, report: StageReport) -> None:
    """Identity refinement: dimensions preserved, content untouched."""
    masks_dir = config.require("masks_dir")
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    for mask_path in sorted(masks_dir.glob("*.png")):
        shutil.copyfile(mask_path, out / mask_path.name)
        report.processed += 1
        report.outputs += 1


def mock_inpaint(config: StageConfig, report: StageReport) -> None:
    """Border-ring mean fill, matching the pipeline's built-in mock byte
    for byte. Mask files are named ``<image_id>__<object_id>.png``."""
    masks_dir = config.require("masks_dir")
    images_dir = config.require("images_dir")
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    for mask_path in sorted(masks_dir.glob("*.png")):
        image_id = mask_path.stem.split("__", 1)[0]
        source = images_dir / f"{image_id}.png"
        if not source.exists():
            report.skipped += 1
            report.notes.append(f"no source image for {mask_path.name}")
            continue
        image = load_rgb(source)
        mask = load_mask(mask_path)
        if mask.shape != image.shape[:2]:
            report.skipped += 1
            report.notes.append(f"mask {mask_path.name} does not match its image size")
            continue
        save_rgb(ring_mean_fill(image, mask), out / mask_path.name)
        report.processed += 1
        report.outputs += 1


def _load_manifest_records(path: Path) -> list[dict]:
    records = []
    try:
        lines = path.read_text("utf-8").splitlines()
    except OSError as exc:
        raise StageError(f"cannot read manifest {path}: {exc}") from exc
    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise StageError(f"manifest {path} holds a malformed line: {exc}") from exc
    return records


def _clip_vocabulary(config: StageConfig, records: list[dict]) -> list[str]:
    if config.vocabulary_source == "fixed":
        return sorted(set(config.vocabulary_classes))
    if config.vocabulary_source == "attribute_name":
        annotations = _load_annotations(config.require("annotations"))
        vocab = set()
        for entry in annotations.values():
            for raw in entry.get("objects", {}).values():
                name = raw.get("name")
                if not name:
                    continue
                attributes = raw.get("attributes") or []
                vocab.update(f"{attribute} {name}" for attribute in attributes)
                vocab.add(name)
        return sorted(vocab)
    return sorted({record["object_name"] for record in records})


def _mock_similarity(pixels) -> float:
    if pixels.size == 0:
        return 0.0
    return round(float(pixels.mean()) * 40.0 / 255.0, 4)


def mock_clip(config: StageConfig, report: StageReport) -> None:
    """Similarity and zero-shot classification samples for every manifest
    record, consumable by the pipeline's metric loaders."""
    manifest_path = config.require("manifest")
    images_dir = config.require("images_dir")
    records = _load_manifest_records(manifest_path)
    vocabulary = _clip_vocabulary(config, records)
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)

    similarity_lines = []
    classification_lines = []
    for record in records:
        box = record["object_bbox"]
        source = images_dir / record["source_path"]
        target = manifest_path.parent / record["target_path"]
        if not source.exists() or not target.exists():
            report.skipped += 1
            report.notes.append(f"missing image pair for {record['image_id']}/{record['object_id']}")
            continue
        source_crop = crop(load_rgb(source), box["x"], box["y"], box["w"], box["h"])
        target_crop = crop(load_rgb(target), box["x"], box["y"], box["w"], box["h"])
        name = record["object_name"]
        similarity_lines.append(
            json.dumps(
                {
                    "source_similarity": _mock_similarity(source_crop),
                    "inpainted_similarity": _mock_similarity(target_crop),
                    "prompt": f"a photo of a {name}",
                },
                sort_keys=True,
            )
        )
        topk = [label for label in vocabulary if label != name][:5]
        pad = 1
        while len(topk) < 5:
            topk.append(f"pad_{pad}")
            pad += 1
        classification_lines.append(
            json.dumps({"source_top1": name, "inpainted_topk": topk}, sort_keys=True)
        )
        report.processed += 1

    (out / "similarity.jsonl").write_text(
        "".join(line + "\n" for line in similarity_lines), "utf-8"
    )
    (out / "classification.jsonl").write_text(
        "".join(line + "\n" for line in classification_lines), "utf-8"
    )
    report.outputs += 2


StageFn = Callable[[StageConfig, StageReport], None]

_ADAPTERS: dict[tuple[str, str], StageFn] = {
    ("segment", "mock"): mock_segment,
    ("refine", "mock"): mock_refine,
    ("inpaint", "mock"): mock_inpaint,
    ("clip", "mock"): mock_clip,
}


def register_adapter(stage: str, model: str, fn: StageFn) -> None:
    _ADAPTERS[(stage, model)] = fn


def run_stage(config: StageConfig, mock: bool = False) -> StageReport:
    model = "mock" if mock else config.model
    report = StageReport(stage=config.stage, model=model)
    adapter = _ADAPTERS.get((config.stage, model))
    if adapter is None:
        raise StageError(
            f"no adapter registered for stage {config.stage!r} and model {model!r}; "
            "run with --mock or register the model's adapter"
        )
    adapter(config, report)
    report.write(config.output_dir)
    return report
