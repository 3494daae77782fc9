"""Runner configuration: one JSON file, one section per stage."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

STAGES = ("segment", "refine", "inpaint", "clip")
VOCABULARY_SOURCES = ("fixed", "attribute_name", "name_only")
VOCABULARY_STAGES = ("segment", "clip")


class RunnerConfigError(Exception):
    """The runner config is missing, unreadable, or inconsistent."""


@dataclass
class StageConfig:
    stage: str
    model: str = "mock"
    device: str = "cpu"
    output_dir: Path = Path(".")
    annotations: Optional[Path] = None
    images_dir: Optional[Path] = None
    masks_dir: Optional[Path] = None
    manifest: Optional[Path] = None
    vocabulary_source: Optional[str] = None
    vocabulary_classes: tuple[str, ...] = ()

    def require(self, attribute: str) -> Path:
        value = getattr(self, attribute)
        if value is None:
            raise RunnerConfigError(f"stage {self.stage!r} needs {attribute!r} in its config")
        return value


def _parse_stage(stage: str, raw: dict, base: Path) -> StageConfig:
    if not isinstance(raw, dict):
        raise RunnerConfigError(f"stage {stage!r} section must be an object")

    def path_of(key: str) -> Optional[Path]:
        value = raw.get(key)
        return (base / str(value)).resolve() if value is not None else None

    output_dir = path_of("output_dir")
    if output_dir is None:
        raise RunnerConfigError(f"stage {stage!r} needs an output_dir")

    vocabulary_source = None
    vocabulary_classes: tuple[str, ...] = ()
    if "vocabulary" in raw:
        if stage not in VOCABULARY_STAGES:
            raise RunnerConfigError(f"stage {stage!r} does not take a vocabulary")
        vocab = raw["vocabulary"]
        if not isinstance(vocab, dict) or vocab.get("source") not in VOCABULARY_SOURCES:
            raise RunnerConfigError(
                f"stage {stage!r} vocabulary.source must be one of {VOCABULARY_SOURCES}"
            )
        vocabulary_source = vocab["source"]
        vocabulary_classes = tuple(str(c) for c in vocab.get("classes", []))
        if vocabulary_source == "fixed" and not vocabulary_classes:
            raise RunnerConfigError(f"stage {stage!r} fixed vocabulary needs a classes list")

    return StageConfig(
        stage=stage,
        model=str(raw.get("model", "mock")),
        device=str(raw.get("device", "cpu")),
        output_dir=output_dir,
        annotations=path_of("annotations"),
        images_dir=path_of("images_dir"),
        masks_dir=path_of("masks_dir"),
        manifest=path_of("manifest"),
        vocabulary_source=vocabulary_source,
        vocabulary_classes=vocabulary_classes,
    )


@dataclass
class RunnerConfig:
    stages: dict[str, StageConfig] = field(default_factory=dict)

    def stage(self, name: str) -> StageConfig:
        if name not in self.stages:
            raise RunnerConfigError(f"config has no {name!r} section")
        return self.stages[name]

    @classmethod
    def from_file(cls, path: str | Path) -> "RunnerConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text("utf-8"))
        except OSError as exc:
            raise RunnerConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise RunnerConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise RunnerConfigError(f"config {path} must hold a JSON object")

        stages = {}
        for stage in STAGES:
            if stage in raw:
                stages[stage] = _parse_stage(stage, raw[stage], path.parent)
        if not stages:
            raise RunnerConfigError(f"config {path} declares no known stage section")

        seen: dict[Path, str] = {}
        for name, stage_config in stages.items():
            if stage_config.output_dir in seen:
                raise RunnerConfigError(
                    f"stages {seen[stage_config.output_dir]!r} and {name!r} share the "
                    f"output directory {stage_config.output_dir}"
                )
            seen[stage_config.output_dir] = name
        return cls(stages=stages)
