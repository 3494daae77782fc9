import json
from pathlib import Path

import pytest

from forge_fixtures import FIXTURES, write_fixture_images


@pytest.fixture
def fixture_annotations() -> Path:
    return FIXTURES / "annotations.json"


@pytest.fixture
def golden_manifest() -> Path:
    return FIXTURES / "golden_manifest.jsonl"


@pytest.fixture
def corpus_workspace(tmp_path, fixture_annotations):
    """A build workspace: fixture annotations, synthetic images, config factory."""
    images_dir = tmp_path / "images"
    write_fixture_images(fixture_annotations, images_dir)
    annotations = tmp_path / "annotations.json"
    annotations.write_text(fixture_annotations.read_text("utf-8"), "utf-8")

    def write_config(name="config.json", **overrides):
        payload = {
            "annotations": "annotations.json",
            "images_dir": "images",
            "output_dir": "out",
            "seed": 0,
            "workers": 1,
            "providers": {"mask": "mock", "refiner": None, "inpainter": "mock"},
        }
        payload.update(overrides)
        config_path = tmp_path / name
        config_path.write_text(json.dumps(payload, indent=2), "utf-8")
        return config_path

    return tmp_path, write_config
