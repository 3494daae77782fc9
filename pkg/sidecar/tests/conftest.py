import hashlib
import json
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
from PIL import Image

REPO_ROOT = Path(__file__).resolve().parents[2]
FIXTURE_ANNOTATIONS = REPO_ROOT / "tests" / "fixtures" / "annotations.json"


def _synth_image(image_id: str, width: int, height: int) -> np.ndarray:
    offset = int.from_bytes(hashlib.sha256(image_id.encode()).digest()[:4], "little")
    yy, xx = np.mgrid[0:height, 0:width]
    r = (xx * 7 + yy * 3 + offset) % 256
    g = (yy * 5 + offset // 3) % 256
    b = (xx + yy * 2 + offset // 7) % 256
    return np.stack([r, g, b], axis=-1).astype(np.uint8)


@pytest.fixture
def workspace(tmp_path):
    """Fixture corpus plus a primary-built dataset for the stages to feed on.

    Layout: annotations.json, images/, dataset/ (manifest, masks, targets
    produced by the pipeline's built-in mocks), runner_config.json with
    all four stage sections, and empty per-stage output directories.
    """
    from inpaintforge.pipeline import BuildConfig, build

    annotations = tmp_path / "annotations.json"
    annotations.write_text(FIXTURE_ANNOTATIONS.read_text("utf-8"), "utf-8")

    images_dir = tmp_path / "images"
    images_dir.mkdir()
    payload = json.loads(annotations.read_text("utf-8"))
    for image_id, entry in payload.items():
        pixels = _synth_image(image_id, entry["width"], entry["height"])
        Image.fromarray(pixels, mode="RGB").save(images_dir / f"{image_id}.png", format="PNG")

    build_config = tmp_path / "build_config.json"
    build_config.write_text(
        json.dumps(
            {
                "annotations": "annotations.json",
                "images_dir": "images",
                "output_dir": "dataset",
                "seed": 0,
                "workers": 1,
                "providers": {"mask": "mock", "refiner": None, "inpainter": "mock"},
            }
        ),
        "utf-8",
    )
    build(BuildConfig.from_file(build_config))

    runner_config = tmp_path / "runner_config.json"
    runner_config.write_text(
        json.dumps(
            {
                "segment": {
                    "model": "mock",
                    "annotations": "annotations.json",
                    "output_dir": "stage_segment",
                    "vocabulary": {"source": "name_only"},
                },
                "refine": {
                    "model": "mock",
                    "masks_dir": "dataset/masks",
                    "output_dir": "stage_refine",
                },
                "inpaint": {
                    "model": "mock",
                    "images_dir": "images",
                    "masks_dir": "dataset/masks",
                    "output_dir": "stage_inpaint",
                },
                "clip": {
                    "model": "mock",
                    "manifest": "dataset/manifest.jsonl",
                    "images_dir": "images",
                    "output_dir": "stage_clip",
                    "vocabulary": {"source": "name_only"},
                },
            },
            indent=2,
        ),
        "utf-8",
    )

    return SimpleNamespace(
        root=tmp_path,
        annotations=annotations,
        images_dir=images_dir,
        dataset_dir=tmp_path / "dataset",
        runner_config=runner_config,
    )
