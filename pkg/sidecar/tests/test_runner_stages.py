import json

import numpy as np
import pytest
from click.testing import CliRunner

from model_runners.cli import main
from model_runners.config import RunnerConfig, RunnerConfigError
from model_runners.rasters import grow, load_mask, ring_mean_fill


def invoke(stage, config_path, *extra):
    result = CliRunner().invoke(main, [stage, "--config", str(config_path), *extra])
    assert result.exit_code == 0, result.output
    return result


class TestConfig:
    def test_duplicate_output_dirs_rejected(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps(
                {
                    "segment": {"annotations": "a.json", "output_dir": "out"},
                    "refine": {"masks_dir": "m", "output_dir": "out"},
                }
            ),
            "utf-8",
        )
        with pytest.raises(RunnerConfigError, match="share the output directory"):
            RunnerConfig.from_file(config)

    def test_vocabulary_only_for_segment_and_clip(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps(
                {"refine": {"masks_dir": "m", "output_dir": "out",
                            "vocabulary": {"source": "name_only"}}}
            ),
            "utf-8",
        )
        with pytest.raises(RunnerConfigError, match="does not take a vocabulary"):
            RunnerConfig.from_file(config)

    def test_fixed_vocabulary_needs_classes(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps(
                {"segment": {"annotations": "a.json", "output_dir": "out",
                             "vocabulary": {"source": "fixed"}}}
            ),
            "utf-8",
        )
        with pytest.raises(RunnerConfigError, match="needs a classes list"):
            RunnerConfig.from_file(config)

    def test_missing_section_reported(self, workspace):
        config = RunnerConfig.from_file(workspace.runner_config)
        with pytest.raises(RunnerConfigError):
            config.stage("nope")


class TestUnknownModel:
    def test_unregistered_model_exits_nonzero(self, tmp_path, workspace):
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps(
                {"refine": {"model": "cascade-psp", "masks_dir": str(workspace.dataset_dir / "masks"),
                            "output_dir": str(tmp_path / "out")}}
            ),
            "utf-8",
        )
        result = CliRunner().invoke(main, ["refine", "--config", str(config)])
        assert result.exit_code == 1
        assert "no adapter registered" in result.output

    def test_mock_flag_overrides_model(self, tmp_path, workspace):
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps(
                {"refine": {"model": "cascade-psp", "masks_dir": str(workspace.dataset_dir / "masks"),
                            "output_dir": str(tmp_path / "out")}}
            ),
            "utf-8",
        )
        result = CliRunner().invoke(main, ["refine", "--config", str(config), "--mock"])
        assert result.exit_code == 0, result.output


class TestSegmentStage:
    def test_manifests_and_masks_written(self, workspace):
        invoke("segment", workspace.runner_config)
        out = workspace.root / "stage_segment"
        manifests = sorted(path.name for path in out.glob("*.json") if path.name != "runner_report.json")
        assert manifests == [f"img_{letter}.json" for letter in "abcde"]
        payload = json.loads((out / "img_a.json").read_text("utf-8"))
        assert payload["image_id"] == "img_a"
        assert len(payload["candidates"]) == 3
        first = payload["candidates"][0]
        assert first["provider"] == "mock" and first["score"] == 1.0
        mask = load_mask(out / first["mask_path"])
        assert mask.shape == (48, 64)

    def test_fixed_vocabulary_restricts_classes(self, workspace, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps(
                {
                    "segment": {
                        "annotations": str(workspace.annotations),
                        "output_dir": str(tmp_path / "out"),
                        "vocabulary": {"source": "fixed", "classes": ["man"]},
                    }
                }
            ),
            "utf-8",
        )
        invoke("segment", config)
        payload = json.loads((tmp_path / "out" / "img_a.json").read_text("utf-8"))
        assert [entry["predicted_label"] for entry in payload["candidates"]] == ["man"]

    def test_attribute_name_vocabulary_labels(self, workspace, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps(
                {
                    "segment": {
                        "annotations": str(workspace.annotations),
                        "output_dir": str(tmp_path / "out"),
                        "vocabulary": {"source": "attribute_name"},
                    }
                }
            ),
            "utf-8",
        )
        invoke("segment", config)
        payload = json.loads((tmp_path / "out" / "img_a.json").read_text("utf-8"))
        labels = {entry["predicted_label"] for entry in payload["candidates"]}
        assert "red kite" in labels  # first attribute + name
        assert "man" in labels  # attribute-less objects keep the bare name


class TestRefineStage:
    def test_identity_preserves_dims_and_content(self, workspace):
        invoke("refine", workspace.runner_config)
        out = workspace.root / "stage_refine"
        sources = sorted((workspace.dataset_dir / "masks").glob("*.png"))
        assert sources, "fixture build produced no masks"
        for source in sources:
            refined = out / source.name
            assert refined.exists()
            before = load_mask(source)
            after = load_mask(refined)
            assert before.shape == after.shape
            assert before.any() and after.any()
            assert np.array_equal(before, after)


class TestInpaintStage:
    def test_targets_written_for_every_mask(self, workspace):
        invoke("inpaint", workspace.runner_config)
        out = workspace.root / "stage_inpaint"
        masks = sorted((workspace.dataset_dir / "masks").glob("*.png"))
        assert sorted(p.name for p in out.glob("*.png")) == [m.name for m in masks]

    def test_fill_matches_ring_mean(self, workspace):
        from model_runners.rasters import load_rgb

        invoke("inpaint", workspace.runner_config)
        mask_path = next(iter(sorted((workspace.dataset_dir / "masks").glob("*.png"))))
        image_id = mask_path.stem.split("__", 1)[0]
        image = load_rgb(workspace.images_dir / f"{image_id}.png")
        mask = load_mask(mask_path)
        produced = load_rgb(workspace.root / "stage_inpaint" / mask_path.name)
        assert np.array_equal(produced, ring_mean_fill(image, mask))
        ring = grow(mask, 4) & ~mask
        fill = np.rint(image[ring].mean(axis=0, dtype=np.float64)).astype(np.uint8)
        assert np.array_equal(np.unique(produced[mask], axis=0), fill[None, :])


class TestClipStage:
    def test_sample_files_written(self, workspace):
        invoke("clip", workspace.runner_config)
        out = workspace.root / "stage_clip"
        similarity = (out / "similarity.jsonl").read_text("utf-8").splitlines()
        classification = (out / "classification.jsonl").read_text("utf-8").splitlines()
        records = (workspace.dataset_dir / "manifest.jsonl").read_text("utf-8").splitlines()
        assert len(similarity) == len(records)
        assert len(classification) == len(records)
        first = json.loads(similarity[0])
        assert first["prompt"].startswith("a photo of a ")
        topk = json.loads(classification[0])["inpainted_topk"]
        assert len(topk) == 5 and len(set(topk)) == 5

    def test_report_written(self, workspace):
        invoke("clip", workspace.runner_config)
        report = json.loads((workspace.root / "stage_clip" / "runner_report.json").read_text("utf-8"))
        assert report["stage"] == "clip"
        assert report["processed"] == 11
        assert report["skipped"] == 0
