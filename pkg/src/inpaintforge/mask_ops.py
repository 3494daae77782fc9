"""Raster mask primitives: box IoU, candidate matching, and dilation.

Masks travel as 8-bit single-channel PNGs (0 background, 255 object) with
the same dimensions as their image. Candidate manifests are JSON files
listing per-detection provider tags, labels, scores, boxes, and mask
paths resolved relative to the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import MaskContractError
from .scene_graph import BBox, SceneGraph

DEFAULT_MIN_MATCH_IOU = 0.1
DEFAULT_DILATION_KERNEL = 11


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Immutable boolean raster with shape (height, width), row-major."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels, dtype=bool)
        if pixels.ndim != 2:
            raise ValueError("mask raster must be two-dimensional")
        pixels = pixels.copy()
        pixels.flags.writeable = False
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def any(self) -> bool:
        return bool(self.pixels.any())

    def tight_bbox(self) -> Optional[BBox]:
        """Smallest box covering all set pixels; None for an empty mask."""
        rows = np.flatnonzero(self.pixels.any(axis=1))
        cols = np.flatnonzero(self.pixels.any(axis=0))
        if rows.size == 0:
            return None
        y0, y1 = int(rows[0]), int(rows[-1])
        x0, x1 = int(cols[0]), int(cols[-1])
        return BBox(x=x0, y=y0, w=x1 - x0 + 1, h=y1 - y0 + 1)


@dataclass(frozen=True)
class MaskCandidate:
    """One externally predicted instance mask competing for selection."""

    provider: str
    predicted_bbox: BBox
    mask: BinaryMask
    predicted_label: str
    score: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise MaskContractError(f"candidate score {self.score} outside [0, 1]")


def rasterize_bbox(bbox: BBox, image_w: int, image_h: int) -> BinaryMask:
    """Fill the (clipped) box on an image-sized raster."""
    pixels = np.zeros((image_h, image_w), dtype=bool)
    clipped = bbox.clipped(image_w, image_h)
    if clipped is not None:
        pixels[clipped.y : clipped.y + clipped.h, clipped.x : clipped.x + clipped.w] = True
    return BinaryMask(pixels)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two axis-aligned boxes; 0 when disjoint."""
    inter_w = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    inter_h = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    union = a.area + b.area - inter
    return inter / union


def assign_label(
    candidate: MaskCandidate,
    graph: SceneGraph,
    min_match_iou: float = DEFAULT_MIN_MATCH_IOU,
) -> Optional[str]:
    """Match a candidate to the graph object with the highest box IoU.

    Ties break toward the smaller object id; a best IoU below
    ``min_match_iou`` leaves the candidate unmatched (None).
    """
    best_id: Optional[str] = None
    best_iou = 0.0
    for object_id in sorted(graph.objects):
        overlap = iou(candidate.predicted_bbox, graph.objects[object_id].bbox)
        if overlap > best_iou:
            best_iou = overlap
            best_id = object_id
    if best_id is None or best_iou < min_match_iou:
        return None
    return best_id


def select_best_mask(
    candidates: list[MaskCandidate], gt_bbox: BBox
) -> Optional[MaskCandidate]:
    """Pick the candidate whose predicted box best overlaps the annotation box.

    Ties break by higher confidence score, then by lexicographically
    smallest provider tag; an empty list yields None.
    """
    best: Optional[MaskCandidate] = None
    best_key: Optional[tuple[float, float]] = None
    for candidate in candidates:
        key = (iou(candidate.predicted_bbox, gt_bbox), candidate.score)
        if (
            best_key is None
            or key > best_key
            or (key == best_key and best is not None and candidate.provider < best.provider)
        ):
            best = candidate
            best_key = key
    return best


def _window_any(pixels: np.ndarray, radius: int, axis: int) -> np.ndarray:
    """Clipped 1-D running-window OR via a prefix-sum scan (O(n) per line)."""
    if radius == 0:
        return pixels.copy()
    n = pixels.shape[axis]
    counts = np.cumsum(pixels, axis=axis, dtype=np.int64)
    pad_shape = list(pixels.shape)
    pad_shape[axis] = 1
    prefix = np.concatenate([np.zeros(pad_shape, dtype=np.int64), counts], axis=axis)
    positions = np.arange(n)
    hi = np.minimum(positions + radius + 1, n)
    lo = np.maximum(positions - radius, 0)
    window = np.take(prefix, hi, axis=axis) - np.take(prefix, lo, axis=axis)
    return window > 0


def dilate(mask: BinaryMask, k: int = DEFAULT_DILATION_KERNEL) -> BinaryMask:
    """Morphological dilation with a k x k square structuring element.

    An output pixel is set iff any input pixel is set within Chebyshev
    radius (k-1)/2; neighborhoods are clipped at the image border. The
    square element separates, so this runs as a horizontal then a
    vertical 1-D window pass instead of scanning k^2 neighbors per pixel.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"structuring element size must be an odd integer >= 1, got {k}")
    radius = (k - 1) // 2
    if radius == 0:
        return mask
    rows = _window_any(mask.pixels, radius, axis=1)
    return BinaryMask(_window_any(rows, radius, axis=0))


def mask_to_png(mask: BinaryMask, path: str | Path) -> None:
    """Write the 0/255 single-channel PNG form of a mask."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    raster = np.where(mask.pixels, np.uint8(255), np.uint8(0))
    Image.fromarray(raster, mode="L").save(path, format="PNG")


def mask_from_png(path: str | Path) -> BinaryMask:
    """Load a single-channel mask PNG; values >= 128 count as object."""
    with Image.open(path) as image:
        raster = np.asarray(image.convert("L"))
    return BinaryMask(raster >= 128)


def save_candidate_manifest(
    manifest_path: str | Path, image_id: str, candidates: list[MaskCandidate]
) -> None:
    """Write a per-image candidate manifest plus its mask rasters.

    Masks land in a ``masks/`` directory next to the manifest and are
    referenced by paths relative to the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    for index, candidate in enumerate(candidates):
        mask_rel = f"masks/{image_id}__{index:03d}.png"
        mask_to_png(candidate.mask, manifest_path.parent / mask_rel)
        entries.append(
            {
                "provider": candidate.provider,
                "predicted_label": candidate.predicted_label,
                "score": candidate.score,
                "bbox": {
                    "x": candidate.predicted_bbox.x,
                    "y": candidate.predicted_bbox.y,
                    "w": candidate.predicted_bbox.w,
                    "h": candidate.predicted_bbox.h,
                },
                "mask_path": mask_rel,
            }
        )
    payload = {"image_id": image_id, "candidates": entries}
    with open(manifest_path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def load_candidates(
    manifest_path: str | Path, image_w: int, image_h: int
) -> list[MaskCandidate]:
    """Load and validate one image's candidate manifest.

    Enforces the candidate contract: mask dimensions match the image and
    the manifest box equals the tight bounding box of the mask after
    clipping to the image. Violations raise MaskContractError.
    """
    manifest_path = Path(manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    candidates = []
    for index, entry in enumerate(payload.get("candidates", [])):
        where = f"{manifest_path}:{index}"
        try:
            raw_box = entry["bbox"]
            bbox = BBox(int(raw_box["x"]), int(raw_box["y"]), int(raw_box["w"]), int(raw_box["h"]))
            provider = str(entry["provider"])
            label = str(entry["predicted_label"])
            score = float(entry["score"])
            mask_rel = str(entry["mask_path"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MaskContractError(f"malformed candidate entry at {where}: {exc}") from exc
        mask = mask_from_png(manifest_path.parent / mask_rel)
        if mask.width != image_w or mask.height != image_h:
            raise MaskContractError(
                f"mask {mask_rel} at {where} is {mask.width}x{mask.height}, "
                f"image is {image_w}x{image_h}"
            )
        clipped = bbox.clipped(image_w, image_h)
        tight = mask.tight_bbox()
        if tight is None:
            raise MaskContractError(f"candidate mask at {where} is empty")
        if clipped != tight:
            raise MaskContractError(
                f"candidate bbox at {where} does not match the mask's tight box "
                f"({clipped} vs {tight})"
            )
        candidates.append(
            MaskCandidate(
                provider=provider,
                predicted_bbox=bbox,
                mask=mask,
                predicted_label=label,
                score=score,
            )
        )
    return candidates
