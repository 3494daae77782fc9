"""Evaluation reducers over externally produced model outputs.

Four measures are implemented:

* ``clip_distance`` — percentage of samples whose image/text similarity
  over the target-object crop strictly decreased after inpainting.
* ``clip_accuracy`` — percentage of samples whose source-crop label
  vanished from the inpainted crop's top-k zero-shot predictions.
* ``relsim`` — average recall of ground-truth relation triples among the
  triples detected in the edited image.
* ``fid`` — Frechet distance between Gaussians fitted to two feature
  sets, the standard definition
  ``||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})``.

The matrix square root is taken by symmetric eigendecomposition of
``S_a^{1/2} S_b S_a^{1/2}`` (similar to ``S_a S_b``, hence same trace),
which stays in real arithmetic by construction; eigenvalues inside the
negative tolerance are clipped to zero, anything beyond is an error.

All sample inputs arrive as files: JSON-lines records for similarity,
classification, and relation samples, and a small binary format for
feature matrices (magic ``FFV1``, u32 count, u32 dim, count*dim f32
values, all little-endian, rows stored contiguously).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import MetricError

FEATURE_MAGIC = b"FFV1"
NEGATIVE_EIGENVALUE_TOLERANCE = 1e-6

Triple = tuple[str, str, str]


@dataclass(frozen=True)
class SimilarityPair:
    """Image/text similarity before and after inpainting, same prompt."""

    source_similarity: float
    inpainted_similarity: float
    prompt: str

    def __post_init__(self) -> None:
        if not (np.isfinite(self.source_similarity) and np.isfinite(self.inpainted_similarity)):
            raise MetricError("similarity scores must be finite")


@dataclass(frozen=True)
class ClassificationPair:
    """Zero-shot top-1 label of the source crop and ranked top-k labels
    of the inpainted crop."""

    source_top1: str
    inpainted_topk: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.inpainted_topk) < 1:
            raise MetricError("inpainted_topk must contain at least one label")
        if len(set(self.inpainted_topk)) != len(self.inpainted_topk):
            raise MetricError("inpainted_topk contains duplicate labels")


@dataclass(frozen=True)
class RelationSets:
    """Ground-truth and detected (subject, predicate, object) triples."""

    ground_truth: frozenset[Triple]
    detected: frozenset[Triple]


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """A count x dim matrix of 32-bit feature rows."""

    rows: np.ndarray

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.float32)
        if rows.ndim != 2:
            raise MetricError("feature rows must form a 2-D matrix")
        if rows.shape[0] < 2:
            raise MetricError("feature set needs at least 2 rows for a covariance")
        if rows.shape[1] < 1:
            raise MetricError("feature rows must have at least one dimension")
        if not np.isfinite(rows).all():
            raise MetricError("feature rows must be finite")
        rows = rows.copy()
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True, eq=False)
class GaussianStats:
    """Mean vector and symmetrized covariance of a feature set."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise MetricError("mean must be a vector and cov a matching square matrix")
        if np.abs(cov - cov.T).max(initial=0.0) >= 1e-9:
            raise MetricError("covariance must be symmetric")
        if np.any(np.diag(cov) < 0):
            raise MetricError("covariance diagonal must be non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def clip_distance(pairs: list[SimilarityPair]) -> float:
    """Percentage of pairs whose similarity strictly decreased.

    Equality counts as a failure, matching the strict "decreases" rule.
    """
    if not pairs:
        raise MetricError("clip_distance needs at least one similarity pair")
    successes = sum(1 for pair in pairs if pair.inpainted_similarity < pair.source_similarity)
    return 100.0 * successes / len(pairs)


def clip_accuracy(pairs: list[ClassificationPair], k: int) -> float:
    """Percentage of pairs whose source label left the top-k predictions."""
    if not pairs:
        raise MetricError("clip_accuracy needs at least one classification pair")
    if k < 1:
        raise MetricError(f"k must be >= 1, got {k}")
    for pair in pairs:
        if len(pair.inpainted_topk) < k:
            raise MetricError(
                f"k={k} exceeds the {len(pair.inpainted_topk)} available predictions"
            )
    successes = sum(1 for pair in pairs if pair.source_top1 not in pair.inpainted_topk[:k])
    return 100.0 * successes / len(pairs)


def relsim(samples: list[RelationSets], report: Optional[dict] = None) -> float:
    """Average per-sample recall of ground-truth triples among detections.

    Samples with empty ground truth cannot be scored; they are excluded
    and tallied under ``report["excluded_empty_ground_truth"]``.
    """
    recalls = []
    excluded = 0
    for sample in samples:
        if not sample.ground_truth:
            excluded += 1
            continue
        hit = len(sample.ground_truth & sample.detected)
        recalls.append(hit / len(sample.ground_truth))
    if report is not None:
        report["excluded_empty_ground_truth"] = excluded
    if not recalls:
        raise MetricError("relsim has no scoreable samples (all ground-truth sets empty)")
    return sum(recalls) / len(recalls)


def gaussian_stats(features: FeatureSet) -> GaussianStats:
    """Mean and (n-1)-normalized covariance of the rows, in float64."""
    rows = features.rows.astype(np.float64)
    mean = rows.mean(axis=0)
    centered = rows - mean
    cov = centered.T @ centered / (features.count - 1)
    cov = (cov + cov.T) / 2.0
    return GaussianStats(mean=mean, cov=cov)


def _psd_sqrt(cov: np.ndarray, what: str) -> np.ndarray:
    values, vectors = np.linalg.eigh(cov)
    if values.min(initial=0.0) < -NEGATIVE_EIGENVALUE_TOLERANCE:
        raise MetricError(
            f"{what} is not positive semidefinite (eigenvalue {values.min():.3e})"
        )
    values = np.clip(values, 0.0, None)
    return (vectors * np.sqrt(values)) @ vectors.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """Frechet distance between two Gaussians."""
    if a.mean.shape != b.mean.shape:
        raise MetricError(
            f"dimension mismatch: {a.mean.shape[0]} vs {b.mean.shape[0]}"
        )
    diff = a.mean - b.mean
    root_a = _psd_sqrt(a.cov, "first covariance")
    inner = root_a @ b.cov @ root_a
    inner = (inner + inner.T) / 2.0
    values = np.linalg.eigvalsh(inner)
    if values.min(initial=0.0) < -NEGATIVE_EIGENVALUE_TOLERANCE:
        raise MetricError(
            f"covariance product is not positive semidefinite (eigenvalue {values.min():.3e})"
        )
    trace_sqrt = float(np.sqrt(np.clip(values, 0.0, None)).sum())
    return float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * trace_sqrt)


def fid(features_a: FeatureSet, features_b: FeatureSet) -> float:
    """Frechet distance between Gaussians fitted to two feature sets."""
    if features_a.dim != features_b.dim:
        raise MetricError(f"dimension mismatch: {features_a.dim} vs {features_b.dim}")
    return frechet_distance(gaussian_stats(features_a), gaussian_stats(features_b))


# --- file formats -----------------------------------------------------------


def write_features(path: str | Path, rows: np.ndarray) -> None:
    features = FeatureSet(rows)
    with open(path, "wb") as handle:
        handle.write(FEATURE_MAGIC)
        handle.write(struct.pack("<II", features.count, features.dim))
        handle.write(features.rows.astype("<f4").tobytes(order="C"))


def read_features(path: str | Path) -> FeatureSet:
    with open(path, "rb") as handle:
        magic = handle.read(4)
        if magic != FEATURE_MAGIC:
            raise MetricError(f"{path} is not a feature file (bad magic {magic!r})")
        header = handle.read(8)
        if len(header) != 8:
            raise MetricError(f"{path} is truncated (no count/dim header)")
        count, dim = struct.unpack("<II", header)
        body = handle.read()
    expected = count * dim * 4
    if len(body) != expected:
        raise MetricError(f"{path} holds {len(body)} payload bytes, expected {expected}")
    rows = np.frombuffer(body, dtype="<f4").reshape(count, dim)
    return FeatureSet(rows)


def _read_jsonl(path: str | Path) -> Iterable[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MetricError(f"{path}:{line_no} is not valid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise MetricError(f"{path}:{line_no} must hold a JSON object")
            yield line_no, record


def load_similarity_pairs(path: str | Path) -> list[SimilarityPair]:
    pairs = []
    for line_no, record in _read_jsonl(path):
        try:
            pairs.append(
                SimilarityPair(
                    source_similarity=float(record["source_similarity"]),
                    inpainted_similarity=float(record["inpainted_similarity"]),
                    prompt=str(record["prompt"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MetricError(f"{path}:{line_no} malformed similarity record: {exc}") from exc
    return pairs


def save_similarity_pairs(path: str | Path, pairs: list[SimilarityPair]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for pair in pairs:
            handle.write(
                json.dumps(
                    {
                        "source_similarity": pair.source_similarity,
                        "inpainted_similarity": pair.inpainted_similarity,
                        "prompt": pair.prompt,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_classification_pairs(path: str | Path) -> list[ClassificationPair]:
    pairs = []
    for line_no, record in _read_jsonl(path):
        try:
            topk = record["inpainted_topk"]
            if not isinstance(topk, list):
                raise TypeError("inpainted_topk must be a list")
            pairs.append(
                ClassificationPair(
                    source_top1=str(record["source_top1"]),
                    inpainted_topk=tuple(str(label) for label in topk),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MetricError(f"{path}:{line_no} malformed classification record: {exc}") from exc
    return pairs


def save_classification_pairs(path: str | Path, pairs: list[ClassificationPair]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for pair in pairs:
            handle.write(
                json.dumps(
                    {
                        "source_top1": pair.source_top1,
                        "inpainted_topk": list(pair.inpainted_topk),
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def _as_triples(raw: object, where: str) -> frozenset[Triple]:
    if not isinstance(raw, list):
        raise MetricError(f"{where} must be a list of [subject, predicate, object] triples")
    triples = set()
    for entry in raw:
        if not isinstance(entry, list) or len(entry) != 3:
            raise MetricError(f"{where} holds a non-triple entry: {entry!r}")
        triples.add((str(entry[0]), str(entry[1]), str(entry[2])))
    return frozenset(triples)


def load_relation_sets(path: str | Path) -> list[RelationSets]:
    samples = []
    for line_no, record in _read_jsonl(path):
        where = f"{path}:{line_no}"
        samples.append(
            RelationSets(
                ground_truth=_as_triples(record.get("ground_truth"), f"{where} ground_truth"),
                detected=_as_triples(record.get("detected"), f"{where} detected"),
            )
        )
    return samples
