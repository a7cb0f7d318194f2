"""Locatability scoring: from clue/label embeddings to curated image sets.

The weight-building path runs clue-vs-label cosine similarities through
global min-max normalization, a zero-below-threshold cut, column means,
and an L1 normalization, producing one importance weight per
segmentation label.  An image's locatability is then the dot product of
its per-label area ratios with those weights — a convex combination, so
every score lands in [0, 1] and a single filter threshold (default 0.4)
partitions a corpus into high- and low-locatability halves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateMatrixError,
    NoSignalError,
    ParseError,
    SchemaMismatchError,
    UnknownLabelError,
    ValidationError,
)

STAGE_RAW = "raw"
STAGE_NORMALIZED = "normalized"
STAGE_THRESHOLDED = "thresholded"

UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class LabelSchema:
    """Ordered segmentation label names; fixes the meaning of ratio index k."""

    id: str
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.labels:
            raise ValidationError("label schema needs at least one label")
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError("label names must be unique")
        if any(not name for name in self.labels):
            raise ValidationError("label names must be non-empty")

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownLabelError(f"label {label!r} not in schema {self.id!r}") from None


@dataclass
class SegmentationProfile:
    """Per-image area-ratio vector over the labels of one schema."""

    image_id: str
    label_schema_id: str
    ratios: np.ndarray

    def __post_init__(self) -> None:
        self.ratios = np.asarray(self.ratios, dtype=float)
        if self.ratios.ndim != 1 or self.ratios.size == 0:
            raise ValidationError(f"{self.image_id}: ratios must be a non-empty vector")
        if np.any(self.ratios < 0) or np.any(self.ratios > 1):
            raise ValidationError(f"{self.image_id}: ratios must lie in [0, 1]")
        total = float(self.ratios.sum())
        if total > 1.0 + 1e-9:
            raise ValidationError(f"{self.image_id}: ratios sum to {total} > 1")


@dataclass
class SimilarityMatrix:
    """m x n clue-by-label similarity scores plus the pipeline stage tag."""

    values: np.ndarray
    stage: str
    tau: float | None = None  # threshold applied, for stage == thresholded

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValidationError("similarity matrix must be 2-D")


@dataclass
class LocatabilityWeights:
    """L1-normalized per-label importance vector with provenance."""

    weights: np.ndarray
    label_schema_id: str
    tau: float
    corpus_id: str = ""

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights < 0):
            raise ValidationError("weights must be non-negative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise ValidationError("weights must sum to 1")


@dataclass(frozen=True)
class LocatabilityScore:
    image_id: str
    score: float


def build_similarity_matrix(
    clue_vectors: np.ndarray, label_vectors: np.ndarray
) -> SimilarityMatrix:
    """Cosine similarities between m clue and n label embeddings.

    All vectors must share one dimensionality and be unit-normalized
    (norm 1 +/- 1e-6), so the similarity is a plain dot product.
    """
    clues = np.atleast_2d(np.asarray(clue_vectors, dtype=float))
    labels = np.atleast_2d(np.asarray(label_vectors, dtype=float))
    if clues.shape[1] != labels.shape[1]:
        raise ValidationError(
            f"dimensionality mismatch: clues are {clues.shape[1]}-d, "
            f"labels are {labels.shape[1]}-d"
        )
    for name, block in (("clue", clues), ("label", labels)):
        norms = np.linalg.norm(block, axis=1)
        if np.any(norms == 0):
            raise ValidationError(f"zero {name} vector at row {int(np.argmin(norms))}")
        bad = np.abs(norms - 1.0) > UNIT_NORM_TOL
        if np.any(bad):
            raise ValidationError(
                f"{name} vector at row {int(np.argmax(bad))} is not unit-normalized "
                f"(norm {norms[np.argmax(bad)]:.8f})"
            )
    values = np.clip(clues @ labels.T, -1.0, 1.0)
    return SimilarityMatrix(values=values, stage=STAGE_RAW)


def minmax_normalize(matrix: SimilarityMatrix) -> SimilarityMatrix:
    """Affinely map the whole matrix onto [0, 1] using its global min/max."""
    if matrix.stage != STAGE_RAW:
        raise ValidationError(f"expected a raw matrix, got stage {matrix.stage!r}")
    lo = float(matrix.values.min())
    hi = float(matrix.values.max())
    if hi == lo:
        raise DegenerateMatrixError(
            f"constant similarity matrix (every entry {lo}); min-max normalization is "
            "undefined. This usually means the embedding service returned collapsed "
            "vectors — re-fetch embeddings before building weights."
        )
    return SimilarityMatrix(values=(matrix.values - lo) / (hi - lo), stage=STAGE_NORMALIZED)


def threshold_zero(matrix: SimilarityMatrix, tau: float) -> SimilarityMatrix:
    """Zero every entry strictly below tau; tau itself survives."""
    if matrix.stage != STAGE_NORMALIZED:
        raise ValidationError(f"expected a normalized matrix, got stage {matrix.stage!r}")
    if not 0.0 <= tau <= 1.0:
        raise ValidationError(f"tau must be in [0, 1], got {tau}")
    values = np.where(matrix.values >= tau, matrix.values, 0.0)
    return SimilarityMatrix(values=values, stage=STAGE_THRESHOLDED, tau=tau)


def reduce_to_weights(
    matrix: SimilarityMatrix, label_schema_id: str, corpus_id: str = ""
) -> LocatabilityWeights:
    """Column means of the thresholded matrix, L1-normalized to sum to 1."""
    if matrix.stage != STAGE_THRESHOLDED:
        raise ValidationError(f"expected a thresholded matrix, got stage {matrix.stage!r}")
    column_means = matrix.values.mean(axis=0)
    total = float(column_means.sum())
    if total == 0.0:
        raise NoSignalError(
            "every clue-label similarity fell below the threshold; lower tau or "
            "check the embeddings"
        )
    return LocatabilityWeights(
        weights=column_means / total,
        label_schema_id=label_schema_id,
        tau=matrix.tau if matrix.tau is not None else float("nan"),
        corpus_id=corpus_id,
    )


def build_weights(
    clue_vectors: np.ndarray,
    label_vectors: np.ndarray,
    tau: float,
    label_schema_id: str,
    corpus_id: str = "",
) -> LocatabilityWeights:
    """Full weight pipeline: similarities -> min-max -> threshold -> reduce."""
    raw = build_similarity_matrix(clue_vectors, label_vectors)
    return reduce_to_weights(
        threshold_zero(minmax_normalize(raw), tau), label_schema_id, corpus_id
    )


def locatability_score(
    profile: SegmentationProfile, weights: LocatabilityWeights
) -> LocatabilityScore:
    """Dot product of area ratios with label weights; always in [0, 1]."""
    if profile.label_schema_id != weights.label_schema_id:
        raise SchemaMismatchError(
            f"profile {profile.image_id} uses schema {profile.label_schema_id!r} but "
            f"weights were built for {weights.label_schema_id!r}"
        )
    if profile.ratios.shape != weights.weights.shape:
        raise SchemaMismatchError(
            f"profile {profile.image_id} has {profile.ratios.size} ratios but weights "
            f"have {weights.weights.size} entries"
        )
    return LocatabilityScore(
        image_id=profile.image_id, score=float(profile.ratios @ weights.weights)
    )


def score_profiles(
    profiles: list[SegmentationProfile], weights: LocatabilityWeights
) -> list[LocatabilityScore]:
    """Score a batch; results are merged in stable image-id order."""
    scores = [locatability_score(p, weights) for p in profiles]
    scores.sort(key=lambda s: s.image_id)
    return scores


def partition_scores(
    scores: list[LocatabilityScore], threshold: float = 0.4
) -> tuple[list[str], list[str]]:
    """Split image ids into (high, low) at score >= threshold.

    Both lists are sorted by descending score (ties by image id), and the
    partition is exhaustive and disjoint.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold must be in [0, 1], got {threshold}")
    ordered = sorted(scores, key=lambda s: (-s.score, s.image_id))
    high = [s.image_id for s in ordered if s.score >= threshold]
    low = [s.image_id for s in ordered if s.score < threshold]
    return high, low


def filter_by_locatability(
    profiles: list[SegmentationProfile],
    weights: LocatabilityWeights,
    threshold: float = 0.4,
) -> tuple[list[str], list[str]]:
    """Score then partition a profile corpus at the curation threshold."""
    return partition_scores(score_profiles(profiles, weights), threshold)


def class_proportion_curve(
    profiles: list[SegmentationProfile],
    scores_by_image: dict[str, float],
    schema: LabelSchema,
    label: str,
    bin_width: float = 0.05,
) -> list[tuple[float, float | None, int]]:
    """Mean locatability binned by one label's area ratio.

    Returns (bin_center, mean_score, count) covering [0, 1]; empty bins
    carry count 0 and mean None.
    """
    if not 0.0 < bin_width <= 1.0:
        raise ValidationError(f"bin_width must be in (0, 1], got {bin_width}")
    k = schema.index_of(label)
    n_bins = int(np.ceil(1.0 / bin_width))
    sums = np.zeros(n_bins)
    counts = np.zeros(n_bins, dtype=int)
    for profile in profiles:
        if profile.image_id not in scores_by_image:
            continue
        ratio = float(profile.ratios[k])
        index = min(int(ratio / bin_width), n_bins - 1)
        sums[index] += scores_by_image[profile.image_id]
        counts[index] += 1
    curve: list[tuple[float, float | None, int]] = []
    for i in range(n_bins):
        center = (i + 0.5) * bin_width
        mean = float(sums[i] / counts[i]) if counts[i] else None
        curve.append((center, mean, int(counts[i])))
    return curve


# --- file formats ---------------------------------------------------------
#
# Profiles:   JSONL {"image_id", "label_schema_id", "ratios": [..]}
# Embeddings: JSONL {"id", "kind": "clue"|"label", "vector": [..]}
# Weights:    JSON  {"label_schema_id", "tau", "weights": [..]}
# Scores:     JSONL {"image_id", "score"}


def load_profiles_jsonl(path: str | Path) -> list[SegmentationProfile]:
    profiles = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                profiles.append(
                    SegmentationProfile(
                        image_id=str(obj["image_id"]),
                        label_schema_id=str(obj["label_schema_id"]),
                        ratios=np.asarray(obj["ratios"], dtype=float),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, ValidationError) as exc:
                raise ParseError(f"{path}: line {line_no}: {exc}") from None
    return profiles


def load_embeddings_jsonl(
    path: str | Path,
) -> tuple[list[tuple[str, np.ndarray]], list[tuple[str, np.ndarray]]]:
    """Read an embeddings file, split into (clues, labels) in file order."""
    clues: list[tuple[str, np.ndarray]] = []
    labels: list[tuple[str, np.ndarray]] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                kind = obj["kind"]
                record = (str(obj["id"]), np.asarray(obj["vector"], dtype=float))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}: line {line_no}: {exc}") from None
            if kind == "clue":
                clues.append(record)
            elif kind == "label":
                labels.append(record)
            else:
                raise ParseError(f"{path}: line {line_no}: unknown kind {kind!r}")
    return clues, labels


def save_weights_json(weights: LocatabilityWeights, path: str | Path) -> None:
    payload = {
        "label_schema_id": weights.label_schema_id,
        "tau": weights.tau,
        "weights": [float(w) for w in weights.weights],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_weights_json(path: str | Path) -> LocatabilityWeights:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return LocatabilityWeights(
            weights=np.asarray(obj["weights"], dtype=float),
            label_schema_id=str(obj["label_schema_id"]),
            tau=float(obj["tau"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from None


def save_scores_jsonl(scores: list[LocatabilityScore], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for score in scores:
            handle.write(
                json.dumps({"image_id": score.image_id, "score": score.score}) + "\n"
            )


def load_scores_jsonl(path: str | Path) -> list[LocatabilityScore]:
    scores = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                scores.append(LocatabilityScore(str(obj["image_id"]), float(obj["score"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}: line {line_no}: {exc}") from None
    return scores


def save_schema_json(schema: LabelSchema, path: str | Path) -> None:
    payload = {"id": schema.id, "labels": list(schema.labels)}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_schema_json(path: str | Path) -> LabelSchema:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return LabelSchema(id=str(obj["id"]), labels=tuple(obj["labels"]))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from None
