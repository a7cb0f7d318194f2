"""Scoring of geo-localization predictions.

Recall is the fraction of answers from which both a country and a city
could be parsed; accuracy is computed over those effective answers only
(normalized-name equality against the geo-tag); F1 is their harmonic
mean.  A separate path geocodes predicted city names and reports the
fraction of predictions whose city center lies within 1 / 25 / 750 km of
ground truth, with ineffective or un-geocodable predictions counting as
misses at every threshold and the denominator being all predictions.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, ValidationError
from .gateway import (
    FAILURE_CAUSES,
    EndpointConfig,
    ManifestEntry,
    PredictionRecord,
    batch_infer,
)
from .gazetteer import Gazetteer, geocode_city, normalize_place_name
from .geodesy import geodesic_distance, valid_coordinate

DEFAULT_THRESHOLDS_KM = (1.0, 25.0, 750.0)

LEVEL_COUNTRY = "country"
LEVEL_CITY = "city"


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    country: str
    city: str
    lat: float | None = None
    lon: float | None = None

    def __post_init__(self) -> None:
        if not self.country or not self.city:
            raise ValidationError(f"{self.image_id}: country and city must be non-empty")
        if (self.lat is None) != (self.lon is None):
            raise ValidationError(f"{self.image_id}: lat and lon must come together")
        if self.lat is not None and not valid_coordinate(self.lat, self.lon):
            raise ValidationError(f"{self.image_id}: coordinate out of range")

    @property
    def coordinates(self) -> tuple[float, float] | None:
        if self.lat is None or self.lon is None:
            return None
        return (self.lat, self.lon)


@dataclass
class LevelMetrics:
    accuracy: float | None  # None when there are no effective answers
    recall: float
    f1: float


@dataclass
class EvalCounts:
    total: int
    effective: int
    failures: dict[str, int] = field(default_factory=dict)

    def conserved(self) -> bool:
        return self.total == self.effective + sum(self.failures.values())


@dataclass
class EvalReport:
    levels: dict[str, LevelMetrics]
    threshold_accuracy: dict[float, float]
    counts: EvalCounts

    def to_dict(self) -> dict:
        return {
            "levels": {
                level: {"accuracy": m.accuracy, "recall": m.recall, "f1": m.f1}
                for level, m in self.levels.items()
            },
            "threshold_accuracy": {
                f"{km:g}": value for km, value in self.threshold_accuracy.items()
            },
            "counts": {
                "total": self.counts.total,
                "effective": self.counts.effective,
                "failures": dict(self.counts.failures),
            },
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalReport":
        levels = {
            level: LevelMetrics(
                accuracy=m.get("accuracy"), recall=m["recall"], f1=m["f1"]
            )
            for level, m in obj["levels"].items()
        }
        thresholds = {float(k): v for k, v in obj.get("threshold_accuracy", {}).items()}
        counts = EvalCounts(
            total=obj["counts"]["total"],
            effective=obj["counts"]["effective"],
            failures=dict(obj["counts"]["failures"]),
        )
        return cls(levels=levels, threshold_accuracy=thresholds, counts=counts)


def f1_score(accuracy: float | None, recall: float) -> float:
    """Harmonic mean of accuracy and recall; 0 when their sum is 0."""
    if accuracy is None or accuracy + recall <= 0:
        return 0.0
    return 2.0 * accuracy * recall / (accuracy + recall)


def _truth_by_id(truth: list[GroundTruth]) -> dict[str, GroundTruth]:
    by_id: dict[str, GroundTruth] = {}
    for item in truth:
        if item.image_id in by_id:
            raise ValidationError(f"duplicate truth image_id {item.image_id!r}")
        by_id[item.image_id] = item
    return by_id


def _check_coverage(preds: list[PredictionRecord], truth_ids: set[str]) -> None:
    missing = sorted({p.image_id for p in preds} - truth_ids)
    if missing:
        raise ValidationError(f"predictions without ground truth: {missing[:5]}")


def compute_level_metrics(
    preds: list[PredictionRecord], truth: list[GroundTruth], level: str
) -> LevelMetrics:
    """Accuracy over effective answers, recall over all answers, and F1."""
    if level not in (LEVEL_COUNTRY, LEVEL_CITY):
        raise ValidationError(f"level must be country|city, got {level!r}")
    by_id = _truth_by_id(truth)
    _check_coverage(preds, set(by_id))
    total = len(preds)
    effective = [p for p in preds if p.effective]
    recall = len(effective) / total if total else 0.0
    if not effective:
        return LevelMetrics(accuracy=None, recall=recall, f1=0.0)
    correct = 0
    for pred in effective:
        expected = getattr(by_id[pred.image_id], level)
        answered = pred.country if level == LEVEL_COUNTRY else pred.city
        if answered and normalize_place_name(answered) == normalize_place_name(expected):
            correct += 1
    accuracy = correct / len(effective)
    return LevelMetrics(accuracy=accuracy, recall=recall, f1=f1_score(accuracy, recall))


def threshold_accuracy(
    preds: list[PredictionRecord],
    truth: list[GroundTruth],
    gazetteer: Gazetteer,
    thresholds_km: tuple[float, ...] = DEFAULT_THRESHOLDS_KM,
) -> dict[float, float]:
    """Fraction of predictions whose geocoded city is within each radius.

    Denominators are all predictions: refusals and unknown city names
    count as misses at every threshold.
    """
    by_id = _truth_by_id(truth)
    _check_coverage(preds, set(by_id))
    for item in (by_id[p.image_id] for p in preds):
        if item.coordinates is None:
            raise ValidationError(f"truth {item.image_id} has no exact coordinates")
    total = len(preds)
    hits = {km: 0 for km in thresholds_km}
    for pred in preds:
        if not pred.effective or not pred.city:
            continue
        point = geocode_city(pred.city, pred.country, gazetteer)
        if point is None:
            continue
        distance = geodesic_distance(point, by_id[pred.image_id].coordinates)
        for km in thresholds_km:
            if distance <= km:
                hits[km] += 1
    return {km: (hits[km] / total if total else 0.0) for km in thresholds_km}


def count_failures(preds: list[PredictionRecord]) -> EvalCounts:
    failures = {cause: 0 for cause in FAILURE_CAUSES}
    effective = 0
    for pred in preds:
        if pred.effective:
            effective += 1
        else:
            cause = pred.failure_cause or "unparseable"
            failures[cause] = failures.get(cause, 0) + 1
    return EvalCounts(total=len(preds), effective=effective, failures=failures)


def build_report(
    preds: list[PredictionRecord],
    truth: list[GroundTruth],
    gazetteer: Gazetteer | None = None,
    thresholds_km: tuple[float, ...] = DEFAULT_THRESHOLDS_KM,
) -> EvalReport:
    """Full report: both levels, optional distance thresholds, and counts.

    The accounting identity total == effective + sum(failures) is
    asserted before the report is returned.
    """
    levels = {
        LEVEL_COUNTRY: compute_level_metrics(preds, truth, LEVEL_COUNTRY),
        LEVEL_CITY: compute_level_metrics(preds, truth, LEVEL_CITY),
    }
    counts = count_failures(preds)
    if not counts.conserved():
        raise ValidationError(
            f"failure accounting violated: total={counts.total}, "
            f"effective={counts.effective}, failures={counts.failures}"
        )
    thresholds: dict[float, float] = {}
    if gazetteer is not None and truth and all(t.coordinates for t in truth):
        thresholds = threshold_accuracy(preds, truth, gazetteer, thresholds_km)
    return EvalReport(levels=levels, threshold_accuracy=thresholds, counts=counts)


def load_truth_jsonl(path: str | Path) -> list[GroundTruth]:
    truth = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                truth.append(
                    GroundTruth(
                        image_id=str(obj["image_id"]),
                        country=str(obj["country"]),
                        city=str(obj["city"]),
                        lat=float(obj["lat"]) if obj.get("lat") is not None else None,
                        lon=float(obj["lon"]) if obj.get("lon") is not None else None,
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}: line {line_no}: {exc}") from None
    return truth


# --- rendering -------------------------------------------------------------

_ABLATION_COLUMNS = [
    ("country", "accuracy"),
    ("country", "recall"),
    ("country", "f1"),
    ("city", "accuracy"),
    ("city", "recall"),
    ("city", "f1"),
]


def _metric_value(report: EvalReport, level: str, metric: str) -> float | None:
    metrics = report.levels.get(level)
    if metrics is None:
        return None
    return getattr(metrics, metric)


def ablation_report(runs: list[tuple[str, EvalReport]]) -> tuple[str, str]:
    """Render named runs as an aligned text table and a CSV.

    Columns are country/city x accuracy/recall/f1; the best value per
    column is starred in the text table and named in the CSV's final
    "best" row (ties are all marked).
    """
    if not runs:
        raise ValidationError("ablation report needs at least one run")
    headers = ["model"] + [f"{level}_{metric}" for level, metric in _ABLATION_COLUMNS]
    best: list[float | None] = []
    for level, metric in _ABLATION_COLUMNS:
        values = [
            v for _, report in runs if (v := _metric_value(report, level, metric)) is not None
        ]
        best.append(max(values) if values else None)

    text_rows: list[list[str]] = [headers]
    csv_buffer = io.StringIO()
    writer = csv.writer(csv_buffer, lineterminator="\n")
    writer.writerow(headers)
    best_names: list[list[str]] = [[] for _ in _ABLATION_COLUMNS]
    for name, report in runs:
        text_row = [name]
        csv_row: list[str] = [name]
        for j, (level, metric) in enumerate(_ABLATION_COLUMNS):
            value = _metric_value(report, level, metric)
            if value is None:
                text_row.append("n/a")
                csv_row.append("")
                continue
            starred = best[j] is not None and value == best[j]
            if starred:
                best_names[j].append(name)
            text_row.append(f"{value:.4f}" + ("*" if starred else ""))
            csv_row.append(f"{value:.4f}")
        text_rows.append(text_row)
        writer.writerow(csv_row)
    writer.writerow(["best"] + ["|".join(names) for names in best_names])

    widths = [max(len(row[i]) for row in text_rows) for i in range(len(headers))]
    lines = []
    for idx, row in enumerate(text_rows):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if idx == 0:
            lines.append("  ".join("-" * widths[i] for i in range(len(headers))))
    return "\n".join(lines) + "\n", csv_buffer.getvalue()


def report_text(report: EvalReport) -> str:
    """Single-run report as aligned plain text."""
    lines = ["level    accuracy  recall  f1", "-----    --------  ------  --"]
    for level in (LEVEL_COUNTRY, LEVEL_CITY):
        metrics = report.levels[level]
        accuracy = "n/a" if metrics.accuracy is None else f"{metrics.accuracy:.4f}"
        lines.append(
            f"{level:<8} {accuracy:>8}  {metrics.recall:.4f}  {metrics.f1:.4f}"
        )
    if report.threshold_accuracy:
        lines.append("")
        lines.append("threshold_km  fraction")
        for km in sorted(report.threshold_accuracy):
            lines.append(f"{km:>12g}  {report.threshold_accuracy[km]:.4f}")
    counts = report.counts
    lines.append("")
    lines.append(f"total={counts.total} effective={counts.effective}")
    lines.append(
        "failures: "
        + ", ".join(f"{cause}={n}" for cause, n in sorted(counts.failures.items()))
    )
    return "\n".join(lines) + "\n"


def report_csv(report: EvalReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["metric", "value"])
    for level in (LEVEL_COUNTRY, LEVEL_CITY):
        metrics = report.levels[level]
        writer.writerow(
            [f"{level}_accuracy", "" if metrics.accuracy is None else f"{metrics.accuracy:.6f}"]
        )
        writer.writerow([f"{level}_recall", f"{metrics.recall:.6f}"])
        writer.writerow([f"{level}_f1", f"{metrics.f1:.6f}"])
    for km in sorted(report.threshold_accuracy):
        writer.writerow([f"within_{km:g}km", f"{report.threshold_accuracy[km]:.6f}"])
    writer.writerow(["total", report.counts.total])
    writer.writerow(["effective", report.counts.effective])
    for cause, n in sorted(report.counts.failures.items()):
        writer.writerow([f"failures_{cause}", n])
    return buffer.getvalue()


def proportion_experiment(
    variants: list[tuple[float, list[ManifestEntry]]],
    endpoint: EndpointConfig,
    truth: list[GroundTruth],
    work_dir: str | Path,
    prompt: str | None = None,
) -> list[tuple[float, float | None, float | None]]:
    """Country/city accuracy per dataset variant of varying curation level.

    Each variant is (high_locatability_fraction, manifest); inference
    runs per variant with its own checkpoint, and the resulting curve
    rows are sorted by fraction for plotting.
    """
    from .gateway import GEOLOC_PROMPT

    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    curve = []
    for index, (fraction, manifest) in enumerate(variants):
        checkpoint = work_dir / f"variant_{index:03d}.ckpt.jsonl"
        preds = batch_infer(
            manifest, endpoint, checkpoint, prompt=prompt or GEOLOC_PROMPT
        )
        country = compute_level_metrics(preds, truth, LEVEL_COUNTRY)
        city = compute_level_metrics(preds, truth, LEVEL_CITY)
        curve.append((fraction, country.accuracy, city.accuracy))
    curve.sort(key=lambda row: row[0])
    return curve


def curve_csv(rows: list[tuple[float, float | None, int]] | list[tuple[float, float | None, float | None]], header: list[str]) -> str:
    """Plot-ready CSV for binned or proportion curves."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else (f"{v:.6f}" if isinstance(v, float) else v) for v in row])
    return buffer.getvalue()
