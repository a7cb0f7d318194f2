"""Image-text clue corpus: ingest, geo-entity filtering, and tuning exports.

Clues are short human-written rules tying a visual feature to a place
("houses in central Chile are more likely to have terracotta tiled
roofs").  Records lacking any place entity are dropped, and the
survivors feed two JSONL corpora: stage 1 pairs a country with the clue
text as reasoning, stage 2 pairs a country with a city and carries no
reasoning at all.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from .errors import TaggerUnavailableError
from .gateway import LOCATION_TUNING_PROMPT, REASONING_TUNING_PROMPT
from .tagging import PlaceTagger

DROP_NO_ENTITY = "no-entity"
DROP_TAGGER_UNAVAILABLE = "tagger-unavailable"


@dataclass(frozen=True)
class ClueRecord:
    id: str
    text: str
    image_ref: str
    country: str
    city: str | None = None
    entities: tuple[str, ...] = ()
    embedding_ref: str | None = None


@dataclass
class IngestReport:
    total_lines: int = 0
    loaded: int = 0
    duplicates: int = 0
    rejected: list[tuple[int, str]] = field(default_factory=list)


def ingest_clues(path: str | Path) -> tuple[list[ClueRecord], IngestReport]:
    """Load clue records from JSONL, collapsing duplicate (text, image_ref).

    Malformed lines and records missing a required field are itemized in
    the report with their line numbers rather than aborting the load.
    """
    report = IngestReport()
    records: list[ClueRecord] = []
    seen: dict[tuple[str, str], int] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            report.total_lines += 1
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                report.rejected.append((line_no, f"malformed JSON: {exc.msg}"))
                continue
            if not isinstance(obj, dict):
                report.rejected.append((line_no, "not a JSON object"))
                continue
            missing = [k for k in ("text", "image_ref", "country") if not obj.get(k)]
            if missing:
                report.rejected.append((line_no, f"missing required field(s): {', '.join(missing)}"))
                continue
            text = str(obj["text"])
            image_ref = str(obj["image_ref"])
            key = (text, image_ref)
            if key in seen:
                report.duplicates += 1
                continue
            seen[key] = line_no
            records.append(
                ClueRecord(
                    id=str(obj.get("id") or f"clue-{line_no}"),
                    text=text,
                    image_ref=image_ref,
                    country=str(obj["country"]),
                    city=str(obj["city"]) if obj.get("city") else None,
                    embedding_ref=str(obj["embedding_ref"]) if obj.get("embedding_ref") else None,
                )
            )
    report.loaded = len(records)
    return records, report


def filter_geo_entities(
    records: list[ClueRecord],
    tagger: PlaceTagger,
    max_retries: int = 2,
) -> tuple[list[ClueRecord], list[tuple[ClueRecord, str]]]:
    """Keep records whose text names at least one place.

    Detected entities are stored on the kept records.  A tagger that
    keeps failing routes the record to dropped with cause
    "tagger-unavailable" instead of failing the batch.
    """
    kept: list[ClueRecord] = []
    dropped: list[tuple[ClueRecord, str]] = []
    for record in records:
        entities: list[str] | None = None
        for _ in range(max_retries + 1):
            try:
                entities = tagger.tag(record.text)
                break
            except TaggerUnavailableError:
                continue
        if entities is None:
            dropped.append((record, DROP_TAGGER_UNAVAILABLE))
        elif entities:
            kept.append(replace(record, entities=tuple(entities)))
        else:
            dropped.append((record, DROP_NO_ENTITY))
    return kept, dropped


@dataclass
class ExportReport:
    exported: int = 0
    skipped: list[tuple[str, str]] = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.exported + len(self.skipped)


def export_reasoning_corpus(records: list[ClueRecord], path: str | Path) -> ExportReport:
    """Stage-1 corpus: answer = {country, reasons: clue text}."""
    report = ExportReport()
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            if not record.country:
                report.skipped.append((record.id, "missing country"))
                continue
            if not record.text:
                report.skipped.append((record.id, "missing text"))
                continue
            example = {
                "image_ref": record.image_ref,
                "question": REASONING_TUNING_PROMPT,
                "answer": {"country": record.country, "reasons": record.text},
            }
            handle.write(json.dumps(example, ensure_ascii=False) + "\n")
            report.exported += 1
    return report


def export_location_corpus(
    curated: Iterable[tuple[str, str, str | None]], path: str | Path
) -> ExportReport:
    """Stage-2 corpus: answer = {country, city}; no reasons field at all."""
    report = ExportReport()
    with open(path, "w", encoding="utf-8") as handle:
        for image_ref, country, city in curated:
            if not country:
                report.skipped.append((image_ref, "missing country"))
                continue
            if not city:
                report.skipped.append((image_ref, "missing city"))
                continue
            example = {
                "image_ref": image_ref,
                "question": LOCATION_TUNING_PROMPT,
                "answer": {"country": country, "city": city},
            }
            handle.write(json.dumps(example, ensure_ascii=False) + "\n")
            report.exported += 1
    return report
