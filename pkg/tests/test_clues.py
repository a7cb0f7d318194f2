from __future__ import annotations

import json
import random

import pytest

from streetscope.clues import (
    ClueRecord,
    export_location_corpus,
    export_reasoning_corpus,
    filter_geo_entities,
    ingest_clues,
)
from streetscope.errors import TaggerUnavailableError
from streetscope.gazetteer import load_gazetteer
from streetscope.tagging import EndpointTagger, GazetteerTagger

CHILE_CLUE = "houses in central Chile are more likely to have terracotta tiled roofs"


@pytest.fixture(scope="module")
def gazetteer_tagger():
    return GazetteerTagger(load_gazetteer())


def _clue_line(text, image_ref="img.jpg", country="Chile", **extra):
    obj = {"text": text, "image_ref": image_ref, "country": country}
    obj.update(extra)
    return json.dumps(obj)


def _record(text, country="Chile", image_ref="img.jpg", city=None, rid="c1"):
    return ClueRecord(id=rid, text=text, image_ref=image_ref, country=country, city=city)


# --- ingest -----------------------------------------------------------------


def test_single_valid_line(tmp_path):
    path = tmp_path / "clues.jsonl"
    path.write_text(_clue_line(CHILE_CLUE) + "\n", encoding="utf-8")
    records, report = ingest_clues(path)
    assert len(records) == 1
    assert records[0].text == CHILE_CLUE
    assert records[0].country == "Chile"
    assert report.loaded == 1
    assert report.duplicates == 0


def test_duplicate_lines_collapse(tmp_path):
    path = tmp_path / "clues.jsonl"
    path.write_text(_clue_line(CHILE_CLUE) + "\n" + _clue_line(CHILE_CLUE) + "\n", encoding="utf-8")
    records, report = ingest_clues(path)
    assert len(records) == 1
    assert report.duplicates == 1


def test_ten_line_fixture_with_two_defects(tmp_path):
    lines = [_clue_line(f"clue number {k} mentions Japan", image_ref=f"img{k}.jpg", country="Japan") for k in range(8)]
    lines.insert(3, "{broken json")
    lines.insert(7, json.dumps({"text": "no country here", "image_ref": "x.jpg"}))
    path = tmp_path / "clues.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    records, report = ingest_clues(path)
    assert len(records) == 8
    assert report.total_lines == 10
    assert len(report.rejected) == 2
    line_numbers = [line for line, _ in report.rejected]
    assert line_numbers == [4, 8]
    reasons = [reason for _, reason in report.rejected]
    assert "malformed JSON" in reasons[0]
    assert "country" in reasons[1]


# --- filtering --------------------------------------------------------------


def test_chile_clue_kept_with_entity(gazetteer_tagger):
    kept, dropped = filter_geo_entities([_record(CHILE_CLUE)], gazetteer_tagger)
    assert dropped == []
    assert kept[0].entities == ("Chile",)


def test_no_place_clue_dropped(gazetteer_tagger):
    kept, dropped = filter_geo_entities([_record("the sky is blue")], gazetteer_tagger)
    assert kept == []
    assert dropped[0][1] == "no-entity"


def test_twenty_clue_partition_matches_substring_oracle(gazetteer_tagger):
    gazetteer = load_gazetteer()
    place_names = {e.city for e in gazetteer.entries} | {e.country for e in gazetteer.entries}
    rng = random.Random(4)
    placeful = [
        f"style {k}: typical for {name}"
        for k, name in enumerate(rng.sample(sorted(place_names), 12))
    ]
    placeless = [
        "red rooftops everywhere",
        "very wide roads",
        "the sky is blue",
        "overhead wires and small cars",
        "gravel shoulder with no markings",
        "mountains in the distance",
        "dense fog on the hills",
        "bollards painted white",
    ]
    records = [
        _record(text, rid=f"r{k}") for k, text in enumerate(placeful + placeless)
    ]
    kept, dropped = filter_geo_entities(records, gazetteer_tagger)

    def oracle_has_place(text: str) -> bool:
        lowered = text.lower()
        return any(name.lower() in lowered for name in place_names)

    expected_kept = {r.id for r in records if oracle_has_place(r.text)}
    assert {r.id for r in kept} == expected_kept
    assert {r.id for r, _ in dropped} == {r.id for r in records} - expected_kept


def test_kept_entities_appear_verbatim_in_text(gazetteer_tagger):
    records = [
        _record("Terracotta roofs are common in central chile", rid="a"),
        _record("The COMFORT taxi is typical for Singapore streets", rid="b", country="Singapore"),
        _record("NYC-style fire escapes", rid="c", country="United States"),
    ]
    kept, _ = filter_geo_entities(records, gazetteer_tagger)
    assert len(kept) == 3
    for record in kept:
        assert record.entities
        for entity in record.entities:
            assert entity in record.text


def test_tagger_unavailable_routes_to_dropped():
    class AlwaysDown:
        def tag(self, text):
            raise TaggerUnavailableError("down")

    kept, dropped = filter_geo_entities([_record(CHILE_CLUE)], AlwaysDown(), max_retries=1)
    assert kept == []
    assert dropped[0][1] == "tagger-unavailable"


def test_endpoint_tagger_against_mock(mock_server):
    script = {
        "tag": {
            "by_text": {
                CHILE_CLUE: {"entities": ["Chile"]},
                "flaky text": {"entities": ["Peru"], "fail_times": 1},
            },
            "default": {"entities": []},
        }
    }
    server = mock_server(script)
    tagger = EndpointTagger(server.base_url, max_retries=2, sleep=lambda s: None)
    assert tagger.tag(CHILE_CLUE) == ["Chile"]
    assert tagger.tag("flaky text") == ["Peru"]  # retried through one failure
    assert tagger.tag("nothing here") == []


def test_endpoint_tagger_gives_up_after_retries(mock_server):
    script = {"tag": {"default": {"entities": [], "fail_times": 99}}}
    server = mock_server(script)
    tagger = EndpointTagger(server.base_url, max_retries=1, sleep=lambda s: None)
    with pytest.raises(TaggerUnavailableError):
        tagger.tag("anything")


# --- stage-1 export ---------------------------------------------------------


def test_chile_record_exports_reasoning_example(tmp_path):
    path = tmp_path / "stage1.jsonl"
    report = export_reasoning_corpus([_record(CHILE_CLUE)], path)
    assert report.exported == 1
    example = json.loads(path.read_text(encoding="utf-8"))
    assert example["answer"]["country"] == "Chile"
    assert example["answer"]["reasons"] == CHILE_CLUE
    assert "country" in example["question"]
    assert "reasons" in example["question"]


def test_empty_input_exports_empty_file(tmp_path):
    path = tmp_path / "stage1.jsonl"
    report = export_reasoning_corpus([], path)
    assert report.exported == 0
    assert path.read_text(encoding="utf-8") == ""


def test_five_record_golden_export(tmp_path):
    records = [
        _record(CHILE_CLUE, rid="c1", image_ref="gsv/cl_001.jpg"),
        _record(
            "the ComfortDelGro taxi is a distinctive symbol of Singapore's public transportation system",
            country="Singapore", rid="c2", image_ref="gsv/sg_001.jpg",
        ),
        _record("kei trucks park on narrow Japan side streets", country="Japan", rid="c3", image_ref="gsv/jp_001.jpg"),
        _record("yellow license plates are used in the Netherlands", country="Netherlands", rid="c4", image_ref="gsv/nl_001.jpg"),
        _record("black-and-white curb paint is common across Brazil", country="Brazil", rid="c5", image_ref="gsv/br_001.jpg"),
    ]
    path = tmp_path / "stage1.jsonl"
    report = export_reasoning_corpus(records, path)
    assert report.exported == 5
    golden = open("tests/data/golden_stage1.jsonl", "rb").read()
    assert path.read_bytes() == golden


def test_stage1_skips_recorded_with_reason(tmp_path):
    records = [_record(CHILE_CLUE, rid="good"), _record("text", country="", rid="bad")]
    report = export_reasoning_corpus(records, tmp_path / "s1.jsonl")
    assert report.exported == 1
    assert report.skipped == [("bad", "missing country")]
    assert report.total == 2


# --- stage-2 export ---------------------------------------------------------


def test_stage2_example_has_both_fields_and_no_reasons(tmp_path):
    path = tmp_path / "stage2.jsonl"
    report = export_location_corpus([("img1", "Singapore", "Singapore")], path)
    assert report.exported == 1
    example = json.loads(path.read_text(encoding="utf-8"))
    assert example["answer"] == {"country": "Singapore", "city": "Singapore"}
    assert "reasons" not in example["answer"]
    assert "reasons" not in example["question"]


def test_stage2_missing_city_skipped(tmp_path):
    report = export_location_corpus([("img1", "Singapore", None)], tmp_path / "s2.jsonl")
    assert report.exported == 0
    assert report.skipped == [("img1", "missing city")]


def test_seventy_record_counts_match_join_oracle(tmp_path):
    rng = random.Random(8)
    rows = []
    for k in range(70):
        city = f"city{k}" if rng.random() > 0.3 else None
        rows.append((f"img{k:03d}", "Japan", city))
    report = export_location_corpus(rows, tmp_path / "s2.jsonl")
    expected_exported = sum(1 for _, _, city in rows if city)
    assert report.exported == expected_exported
    assert len(report.skipped) == 70 - expected_exported
    assert report.total == 70


# --- corpus invariants ------------------------------------------------------


def test_stage_discipline_on_mixed_corpora(tmp_path):
    records = [_record(CHILE_CLUE, rid="a"), _record("Singapore taxis", country="Singapore", rid="b")]
    stage1 = tmp_path / "s1.jsonl"
    stage2 = tmp_path / "s2.jsonl"
    export_reasoning_corpus(records, stage1)
    export_location_corpus([("img1", "Chile", "Santiago")], stage2)
    for line in stage1.read_text(encoding="utf-8").splitlines():
        answer = json.loads(line)["answer"]
        assert answer.get("reasons")
    for line in stage2.read_text(encoding="utf-8").splitlines():
        answer = json.loads(line)["answer"]
        assert "reasons" not in answer
        assert answer["country"] and answer["city"]


def test_reexport_is_idempotent(tmp_path, gazetteer_tagger):
    path = tmp_path / "clues.jsonl"
    path.write_text(
        _clue_line(CHILE_CLUE) + "\n" + _clue_line("the sky is blue", country="Chile") + "\n",
        encoding="utf-8",
    )
    outputs = []
    for run in range(2):
        records, _ = ingest_clues(path)
        kept, _ = filter_geo_entities(records, gazetteer_tagger)
        out = tmp_path / f"stage1_run{run}.jsonl"
        export_reasoning_corpus(kept, out)
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]
