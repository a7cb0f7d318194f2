from __future__ import annotations

import csv
from importlib import resources

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streetscope.errors import ValidationError
from streetscope.gazetteer import (
    Gazetteer,
    GazetteerEntry,
    geocode_city,
    load_gazetteer,
    normalize_place_name,
)


def _shipped_rows() -> dict[tuple[str, str], dict]:
    with resources.files("streetscope.data").joinpath("gazetteer.csv").open() as fh:
        return {(row["city"], row["country"]): row for row in csv.DictReader(fh)}


def test_normalize_trims_and_folds_case():
    assert normalize_place_name("  Singapore ") == "singapore"
    assert normalize_place_name("LHASA") == "lhasa"
    assert normalize_place_name("new\t york") == "new york"


def test_normalize_strips_diacritics():
    assert normalize_place_name("São Paulo") == "sao paulo"
    assert normalize_place_name("Zürich") == "zurich"
    assert normalize_place_name("Bogotá") == "bogota"


def test_normalize_applies_shipped_alias_table():
    assert normalize_place_name("USA") == "united states"
    assert normalize_place_name("NYC") == "new york"
    assert normalize_place_name("U.K.") == "united kingdom"


@given(st.text(max_size=40))
@settings(max_examples=200, deadline=None)
def test_normalize_is_idempotent(s):
    once = normalize_place_name(s)
    assert normalize_place_name(once) == once


def test_lookup_with_country_hint_reads_shipped_coordinates():
    rows = _shipped_rows()
    gazetteer = load_gazetteer()
    paris_fr = rows[("Paris", "France")]
    point = geocode_city("Paris", "France", gazetteer)
    assert point == (float(paris_fr["lat"]), float(paris_fr["lon"]))


def test_hint_selects_the_smaller_namesake():
    gazetteer = load_gazetteer()
    texan = gazetteer.lookup("Paris", "USA")
    assert texan.country == "United States"
    canadian = gazetteer.lookup("London", "Canada")
    assert canadian.country == "Canada"


def test_without_hint_population_wins():
    gazetteer = load_gazetteer()
    assert gazetteer.lookup("Paris").country == "France"
    assert gazetteer.lookup("London").country == "United Kingdom"
    assert gazetteer.lookup("San Jose").country == "United States"


def test_alias_lookup_resolves_to_new_york():
    rows = _shipped_rows()
    gazetteer = load_gazetteer()
    ny = rows[("New York", "United States")]
    assert geocode_city("NYC", None, gazetteer) == (float(ny["lat"]), float(ny["lon"]))


def test_unknown_city_returns_none():
    gazetteer = load_gazetteer()
    assert gazetteer.lookup("Atlantis") is None
    assert geocode_city("Atlantis", "Greece", gazetteer) is None


def test_unmatched_hint_falls_back_to_population_rule():
    gazetteer = load_gazetteer()
    assert gazetteer.lookup("Paris", "Wakanda").country == "France"


def test_ambiguous_alias_resolved_by_population_then_country():
    entries = [
        GazetteerEntry("Alpha", "Bolivia", 1.0, 1.0, population=100, aliases=("twin",)),
        GazetteerEntry("Beta", "Chad", 2.0, 2.0, population=900, aliases=("twin",)),
        GazetteerEntry("Gamma", "Austria", 3.0, 3.0, population=900, aliases=("other",)),
        GazetteerEntry("Delta", "Benin", 4.0, 4.0, population=900, aliases=("other",)),
    ]
    gazetteer = Gazetteer(entries)
    assert gazetteer.lookup("twin").city == "Beta"  # higher population
    assert gazetteer.lookup("other").city == "Gamma"  # tie -> lexicographic country


def test_duplicate_city_country_rejected():
    entries = [
        GazetteerEntry("Alpha", "Bolivia", 1.0, 1.0),
        GazetteerEntry("alpha", "BOLIVIA", 2.0, 2.0),
    ]
    with pytest.raises(ValidationError, match="duplicate"):
        Gazetteer(entries)


def test_lookup_is_deterministic():
    gazetteer = load_gazetteer()
    first = [gazetteer.lookup(name) for name in ("Paris", "London", "San Jose", "NYC")]
    second = [gazetteer.lookup(name) for name in ("Paris", "London", "San Jose", "NYC")]
    assert first == second


def test_custom_csv_round_trip(tmp_path):
    path = tmp_path / "mini.csv"
    path.write_text(
        "city,country,lat,lon,population,aliases\n"
        "Testville,Nowhere,10.5,-20.25,1234,tv|t-ville\n",
        encoding="utf-8",
    )
    gazetteer = load_gazetteer(path)
    assert len(gazetteer) == 1
    assert gazetteer.lookup("t-ville").city == "Testville"
