"""Offline gazetteer: city-center coordinates and place-name normalization.

Ships a CSV of world cities (`data/gazetteer.csv`) and an alias table
(`data/aliases.json`).  Production users can swap in larger files with
the same schema: ``city,country,lat,lon,population,aliases`` where
aliases are ``|``-separated.
"""

from __future__ import annotations

import csv
import json
import re
import unicodedata
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ParseError, ValidationError
from .geodesy import valid_coordinate

_WHITESPACE_RE = re.compile(r"\s+")


def _fold(s: str) -> str:
    """Strip diacritics, case-fold, trim, and collapse whitespace.

    Order matters for idempotence: decomposition can emit whitespace and
    uppercase compatibility characters, so it runs before the case fold
    and the whitespace pass.
    """
    decomposed = unicodedata.normalize("NFKD", s)
    stripped = "".join(ch for ch in decomposed if not unicodedata.combining(ch))
    return _WHITESPACE_RE.sub(" ", stripped.casefold()).strip()


def _load_packaged_json(name: str) -> dict:
    with resources.files("streetscope.data").joinpath(name).open(encoding="utf-8") as fh:
        return json.load(fh)


_DEFAULT_ALIASES: dict[str, str] | None = None


def default_aliases() -> dict[str, str]:
    """The shipped alias table (folded surface form -> canonical token)."""
    global _DEFAULT_ALIASES
    if _DEFAULT_ALIASES is None:
        raw = _load_packaged_json("aliases.json")
        table = {_fold(k): _fold(v) for k, v in raw.items()}
        for key, value in table.items():
            if value in table and table[value] != value:
                raise ValidationError(f"alias table is not idempotent: {key!r} -> {value!r}")
        _DEFAULT_ALIASES = table
    return _DEFAULT_ALIASES


def normalize_place_name(s: str, aliases: dict[str, str] | None = None) -> str:
    """Canonical comparison token for a free-text place name.

    Folding runs first, then a single alias lookup, so the result is a
    fixed point: normalize(normalize(s)) == normalize(s).
    """
    table = default_aliases() if aliases is None else aliases
    folded = _fold(s)
    return table.get(folded, folded)


@dataclass(frozen=True)
class GazetteerEntry:
    city: str
    country: str
    lat: float
    lon: float
    population: int = 0
    aliases: tuple[str, ...] = ()


class Gazetteer:
    """Name-to-entry index with deterministic ambiguity resolution.

    A name (canonical or alias) may be claimed by several cities; lookups
    resolve by country hint first, then highest population, then
    lexicographic country order.
    """

    def __init__(self, entries: list[GazetteerEntry], aliases: dict[str, str] | None = None):
        self.entries = entries
        self._aliases = default_aliases() if aliases is None else aliases
        seen: set[tuple[str, str]] = set()
        self._index: dict[str, list[GazetteerEntry]] = {}
        for entry in entries:
            key = (normalize_place_name(entry.city, self._aliases), _fold(entry.country))
            if key in seen:
                raise ValidationError(f"duplicate gazetteer entry for {entry.city}, {entry.country}")
            seen.add(key)
            names = {normalize_place_name(entry.city, self._aliases)}
            names.update(normalize_place_name(a, self._aliases) for a in entry.aliases)
            for name in names:
                self._index.setdefault(name, []).append(entry)

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, name: str, country_hint: str | None = None) -> GazetteerEntry | None:
        """Resolve a city name to one entry, or None when unknown."""
        candidates = self._index.get(normalize_place_name(name, self._aliases))
        if not candidates:
            return None
        if country_hint:
            hint = normalize_place_name(country_hint, self._aliases)
            hinted = [e for e in candidates if normalize_place_name(e.country, self._aliases) == hint]
            if hinted:
                candidates = hinted
        return min(candidates, key=lambda e: (-e.population, e.country))


def geocode_city(
    name: str, country_hint: str | None, gazetteer: Gazetteer
) -> tuple[float, float] | None:
    """City-center coordinates for a predicted city name, or None."""
    entry = gazetteer.lookup(name, country_hint)
    return (entry.lat, entry.lon) if entry else None


def load_gazetteer(path: str | Path | None = None) -> Gazetteer:
    """Load a gazetteer CSV; defaults to the packaged world-cities file."""
    if path is None:
        with resources.files("streetscope.data").joinpath("gazetteer.csv").open(
            encoding="utf-8"
        ) as handle:
            return _parse_gazetteer_csv(handle, "packaged gazetteer.csv")
    with open(path, encoding="utf-8", newline="") as handle:
        return _parse_gazetteer_csv(handle, str(path))


def _parse_gazetteer_csv(handle, source: str) -> Gazetteer:
    reader = csv.DictReader(handle)
    required = {"city", "country", "lat", "lon", "population", "aliases"}
    if reader.fieldnames is None or not required.issubset(reader.fieldnames):
        raise ParseError(f"{source}: expected columns {sorted(required)}")
    entries = []
    for line_no, row in enumerate(reader, start=2):
        try:
            lat = float(row["lat"])
            lon = float(row["lon"])
            population = int(row["population"]) if row["population"] else 0
        except ValueError as exc:
            raise ParseError(f"{source}: line {line_no}: {exc}") from None
        if not valid_coordinate(lat, lon):
            raise ParseError(f"{source}: line {line_no}: coordinate out of range")
        aliases = tuple(a.strip() for a in row["aliases"].split("|") if a.strip())
        entries.append(
            GazetteerEntry(
                city=row["city"].strip(),
                country=row["country"].strip(),
                lat=lat,
                lon=lon,
                population=population,
                aliases=aliases,
            )
        )
    return Gazetteer(entries)
