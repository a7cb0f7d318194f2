"""Road-network ingestion from GeoJSON-style feature collections.

Only WGS84 line geometries are consumed.  LineString features become one
polyline each, MultiLineString features are flattened into one polyline
per part, and everything else is skipped (counted, never fatal — real
OSM extracts are mixed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EmptyNetworkError, ParseError
from .geodesy import valid_coordinate


@dataclass(frozen=True)
class Polyline:
    """An ordered run of (lat, lon) vertices with optional place tags."""

    id: str
    vertices: tuple[tuple[float, float], ...]
    city: str | None = None
    country: str | None = None


@dataclass
class RoadNetwork:
    source: str
    polylines: list[Polyline] = field(default_factory=list)
    skipped: int = 0  # features or parts that yielded no polyline

    def total_vertices(self) -> int:
        return sum(len(p.vertices) for p in self.polylines)


def _dedupe(points: list[tuple[float, float]]) -> tuple[tuple[float, float], ...]:
    out: list[tuple[float, float]] = []
    for pt in points:
        if not out or out[-1] != pt:
            out.append(pt)
    return tuple(out)


def _to_latlon(coords: list, where: str) -> list[tuple[float, float]]:
    points = []
    for pair in coords:
        if not isinstance(pair, (list, tuple)) or len(pair) < 2:
            raise ParseError(f"{where}: coordinate is not a [lon, lat] pair")
        lon, lat = float(pair[0]), float(pair[1])
        if not valid_coordinate(lat, lon):
            raise ParseError(f"{where}: coordinate ({lat}, {lon}) outside WGS84 range")
        points.append((lat, lon))
    return points


def parse_road_network(path: str | Path) -> RoadNetwork:
    """Load a feature collection of line geometries into a RoadNetwork.

    Raises ParseError with line/character position for malformed JSON and
    EmptyNetworkError when no usable line geometry is present.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"{path}: malformed document at line {exc.lineno}, column {exc.colno} "
            f"(char {exc.pos}): {exc.msg}"
        ) from None

    if not isinstance(doc, dict) or not isinstance(doc.get("features"), list):
        raise ParseError(f"{path}: expected a FeatureCollection with a 'features' list")

    network = RoadNetwork(source=str(path))
    for index, feature in enumerate(doc["features"]):
        geometry = feature.get("geometry") if isinstance(feature, dict) else None
        if not isinstance(geometry, dict):
            network.skipped += 1
            continue
        props = feature.get("properties") or {}
        fid = str(feature.get("id") or props.get("id") or f"f{index}")
        city = props.get("city")
        country = props.get("country")
        gtype = geometry.get("type")
        where = f"{path}: feature {index} ({fid})"

        if gtype == "LineString":
            parts = [geometry.get("coordinates") or []]
            part_ids = [fid]
        elif gtype == "MultiLineString":
            parts = geometry.get("coordinates") or []
            part_ids = [f"{fid}.{j}" for j in range(len(parts))]
        else:
            network.skipped += 1
            continue

        for part_id, part in zip(part_ids, parts):
            vertices = _dedupe(_to_latlon(part, where))
            if len(vertices) < 2:
                network.skipped += 1
                continue
            network.polylines.append(
                Polyline(id=part_id, vertices=vertices, city=city, country=country)
            )

    if not network.polylines:
        raise EmptyNetworkError(f"{path}: no line geometries found")
    return network
