from __future__ import annotations

import json

import pytest

from streetscope.errors import EmptyNetworkError, ParseError
from streetscope.roads import parse_road_network


def _write(tmp_path, doc) -> str:
    path = tmp_path / "roads.geojson"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def _line_feature(coords, fid="w1", props=None):
    return {
        "type": "Feature",
        "id": fid,
        "properties": props or {},
        "geometry": {"type": "LineString", "coordinates": coords},
    }


def test_minimal_two_vertex_line(tmp_path):
    doc = {"type": "FeatureCollection", "features": [_line_feature([[8.5, 47.3], [8.6, 47.4]])]}
    network = parse_road_network(_write(tmp_path, doc))
    assert len(network.polylines) == 1
    assert network.polylines[0].vertices == ((47.3, 8.5), (47.4, 8.6))
    assert network.skipped == 0


def test_multiline_flattens_to_one_polyline_per_part(tmp_path):
    doc = {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "id": "m1",
                "properties": {},
                "geometry": {
                    "type": "MultiLineString",
                    "coordinates": [
                        [[0.0, 0.0], [0.1, 0.0]],
                        [[0.2, 0.0], [0.3, 0.0]],
                        [[0.4, 0.0], [0.5, 0.0]],
                    ],
                },
            }
        ],
    }
    network = parse_road_network(_write(tmp_path, doc))
    assert len(network.polylines) == 3
    assert [p.id for p in network.polylines] == ["m1.0", "m1.1", "m1.2"]


def test_mixed_fixture_counts():
    # 12 features: 9 LineStrings, 3 Points (counted by an independent script
    # when the fixture was generated).
    network = parse_road_network("tests/data/roads_mixed.geojson")
    assert len(network.polylines) == 9
    assert network.skipped == 3
    assert network.total_vertices() == 26
    assert all(p.city == "Zurich" for p in network.polylines)


def test_malformed_json_reports_position(tmp_path):
    path = tmp_path / "bad.geojson"
    path.write_text('{"type": "FeatureCollection", "features": [oops', encoding="utf-8")
    with pytest.raises(ParseError, match=r"line 1, column 44"):
        parse_road_network(path)


def test_zero_line_geometries_is_an_error(tmp_path):
    doc = {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "properties": {},
                "geometry": {"type": "Point", "coordinates": [1.0, 2.0]},
            }
        ],
    }
    with pytest.raises(EmptyNetworkError):
        parse_road_network(_write(tmp_path, doc))


def test_out_of_range_coordinate_is_a_parse_error(tmp_path):
    doc = {"type": "FeatureCollection", "features": [_line_feature([[181.0, 0.0], [0.0, 0.0]])]}
    with pytest.raises(ParseError, match="outside WGS84"):
        parse_road_network(_write(tmp_path, doc))


def test_consecutive_duplicate_vertices_are_collapsed(tmp_path):
    doc = {
        "type": "FeatureCollection",
        "features": [_line_feature([[8.5, 47.3], [8.5, 47.3], [8.6, 47.4]])],
    }
    network = parse_road_network(_write(tmp_path, doc))
    assert network.polylines[0].vertices == ((47.3, 8.5), (47.4, 8.6))


def test_degenerate_line_is_skipped_not_fatal(tmp_path):
    doc = {
        "type": "FeatureCollection",
        "features": [
            _line_feature([[8.5, 47.3], [8.5, 47.3]], fid="dup"),
            _line_feature([[8.5, 47.3], [8.6, 47.4]], fid="ok"),
        ],
    }
    network = parse_road_network(_write(tmp_path, doc))
    assert [p.id for p in network.polylines] == ["ok"]
    assert network.skipped == 1
