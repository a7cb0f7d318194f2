"""Street-view sampling points along road networks.

Points are placed per polyline at fixed geodesic arc-length intervals
(default 4000 m), each carrying the local road bearing and the four
camera headings (front/back/left/right).  Two of the four views are then
selected per point: one of {left, right} and one of {front, back}, drawn
uniformly and reproducibly from (sample id, seed).
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ValidationError
from .geodesy import great_circle_point, haversine_km, initial_bearing_deg
from .roads import RoadNetwork

# Arc-length slack (metres) when deciding whether an interval multiple
# still fits on the polyline; absorbs float drift in cumulative sums.
_ARC_EPS_M = 1e-6

SIDE_VIEWS = ("left", "right")
AXIS_VIEWS = ("front", "back")


@dataclass(frozen=True)
class GeoSample:
    """One sampling point: position, headings, and the chosen view pair."""

    id: str
    position: tuple[float, float]
    road_bearing: float
    headings: dict[str, float]
    source_polyline: str
    arc_offset_m: float
    selected_views: tuple[str, str] | None = None  # (x in SIDE_VIEWS, y in AXIS_VIEWS)


def headings_from_bearing(bearing: float) -> dict[str, float]:
    """Four camera headings implied by a forward road bearing."""
    front = bearing % 360.0
    return {
        "front": front,
        "back": (front + 180.0) % 360.0,
        "left": (front + 270.0) % 360.0,
        "right": (front + 90.0) % 360.0,
    }


def _segment_lengths_m(vertices: tuple[tuple[float, float], ...]) -> list[float]:
    return [
        haversine_km(*vertices[i], *vertices[i + 1]) * 1000.0
        for i in range(len(vertices) - 1)
    ]


def _point_at_offset(
    vertices: tuple[tuple[float, float], ...],
    cumulative: list[float],
    lengths: list[float],
    offset_m: float,
) -> tuple[tuple[float, float], float]:
    """Position and forward bearing at an arc offset along the polyline.

    The bearing is that of the segment containing the offset; an offset
    landing exactly on an interior vertex belongs to the outgoing segment,
    and the polyline end belongs to the final segment.
    """
    total = cumulative[-1]
    offset_m = min(max(offset_m, 0.0), total)
    seg = len(lengths) - 1
    for i in range(len(lengths)):
        if offset_m < cumulative[i + 1] - _ARC_EPS_M:
            seg = i
            break
    a = vertices[seg]
    b = vertices[seg + 1]
    seg_len = lengths[seg]
    fraction = 0.0 if seg_len <= 0 else (offset_m - cumulative[seg]) / seg_len
    fraction = min(max(fraction, 0.0), 1.0)
    position = great_circle_point(a[0], a[1], b[0], b[1], fraction)
    bearing = initial_bearing_deg(a[0], a[1], b[0], b[1])
    return position, bearing


def sample_points(network: RoadNetwork, interval_m: float = 4000.0) -> list[GeoSample]:
    """Emit samples at arc offsets 0, interval, 2*interval, ... per polyline.

    The start vertex is always included.  The end vertex is additionally
    emitted when it lies at least interval/2 beyond the last emitted
    sample, so trailing stubs are kept without creating near-duplicates.
    An empty network yields an empty list.
    """
    if interval_m <= 0:
        raise ValidationError(f"interval_m must be > 0, got {interval_m}")

    samples: list[GeoSample] = []
    for polyline in network.polylines:
        lengths = _segment_lengths_m(polyline.vertices)
        cumulative = [0.0]
        for seg_len in lengths:
            cumulative.append(cumulative[-1] + seg_len)
        total = cumulative[-1]

        offsets: list[float] = []
        k = 0
        while k * interval_m <= total + _ARC_EPS_M:
            offsets.append(min(k * interval_m, total))
            k += 1
        if total - offsets[-1] >= interval_m / 2.0:
            offsets.append(total)

        for ordinal, offset in enumerate(offsets):
            position, bearing = _point_at_offset(
                polyline.vertices, cumulative, lengths, offset
            )
            samples.append(
                GeoSample(
                    id=f"{polyline.id}:{ordinal}",
                    position=position,
                    road_bearing=bearing,
                    headings=headings_from_bearing(bearing),
                    source_polyline=polyline.id,
                    arc_offset_m=offset,
                )
            )

    # Parallel callers over disjoint polylines must not change the output
    # ordering, so the contract is a sort, not insertion order.
    samples.sort(key=lambda s: (s.source_polyline, s.arc_offset_m))
    return samples


def select_views(sample: GeoSample, seed: int) -> GeoSample:
    """Pick one side view and one axis view, reproducibly.

    The draw is a pure function of (sample.id, seed): string seeding uses
    a stable hash, so the same pair is selected across runs and platforms.
    """
    if not sample.headings:
        raise ValidationError(f"sample {sample.id} has no headings")
    rng = random.Random(f"{sample.id}|{seed}")
    x = rng.choice(SIDE_VIEWS)
    y = rng.choice(AXIS_VIEWS)
    return replace(sample, selected_views=(x, y))


CSV_HEADER = [
    "id",
    "lat",
    "lon",
    "road_bearing",
    "front",
    "back",
    "left",
    "right",
    "view_x",
    "view_y",
    "source_polyline",
    "arc_offset_m",
]


def _f7(value: float) -> str:
    return f"{value:.7f}"


def _f7_heading(value: float) -> str:
    # A heading of 359.99999996+ rounds to "360.0000000" at 7 decimals,
    # which would re-parse outside [0, 360); fold it back to 0.
    text = f"{value % 360.0:.7f}"
    return "0.0000000" if text == "360.0000000" else text


def export_samples_csv(samples: list[GeoSample], path: str | Path) -> None:
    """Write samples as CSV: fixed header, 7-decimal floats, LF endings."""
    path = Path(path)
    rows = sorted(samples, key=lambda s: (s.source_polyline, s.arc_offset_m))
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for s in rows:
            x, y = s.selected_views if s.selected_views else ("", "")
            writer.writerow(
                [
                    s.id,
                    _f7(s.position[0]),
                    _f7(s.position[1]),
                    _f7_heading(s.road_bearing),
                    _f7_heading(s.headings["front"]),
                    _f7_heading(s.headings["back"]),
                    _f7_heading(s.headings["left"]),
                    _f7_heading(s.headings["right"]),
                    x,
                    y,
                    s.source_polyline,
                    _f7(s.arc_offset_m),
                ]
            )


def read_samples_csv(path: str | Path) -> list[GeoSample]:
    """Parse a CSV produced by export_samples_csv back into GeoSamples."""
    samples = []
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != CSV_HEADER:
            raise ValidationError(f"{path}: unexpected sample CSV header {reader.fieldnames}")
        for row in reader:
            selected = (row["view_x"], row["view_y"]) if row["view_x"] and row["view_y"] else None
            samples.append(
                GeoSample(
                    id=row["id"],
                    position=(float(row["lat"]), float(row["lon"])),
                    road_bearing=float(row["road_bearing"]),
                    headings={
                        "front": float(row["front"]),
                        "back": float(row["back"]),
                        "left": float(row["left"]),
                        "right": float(row["right"]),
                    },
                    source_polyline=row["source_polyline"],
                    arc_offset_m=float(row["arc_offset_m"]),
                    selected_views=selected,
                )
            )
    return samples
