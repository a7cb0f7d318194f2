"""Spherical-earth distance, bearing, and great-circle interpolation.

All functions model the Earth as a sphere of mean radius 6371.0088 km.
At the scales handled here (kilometre-level thresholds, multi-kilometre
sampling intervals) the difference from an ellipsoidal model is
negligible, and the sphere keeps every formula independently checkable.
"""

from __future__ import annotations

import math

MEAN_EARTH_RADIUS_KM = 6371.0088


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in kilometres between two WGS84 points.

    Symmetric, non-negative, and zero only for identical points on the
    sphere model.
    """
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlmb = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2.0) ** 2
    c = 2.0 * math.atan2(math.sqrt(a), math.sqrt(1.0 - a))
    return MEAN_EARTH_RADIUS_KM * c


def geodesic_distance(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Distance in kilometres between two (lat, lon) pairs."""
    return haversine_km(a[0], a[1], b[0], b[1])


def initial_bearing_deg(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Forward azimuth from point 1 to point 2, degrees in [0, 360)."""
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dlmb = math.radians(lon2 - lon1)
    x = math.sin(dlmb) * math.cos(phi2)
    y = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlmb)
    return (math.degrees(math.atan2(x, y)) + 360.0) % 360.0


def great_circle_point(
    lat1: float, lon1: float, lat2: float, lon2: float, fraction: float
) -> tuple[float, float]:
    """Point a given fraction of the way along the great circle 1 -> 2.

    fraction 0 returns point 1, fraction 1 returns point 2.  Antipodal
    endpoints have no unique great circle and are rejected.
    """
    phi1, lmb1 = math.radians(lat1), math.radians(lon1)
    phi2, lmb2 = math.radians(lat2), math.radians(lon2)
    delta = haversine_km(lat1, lon1, lat2, lon2) / MEAN_EARTH_RADIUS_KM
    if delta < 1e-12:
        return lat1, lon1
    sin_d = math.sin(delta)
    if sin_d < 1e-12:
        raise ValueError("antipodal endpoints: interpolation path is ambiguous")
    a = math.sin((1.0 - fraction) * delta) / sin_d
    b = math.sin(fraction * delta) / sin_d
    x = a * math.cos(phi1) * math.cos(lmb1) + b * math.cos(phi2) * math.cos(lmb2)
    y = a * math.cos(phi1) * math.sin(lmb1) + b * math.cos(phi2) * math.sin(lmb2)
    z = a * math.sin(phi1) + b * math.sin(phi2)
    lat = math.atan2(z, math.sqrt(x * x + y * y))
    lon = math.atan2(y, x)
    return math.degrees(lat), math.degrees(lon)


def valid_coordinate(lat: float, lon: float) -> bool:
    """True iff (lat, lon) is a finite WGS84 coordinate."""
    return (
        math.isfinite(lat)
        and math.isfinite(lon)
        and -90.0 <= lat <= 90.0
        and -180.0 <= lon <= 180.0
    )
