"""streetscope: street-view locatability curation and geo-localization evaluation."""

from .errors import StreetscopeError
from .geodesy import geodesic_distance, haversine_km
from .locatability import (
    LocatabilityWeights,
    SegmentationProfile,
    build_weights,
    filter_by_locatability,
    locatability_score,
)
from .sampling import GeoSample, sample_points, select_views

__version__ = "0.1.0"

__all__ = [
    "StreetscopeError",
    "geodesic_distance",
    "haversine_km",
    "LocatabilityWeights",
    "SegmentationProfile",
    "build_weights",
    "filter_by_locatability",
    "locatability_score",
    "GeoSample",
    "sample_points",
    "select_views",
    "__version__",
]
