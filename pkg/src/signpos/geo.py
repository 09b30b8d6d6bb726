"""Local Mercator conversion between GPS fixes and planar metres."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

R_EARTH = 6378137.0


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float
    alt: float = 0.0

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")
        if not math.isfinite(self.alt):
            raise ValueError("altitude must be finite")


@dataclass(frozen=True)
class MercatorRef:
    """Reference latitude fixing the ``cos(lat0)`` scale of the local projection."""

    lat0: float
    r_earth: float = R_EARTH

    def __post_init__(self):
        if not abs(self.lat0) < 85.0:
            raise ValueError(f"reference latitude {self.lat0} too close to a pole")
        if self.r_earth != R_EARTH:
            raise ValueError("r_earth is fixed at 6378137 m")

    @property
    def scale(self) -> float:
        return math.cos(math.pi * self.lat0 / 180.0) * self.r_earth


def latlon_to_xy(lat, lon, ref: MercatorRef) -> np.ndarray:
    """Vectorised forward projection; returns ``(..., 2)`` planar metres."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    x = ref.scale * np.pi * lon / 180.0
    # atanh(sin(lat)) == log(tan(pi (90 + lat) / 360)), without the rounding at lat = 0
    y = ref.scale * np.arctanh(np.sin(np.radians(lat)))
    return np.stack([x, y], axis=-1)


def xy_to_latlon(xy, ref: MercatorRef) -> tuple[np.ndarray, np.ndarray]:
    xy = np.asarray(xy, dtype=float)
    lon = 180.0 * xy[..., 0] / (np.pi * ref.scale)
    # atan(sinh(v)) == 2 atan(exp(v)) - pi/2
    lat = np.degrees(np.arctan(np.sinh(xy[..., 1] / ref.scale)))
    return lat, lon


def to_mercator(g: GeoPoint, ref: MercatorRef) -> np.ndarray:
    return latlon_to_xy(g.lat, g.lon, ref)


def from_mercator(p, ref: MercatorRef, alt: float = 0.0) -> GeoPoint:
    """Inverse of :func:`to_mercator`. ``p`` may carry a third (altitude) coordinate."""
    p = np.asarray(p, dtype=float)
    lat, lon = xy_to_latlon(p[:2], ref)
    if p.shape[0] > 2:
        alt = float(p[2])
    return GeoPoint(float(np.clip(lat, -90.0, 90.0)), float(lon), alt)
