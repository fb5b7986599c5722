"""Great-circle distance and the city lookup table used for location anonymization."""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .errors import SchemaError

EARTH_RADIUS_KM = 6371.0


def _coords(point) -> tuple[float, float]:
    if isinstance(point, Mapping):
        return float(point["lat"]), float(point["lon"])
    lat, lon = point
    return float(lat), float(lon)


def haversine_km(a, b) -> float:
    """Great-circle distance in kilometers between two (lat, lon) points."""
    lat1, lon1 = _coords(a)
    lat2, lon2 = _coords(b)
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlam = math.radians(lon2 - lon1)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


@dataclass(frozen=True)
class CityTable:
    """Named centroids; ``nearest`` resolves a point to its closest city."""

    entries: tuple[tuple[str, float, float], ...]

    def __len__(self) -> int:
        return len(self.entries)

    def nearest(self, point) -> str:
        if not self.entries:
            raise SchemaError("city table is empty")
        lat, lon = _coords(point)
        # Ties resolve to the lexicographically smallest city name.
        best = min(self.entries, key=lambda e: (haversine_km((lat, lon), (e[1], e[2])), e[0]))
        return best[0]

    @classmethod
    def from_rows(cls, rows: Iterable) -> "CityTable":
        entries: list[tuple[str, float, float]] = []
        seen: set[str] = set()
        for row in rows:
            name, lat, lon = row[0], float(row[1]), float(row[2])
            if not isinstance(name, str) or not name:
                raise SchemaError("city name must be a nonempty string")
            if name in seen:
                raise SchemaError(f"duplicate city name {name!r}")
            if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
                raise SchemaError(f"city {name!r} has out-of-range coordinates")
            seen.add(name)
            entries.append((name, lat, lon))
        return cls(entries=tuple(entries))

    @classmethod
    def from_file(cls, path: str | Path) -> "CityTable":
        rows = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise SchemaError(f"malformed city table line: {line!r}")
            rows.append(parts)
        return cls.from_rows(rows)


def default_city_table() -> CityTable:
    """The Nordic city table bundled with the package."""
    text = resources.files("iothub").joinpath("data/cities.tsv").read_text(encoding="utf-8")
    rows = [line.split("\t") for line in text.splitlines() if line.strip() and not line.startswith("#")]
    return CityTable.from_rows(rows)
