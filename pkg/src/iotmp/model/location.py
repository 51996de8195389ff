"""Semantic locations: a path through a geographic containment hierarchy
plus the representative coordinates of the finest region."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class SemanticLocation:
    """Ordered region path, coarsest first, e.g. country -> ... -> building.

    ``lat``/``lon`` are the representative point of the last path element.
    Whether the path is actually valid in a loaded hierarchy is checked by
    the privacy layer; this type only enforces shape.
    """

    path: tuple
    lat: float
    lon: float

    def __post_init__(self):
        if not self.path:
            raise ValueError("location path must be nonempty")
        if not all(isinstance(p, str) and p for p in self.path):
            raise ValueError("location path elements must be nonempty strings")
        object.__setattr__(self, "path", tuple(self.path))
        object.__setattr__(self, "lat", float(self.lat))
        object.__setattr__(self, "lon", float(self.lon))

    @property
    def finest(self) -> str:
        return self.path[-1]

    def is_prefix_of(self, other: "SemanticLocation") -> bool:
        return other.path[: len(self.path)] == self.path

    def to_json(self) -> dict:
        return {"path": list(self.path), "lat": self.lat, "lon": self.lon}

    @classmethod
    def from_value(cls, value) -> "SemanticLocation":
        """Coerce a JSON-ish value: ``{"path": [...], "lat": .., "lon": ..}``."""
        if isinstance(value, SemanticLocation):
            return value
        if isinstance(value, dict):
            return cls(tuple(value["path"]), float(value["lat"]), float(value["lon"]))
        raise TypeError(f"cannot interpret {value!r} as a semantic location")
