"""Attribute vocabulary and descriptor validation.

Things are represented as two groups of named attributes: management
attributes describe the device (only ``ID`` is mandatory), behavioural
attributes hold sensed or actuated readings. Operators may define new
names as long as they do not shadow the built-in vocabulary.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from iotmp.errors import DuplicateAttributeName, MalformedValue, MissingID
from iotmp.model.identifiers import is_identifier
from iotmp.model.location import SemanticLocation

MANAGEMENT_NAMES = frozenset({
    "ID",
    "Name",
    "SerialNumber",
    "FirmwareVersion",
    "NetworkAddress",
    "BatteryLife",
    "FixedLocation",
    "Type",
    "Admin",
})

BEHAVIOURAL_NAMES = frozenset({
    "Temperature",
    "Motion",
    "Sound",
    "Pressure",
    "WaterDetection",
    "FireDetection",
    "MobileLocation",
})

BUILTIN_NAMES = MANAGEMENT_NAMES | BEHAVIOURAL_NAMES
_BUILTIN_LOWER = {n.lower(): n for n in BUILTIN_NAMES}
LOCATION_NAMES = frozenset({"FixedLocation", "MobileLocation"})

# Leading underscore is reserved for protocol-level body entries.
_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_-]{0,63}$")


@dataclass(frozen=True)
class ManagementAttribute:
    name: str
    value: object
    unit: str | None = None


@dataclass(frozen=True)
class Reading:
    """One behavioural sample; ``ts`` is milliseconds since the epoch."""

    name: str
    value: object
    ts: int
    src: str | None = None  # AppID when contributed via the API

    def to_json(self) -> dict:
        out = {"name": self.name, "value": _value_to_json(self.value), "ts": self.ts}
        if self.src is not None:
            out["src"] = self.src
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Reading":
        return cls(obj["name"], _value_from_json(obj["value"]), int(obj["ts"]), obj.get("src"))


@dataclass(frozen=True)
class ValidatedDescriptor:
    """Management attributes that passed :func:`validate_descriptor`."""

    attrs: dict = field(default_factory=dict)
    units: dict = field(default_factory=dict)

    @property
    def mtid(self) -> str:
        return self.attrs["ID"]

    def get(self, name: str, default=None):
        return self.attrs.get(name, default)


def check_attribute_name(name: str) -> str:
    """Legal attribute name: built-in, or operator-defined without shadowing
    a built-in name case-insensitively."""
    if not isinstance(name, str) or not _NAME_RE.match(name):
        raise MalformedValue(f"bad attribute name: {name!r}")
    canonical = _BUILTIN_LOWER.get(name.lower())
    if canonical is not None and canonical != name:
        raise MalformedValue(f"attribute name {name!r} collides with built-in {canonical!r}")
    return name


def check_attribute_value(name: str, value) -> object:
    """Accept scalars plus semantic locations for the two location names."""
    if name in LOCATION_NAMES:
        try:
            return SemanticLocation.from_value(value)
        except (TypeError, KeyError, ValueError) as exc:
            raise MalformedValue(f"{name}: {exc}") from None
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, str)):
        return value
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            raise MalformedValue(f"{name}: non-finite number")
        return value
    raise MalformedValue(f"{name}: unsupported value type {type(value).__name__}")


def validate_descriptor(attrs: list) -> ValidatedDescriptor:
    """Validate a list of management attributes into a descriptor.

    Accepts ``ManagementAttribute`` instances or ``(name, value)`` pairs.
    ``ID`` is the only mandatory entry; names must be unique; values must be
    well-typed. Validation is order-independent.
    """
    seen: dict[str, object] = {}
    units: dict[str, str] = {}
    for entry in attrs:
        if isinstance(entry, ManagementAttribute):
            name, value, unit = entry.name, entry.value, entry.unit
        elif isinstance(entry, (tuple, list)) and len(entry) == 2:
            (name, value), unit = entry, None
        elif isinstance(entry, dict) and "name" in entry:
            name, value, unit = entry["name"], entry.get("value"), entry.get("unit")
        else:
            raise MalformedValue(f"unrecognized attribute entry: {entry!r}")
        check_attribute_name(name)
        if name in seen:
            raise DuplicateAttributeName(name)
        seen[name] = check_attribute_value(name, value)
        if unit is not None:
            units[name] = str(unit)
    if "ID" not in seen:
        raise MissingID("descriptor has no ID attribute")
    if not is_identifier(seen["ID"]):
        raise MalformedValue(f"ID is not a legal identifier: {seen['ID']!r}")
    return ValidatedDescriptor(attrs=seen, units=units)


def _value_to_json(value):
    if isinstance(value, SemanticLocation):
        return value.to_json()
    return value


def _value_from_json(value):
    if isinstance(value, dict) and "path" in value:
        return SemanticLocation.from_value(value)
    return value
