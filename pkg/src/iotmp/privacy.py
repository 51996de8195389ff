"""Location disclosure control: geographic hierarchy, policies, obfuscation.

A manager never hands out an MT's location directly. The requester's
identity, the wall-clock (or simulated) time and the MT's current zone
are matched against operator-written disclosure policies; the winning
policy either denies or discloses at some obfuscation level. Level k
truncates k elements from the finest end of the location's hierarchy
path and substitutes the surviving region's representative point, so a
disclosed location is always a geographically truthful ancestor of the
real one. No policy matching at all means deny.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources

from iotmp.errors import (
    ConfigInvalid,
    LevelOutOfRange,
    PathNotInHierarchy,
    PolicyInvalid,
)
from iotmp.model import SemanticLocation

WILDCARD = "*"
DISCLOSE = "disclose"
DENY = "deny"

MINUTES_PER_DAY = 1440
WEEK_MINUTES = 7 * MINUTES_PER_DAY


# ---------------------------------------------------------------------------
# geographic hierarchy


@dataclass(frozen=True)
class Region:
    name: str
    lat: float
    lon: float
    parent: str | None
    children: tuple = ()
    # optional (lat0, lon0, lat1, lon1); when set, descendants' points must fall inside
    bbox: tuple | None = None


class GeoHierarchy:
    """Single-rooted tree of named regions, coarsest at the root.

    Region names must be unique across the whole tree; zone predicates and
    location paths refer to regions by bare name.
    """

    def __init__(self, regions: dict, root: str):
        self.regions = regions
        self.root = root
        self._paths = {}
        for name in regions:
            chain = []
            cur = name
            while cur is not None:
                chain.append(cur)
                cur = regions[cur].parent
            self._paths[name] = tuple(reversed(chain))

    @classmethod
    def from_json(cls, obj: dict) -> "GeoHierarchy":
        regions: dict = {}

        def walk(node, parent):
            if not isinstance(node, dict) or "name" not in node:
                raise ConfigInvalid("region node needs a name")
            name = str(node["name"])
            if not name:
                raise ConfigInvalid("empty region name")
            if name in regions:
                raise ConfigInvalid(f"duplicate region name {name!r}")
            try:
                lat, lon = float(node["lat"]), float(node["lon"])
            except (KeyError, TypeError, ValueError):
                raise ConfigInvalid(f"region {name!r} needs numeric lat/lon") from None
            bbox = node.get("bbox")
            if bbox is not None:
                bbox = tuple(float(x) for x in bbox)
                if len(bbox) != 4:
                    raise ConfigInvalid(f"region {name!r}: bbox must be [lat0, lon0, lat1, lon1]")
            kids = node.get("children", [])
            regions[name] = Region(name, lat, lon, parent,
                                   tuple(str(k["name"]) for k in kids), bbox)
            for kid in kids:
                walk(kid, name)

        walk(obj, None)
        h = cls(regions, str(obj["name"]))
        h._check_points()
        return h

    def _check_points(self):
        for name in self.regions:
            lat, lon = self.representative(name)
            for anc in self._paths[name][:-1]:
                bbox = self.regions[anc].bbox
                if bbox is None:
                    continue
                lat0, lon0, lat1, lon1 = bbox
                if not (lat0 <= lat <= lat1 and lon0 <= lon <= lon1):
                    raise ConfigInvalid(f"region {name!r} representative point outside {anc!r}")

    def to_json(self) -> dict:
        def emit(name):
            r = self.regions[name]
            node = {"name": r.name, "lat": r.lat, "lon": r.lon}
            if r.bbox is not None:
                node["bbox"] = list(r.bbox)
            if r.children:
                node["children"] = [emit(c) for c in r.children]
            return node

        return emit(self.root)

    def __contains__(self, name) -> bool:
        return name in self.regions

    def representative(self, name: str) -> tuple:
        r = self.regions[name]
        return (r.lat, r.lon)

    def path_of(self, name: str) -> tuple:
        if name not in self.regions:
            raise PathNotInHierarchy(name)
        return self._paths[name]

    def validate_path(self, path) -> None:
        """Path must start at the root and descend parent-to-child."""
        if not path or path[0] != self.root:
            raise PathNotInHierarchy(f"path does not start at {self.root!r}: {list(path)}")
        for parent, child in zip(path, path[1:]):
            if child not in self.regions or self.regions[child].parent != parent:
                raise PathNotInHierarchy(f"{child!r} is not a child of {parent!r}")

    def location_for(self, name: str) -> SemanticLocation:
        lat, lon = self.representative(name)
        return SemanticLocation(self.path_of(name), lat, lon)

    def leaves(self) -> list:
        return sorted(n for n, r in self.regions.items() if not r.children)

    def max_depth(self) -> int:
        return max(len(self._paths[n]) for n in self.leaves())


def synthetic_world(levels: int = 3, fanout=6) -> GeoHierarchy:
    """Deterministic test world: k-d style bbox subdivision, centre points.

    ``fanout`` is an int or one entry per non-root level. Region names are
    the parent name plus a child index, root is "w".
    """
    if levels < 1:
        raise ConfigInvalid("levels must be >= 1")
    fanouts = [fanout] * (levels - 1) if isinstance(fanout, int) else list(fanout)
    if len(fanouts) != levels - 1:
        raise ConfigInvalid(f"need {levels - 1} fanout entries, got {len(fanouts)}")

    def build(name, bbox, depth):
        lat0, lon0, lat1, lon1 = bbox
        node = {
            "name": name,
            "lat": (lat0 + lat1) / 2,
            "lon": (lon0 + lon1) / 2,
            "bbox": list(bbox),
        }
        if depth < levels - 1:
            n = fanouts[depth]
            kids = []
            for i in range(n):
                # alternate split axis by depth so cells stay roughly square
                if depth % 2 == 0:
                    sub = (lat0, lon0 + (lon1 - lon0) * i / n,
                           lat1, lon0 + (lon1 - lon0) * (i + 1) / n)
                else:
                    sub = (lat0 + (lat1 - lat0) * i / n, lon0,
                           lat0 + (lat1 - lat0) * (i + 1) / n, lon1)
                kids.append(build(f"{name}-{i}", sub, depth + 1))
            node["children"] = kids
        return node

    return GeoHierarchy.from_json(build("w", (-60.0, -180.0, 60.0, 180.0), 0))


def load_hierarchy(path: str) -> GeoHierarchy:
    with open(path, encoding="utf-8") as fh:
        return GeoHierarchy.from_json(json.load(fh))


def load_bundled_world() -> GeoHierarchy:
    text = resources.files("iotmp").joinpath("data/world3.json").read_text("utf-8")
    return GeoHierarchy.from_json(json.loads(text))


# ---------------------------------------------------------------------------
# policies


@dataclass(frozen=True)
class TimeWindow:
    """Weekly recurring window, half-open [start, end) minutes of day.

    Days use datetime.weekday() numbering: 0 = Monday. Windows never cross
    midnight; write two windows for that.
    """

    days: tuple
    start: int
    end: int

    def __post_init__(self):
        days = tuple(self.days)
        object.__setattr__(self, "days", days)
        if not days or any(not isinstance(d, int) or not 0 <= d <= 6 for d in days):
            raise PolicyInvalid(f"bad days {days!r}")
        if len(set(days)) != len(days):
            raise PolicyInvalid(f"repeated day in {days!r}")
        if not (isinstance(self.start, int) and isinstance(self.end, int)):
            raise PolicyInvalid("start/end must be integer minutes")
        if not (0 <= self.start < self.end <= MINUTES_PER_DAY):
            raise PolicyInvalid(f"bad window [{self.start}, {self.end})")

    def covers(self, weekday: int, minute: float) -> bool:
        return weekday in self.days and self.start <= minute < self.end

    def minutes(self) -> int:
        return len(self.days) * (self.end - self.start)

    def to_json(self) -> dict:
        return {"days": list(self.days), "start": self.start, "end": self.end}

    @classmethod
    def from_json(cls, obj: dict) -> "TimeWindow":
        return cls(tuple(obj["days"]), obj["start"], obj["end"])


@dataclass(frozen=True)
class DisclosurePolicy:
    policy_id: int
    mtid: str
    requester: str  # exact AppID or "*"
    windows: tuple = ()  # empty = always
    zone: str | None = None  # name the MT's path must contain
    action: str = DENY
    level: int = 0

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple(self.windows))
        if not isinstance(self.policy_id, int) or self.policy_id < 0:
            raise PolicyInvalid(f"bad policy id {self.policy_id!r}")
        if self.action not in (DISCLOSE, DENY):
            raise PolicyInvalid(f"bad action {self.action!r}")
        if not isinstance(self.level, int) or self.level < 0:
            raise PolicyInvalid(f"bad level {self.level!r}")

    def coverage(self) -> int:
        """Weekly minutes this policy is in force; ranking key for ties."""
        if not self.windows:
            return WEEK_MINUTES
        return sum(w.minutes() for w in self.windows)

    def applies(self, ctx: "RequestContext") -> bool:
        if self.mtid != ctx.mtid:
            return False
        if self.requester != WILDCARD and self.requester != ctx.requester:
            return False
        if self.windows:
            weekday, minute = _instant(ctx.time)
            if not any(w.covers(weekday, minute) for w in self.windows):
                return False
        if self.zone is not None:
            if ctx.mt_location is None or self.zone not in ctx.mt_location.path:
                return False
        return True

    def to_json(self) -> dict:
        return {
            "id": self.policy_id,
            "mtid": self.mtid,
            "requester": self.requester,
            "windows": [w.to_json() for w in self.windows],
            "zone": self.zone,
            "action": self.action,
            "level": self.level,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DisclosurePolicy":
        try:
            return cls(
                obj["id"],
                obj["mtid"],
                obj["requester"],
                tuple(TimeWindow.from_json(w) for w in obj.get("windows", ())),
                obj.get("zone"),
                obj.get("action", DENY),
                obj.get("level", 0),
            )
        except (KeyError, TypeError) as exc:
            raise PolicyInvalid(f"bad policy object: {exc}") from None


@dataclass(frozen=True)
class RequestContext:
    requester: str
    mtid: str
    time: float
    mt_location: SemanticLocation | None = None


@dataclass(frozen=True)
class Decision:
    action: str
    level: int = 0
    policy_id: int | None = None

    @property
    def disclose(self) -> bool:
        return self.action == DISCLOSE


def _instant(ts: float) -> tuple:
    """(weekday, fractional minute of day) of a Unix timestamp, UTC."""
    dt = datetime.fromtimestamp(ts, tz=timezone.utc)
    minute = dt.hour * 60 + dt.minute + (dt.second + dt.microsecond / 1e6) / 60.0
    return dt.weekday(), minute


def match_policy(ctx: RequestContext, policies) -> DisclosurePolicy | None:
    """Most specific applicable policy, or None.

    Specificity: exact requester beats wildcard, then the smaller weekly
    coverage, then the lowest policy id.
    """
    hits = [p for p in policies if p.applies(ctx)]
    if not hits:
        return None
    return min(hits, key=lambda p: (p.requester == WILDCARD, p.coverage(), p.policy_id))


def evaluate(ctx: RequestContext, policies) -> Decision:
    hit = match_policy(ctx, policies)
    if hit is None:
        return Decision(DENY)  # nothing matched: never disclose by accident
    if hit.action == DENY:
        return Decision(DENY, policy_id=hit.policy_id)
    return Decision(DISCLOSE, hit.level, hit.policy_id)


# ---------------------------------------------------------------------------
# obfuscation


def obfuscate(loc: SemanticLocation, level: int, h: GeoHierarchy) -> SemanticLocation:
    """Truncate `level` elements from the finest end of loc's path.

    The surviving region's representative point replaces the coordinates;
    level 0 returns loc unchanged, coordinates included.
    """
    if not isinstance(level, int) or isinstance(level, bool):
        raise LevelOutOfRange(f"level must be an integer, got {level!r}")
    if not 0 <= level <= len(loc.path) - 1:
        raise LevelOutOfRange(f"level {level} for path of length {len(loc.path)}")
    h.validate_path(loc.path)
    if level == 0:
        return loc
    path = loc.path[:len(loc.path) - level]
    lat, lon = h.representative(path[-1])
    return SemanticLocation(path, lat, lon)


def disclose_location(ctx: RequestContext, policies, h: GeoHierarchy) -> SemanticLocation | None:
    """Privacy verdict for one request: a (possibly coarsened) location or None.

    None means deny. The security gate must already have passed; a deny here
    still wins even though security approved.
    """
    decision = evaluate(ctx, policies)
    if not decision.disclose or ctx.mt_location is None:
        return None
    return obfuscate(ctx.mt_location, decision.level, h)


# ---------------------------------------------------------------------------
# policy-set validation (the edit path; matching itself tolerates ties)


def _windows_overlap(a, b) -> bool:
    wa = a or (TimeWindow(tuple(range(7)), 0, MINUTES_PER_DAY),)
    wb = b or (TimeWindow(tuple(range(7)), 0, MINUTES_PER_DAY),)
    for x in wa:
        for y in wb:
            if set(x.days) & set(y.days) and x.start < y.end and y.start < x.end:
                return True
    return False


def validate_policy_set(policies, h: GeoHierarchy | None = None) -> None:
    """Reject policy sets an operator should not be able to save.

    Duplicate ids, unknown zones, levels deeper than the hierarchy allows,
    and pairs that would tie: same mtid/requester/zone, equal coverage,
    overlapping windows. Ties are resolvable at match time (lowest id) but
    saving one is always an authoring mistake.
    """
    seen = set()
    plist = list(policies)
    for p in plist:
        if p.policy_id in seen:
            raise PolicyInvalid(f"duplicate policy id {p.policy_id}")
        seen.add(p.policy_id)
        if p.action == DISCLOSE and h is not None and p.level > h.max_depth() - 1:
            raise PolicyInvalid(
                f"policy {p.policy_id}: level {p.level} exceeds hierarchy depth "
                f"{h.max_depth()} - 1")
        if p.zone is not None and h is not None and p.zone not in h:
            raise PolicyInvalid(f"policy {p.policy_id}: unknown zone {p.zone!r}")
    for i, a in enumerate(plist):
        for b in plist[i + 1:]:
            if (a.mtid == b.mtid and a.requester == b.requester and a.zone == b.zone
                    and a.coverage() == b.coverage() and _windows_overlap(a.windows, b.windows)):
                raise PolicyInvalid(
                    f"policies {a.policy_id} and {b.policy_id} overlap at equal specificity")


def load_policies(path: str) -> list:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, list):
        raise PolicyInvalid("policy file must be a JSON list")
    return [DisclosurePolicy.from_json(p) for p in obj]
