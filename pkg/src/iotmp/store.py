"""Embedded management database: managed-thing records plus the reading,
alert, admission, profile, policy and app-registration tables.

An in-memory index backed by one JSON file. Writes go through the store's
lock so concurrent API/agent threads see record-level linearizable updates;
readings are append-only and kept in nondecreasing timestamp order.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from bisect import insort
from dataclasses import dataclass, field, replace

from iotmp.errors import UnknownMT
from iotmp.model.attributes import Reading
from iotmp.model.location import SemanticLocation

logger = logging.getLogger(__name__)

APPROVAL_PENDING = "pending"
APPROVAL_APPROVED = "approved"
APPROVAL_REVOKED = "revoked"

CONNECTED = "connected"
DISCONNECTED = "disconnected"


@dataclass
class ManagedThingRecord:
    """One row of the managed-things table; ``mtid`` is the primary key."""

    mtid: str
    agentid: str
    approval: str = APPROVAL_PENDING
    attributes: dict = field(default_factory=dict)  # management attributes
    loc: SemanticLocation | None = None             # fixed or latest mobile
    security_ref: str = ""
    connection: str = DISCONNECTED
    last_seen: float = 0.0
    created_at: float = 0.0

    def to_json(self) -> dict:
        return {
            "mtid": self.mtid,
            "agentid": self.agentid,
            "approval": self.approval,
            "attributes": {k: _jsonify(v) for k, v in self.attributes.items()},
            "loc": self.loc.to_json() if self.loc else None,
            "security_ref": self.security_ref,
            "connection": self.connection,
            "last_seen": self.last_seen,
            "created_at": self.created_at,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ManagedThingRecord":
        return cls(
            mtid=obj["mtid"],
            agentid=obj["agentid"],
            approval=obj["approval"],
            attributes={k: _unjsonify(v) for k, v in obj["attributes"].items()},
            loc=SemanticLocation.from_value(obj["loc"]) if obj.get("loc") else None,
            security_ref=obj.get("security_ref", ""),
            connection=obj.get("connection", DISCONNECTED),
            last_seen=obj.get("last_seen", 0.0),
            created_at=obj.get("created_at", 0.0),
        )


@dataclass
class ManagementStatus:
    """Connection/health snapshot for one MT."""

    battery: float | None
    link: str                 # "up" | "down"
    last_rtt: float | None    # milliseconds
    message_counters: dict    # frame kind -> count

    def to_json(self) -> dict:
        return {
            "battery": self.battery,
            "link": self.link,
            "last_rtt": self.last_rtt,
            "message_counters": dict(self.message_counters),
        }


class ManagerStore:
    """All manager-side state, with optional file persistence."""

    def __init__(self, path: str | None = None):
        self.path = path
        self.lock = threading.RLock()
        self.records: dict[str, ManagedThingRecord] = {}
        self.readings: dict[str, dict[str, list[Reading]]] = {}
        self.alerts: list[dict] = []
        self.admissions: dict[str, object] = {}
        self.profiles: dict[str, object] = {}
        self.policies: dict[str, list] = {}
        self.apps: dict[str, object] = {}
        self.counters: dict[str, dict[str, int]] = {}  # mtid -> kind -> count
        self._alert_keys: set[tuple] = set()
        if path and os.path.exists(path):
            self._load(path)

    # -- records ---------------------------------------------------------

    def record(self, mtid: str) -> ManagedThingRecord:
        rec = self.records.get(mtid)
        if rec is None:
            raise UnknownMT(mtid)
        return rec

    def put_record(self, rec: ManagedThingRecord) -> None:
        with self.lock:
            self.records[rec.mtid] = rec
            self.save()

    def update_record(self, mtid: str, **changes) -> ManagedThingRecord:
        with self.lock:
            rec = replace(self.record(mtid), **changes)
            self.records[mtid] = rec
            self.save()
            return rec

    def delete_record(self, mtid: str) -> None:
        with self.lock:
            self.record(mtid)
            del self.records[mtid]
            self.readings.pop(mtid, None)
            self.policies.pop(mtid, None)
            self.profiles.pop(mtid, None)
            self.counters.pop(mtid, None)
            self.save()

    # -- readings (append-only) -------------------------------------------

    def append_reading(self, mtid: str, reading: Reading) -> None:
        with self.lock:
            series = self.readings.setdefault(mtid, {}).setdefault(reading.name, [])
            if series and reading.ts < series[-1].ts:
                # agent clocks are monotonic per MT, so this is exceptional;
                # keep the nondecreasing order invariant regardless
                insort(series, reading, key=lambda r: r.ts)
            else:
                series.append(reading)
            self.save()

    def series(self, mtid: str, name: str) -> list[Reading]:
        self.record(mtid)
        return list(self.readings.get(mtid, {}).get(name, ()))

    def latest(self, mtid: str, name: str) -> Reading | None:
        series = self.readings.get(mtid, {}).get(name, ())
        return series[-1] if series else None

    def query_window(self, mtid: str, name: str, since=None, until=None) -> list[Reading]:
        out = []
        for r in self.series(mtid, name):
            if since is not None and r.ts < since:
                continue
            if until is not None and r.ts > until:
                continue
            out.append(r)
        return out

    def delete_readings(self, mtid: str, name: str, since=None, until=None) -> int:
        with self.lock:
            series = self.readings.get(mtid, {}).get(name)
            if not series:
                return 0
            keep = []
            for r in series:
                inside = (since is None or r.ts >= since) and (until is None or r.ts <= until)
                if not inside:
                    keep.append(r)
            removed = len(series) - len(keep)
            self.readings[mtid][name] = keep
            self.save()
            return removed

    def reading_names(self, mtid: str) -> list[str]:
        return sorted(self.readings.get(mtid, {}))

    def reading_count(self, mtid: str | None = None) -> int:
        if mtid is not None:
            return sum(len(s) for s in self.readings.get(mtid, {}).values())
        return sum(len(s) for per in self.readings.values() for s in per.values())

    # -- alerts (exactly-once by (mtid, seq)) ------------------------------

    def add_alert(self, mtid: str, seq: int, entries: list, received_at: float) -> bool:
        """Store an alert once; return False for a duplicate."""
        with self.lock:
            key = (mtid, seq)
            if key in self._alert_keys:
                return False
            self._alert_keys.add(key)
            self.alerts.append({
                "mtid": mtid,
                "seq": seq,
                "entries": [dict(e) for e in entries],
                "received_at": received_at,
            })
            self.save()
            return True

    def alerts_for(self, mtid: str | None = None) -> list[dict]:
        if mtid is None:
            return list(self.alerts)
        return [a for a in self.alerts if a["mtid"] == mtid]

    # -- counters ----------------------------------------------------------

    def bump_counter(self, mtid: str, kind: str) -> None:
        with self.lock:
            per = self.counters.setdefault(mtid, {})
            per[kind] = per.get(kind, 0) + 1

    # -- persistence -------------------------------------------------------

    def save(self) -> None:
        if not self.path:
            return
        with self.lock:
            payload = self.snapshot()
            tmp = self.path + ".tmp"
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, sort_keys=True)
            os.replace(tmp, self.path)

    def snapshot(self) -> dict:
        return {
            "records": {k: v.to_json() for k, v in self.records.items()},
            "readings": {
                mtid: {name: [r.to_json() for r in series] for name, series in per.items()}
                for mtid, per in self.readings.items()
            },
            "alerts": self.alerts,
            "admissions": {k: v.to_json() for k, v in self.admissions.items()},
            "profiles": {k: v.to_json() for k, v in self.profiles.items()},
            "policies": {k: [p.to_json() for p in ps] for k, ps in self.policies.items()},
            "apps": {k: v.to_json() for k, v in self.apps.items()},
            "counters": self.counters,
        }

    def _load(self, path: str) -> None:
        from iotmp.security import AgentAdmission, SecurityProfile
        from iotmp.privacy import DisclosurePolicy
        from iotmp.tokens import AppRegistration

        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        self.records = {k: ManagedThingRecord.from_json(v) for k, v in payload.get("records", {}).items()}
        self.readings = {
            mtid: {name: [Reading.from_json(r) for r in series] for name, series in per.items()}
            for mtid, per in payload.get("readings", {}).items()
        }
        self.alerts = payload.get("alerts", [])
        self._alert_keys = {(a["mtid"], a["seq"]) for a in self.alerts}
        self.admissions = {k: AgentAdmission.from_json(v) for k, v in payload.get("admissions", {}).items()}
        self.profiles = {k: SecurityProfile.from_json(v) for k, v in payload.get("profiles", {}).items()}
        self.policies = {
            k: [DisclosurePolicy.from_json(p) for p in ps] for k, ps in payload.get("policies", {}).items()
        }
        self.apps = {k: AppRegistration.from_json(v) for k, v in payload.get("apps", {}).items()}
        self.counters = payload.get("counters", {})
        logger.info("loaded store from %s: %d records", path, len(self.records))


def _jsonify(value):
    if isinstance(value, SemanticLocation):
        return value.to_json()
    return value


def _unjsonify(value):
    if isinstance(value, dict) and "path" in value:
        return SemanticLocation.from_value(value)
    return value
