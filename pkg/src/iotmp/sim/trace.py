"""Append-only run trace with a canonical digest.

Every externally visible step of a simulated run (frames, joins, HTTP
calls, decisions) lands here in order. Two runs are considered identical
exactly when their digests match, so detail payloads must contain only
JSON-stable values derived from simulated state, never wall-clock times
or object ids.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field


@dataclass(frozen=True)
class TraceEvent:
    t: float
    actor: str
    kind: str
    detail: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"t": self.t, "actor": self.actor, "kind": self.kind, "detail": self.detail}


class Trace:
    def __init__(self):
        self.events: list[TraceEvent] = []

    def emit(self, t: float, actor: str, event: str, **detail) -> None:
        self.events.append(TraceEvent(t, actor, event, detail))

    def __len__(self) -> int:
        return len(self.events)

    def of_kind(self, kind: str) -> list[TraceEvent]:
        return [e for e in self.events if e.kind == kind]

    def digest(self) -> str:
        h = hashlib.sha256()
        for event in self.events:
            line = json.dumps(event.to_json(), sort_keys=True, separators=(",", ":"))
            h.update(line.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()

    def dump(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for event in self.events:
                fh.write(json.dumps(event.to_json(), sort_keys=True, separators=(",", ":")))
                fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "Trace":
        trace = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                obj = json.loads(line)
                trace.events.append(TraceEvent(obj["t"], obj["actor"], obj["kind"], obj["detail"]))
        return trace
