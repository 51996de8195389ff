"""Token-authenticated REST surface of one manager.

Transport-neutral: the simulated HTTP fabric and the live listener both
construct an :class:`ApiRequest` and hand it to ``Api.handle``, which
returns an :class:`ApiResponse`. Every data read runs the same gate
pipeline in order: token, then the security profile (channel + authorized
entities), then the disclosure policy for location values, then the store.
A request that fails a gate never touches later stages, and locations only
ever leave through the disclosure gate, whatever the caller's role.

Routes (segments after the host):

    GET    /                           health, no auth
    POST   /apps                       register an application
    POST   /tokens                     exchange appid+secret for a token
    GET    /hierarchy                  the public region tree
    GET    /mt                         metadata list            any token
    GET    /mt/{mtid}                  metadata for one MT      any token
    GET    /mt/{mtid}/{attr}           data read (gated)        any token
    POST   /mt/{mtid}/actuation        set an actuatable attr   any token
    POST   /mt/{mtid}/data             app-contributed reading  any token
    GET    /mt/{mtid}/status           link/battery/counters    management
    PUT    /mt/{mtid}/attributes       merge management attrs   management
    DELETE /mt/{mtid}                  forget the MT            management
    DELETE /mt/{mtid}/{attr}           drop stored readings     management
    GET    /alerts                     alert log                management
    GET    /agents/pending             admissions awaiting approval
    POST   /agents/{agentid}/approve   \\ management
    POST   /agents/{agentid}/revoke    /
    GET    /profiles/{mtid}            security profile         management
    PUT    /profiles/{mtid}
    GET    /policies/{mtid}            disclosure policies      management
    PUT    /policies/{mtid}            validated as a set, 422 on conflict

Data reads accept ``?live=1`` (device round trip), ``?since=&until=``
(stored window) and, only when the manager enables it, ``?at=`` to evaluate
the disclosure decision at another instant. Window responses reuse the
single decision made for the request; per-reading probing is not possible.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from iotmp.errors import (
    Forbidden,
    IotmpError,
    MalformedValue,
    NotFound,
    RoleForbidden,
    Unauthorized,
)
from iotmp.model.attributes import LOCATION_NAMES, check_attribute_name, check_attribute_value
from iotmp.model.location import SemanticLocation
from iotmp.privacy import DisclosurePolicy, RequestContext, disclose_location, validate_policy_set
from iotmp.security import SecurityProfile
from iotmp.tokens import ROLE_MGMT, ROLES

logger = logging.getLogger(__name__)

AUDIT_LIMIT = 1000

_CORS = {
    "access-control-allow-origin": "*",
    "access-control-allow-methods": "GET, POST, PUT, DELETE, OPTIONS",
    "access-control-allow-headers": "authorization, content-type, x-register-key",
}


@dataclass
class ApiRequest:
    method: str
    path: str
    query: dict = field(default_factory=dict)
    headers: dict = field(default_factory=dict)
    body: bytes = b""
    secure: bool = False

    def json(self):
        if not self.body:
            raise MalformedValue("request body is empty")
        try:
            obj = json.loads(self.body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedValue(f"request body is not JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise MalformedValue("request body must be a JSON object")
        return obj


@dataclass
class ApiResponse:
    status: int
    body: bytes = b""
    headers: dict = field(default_factory=dict)

    def json(self):
        return json.loads(self.body.decode("utf-8")) if self.body else None


def json_response(status: int, obj) -> ApiResponse:
    body = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    headers = {"content-type": "application/json", **_CORS}
    return ApiResponse(status, body, headers)


class Api:
    """Request pipeline bound to one manager."""

    def __init__(self, manager):
        self.m = manager

    def handle(self, req: ApiRequest) -> ApiResponse:
        try:
            return self._dispatch(req)
        except IotmpError as exc:
            return json_response(exc.http_status, {"error": exc.code, "detail": str(exc)})
        except Exception:
            logger.exception("unhandled API error for %s %s", req.method, req.path)
            return json_response(500, {"error": "InternalError", "detail": ""})

    # -- routing --------------------------------------------------------------

    def _dispatch(self, req: ApiRequest) -> ApiResponse:
        if req.method == "OPTIONS":
            return ApiResponse(204, b"", dict(_CORS))
        parts = tuple(p for p in req.path.split("/") if p)

        if parts == ():
            if req.method == "GET":
                return self._health()
        elif parts == ("apps",):
            if req.method == "POST":
                return self._register_app(req)
        elif parts == ("tokens",):
            if req.method == "POST":
                return self._mint_token(req)
        elif parts == ("hierarchy",):
            if req.method == "GET":
                return json_response(200, self.m.hierarchy.to_json())
        elif parts and parts[0] in ("mt", "alerts", "agents", "profiles", "policies"):
            claims = self._authenticate(req)
            return self._dispatch_authed(req, parts, claims)
        raise NotFound(f"{req.method} {req.path}")

    def _dispatch_authed(self, req, parts, claims) -> ApiResponse:
        m, n = req.method, len(parts)
        if parts[0] == "mt":
            if n == 1 and m == "GET":
                return self._list_mts()
            if n == 2:
                if m == "GET":
                    return self._mt_detail(parts[1])
                if m == "DELETE":
                    self._require_mgmt(claims)
                    self.m.store.record(parts[1])
                    self.m.store.delete_record(parts[1])
                    return json_response(200, {"deleted": parts[1]})
            if n == 3:
                mtid, tail = parts[1], parts[2]
                if tail == "status" and m == "GET":
                    self._require_mgmt(claims)
                    return json_response(200, self.m.mgmt_status(mtid).to_json())
                if tail == "actuation" and m == "POST":
                    return self._actuate(req, claims, mtid)
                if tail == "data" and m == "POST":
                    return self._contribute(req, claims, mtid)
                if tail == "attributes" and m == "PUT":
                    self._require_mgmt(claims)
                    return self._put_attributes(req, mtid)
                if m == "GET":
                    return self._read(req, claims, mtid, tail)
                if m == "DELETE":
                    self._require_mgmt(claims)
                    return self._delete_readings(req, mtid, tail)
        elif parts[0] == "alerts" and n == 1 and m == "GET":
            self._require_mgmt(claims)
            return json_response(200, {"alerts": self.m.store.alerts_for(req.query.get("mtid"))})
        elif parts[0] == "agents":
            if parts[1:] == ("pending",) and m == "GET":
                self._require_mgmt(claims)
                pending = [a.to_json() for a in self.m.sm.pending_agents()]
                return json_response(200, {"pending": pending})
            if n == 3 and m == "POST" and parts[2] in ("approve", "revoke"):
                self._require_mgmt(claims)
                action = self.m.approve_agent if parts[2] == "approve" else self.m.revoke_agent
                action(parts[1], claims.appid)
                return json_response(200, {"agentid": parts[1],
                                           "state": self.m.sm.admission_state(parts[1])})
        elif parts[0] == "profiles" and n == 2:
            self._require_mgmt(claims)
            if m == "GET":
                return json_response(200, self.m.sm.get_profile(parts[1]).to_json())
            if m == "PUT":
                return self._put_profile(req, parts[1])
        elif parts[0] == "policies" and n == 2:
            self._require_mgmt(claims)
            if m == "GET":
                policies = self.m.store.policies.get(parts[1], [])
                self.m.store.record(parts[1])
                return json_response(200, {"policies": [p.to_json() for p in policies]})
            if m == "PUT":
                return self._put_policies(req, parts[1])
        raise NotFound(f"{req.method} {req.path}")

    # -- public endpoints -------------------------------------------------------

    def _health(self) -> ApiResponse:
        return json_response(200, {
            "managerid": self.m.managerid,
            "mts": len(self.m.store.records),
            "time": self.m.rt.now(),
        })

    def _register_app(self, req: ApiRequest) -> ApiResponse:
        key = self.m.config.register_key
        if key is not None and req.headers.get("x-register-key") != key:
            raise Forbidden("app registration requires the operator key")
        obj = req.json()
        role = obj.get("role")
        if role not in ROLES:
            raise MalformedValue(f"role must be one of {sorted(ROLES)}")
        reg, secret = self.m.tokens.register_app(obj.get("appid"), role)
        # the only response that ever carries the secret
        return json_response(201, {"appid": reg.appid, "secret": secret, "role": reg.role})

    def _mint_token(self, req: ApiRequest) -> ApiResponse:
        obj = req.json()
        token = self.m.tokens.mint_token(str(obj.get("appid", "")),
                                         str(obj.get("secret", "")))
        claims = self.m.tokens.verify_token(token)
        return json_response(200, {"token": token, "exp": claims.exp, "role": claims.role})

    # -- authenticated endpoints ---------------------------------------------------

    def _list_mts(self) -> ApiResponse:
        out = []
        for mtid in sorted(self.m.store.records):
            rec = self.m.store.records[mtid]
            out.append({
                "mtid": mtid,
                "type": rec.attributes.get("Type"),
                "approval": rec.approval,
                "connection": rec.connection,
                "last_seen": rec.last_seen,
            })
        return json_response(200, {"mts": out})

    def _mt_detail(self, mtid: str) -> ApiResponse:
        rec = self.m.store.record(mtid)
        names = {k: v for k, v in rec.attributes.items() if k not in LOCATION_NAMES}
        return json_response(200, {
            "mtid": mtid,
            "agentid": rec.agentid,
            "approval": rec.approval,
            "connection": rec.connection,
            "last_seen": rec.last_seen,
            "attributes": names,  # locations are only served through the read gate
            "readings": self.m.store.reading_names(mtid),
        })

    def _read(self, req, claims, mtid: str, name: str) -> ApiResponse:
        self.m.store.record(mtid)
        self._sm_gate(req, claims, mtid)
        decision_time = self._decision_time(req)

        if req.query.get("live") in ("1", "true"):
            reading = self.m.get_live(mtid, name)
            value = self._pm_gate(req, claims, mtid, name, reading.value, decision_time)
            self._audit(req, claims, mtid, "store", "ok")
            return json_response(200, {"mtid": mtid, "name": name, "live": True,
                                       "value": _render(value), "ts": reading.ts})

        since, until = req.query.get("since"), req.query.get("until")
        if since is not None or until is not None:
            kind, readings = self.m.query_mt(mtid, name,
                                             _number(since, "since"), _number(until, "until"))
            out = []
            for r in readings:
                value = self._pm_gate(req, claims, mtid, name, r.value, decision_time)
                out.append({"value": _render(value), "ts": r.ts, "src": r.src})
            self._audit(req, claims, mtid, "store", "ok", n=len(out))
            return json_response(200, {"mtid": mtid, "name": name, "readings": out})

        kind, result = self.m.query_mt(mtid, name)
        if kind == "latest":
            value = self._pm_gate(req, claims, mtid, name, result.value, decision_time)
            self._audit(req, claims, mtid, "store", "ok")
            return json_response(200, {"mtid": mtid, "name": name,
                                       "value": _render(value), "ts": result.ts,
                                       "src": result.src})
        value = self._pm_gate(req, claims, mtid, name, result, decision_time)
        self._audit(req, claims, mtid, "store", "ok")
        return json_response(200, {"mtid": mtid, "name": name, "value": _render(value),
                                   "management": True})

    def _actuate(self, req, claims, mtid: str) -> ApiResponse:
        self.m.store.record(mtid)
        self._sm_gate(req, claims, mtid)
        obj = req.json()
        name = obj.get("name")
        if not isinstance(name, str) or not name:
            raise MalformedValue("actuation needs a name")
        value = self.m.actuate(mtid, name, obj.get("value"))
        self._audit(req, claims, mtid, "store", "ok")
        return json_response(200, {"mtid": mtid, "name": name, "value": _render(value)})

    def _contribute(self, req, claims, mtid: str) -> ApiResponse:
        from iotmp.model.attributes import Reading

        self.m.store.record(mtid)
        self._sm_gate(req, claims, mtid)
        obj = req.json()
        name = check_attribute_name(str(obj.get("name", "")))
        value = check_attribute_value(name, obj.get("value"))
        ts = int(obj.get("ts", self.m.rt.now()))
        self.m.store.append_reading(mtid, Reading(name, value, ts, src=claims.appid))
        self._audit(req, claims, mtid, "store", "ok")
        return json_response(201, {"mtid": mtid, "name": name, "ts": ts})

    def _put_attributes(self, req, mtid: str) -> ApiResponse:
        rec = self.m.store.record(mtid)
        obj = req.json()
        merged = dict(rec.attributes)
        for name, value in obj.items():
            check_attribute_name(name)
            if name == "ID":
                raise MalformedValue("ID is immutable")
            merged[name] = check_attribute_value(name, value)
        self.m.store.update_record(mtid, attributes=merged)
        return json_response(200, {"mtid": mtid, "attributes": sorted(merged)})

    def _delete_readings(self, req, mtid: str, name: str) -> ApiResponse:
        self.m.store.record(mtid)
        removed = self.m.store.delete_readings(
            mtid, name, _number(req.query.get("since"), "since"),
            _number(req.query.get("until"), "until"))
        return json_response(200, {"mtid": mtid, "name": name, "removed": removed})

    def _put_profile(self, req, mtid: str) -> ApiResponse:
        self.m.store.record(mtid)
        obj = req.json()
        obj["mtid"] = mtid
        profile = SecurityProfile.from_json(obj)
        self.m.sm.put_profile(profile)
        return json_response(200, profile.to_json())

    def _put_policies(self, req, mtid: str) -> ApiResponse:
        self.m.store.record(mtid)
        obj = req.json()
        raw = obj.get("policies")
        if not isinstance(raw, list):
            raise MalformedValue("body must carry a policies list")
        policies = [DisclosurePolicy.from_json(p) for p in raw]
        for p in policies:
            if p.mtid != mtid:
                raise MalformedValue(f"policy {p.policy_id} names {p.mtid}, not {mtid}")
        validate_policy_set(policies, self.m.hierarchy)
        self.m.store.policies[mtid] = policies
        self.m.store.save()
        return json_response(200, {"mtid": mtid, "count": len(policies)})

    # -- gates ---------------------------------------------------------------

    def _authenticate(self, req: ApiRequest):
        header = req.headers.get("authorization", "")
        scheme, _, token = header.partition(" ")
        if scheme.lower() != "bearer" or not token.strip():
            self._audit(req, None, None, "token", "denied")
            raise Unauthorized("missing bearer token")
        try:
            claims = self.m.tokens.verify_token(token.strip())
        except Unauthorized:
            self._audit(req, None, None, "token", "denied")
            raise
        self._audit(req, claims, None, "token", "ok")
        return claims

    def _require_mgmt(self, claims) -> None:
        if claims.role != ROLE_MGMT:
            raise RoleForbidden(f"{claims.appid} lacks the management role")

    def _sm_gate(self, req, claims, mtid: str) -> None:
        allowed, reason = self.m.sm.check_policy_explain(claims.appid, mtid, req.secure)
        self._audit(req, claims, mtid, "sm", "ok" if allowed else f"denied:{reason}")
        if not allowed:
            raise Forbidden(f"security profile denied at decision point {reason}")

    def _pm_gate(self, req, claims, mtid: str, name: str, value, when: float):
        """Location values pass the disclosure gate; everything else is returned
        unchanged."""
        if name not in LOCATION_NAMES and not isinstance(value, SemanticLocation):
            return value
        loc = value if isinstance(value, SemanticLocation) else None
        if loc is None and value is not None:
            loc = SemanticLocation.from_value(value)
        ctx = RequestContext(requester=claims.appid, mtid=mtid, time=when, mt_location=loc)
        disclosed = disclose_location(ctx, self.m.store.policies.get(mtid, []),
                                      self.m.hierarchy)
        if disclosed is None:
            self._audit(req, claims, mtid, "pm", "denied")
            raise Forbidden("disclosure policy denied the location")
        self._audit(req, claims, mtid, "pm", "ok", level=len(loc.path) - len(disclosed.path))
        return disclosed

    def _decision_time(self, req: ApiRequest) -> float:
        at = req.query.get("at")
        if at is None:
            return self.m.rt.now()
        if not self.m.config.allow_time_probe:
            raise Forbidden("time-shifted disclosure probes are disabled")
        return _number(at, "at")

    def _audit(self, req, claims, mtid, gate: str, outcome: str, **extra) -> None:
        entry = {"t": self.m.rt.now(), "requester": getattr(claims, "appid", None),
                 "mtid": mtid, "path": req.path, "gate": gate, "outcome": outcome}
        entry.update(extra)
        self.m.audit.append(entry)
        if len(self.m.audit) > AUDIT_LIMIT:
            del self.m.audit[: len(self.m.audit) - AUDIT_LIMIT]


def _render(value):
    if isinstance(value, SemanticLocation):
        return value.to_json()
    if isinstance(value, tuple):
        return list(value)
    return value


def _number(raw, label: str):
    if raw is None:
        return None
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise MalformedValue(f"{label} must be a number") from None
