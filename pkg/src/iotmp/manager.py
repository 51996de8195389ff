"""The manager: agent connections, registration, storage, device exchanges.

One Manager owns a store, a security module, a token service and an API
facade. Agent frames arrive through ``_accept`` (wired to the sim network
or a TCP adapter); application traffic arrives through ``api.handle``.
Registration keeps the single-record invariant: a join for a known but
offline MTID updates the existing row, it never inserts a second one, and
a join for a live MTID is refused outright.

Unapproved agents are quarantined: their joins are recorded as pending,
but every UPDATE/ALERT they send is refused with an ERROR frame and
leaves the readings and alert tables untouched.
"""

from __future__ import annotations

import logging

from iotmp.api import Api
from iotmp.errors import (
    ActuationFailed,
    ChannelClosed,
    DeviceTimeout,
    IotmpError,
    MalformedDescriptor,
    NotActuatable,
    UnknownAttribute,
    UnknownMT,
)
from iotmp.model import (
    ProtocolMessage,
    SemanticLocation,
    attr,
    body_get,
    validate_descriptor,
)
from iotmp.model.attributes import LOCATION_NAMES, check_attribute_value
from iotmp.privacy import load_bundled_world
from iotmp.security import APPROVED, REVOKED, UNKNOWN, SecurityModule
from iotmp.store import (
    APPROVAL_APPROVED,
    APPROVAL_PENDING,
    APPROVAL_REVOKED,
    CONNECTED,
    DISCONNECTED,
    ManagedThingRecord,
    ManagementStatus,
    ManagerStore,
    Reading,
)
from iotmp.tokens import TokenService

logger = logging.getLogger(__name__)

_ADMISSION_TO_APPROVAL = {
    APPROVED: APPROVAL_APPROVED,
    REVOKED: APPROVAL_REVOKED,
}


class ManagerConfig:
    def __init__(self, managerid: str, agent_address: str, *, api_host: str = "",
                 moms_url: str | None = None, moms_key: str = "",
                 token_secret: str = "iotmp-dev-secret", token_ttl: float = 3600.0,
                 allowlist=(), device_timeout: float = 5.0,
                 publish_period: float = 10.0, storage_path: str | None = None,
                 allow_time_probe: bool = False, register_key: str | None = None):
        self.managerid = managerid
        self.agent_address = agent_address
        self.api_host = api_host
        self.moms_url = moms_url.rstrip("/") if moms_url else None
        self.moms_key = moms_key
        self.token_secret = token_secret
        self.token_ttl = token_ttl
        self.allowlist = tuple(allowlist)
        self.device_timeout = device_timeout
        self.publish_period = publish_period
        self.storage_path = storage_path
        self.allow_time_probe = allow_time_probe
        self.register_key = register_key


class _Conn:
    __slots__ = ("end", "agentid", "mtids", "last_seq")

    def __init__(self, end):
        self.end = end
        self.agentid = None
        self.mtids = set()
        self.last_seq = 0  # highest non-ALERT seq seen on this connection


class Manager:
    def __init__(self, config: ManagerConfig, rt, hierarchy=None, http=None,
                 store: ManagerStore | None = None):
        self.config = config
        self.managerid = config.managerid
        self.rt = rt
        self.http = http  # client used for topology publishes
        self.hierarchy = hierarchy or load_bundled_world()
        self.store = store or ManagerStore(config.storage_path)
        self.sm = SecurityModule(self.store.admissions, self.store.profiles,
                                 clock=rt, on_change=self.store.save)
        self.tokens = TokenService(config.token_secret, rt, apps=self.store.apps,
                                   rng=rt.rng(f"tokens:{config.managerid}"),
                                   ttl=config.token_ttl, on_change=self.store.save)
        self.api = Api(self)
        self.audit: list[dict] = []  # gate decisions, newest last
        self._conns: list[_Conn] = []
        self._seq = 0
        self._pending: dict[int, dict] = {}  # our seq -> {"waiter", "reply", "sent_at"}
        self._net = None
        self._publish_soon = None
        self._publish_timer = None
        self._running = False

    # -- lifecycle ---------------------------------------------------------------

    def start(self, net=None) -> None:
        self._running = True
        if net is not None:
            self._net = net
            net.register_listener(self.config.agent_address, self._accept)
        if self.config.moms_url:
            self._publish_timer = self.rt.call_later(self.config.publish_period,
                                                     self._publish_tick)

    def stop(self) -> None:
        self._running = False
        for handle in (self._publish_soon, self._publish_timer):
            if handle is not None:
                handle.cancel()
        if self._net is not None:
            self._net.unregister_listener(self.config.agent_address)
        for conn in list(self._conns):
            conn.end.on_close = None
            conn.end.close()
        self._conns.clear()
        self.store.save()

    # -- agent-facing ---------------------------------------------------------------

    def _accept(self, end) -> None:
        conn = _Conn(end)
        self._conns.append(conn)
        end.on_message = lambda msg: self._on_frame(conn, msg)
        end.on_close = lambda: self._on_close(conn)

    def _on_close(self, conn: _Conn) -> None:
        if conn in self._conns:
            self._conns.remove(conn)
        now = self.rt.now()
        for mtid in conn.mtids:
            if mtid in self.store.records:
                self.store.update_record(mtid, connection=DISCONNECTED, last_seen=now)
                self.rt.trace(self.managerid, "agent_lost", mtid=mtid)

    def _on_frame(self, conn: _Conn, msg: ProtocolMessage) -> None:
        if msg.mtid is not None:
            self.store.bump_counter(msg.mtid, msg.kind)
        try:
            if msg.kind == "ASSOCIATE-REQ":
                self._advertise(conn, msg)
            elif msg.kind == "DIRECT-JOIN":
                self._handle_join(conn, msg)
            elif msg.kind == "RECONNECT":
                self._handle_reconnect(conn, msg)
            elif msg.kind == "UPDATE":
                if body_get(msg.body, "_re") is not None:
                    self._resolve(msg)
                else:
                    self._handle_update(conn, msg)
            elif msg.kind == "ALERT":
                self._handle_alert(conn, msg)
            elif msg.kind in ("ACK", "ERROR"):
                self._resolve(msg)
            else:
                self._nack(conn, msg, "InvalidKindBody", f"unexpected {msg.kind}")
        except IotmpError as exc:
            self._nack(conn, msg, exc.code, str(exc))

    def _advertise(self, conn: _Conn, msg: ProtocolMessage) -> None:
        load = sum(1 for r in self.store.records.values() if r.connection == CONNECTED)
        body = (
            attr("_managerid", self.managerid),
            attr("_address", self.config.agent_address),
            attr("_load", load),
            attr("_re", msg.seq),
        )
        self._send(conn, ProtocolMessage("ASSOCIATE-RESP", self._next_seq(),
                                         self.managerid, None, body))

    def _handle_join(self, conn: _Conn, msg: ProtocolMessage) -> None:
        agentid = msg.sender
        try:
            pairs = [(e["name"], e["value"]) for e in msg.body
                     if not e["name"].startswith("_")]
            descriptor = validate_descriptor(pairs)
        except IotmpError as exc:
            self._join_ack(conn, msg, "rejected", code="MalformedDescriptor",
                           detail=str(exc))
            return
        if descriptor.mtid != msg.mtid:
            self._join_ack(conn, msg, "rejected", code="MalformedDescriptor",
                           detail="frame mtid != descriptor ID")
            return
        mtid = descriptor.mtid

        state = self.sm.admission_state(agentid)
        if state == REVOKED:  # security verdicts outrank duplicate checks
            self._join_ack(conn, msg, "rejected", code="UnapprovedAgent",
                           detail="agent revoked")
            return

        existing = self.store.records.get(mtid)
        if existing is not None and existing.connection == CONNECTED:
            other = self._conn_for(mtid)
            if other is not None and other is not conn:
                if existing.agentid != agentid:
                    self._join_ack(conn, msg, "rejected", code="DuplicateMTID",
                                   detail=mtid)
                    return
                other.mtids.discard(mtid)  # same agent rebooting; ghost loses it

        if state == UNKNOWN:
            self.sm.admit_agent(agentid)
            if agentid in self.config.allowlist:
                self.sm.approve_agent(agentid, "allowlist")
            state = self.sm.admission_state(agentid)

        now = self.rt.now()
        approval = _ADMISSION_TO_APPROVAL.get(state, APPROVAL_PENDING)
        loc = descriptor.attrs.get("FixedLocation")
        if not isinstance(loc, SemanticLocation):
            loc = existing.loc if existing else None
        if existing is None:
            record = ManagedThingRecord(
                mtid=mtid, agentid=agentid, approval=approval,
                attributes=dict(descriptor.attrs), loc=loc, security_ref=mtid,
                connection=CONNECTED, last_seen=now, created_at=now)
            self.store.put_record(record)
        else:
            # re-join of a known, offline MTID refreshes the row in place so
            # the single-record invariant holds across agent restarts
            self.store.update_record(
                mtid, agentid=agentid, approval=approval,
                attributes=dict(descriptor.attrs), loc=loc,
                connection=CONNECTED, last_seen=now)
        self.sm.create_profile(mtid, owner="admin")
        self.store.policies.setdefault(mtid, [])

        conn.agentid = agentid
        conn.mtids.add(mtid)
        status = "registered" if approval == APPROVAL_APPROVED else "pending"
        self._join_ack(conn, msg, status, agentid=agentid)
        self.rt.trace(self.managerid, "registered", mtid=mtid, status=status,
                      fresh=existing is None)
        self._schedule_publish()

    def _handle_reconnect(self, conn: _Conn, msg: ProtocolMessage) -> None:
        record = self.store.records.get(msg.mtid)
        if record is None or record.agentid != msg.sender:
            self._nack(conn, msg, "UnknownRegistration", msg.mtid or "")
            return
        self.store.update_record(msg.mtid, connection=CONNECTED, last_seen=self.rt.now())
        conn.agentid = msg.sender
        conn.mtids.add(msg.mtid)
        status = "registered" if record.approval == APPROVAL_APPROVED else "pending"
        self._join_ack(conn, msg, status, agentid=record.agentid)
        self.rt.trace(self.managerid, "reconnected", mtid=msg.mtid, status=status)

    def _join_ack(self, conn: _Conn, req: ProtocolMessage, status: str, *,
                  agentid: str | None = None, code: str | None = None,
                  detail: str = "") -> None:
        body = [attr("_status", status), attr("_re", req.seq)]
        if agentid is not None:
            body.append(attr("_agentid", agentid))
        if code is not None:
            body.append(attr("_code", code))
        if detail:
            body.append(attr("_detail", detail))
        self._send(conn, ProtocolMessage("JOIN-ACK", self._next_seq(), self.managerid,
                                         req.mtid, tuple(body)))

    def _handle_update(self, conn: _Conn, msg: ProtocolMessage) -> None:
        record = self.store.records.get(msg.mtid)
        if record is None:
            self._nack(conn, msg, "UnknownMT", msg.mtid)
            return
        if msg.seq <= conn.last_seq:
            self._nack(conn, msg, "MalformedFrame",
                       f"seq {msg.seq} not after {conn.last_seq}")
            return
        conn.last_seq = msg.seq
        if record.approval != APPROVAL_APPROVED:
            self.store.bump_counter(msg.mtid, "quarantined")
            self.rt.trace(self.managerid, "quarantined", mtid=msg.mtid, kind="UPDATE",
                          seq=msg.seq)
            self._nack(conn, msg, "UnapprovedAgent", record.approval)
            return
        now = self.rt.now()
        entries = [e for e in msg.body if not e["name"].startswith("_")]
        checked = [check_attribute_value(e["name"], e["value"]) for e in entries]
        loc = None  # nothing is stored until every entry validated
        for entry, value in zip(entries, checked):
            ts = int(entry.get("ts", now))
            self.store.append_reading(
                msg.mtid, Reading(entry["name"], value, ts, src=msg.sender))
            if entry["name"] in LOCATION_NAMES and isinstance(value, SemanticLocation):
                loc = value
        if loc is not None:
            self.store.update_record(msg.mtid, loc=loc, last_seen=now)
        else:
            self.store.update_record(msg.mtid, last_seen=now)
        self.rt.trace(self.managerid, "stored", mtid=msg.mtid, n=len(entries),
                      seq=msg.seq)
        self._ack(conn, msg)

    def _handle_alert(self, conn: _Conn, msg: ProtocolMessage) -> None:
        record = self.store.records.get(msg.mtid)
        if record is None:
            self._nack(conn, msg, "UnknownMT", msg.mtid)
            return
        if record.approval != APPROVAL_APPROVED:
            self.store.bump_counter(msg.mtid, "quarantined")
            self.rt.trace(self.managerid, "quarantined", mtid=msg.mtid, kind="ALERT",
                          seq=msg.seq)
            self._nack(conn, msg, "UnapprovedAgent", record.approval)
            return
        entries = [dict(e) for e in msg.body if not e["name"].startswith("_")]
        fresh = self.store.add_alert(msg.mtid, msg.seq, entries, self.rt.now())
        self.rt.trace(self.managerid, "alert", mtid=msg.mtid, seq=msg.seq, fresh=fresh)
        self._ack(conn, msg)  # ack duplicates too, retransmission should stop

    def _ack(self, conn: _Conn, req: ProtocolMessage) -> None:
        self._send(conn, ProtocolMessage("ACK", self._next_seq(), self.managerid,
                                         req.mtid, (attr("_re", req.seq),)))

    def _nack(self, conn: _Conn, req: ProtocolMessage, code: str, detail: str = "") -> None:
        body = (attr("_re", req.seq), attr("_code", code), attr("_detail", detail))
        self._send(conn, ProtocolMessage("ERROR", self._next_seq(), self.managerid,
                                         req.mtid, body))

    def _send(self, conn: _Conn, msg: ProtocolMessage) -> None:
        try:
            conn.end.send(msg)
        except ChannelClosed:
            pass

    def _resolve(self, msg: ProtocolMessage) -> None:
        slot = self._pending.get(body_get(msg.body, "_re"))
        if slot is not None:
            slot["reply"] = msg
            slot["waiter"].set()

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _conn_for(self, mtid: str) -> _Conn | None:
        for conn in self._conns:
            if mtid in conn.mtids and conn.end.open:
                return conn
        return None

    # -- device round trips -------------------------------------------------------

    def _exchange(self, mtid: str, kind: str, body) -> ProtocolMessage:
        """Send one request frame to the MT's agent and wait for its reply."""
        self.store.record(mtid)
        conn = self._conn_for(mtid)
        if conn is None:
            self.rt.sleep(self.config.device_timeout)
            raise DeviceTimeout(f"{mtid} is not connected")
        seq = self._next_seq()
        waiter = self.rt.make_waiter()
        slot = {"waiter": waiter, "reply": None, "sent_at": self.rt.now()}
        self._pending[seq] = slot
        try:
            self._send(conn, ProtocolMessage(kind, seq, self.managerid, mtid, tuple(body)))
            if not waiter.wait(self.config.device_timeout) or slot["reply"] is None:
                raise DeviceTimeout(f"no reply from {mtid}")
        finally:
            self._pending.pop(seq, None)
        reply = slot["reply"]
        if reply.kind == "ERROR":
            code = body_get(reply.body, "_code", "")
            detail = body_get(reply.body, "_detail", "")
            for err in (UnknownAttribute, NotActuatable, ActuationFailed):
                if code == err.__name__:
                    raise err(detail or code)
            raise DeviceTimeout(code or "device error")
        slot["rtt"] = self.rt.now() - slot["sent_at"]
        return reply

    def get_live(self, mtid: str, attribute: str):
        reply = self._exchange(mtid, "GET", [attr(attribute, None)])
        value = body_get(reply.body, attribute)
        ts = next((e.get("ts") for e in reply.body if e["name"] == attribute), None)
        reading = Reading(attribute, value, int(ts if ts is not None else self.rt.now()),
                          src=self.store.record(mtid).agentid)
        self.store.append_reading(mtid, reading)
        if attribute in LOCATION_NAMES and isinstance(value, SemanticLocation):
            self.store.update_record(mtid, loc=value)
        return reading

    def actuate(self, mtid: str, name: str, value):
        reply = self._exchange(mtid, "SET", [attr(name, value)])
        new_value = body_get(reply.body, name)
        self.store.append_reading(
            mtid, Reading(name, new_value, int(self.rt.now()),
                          src=self.store.record(mtid).agentid))
        return new_value

    def mgmt_status(self, mtid: str) -> ManagementStatus:
        record = self.store.record(mtid)
        counters = dict(self.store.counters.get(mtid, {}))
        conn = self._conn_for(mtid)
        if conn is None:
            battery = record.attributes.get("BatteryLife")
            return ManagementStatus(battery, "down", None, counters)
        sent_at = self.rt.now()
        try:
            reply = self._exchange(mtid, "MGMT-GET", [])
        except DeviceTimeout:
            return ManagementStatus(record.attributes.get("BatteryLife"), "down",
                                    None, counters)
        battery = body_get(reply.body, "BatteryLife")
        if battery is not None:
            attributes = dict(record.attributes)
            attributes["BatteryLife"] = battery
            self.store.update_record(mtid, attributes=attributes)
        rtt_ms = (self.rt.now() - sent_at) * 1000.0
        return ManagementStatus(battery, "up", round(rtt_ms, 3), counters)

    # -- store-facing ------------------------------------------------------------

    def query_mt(self, mtid: str, attribute: str, since=None, until=None):
        """Stored data only; shape is ("latest", Reading) / ("window", list) /
        ("management", value)."""
        record = self.store.record(mtid)
        if since is not None or until is not None:
            if attribute not in self.store.reading_names(mtid):
                raise UnknownAttribute(attribute)
            return "window", self.store.query_window(mtid, attribute, since, until)
        latest = self.store.latest(mtid, attribute)
        if latest is not None:
            return "latest", latest
        if attribute in record.attributes:
            return "management", record.attributes[attribute]
        raise UnknownAttribute(attribute)

    def approve_agent(self, agentid: str, admin: str) -> None:
        self.sm.approve_agent(agentid, admin)
        for record in list(self.store.records.values()):
            if record.agentid == agentid:
                self.store.update_record(record.mtid, approval=APPROVAL_APPROVED)
        self.rt.trace(self.managerid, "approved", agentid=agentid)

    def revoke_agent(self, agentid: str, admin: str) -> None:
        self.sm.revoke_agent(agentid, admin)
        for record in list(self.store.records.values()):
            if record.agentid == agentid:
                self.store.update_record(record.mtid, approval=APPROVAL_REVOKED)
        self.rt.trace(self.managerid, "revoked", agentid=agentid)

    # -- topology publishing ----------------------------------------------------------

    def topology_payload(self) -> dict:
        return {
            "managerid": self.managerid,
            "address": self.config.api_host,
            "mtids": sorted(self.store.records),
        }

    def publish_topology(self) -> bool:
        if not self.config.moms_url or self.http is None:
            return False
        import json as _json

        body = _json.dumps(self.topology_payload(), sort_keys=True).encode("utf-8")
        try:
            resp = self.http.request(
                "POST", f"{self.config.moms_url}/topology",
                headers={"x-manager-key": self.config.moms_key,
                         "content-type": "application/json"},
                body=body)
        except IotmpError as exc:
            self.rt.trace(self.managerid, "publish_failed", error=exc.code)
            return False
        ok = 200 <= resp.status < 300
        self.rt.trace(self.managerid, "published", status=resp.status,
                      n=len(self.store.records))
        return ok

    def _schedule_publish(self) -> None:
        if not self._running or not self.config.moms_url or self._publish_soon is not None:
            return
        self._publish_soon = self.rt.call_later(0.05, self._publish_debounced)

    def _publish_debounced(self) -> None:
        self._publish_soon = None
        self.publish_topology()

    def _publish_tick(self) -> None:
        if not self._running:
            return
        self.publish_topology()
        self._publish_timer = self.rt.call_later(self.config.publish_period,
                                                 self._publish_tick)
