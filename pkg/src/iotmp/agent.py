"""Device-side agent: registration lifecycle and the managed thing it fronts.

An agent owns one descriptor (one MT), keeps a single lifetime sequence
counter, and moves through unregistered -> joining -> pending_approval /
registered -> disconnected. Three ways in: a preconfigured manager address
(direct join), discovery of advertising managers (associate, pick the
least-loaded one), and reconnect with the saved registration after a
connection drop, which must never create a second record manager-side.

Updates are fire-and-acknowledge; alerts are at-least-once: the same seq
is retransmitted until the manager ACKs it (or definitively refuses it),
and the manager's (mtid, seq) dedupe turns that into exactly-once storage.
"""

from __future__ import annotations

import logging

from iotmp.errors import (
    ActuationFailed,
    ChannelClosed,
    JoinRejected,
    NoManagerDiscovered,
    NotActuatable,
    NotRegistered,
    PhaseError,
    RejectedUnapproved,
    TransportUnreachable,
    UnknownAttribute,
    UnknownRegistration,
)
from iotmp.model import ProtocolMessage, attr, body_get, validate_descriptor

logger = logging.getLogger(__name__)

UNREGISTERED = "unregistered"
JOINING = "joining"
PENDING_APPROVAL = "pending_approval"
REGISTERED = "registered"
DISCONNECTED = "disconnected"

BACKOFF_BASE = 1.0
BACKOFF_CAP = 32.0


class AlertRule:
    """Threshold crossing on one attribute; fires on the rising edge only."""

    OPS = {
        ">": lambda v, t: v > t,
        "<": lambda v, t: v < t,
        ">=": lambda v, t: v >= t,
        "<=": lambda v, t: v <= t,
        "==": lambda v, t: v == t,
        "!=": lambda v, t: v != t,
    }

    def __init__(self, attr_name: str, op: str, threshold):
        if op not in self.OPS:
            raise ValueError(f"unknown alert operator {op!r}")
        self.attr = attr_name
        self.op = op
        self.threshold = threshold

    def matches(self, value) -> bool:
        try:
            return bool(self.OPS[self.op](value, self.threshold))
        except TypeError:
            return False


class SimulatedThing:
    """The fake hardware behind an agent: sensor callables plus actuator state."""

    def __init__(self, sensors: dict | None = None, actuators: dict | None = None):
        self.sensors = dict(sensors or {})  # name -> fn(t, rng) -> value
        self.actuators = dict(actuators or {})  # name -> current value

    def names(self) -> list:
        return sorted(set(self.sensors) | set(self.actuators))

    def read(self, name: str, t: float, rng):
        if name in self.actuators:
            return self.actuators[name]
        fn = self.sensors.get(name)
        if fn is None:
            raise UnknownAttribute(name)
        value = fn(t, rng)
        if value is None:
            raise ActuationFailed(f"sensor {name} returned nothing")
        return value

    def set(self, name: str, value):
        if name not in self.actuators:
            raise NotActuatable(name)
        self.actuators[name] = value
        return value


class Agent:
    def __init__(self, agentid: str, descriptor, thing: SimulatedThing, rt, net, *,
                 manager_address: str | None = None, discovery=(),
                 update_period: float = 5.0, alert_rules=(),
                 request_timeout: float = 5.0, alert_retry: float = 2.0,
                 battery: float = 100.0, battery_drain: float = 0.0,
                 auto_reconnect: bool = True):
        self.descriptor = descriptor if hasattr(descriptor, "attrs") \
            else validate_descriptor(descriptor)
        self.agentid = agentid
        self.mtid = self.descriptor.mtid
        self.thing = thing
        self.rt = rt
        self.net = net
        self.manager_address = manager_address
        self.discovery = tuple(discovery)
        self.update_period = update_period
        self.alert_rules = tuple(alert_rules)
        self.request_timeout = request_timeout
        self.alert_retry = alert_retry
        self._battery0 = battery
        self._battery_drain = battery_drain
        self._born = rt.now()
        self.auto_reconnect = auto_reconnect

        self._rng = rt.rng(f"agent:{agentid}")
        self.phase = UNREGISTERED
        self._assigned = None  # registration details once a manager accepted us
        self._joined_address = None
        self._chan = None
        self._seq = 0  # lifetime counter, survives reconnects
        self._pending: dict[int, dict] = {}  # seq -> {"waiter", "reply"}
        self._handshake = None  # {"kinds", "waiter", "reply"} during joins
        self._alert_backlog: dict[int, ProtocolMessage] = {}
        self._alert_timers: dict[int, object] = {}
        self._last_sample: dict[str, object] = {}
        self._backoff_attempt = 0
        self._update_timer = None
        self._reconnect_timer = None
        self._running = False

    # -- public surface -------------------------------------------------------

    @property
    def saved_registration(self):
        return self._assigned

    def start(self) -> None:
        """Join (or rejoin) via the configured method and begin the update loop."""
        if not self.manager_address and not self.discovery:
            raise PhaseError("agent has no manager address and no discovery list")
        self._running = True
        try:
            if self.phase == DISCONNECTED and self._assigned is not None:
                self.reconnect()
            elif self.manager_address:
                self.direct_join()
            else:
                self.associate_join()
        except UnknownRegistration:
            self._assigned = None
            self.phase = UNREGISTERED
            self._schedule_rejoin()
        except (TransportUnreachable, NoManagerDiscovered, JoinRejected) as exc:
            logger.info("agent %s initial join failed: %s", self.agentid, exc)
            self._schedule_rejoin()
        self._schedule_update()

    def stop(self) -> None:
        self._running = False
        for handle in (self._update_timer, self._reconnect_timer):
            if handle is not None:
                handle.cancel()
        for handle in self._alert_timers.values():
            handle.cancel()
        self._alert_timers.clear()
        if self._chan is not None:
            chan, self._chan = self._chan, None
            chan.on_close = None
            chan.close()
        self.phase = UNREGISTERED if self._assigned is None else DISCONNECTED

    def direct_join(self):
        if self.phase != UNREGISTERED:
            raise PhaseError(f"direct_join in phase {self.phase}")
        if not self.manager_address:
            raise PhaseError("no manager address configured")
        return self._join_at(self.manager_address)

    def associate_join(self):
        if self.phase != UNREGISTERED:
            raise PhaseError(f"associate_join in phase {self.phase}")
        adverts = []
        for address in self.discovery:
            advert = self._probe(address)
            if advert is not None:
                adverts.append(advert)
        if not adverts:
            raise NoManagerDiscovered("no ASSOCIATE-RESP received")
        # least loaded first, manager id as the deterministic tie break
        adverts.sort(key=lambda a: (a["load"], a["managerid"]))
        last_error = None
        for advert in adverts:
            try:
                return self._join_at(advert["address"])
            except (JoinRejected, TransportUnreachable) as exc:
                last_error = exc
        raise last_error if last_error else NoManagerDiscovered("all adverts failed")

    def reconnect(self):
        if self.phase != DISCONNECTED:
            raise PhaseError(f"reconnect in phase {self.phase}")
        if self._assigned is None:
            raise PhaseError("no saved registration")
        self._open(self._joined_address)
        msg = ProtocolMessage("RECONNECT", self._next_seq(), self.agentid, self.mtid)
        try:
            reply = self._handshake_send(msg)
        except TransportUnreachable:
            self._drop_channel()
            raise
        status = body_get(reply.body, "_status")
        if reply.kind == "ERROR" or status == "rejected":
            code = body_get(reply.body, "_code", "")
            self._drop_channel()
            if code == "UnknownRegistration":
                raise UnknownRegistration(self.mtid)
            raise JoinRejected(code or "reconnect refused")
        self._became_joined(status, reply)
        self._flush_alert_backlog()
        return self.phase

    def send_update(self, values: dict | None = None) -> bool:
        """Deliver one UPDATE; True on ack. Raises when refused or undeliverable."""
        if self.phase not in (REGISTERED, PENDING_APPROVAL):
            raise NotRegistered(f"phase {self.phase}")
        if values is None:
            values = self.sample()
        known = set(self.thing.names())
        for name in values:
            if name not in known:
                raise UnknownAttribute(f"{name} not in behavioural profile")
        now = self.rt.now()
        body = tuple(attr(name, value, ts=now) for name, value in sorted(values.items()))
        msg = ProtocolMessage("UPDATE", self._next_seq(), self.agentid, self.mtid, body)
        reply = self._request(msg)
        if reply is None:
            raise TransportUnreachable("no ack for UPDATE")
        if reply.kind == "ERROR":
            code = body_get(reply.body, "_code", "")
            if code == "UnapprovedAgent":
                raise RejectedUnapproved(self.agentid)
            raise NotRegistered(code or "update refused")
        if self.phase == PENDING_APPROVAL:
            # the manager only acks approved agents, so we just learned we are in
            self.phase = REGISTERED
            self.rt.trace(self.agentid, "approved_observed", mtid=self.mtid)
        return True

    def emit_alert(self, name: str, value) -> int:
        """Queue an ALERT for at-least-once delivery; returns its seq."""
        seq = self._next_seq()
        now = self.rt.now()
        msg = ProtocolMessage("ALERT", seq, self.agentid, self.mtid,
                              (attr(name, value, ts=now),))
        self._alert_backlog[seq] = msg
        self._send_alert(seq)
        return seq

    def sample(self) -> dict:
        t = self.rt.now()
        return {name: self.thing.read(name, t, self._rng) for name in self.thing.names()}

    def battery(self) -> float:
        level = self._battery0 - self._battery_drain * (self.rt.now() - self._born)
        return round(max(0.0, level), 3)

    # -- join plumbing ----------------------------------------------------------

    def _probe(self, address: str):
        try:
            self._open(address)
        except TransportUnreachable:
            return None
        msg = ProtocolMessage("ASSOCIATE-REQ", self._next_seq(), self.agentid)
        try:
            reply = self._handshake_send(msg, kinds=("ASSOCIATE-RESP",))
        except TransportUnreachable:
            return None
        finally:
            self._drop_channel()
        return {
            "managerid": body_get(reply.body, "_managerid", ""),
            "address": body_get(reply.body, "_address", address),
            "load": body_get(reply.body, "_load", 0),
        }

    def _join_at(self, address: str):
        self.phase = JOINING
        try:
            self._open(address)
        except TransportUnreachable:
            self.phase = UNREGISTERED
            raise
        entries = tuple(attr(name, value) for name, value in self.descriptor.attrs.items())
        msg = ProtocolMessage("DIRECT-JOIN", self._next_seq(), self.agentid, self.mtid, entries)
        try:
            reply = self._handshake_send(msg)
        except TransportUnreachable:
            self._drop_channel()
            self.phase = UNREGISTERED
            raise
        status = body_get(reply.body, "_status")
        if reply.kind == "ERROR" or status == "rejected":
            code = body_get(reply.body, "_code", "join rejected")
            self._drop_channel()
            self.phase = UNREGISTERED
            raise JoinRejected(code)
        self._joined_address = address
        self._became_joined(status, reply)
        return self.phase

    def _became_joined(self, status: str, reply: ProtocolMessage) -> None:
        assigned_agent = body_get(reply.body, "_agentid", self.agentid)
        self._assigned = {
            "mtid": self.mtid,
            "agentid": assigned_agent,
            "managerid": reply.sender,
            "address": self._joined_address,
        }
        self.phase = REGISTERED if status == "registered" else PENDING_APPROVAL
        self._backoff_attempt = 0
        self.rt.trace(self.agentid, "joined", mtid=self.mtid, status=self.phase)

    def _handshake_send(self, msg: ProtocolMessage,
                        kinds=("JOIN-ACK", "ERROR")) -> ProtocolMessage:
        waiter = self.rt.make_waiter()
        self._handshake = {"kinds": set(kinds) | {"ERROR"}, "waiter": waiter, "reply": None}
        try:
            self._send(msg)
            if not waiter.wait(self.request_timeout) or self._handshake["reply"] is None:
                raise TransportUnreachable("no handshake reply")
            return self._handshake["reply"]
        finally:
            self._handshake = None

    def _request(self, msg: ProtocolMessage) -> ProtocolMessage | None:
        waiter = self.rt.make_waiter()
        slot = {"waiter": waiter, "reply": None}
        self._pending[msg.seq] = slot
        try:
            self._send(msg)
            waiter.wait(self.request_timeout)
            return slot["reply"]
        finally:
            self._pending.pop(msg.seq, None)

    def _send(self, msg: ProtocolMessage) -> None:
        if self._chan is None or not self._chan.open:
            raise TransportUnreachable("no channel")
        try:
            self._chan.send(msg)
        except ChannelClosed as exc:
            raise TransportUnreachable(str(exc)) from None

    def _open(self, address: str) -> None:
        self._drop_channel()
        chan = self.net.connect(address, label=self.agentid)
        chan.on_message = self._on_frame
        chan.on_close = self._on_close
        self._chan = chan

    def _drop_channel(self) -> None:
        if self._chan is not None:
            chan, self._chan = self._chan, None
            chan.on_close = None
            if chan.open:
                chan.close()

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    # -- inbound -----------------------------------------------------------------

    def _on_frame(self, msg: ProtocolMessage) -> None:
        if self._handshake is not None and msg.kind in self._handshake["kinds"]:
            self._handshake["reply"] = msg
            self._handshake["waiter"].set()
            return
        if msg.kind in ("ACK", "ERROR"):
            re_seq = body_get(msg.body, "_re")
            if re_seq in self._alert_backlog:
                # ACK, or a definitive refusal: either way stop retransmitting
                self._alert_backlog.pop(re_seq, None)
                timer = self._alert_timers.pop(re_seq, None)
                if timer is not None:
                    timer.cancel()
            slot = self._pending.get(re_seq)
            if slot is not None:
                slot["reply"] = msg
                slot["waiter"].set()
            return
        if msg.kind == "GET":
            self._serve_get(msg)
        elif msg.kind == "SET":
            self._serve_set(msg)
        elif msg.kind == "MGMT-GET":
            self._serve_mgmt(msg)
        else:
            self._reply_error(msg, "InvalidKindBody", f"unexpected {msg.kind}")

    def _serve_get(self, msg: ProtocolMessage) -> None:
        now = self.rt.now()
        out = []
        for entry in msg.body:
            name = entry["name"]
            if name.startswith("_"):
                continue
            try:
                value = self._read_attribute(name, now)
            except UnknownAttribute:
                self._reply_error(msg, "UnknownAttribute", name)
                return
            out.append(attr(name, value, ts=now))
        out.append(attr("_re", msg.seq))
        self._respond(msg, out)

    def _read_attribute(self, name: str, t: float):
        try:
            return self.thing.read(name, t, self._rng)
        except UnknownAttribute:
            pass
        if name == "BatteryLife":
            return self.battery()
        if name in self.descriptor.attrs:
            return self.descriptor.attrs[name]
        raise UnknownAttribute(name)

    def _serve_set(self, msg: ProtocolMessage) -> None:
        now = self.rt.now()
        out = []
        try:
            for entry in msg.body:
                name = entry["name"]
                if name.startswith("_"):
                    continue
                out.append(attr(name, self.thing.set(name, entry["value"]), ts=now))
        except (NotActuatable, ActuationFailed) as exc:
            self._reply_error(msg, exc.code, str(exc))
            return
        out.append(attr("_re", msg.seq))
        self._respond(msg, out)

    def _serve_mgmt(self, msg: ProtocolMessage) -> None:
        now = self.rt.now()
        out = [
            attr("BatteryLife", self.battery(), ts=now),
            attr("_uptime", now - self._born),
            attr("_re", msg.seq),
        ]
        self._respond(msg, out)

    def _respond(self, req: ProtocolMessage, body) -> None:
        msg = ProtocolMessage("UPDATE", self._next_seq(), self.agentid, self.mtid, tuple(body))
        try:
            self._send(msg)
        except TransportUnreachable:
            pass

    def _reply_error(self, req: ProtocolMessage, code: str, detail: str) -> None:
        body = (attr("_re", req.seq), attr("_code", code), attr("_detail", detail))
        try:
            self._send(ProtocolMessage("ERROR", self._next_seq(), self.agentid,
                                       self.mtid, body))
        except TransportUnreachable:
            pass

    # -- periodic work -------------------------------------------------------------

    def _schedule_update(self) -> None:
        if not self._running:
            return
        self._update_timer = self.rt.call_later(self.update_period, self._update_tick)

    def _update_tick(self) -> None:
        if not self._running:
            return
        try:
            if self.phase in (REGISTERED, PENDING_APPROVAL) and self._chan is not None:
                values = self.sample()
                self._check_alert_rules(values)
                self.send_update(values)
        except (RejectedUnapproved, NotRegistered, TransportUnreachable) as exc:
            logger.debug("agent %s update not stored: %s", self.agentid, exc)
        finally:
            self._schedule_update()

    def _check_alert_rules(self, values: dict) -> None:
        for rule in self.alert_rules:
            if rule.attr not in values:
                continue
            value = values[rule.attr]
            previous = self._last_sample.get(rule.attr)
            was = previous is not None and rule.matches(previous)
            if rule.matches(value) and not was:
                self.emit_alert(rule.attr, value)
        self._last_sample.update(values)

    def _send_alert(self, seq: int) -> None:
        msg = self._alert_backlog.get(seq)
        if msg is None:
            return
        try:
            self._send(msg)
        except TransportUnreachable:
            pass  # stays in the backlog; reconnect flushes it
        self._alert_timers[seq] = self.rt.call_later(self.alert_retry, self._send_alert, seq)

    def _flush_alert_backlog(self) -> None:
        for seq in sorted(self._alert_backlog):
            self._send_alert(seq)

    # -- disconnect / rejoin ----------------------------------------------------------

    def _on_close(self) -> None:
        self._chan = None
        if self.phase in (REGISTERED, PENDING_APPROVAL, JOINING):
            self.phase = DISCONNECTED
            self.rt.trace(self.agentid, "disconnected", mtid=self.mtid)
        if self.auto_reconnect and self._running:
            self._schedule_rejoin()

    def _schedule_rejoin(self) -> None:
        if not self._running or self._reconnect_timer is not None:
            return
        cap = min(BACKOFF_CAP, BACKOFF_BASE * (2 ** self._backoff_attempt))
        delay = self._rng.uniform(0, cap)  # full jitter
        self._backoff_attempt += 1
        self._reconnect_timer = self.rt.call_later(delay, self._rejoin_attempt)

    def _rejoin_attempt(self) -> None:
        self._reconnect_timer = None
        if not self._running or self.phase in (REGISTERED, PENDING_APPROVAL):
            return
        try:
            if self.phase == DISCONNECTED and self._assigned is not None:
                try:
                    self.reconnect()
                    return
                except UnknownRegistration:
                    # the manager genuinely lost us; fall through to a
                    # fresh join in this same attempt
                    self._assigned = None
            self.phase = UNREGISTERED
            if self.manager_address:
                self.direct_join()
            elif self.discovery:
                self.associate_join()
        except (TransportUnreachable, NoManagerDiscovered, JoinRejected):
            if self._assigned is not None:
                self.phase = DISCONNECTED
            self._schedule_rejoin()
