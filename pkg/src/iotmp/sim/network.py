"""In-process transport with injectable faults.

Two fabrics share the kernel: SimNetwork carries agent-protocol frames
between addresses like "sim://m1-agents", SimHttp carries API calls to
registered hosts ("sim://" plain, "sims://" as-if-TLS). Every frame is
encoded and re-decoded on the way through, so the wire codec is exercised
on each hop and traces can record true byte digests. Faults are
address-scoped: probabilistic frame drops (optionally per kind), and
outages that sever existing channels and refuse new ones.
"""

from __future__ import annotations

import hashlib
from urllib.parse import parse_qsl, urlsplit

from iotmp.errors import ChannelClosed, ManagerUnreachable, TransportUnreachable
from iotmp.model import decode_message, encode_message


class ChannelEnd:
    """One side of a bidirectional frame channel."""

    def __init__(self, channel: "SimChannel", label: str):
        self.channel = channel
        self.label = label
        self.on_message = None  # fn(msg)
        self.on_close = None  # fn()

    @property
    def open(self) -> bool:
        return self.channel.open

    def send(self, msg) -> None:
        self.channel.send(self, msg)

    def close(self) -> None:
        self.channel.close(by=self.label)


class SimChannel:
    def __init__(self, net: "SimNetwork", address: str, client_label: str, server_label: str):
        self.net = net
        self.address = address  # listener address this channel targets
        self.open = True
        self.client = ChannelEnd(self, client_label)
        self.server = ChannelEnd(self, server_label)

    def peer_of(self, end: ChannelEnd) -> ChannelEnd:
        return self.server if end is self.client else self.client

    def send(self, sender: ChannelEnd, msg) -> None:
        if not self.open:
            raise ChannelClosed(f"channel to {self.address} is closed")
        data = encode_message(msg)
        kernel = self.net.kernel
        if self.net.should_drop(self.address, msg.kind):
            kernel.trace(sender.label, "frame_dropped", to=self.peer_of(sender).label,
                         kind=msg.kind, seq=msg.seq, mtid=msg.mtid)
            return
        kernel.trace(sender.label, "frame", to=self.peer_of(sender).label,
                     kind=msg.kind, seq=msg.seq, mtid=msg.mtid,
                     bytes=len(data), sha=hashlib.sha256(data).hexdigest()[:16])
        kernel.call_later(self.net.latency, self._deliver, self.peer_of(sender), data)

    def _deliver(self, end: ChannelEnd, data: bytes) -> None:
        if not self.open or end.on_message is None:
            return
        end.on_message(decode_message(data))

    def close(self, by: str = "") -> None:
        if not self.open:
            return
        self.open = False
        self.net.forget(self)
        # peers learn of the break one latency later, like a FIN would arrive
        for end in (self.client, self.server):
            if end.on_close is not None:
                self.net.kernel.call_later(self.net.latency, self._notify_close, end)

    @staticmethod
    def _notify_close(end: ChannelEnd) -> None:
        if end.on_close is not None:
            end.on_close()


class SimNetwork:
    def __init__(self, kernel, latency: float = 0.005):
        self.kernel = kernel
        self.latency = latency
        self.listeners: dict[str, object] = {}  # address -> on_connect(server_end)
        self.offline: set[str] = set()
        self.drops: dict[str, tuple] = {}  # address -> (pct, kinds | None)
        self.channels: list[SimChannel] = []

    def register_listener(self, address: str, on_connect) -> None:
        if address in self.listeners:
            raise TransportUnreachable(f"address {address} already bound")
        self.listeners[address] = on_connect

    def unregister_listener(self, address: str) -> None:
        self.listeners.pop(address, None)

    def connect(self, address: str, label: str = "client") -> ChannelEnd:
        on_connect = self.listeners.get(address)
        if on_connect is None or address in self.offline:
            raise TransportUnreachable(address)
        channel = SimChannel(self, address, label, address)
        self.channels.append(channel)
        on_connect(channel.server)
        return channel.client

    def forget(self, channel: SimChannel) -> None:
        if channel in self.channels:
            self.channels.remove(channel)

    # -- faults ---------------------------------------------------------------

    def should_drop(self, address: str, kind: str) -> bool:
        entry = self.drops.get(address)
        if not entry:
            return False
        pct, kinds = entry
        if kinds is not None and kind not in kinds:
            return False
        return self.kernel.rng("net").random() * 100.0 < pct

    def set_drop(self, address: str, pct: float, kinds=None) -> None:
        if pct <= 0:
            self.drops.pop(address, None)
        else:
            self.drops[address] = (pct, frozenset(kinds) if kinds else None)

    def take_offline(self, address: str) -> None:
        self.offline.add(address)
        for channel in [c for c in self.channels if c.address == address]:
            channel.close(by="outage")
        self.kernel.trace(address, "offline")

    def bring_online(self, address: str) -> None:
        self.offline.discard(address)
        self.kernel.trace(address, "online")


class SimHttp:
    """Request fabric for API calls inside a simulation.

    Hosts register a handler per netloc; the scheme of the request URL
    decides the channel_secure flag handed to the handler ("sims" counts
    as TLS). Handlers may block on the kernel, so a request can span
    simulated time even though this call is synchronous.
    """

    def __init__(self, kernel, latency: float = 0.002):
        self.kernel = kernel
        self.latency = latency
        self.hosts: dict[str, object] = {}  # netloc -> handler(ApiRequest) -> ApiResponse
        self.offline: set[str] = set()

    def register(self, netloc: str, handler) -> None:
        self.hosts[netloc] = handler

    def unregister(self, netloc: str) -> None:
        self.hosts.pop(netloc, None)

    def take_offline(self, netloc: str) -> None:
        self.offline.add(netloc)

    def bring_online(self, netloc: str) -> None:
        self.offline.discard(netloc)

    def request(self, method: str, url: str, headers: dict | None = None,
                body: bytes | None = None, timeout: float | None = None):
        from iotmp.api import ApiRequest

        parts = urlsplit(url)
        if parts.scheme not in ("sim", "sims"):
            raise TransportUnreachable(f"not a sim url: {url}")
        handler = self.hosts.get(parts.netloc)
        if handler is None or parts.netloc in self.offline:
            raise ManagerUnreachable(parts.netloc)
        self.kernel.sleep(self.latency)
        req = ApiRequest(
            method=method.upper(),
            path=parts.path or "/",
            query=dict(parse_qsl(parts.query)),
            headers={k.lower(): v for k, v in (headers or {}).items()},
            body=body,
            secure=parts.scheme == "sims",
        )
        resp = handler(req)
        self.kernel.sleep(self.latency)
        self.kernel.trace(parts.netloc, "http", method=req.method, path=req.path,
                          status=resp.status,
                          body_sha=hashlib.sha256(resp.body or b"").hexdigest()[:16])
        return resp
