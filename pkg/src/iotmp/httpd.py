"""Live transports: real TCP for agent frames and real HTTP(S) for the API.

These mirror the simulated fabric's interfaces, so managers, agents and the
MoMs run unchanged on either. ``LiveNetwork`` speaks the length-prefixed
frame protocol over ``tcp://host:port`` addresses; ``ApiHttpServer`` serves
an ``Api.handle``-style callable over plain HTTP or TLS, and ``LiveHttp``
is the matching client.
"""

from __future__ import annotations

import logging
import mimetypes
import socket
import socketserver
import ssl
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qsl, urlsplit

from iotmp.api import ApiRequest, ApiResponse
from iotmp.errors import BindFailure, ChannelClosed, ManagerUnreachable, TransportUnreachable
from iotmp.model import FrameDecoder, encode_message

logger = logging.getLogger(__name__)


def parse_tcp_address(address: str) -> tuple:
    try:
        parts = urlsplit(address if "//" in address else f"tcp://{address}")
        host, port = parts.hostname, parts.port
    except ValueError:
        raise TransportUnreachable(f"not a tcp://host:port address: {address}") from None
    if parts.scheme not in ("", "tcp") or not host or not port:
        raise TransportUnreachable(f"not a tcp://host:port address: {address}")
    return host, port


class TcpChannelEnd:
    """One side of a framed TCP connection; reader runs on its own thread."""

    def __init__(self, sock: socket.socket, label: str):
        self.sock = sock
        self.label = label
        self.on_message = None
        self.on_close = None
        self.open = True
        self._wlock = threading.Lock()

    def start(self) -> None:
        threading.Thread(target=self._read_loop, daemon=True,
                         name=f"chan-{self.label}").start()

    def send(self, msg) -> None:
        if not self.open:
            raise ChannelClosed(self.label)
        data = encode_message(msg)
        try:
            with self._wlock:
                self.sock.sendall(data)
        except OSError as exc:
            self._closed()
            raise ChannelClosed(str(exc)) from None

    def close(self) -> None:
        self._closed(notify=False)

    def _read_loop(self) -> None:
        decoder = FrameDecoder()
        try:
            while self.open:
                data = self.sock.recv(65536)
                if not data:
                    break
                for msg in decoder.feed(data):
                    cb = self.on_message
                    if cb is not None:
                        cb(msg)
        except OSError:
            pass
        except Exception:
            logger.exception("channel %s reader failed", self.label)
        finally:
            self._closed()

    def _closed(self, notify: bool = True) -> None:
        if not self.open:
            return
        self.open = False
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        cb, self.on_close = self.on_close, None
        if notify and cb is not None:
            cb()


class _AgentTcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class LiveNetwork:
    """Agent-frame transport over real sockets, same shape as the sim one."""

    def __init__(self):
        self._servers: dict[str, _AgentTcpServer] = {}

    def register_listener(self, address: str, on_connect) -> None:
        host, port = parse_tcp_address(address)

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                end = TcpChannelEnd(self.request, label=f"{address}#srv")
                on_connect(end)
                end._read_loop()  # serve on this handler thread

        try:
            server = _AgentTcpServer((host, port), Handler)
        except OSError as exc:
            raise BindFailure(f"cannot bind {address}: {exc}") from None
        self._servers[address] = server
        threading.Thread(target=server.serve_forever, daemon=True,
                         name=f"agents@{address}").start()

    def unregister_listener(self, address: str) -> None:
        server = self._servers.pop(address, None)
        if server is not None:
            server.shutdown()
            server.server_close()

    def connect(self, address: str, label: str = "client") -> TcpChannelEnd:
        host, port = parse_tcp_address(address)
        try:
            sock = socket.create_connection((host, port), timeout=10.0)
        except OSError as exc:
            raise TransportUnreachable(f"{address}: {exc}") from None
        sock.settimeout(None)
        end = TcpChannelEnd(sock, label=label)
        end.start()
        return end


STATIC_PREFIX = "/console"


def serve_static(root_dir: str, url_path: str) -> ApiResponse:
    """Resolve a ``/console/...`` URL inside ``root_dir``, refusing escapes."""
    rel = url_path[len(STATIC_PREFIX):].lstrip("/")
    if not rel:
        # relative asset URLs in index.html only resolve under /console/
        if not url_path.endswith("/"):
            return ApiResponse(301, b"", {"location": STATIC_PREFIX + "/"})
        rel = "index.html"
    root = Path(root_dir).resolve()
    target = (root / rel).resolve()
    if not target.is_relative_to(root) or not target.is_file():
        return ApiResponse(404, b"not found", {"content-type": "text/plain"})
    ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
    return ApiResponse(200, target.read_bytes(), {"content-type": ctype})


class ApiHttpServer:
    """HTTP or HTTPS front end for an ``ApiRequest -> ApiResponse`` callable.

    When ``static_dir`` is set, GETs under ``/console`` serve files from that
    directory (the admin console's built assets); everything else still goes
    to the API handler.
    """

    def __init__(self, handler, host: str = "127.0.0.1", port: int = 0, *,
                 tls: bool = False, certfile: str | None = None,
                 keyfile: str | None = None, static_dir: str | None = None):
        self.handler = handler
        self.tls = tls
        self.static_dir = static_dir
        outer = self

        class Requestly(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):
                logger.debug("http %s", fmt % args)

            def _respond(self, resp: ApiResponse):
                self.send_response(resp.status)
                for key, value in resp.headers.items():
                    self.send_header(key, value)
                self.send_header("content-length", str(len(resp.body)))
                self.end_headers()
                if resp.body:
                    self.wfile.write(resp.body)

            def _run(self):
                parts = urlsplit(self.path)
                path = parts.path or "/"
                if (outer.static_dir and self.command == "GET"
                        and (path == STATIC_PREFIX
                             or path.startswith(STATIC_PREFIX + "/"))):
                    self._respond(serve_static(outer.static_dir, path))
                    return
                length = int(self.headers.get("content-length") or 0)
                body = self.rfile.read(length) if length else b""
                req = ApiRequest(
                    method=self.command.upper(),
                    path=path,
                    query=dict(parse_qsl(parts.query)),
                    headers={k.lower(): v for k, v in self.headers.items()},
                    body=body,
                    secure=outer.tls,
                )
                self._respond(outer.handler(req))

            do_GET = do_POST = do_PUT = do_DELETE = do_OPTIONS = _run

        try:
            self.server = ThreadingHTTPServer((host, port), Requestly)
        except OSError as exc:
            raise BindFailure(f"cannot bind {host}:{port}: {exc}") from None
        self.server.daemon_threads = True
        if tls:
            ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
            ctx.load_cert_chain(certfile, keyfile)
            self.server.socket = ctx.wrap_socket(self.server.socket, server_side=True)
        self.host, self.port = self.server.server_address[:2]
        self._thread = threading.Thread(target=self.server.serve_forever,
                                        daemon=True, name=f"api@{self.port}")

    @property
    def url(self) -> str:
        scheme = "https" if self.tls else "http"
        return f"{scheme}://{self.host}:{self.port}"

    def start(self) -> "ApiHttpServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._thread.is_alive():  # shutdown() hangs unless serve_forever runs
            self.server.shutdown()
        self.server.server_close()


class LiveHttp:
    """Blocking HTTP client with the fabric's ``request`` signature.

    Certificate verification is off by default because live deployments in
    this package run on self-signed certificates; pass a CA bundle path to
    turn it on.
    """

    def __init__(self, timeout: float = 10.0, verify=False):
        import requests

        if not verify:
            import urllib3

            urllib3.disable_warnings(urllib3.exceptions.InsecureRequestWarning)
        self._session = requests.Session()
        self.timeout = timeout
        self.verify = verify

    def request(self, method: str, url: str, headers: dict | None = None,
                body: bytes = b"", timeout: float | None = None) -> ApiResponse:
        import requests

        try:
            resp = self._session.request(
                method, url, headers=headers or {}, data=body,
                timeout=timeout or self.timeout, verify=self.verify,
                allow_redirects=False)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise ManagerUnreachable(f"{url}: {exc}") from None
        return ApiResponse(resp.status_code, resp.content,
                           {k.lower(): v for k, v in resp.headers.items()})


def make_self_signed(common_name: str, directory: str) -> tuple:
    """Write a throwaway key and certificate; returns (certfile, keyfile)."""
    import datetime as dt
    import os

    from cryptography import x509
    from cryptography.hazmat.primitives import hashes, serialization
    from cryptography.hazmat.primitives.asymmetric import rsa
    from cryptography.x509.oid import NameOID

    key = rsa.generate_private_key(public_exponent=65537, key_size=2048)
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, common_name)])
    now = dt.datetime.now(dt.timezone.utc)
    cert = (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - dt.timedelta(minutes=5))
        .not_valid_after(now + dt.timedelta(days=30))
        .add_extension(x509.SubjectAlternativeName(
            [x509.DNSName(common_name), x509.DNSName("localhost")]), critical=False)
        .sign(key, hashes.SHA256())
    )
    certfile = os.path.join(directory, f"{common_name}.crt")
    keyfile = os.path.join(directory, f"{common_name}.key")
    with open(certfile, "wb") as fh:
        fh.write(cert.public_bytes(serialization.Encoding.PEM))
    with open(keyfile, "wb") as fh:
        fh.write(key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.TraditionalOpenSSL,
            serialization.NoEncryption()))
    return certfile, keyfile
