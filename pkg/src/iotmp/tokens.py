"""Application registration and signed access tokens.

An application registers once and receives a one-time secret. To call the
data API it trades (appid, secret) for a short-lived bearer token: three
base64url segments, header.payload.signature, signed with the manager's
server secret using keyed SHA256. The payload carries a digest of the
app's secret rather than the secret itself, so tokens are safe to log.
Verification recomputes the signature over the exact segment text; the
decoded bytes are never compared directly, which closes the loophole of
two distinct base64 texts decoding to the same bytes.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import hmac
import json
import secrets
from dataclasses import dataclass

from iotmp.errors import AppIDTaken, BadCredentials, Unauthorized
from iotmp.model import validate_identifier

ROLE_IOT = "iot_app"
ROLE_MGMT = "management_app"
ROLES = (ROLE_IOT, ROLE_MGMT)

DEFAULT_TTL = 3600.0
TOKEN_TYPE = "IOTMP"
TOKEN_ALG = "HS256"


def _b64url(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).decode("ascii").rstrip("=")


def _b64url_decode(seg: str) -> bytes:
    pad = "=" * (-len(seg) % 4)
    return base64.urlsafe_b64decode(seg + pad)


def _canon(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("ascii")


def secret_hash(secret: str) -> str:
    return hashlib.sha256(secret.encode("ascii")).hexdigest()


@dataclass(frozen=True)
class AppRegistration:
    appid: str
    secret_sha256: str  # never the secret itself
    role: str = ROLE_IOT
    created_at: float = 0.0

    def to_json(self) -> dict:
        return {
            "appid": self.appid,
            "secret_sha256": self.secret_sha256,
            "role": self.role,
            "created_at": self.created_at,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AppRegistration":
        return cls(obj["appid"], obj["secret_sha256"], obj.get("role", ROLE_IOT),
                   obj.get("created_at", 0.0))


@dataclass(frozen=True)
class TokenClaims:
    appid: str
    role: str
    exp: float


class TokenService:
    """Mints and verifies tokens against a shared app-registration table.

    Every manager in a deployment is constructed with the same server
    secret, so a token minted by one verifies at any of them; the MoMs can
    then relay requests without re-authentication.
    """

    def __init__(self, server_secret: str, clock, apps: dict | None = None,
                 rng=None, ttl: float = DEFAULT_TTL, on_change=None):
        if not server_secret:
            raise ValueError("server secret must be nonempty")
        self._key = server_secret.encode("utf-8")
        self._clock = clock
        self.apps = apps if apps is not None else {}
        self._rng = rng
        self.ttl = ttl
        self._on_change = on_change or (lambda: None)

    # -- registration --------------------------------------------------------

    def _fresh_secret(self) -> str:
        if self._rng is not None:
            return f"{self._rng.getrandbits(256):064x}"
        return secrets.token_hex(32)

    def _fresh_appid(self) -> str:
        while True:
            if self._rng is not None:
                appid = f"app-{self._rng.getrandbits(24):06x}"
            else:
                appid = f"app-{secrets.token_hex(3)}"
            if appid not in self.apps:
                return appid

    def register_app(self, requested_appid: str | None = None,
                     role: str = ROLE_IOT) -> tuple:
        """Returns (registration, secret); the secret is shown exactly once."""
        if role not in ROLES:
            raise BadCredentials(f"unknown role {role!r}")
        if requested_appid is not None:
            appid = validate_identifier(requested_appid, "appid")
            if appid in self.apps:
                raise AppIDTaken(appid)
        else:
            appid = self._fresh_appid()
        secret = self._fresh_secret()
        reg = AppRegistration(appid, secret_hash(secret), role, self._clock.now())
        self.apps[appid] = reg
        self._on_change()
        return reg, secret

    def import_registration(self, reg: AppRegistration) -> None:
        """Install an existing registration (deployment-wide app sharing)."""
        self.apps[reg.appid] = reg
        self._on_change()

    # -- tokens ---------------------------------------------------------------

    def _sign(self, signing_input: str) -> str:
        digest = hmac.new(self._key, signing_input.encode("ascii"), hashlib.sha256).digest()
        return _b64url(digest)

    def mint_token(self, appid: str, secret: str, ttl: float | None = None) -> str:
        reg = self.apps.get(appid)
        if reg is None or not hmac.compare_digest(reg.secret_sha256, secret_hash(secret)):
            raise BadCredentials("unknown appid or wrong secret")
        exp = self._clock.now() + (self.ttl if ttl is None else ttl)
        header = _b64url(_canon({"alg": TOKEN_ALG, "typ": TOKEN_TYPE}))
        payload = _b64url(_canon({
            "appid": appid,
            "proof": reg.secret_sha256,
            "exp": exp,
            "role": reg.role,
        }))
        signing_input = f"{header}.{payload}"
        return f"{signing_input}.{self._sign(signing_input)}"

    def verify_token(self, token: str) -> TokenClaims:
        if not isinstance(token, str):
            raise Unauthorized("token missing")
        parts = token.split(".")
        if len(parts) != 3 or not all(parts):
            raise Unauthorized("token must be three dot-separated segments")
        header_seg, payload_seg, sig_seg = parts
        # compare segment text, not decoded bytes: see module docstring
        expected = self._sign(f"{header_seg}.{payload_seg}")
        if not hmac.compare_digest(expected, sig_seg):
            raise Unauthorized("bad signature")
        try:
            header = json.loads(_b64url_decode(header_seg))
            payload = json.loads(_b64url_decode(payload_seg))
        except (ValueError, binascii.Error) as exc:
            raise Unauthorized(f"undecodable token: {exc}") from None
        if header != {"alg": TOKEN_ALG, "typ": TOKEN_TYPE}:
            raise Unauthorized("unexpected token header")
        if not isinstance(payload, dict):
            raise Unauthorized("payload is not an object")
        try:
            appid, proof, exp, role = (payload["appid"], payload["proof"],
                                       payload["exp"], payload["role"])
        except KeyError as exc:
            raise Unauthorized(f"payload missing {exc}") from None
        if not isinstance(exp, (int, float)) or self._clock.now() >= exp:
            raise Unauthorized("token expired")
        reg = self.apps.get(appid)
        if reg is None:
            raise Unauthorized(f"unknown appid {appid!r}")
        if not hmac.compare_digest(str(proof), reg.secret_sha256):
            raise Unauthorized("stale secret proof")
        if role != reg.role:
            raise Unauthorized("role mismatch")
        return TokenClaims(appid, role, float(exp))
