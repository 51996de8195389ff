import base64
import hashlib
import json
import random
import string

import pytest

from iotmp.errors import AppIDTaken, BadCredentials, Unauthorized
from iotmp.tokens import ROLE_IOT, ROLE_MGMT, AppRegistration, TokenService


def service(clock, rng=None):
    return TokenService("unit-test-server-secret", clock, rng=rng)


def reference_hmac_sha256(key: bytes, message: bytes) -> bytes:
    """Keyed SHA256 digest built from the raw construction, no hmac module."""
    block = 64
    if len(key) > block:
        key = hashlib.sha256(key).digest()
    key = key.ljust(block, b"\x00")
    ipad = bytes(b ^ 0x36 for b in key)
    opad = bytes(b ^ 0x5C for b in key)
    inner = hashlib.sha256(ipad + message).digest()
    return hashlib.sha256(opad + inner).digest()


class TestRegistration:
    def test_roundtrip(self, clock):
        svc = service(clock)
        reg, secret = svc.register_app("weatherApp", ROLE_IOT)
        assert reg.appid == "weatherApp"
        assert reg.secret_sha256 == hashlib.sha256(secret.encode()).hexdigest()
        assert secret not in json.dumps(reg.to_json())
        assert AppRegistration.from_json(reg.to_json()) == reg

    def test_duplicate_appid(self, clock):
        svc = service(clock)
        svc.register_app("weatherApp")
        with pytest.raises(AppIDTaken):
            svc.register_app("weatherApp")

    def test_generated_appids(self, clock):
        svc = service(clock, rng=random.Random(9))
        seen = {svc.register_app()[0].appid for _ in range(50)}
        assert len(seen) == 50
        assert all(a.startswith("app-") for a in seen)

    def test_bad_role(self, clock):
        with pytest.raises(BadCredentials):
            service(clock).register_app("x", role="superuser")


class TestMintVerify:
    def test_roundtrip(self, clock):
        svc = service(clock)
        reg, secret = svc.register_app("weatherApp", ROLE_MGMT)
        token = svc.mint_token("weatherApp", secret)
        assert token.count(".") == 2
        claims = svc.verify_token(token)
        assert claims.appid == "weatherApp"
        assert claims.role == ROLE_MGMT
        assert claims.exp == clock.now() + svc.ttl

    def test_wrong_secret(self, clock):
        svc = service(clock)
        svc.register_app("weatherApp")
        with pytest.raises(BadCredentials):
            svc.mint_token("weatherApp", "f" * 64)
        with pytest.raises(BadCredentials):
            svc.mint_token("ghost", "f" * 64)

    def test_expiry(self, clock):
        svc = service(clock)
        _, secret = svc.register_app("weatherApp")
        token = svc.mint_token("weatherApp", secret, ttl=60)
        svc.verify_token(token)
        clock.advance(60)  # expiry instant itself is already invalid
        with pytest.raises(Unauthorized):
            svc.verify_token(token)

    def test_signature_matches_reference_digest(self, clock):
        svc = service(clock)
        _, secret = svc.register_app("weatherApp")
        token = svc.mint_token("weatherApp", secret)
        header, payload, sig = token.split(".")
        want = reference_hmac_sha256(b"unit-test-server-secret",
                                     f"{header}.{payload}".encode("ascii"))
        want_seg = base64.urlsafe_b64encode(want).decode().rstrip("=")
        assert sig == want_seg

    def test_payload_contents(self, clock):
        svc = service(clock)
        reg, secret = svc.register_app("weatherApp")
        token = svc.mint_token("weatherApp", secret)
        seg = token.split(".")[1]
        payload = json.loads(base64.urlsafe_b64decode(seg + "=" * (-len(seg) % 4)))
        assert payload["appid"] == "weatherApp"
        assert payload["proof"] == reg.secret_sha256
        assert payload["role"] == ROLE_IOT
        assert secret not in json.dumps(payload)

    def test_deleted_registration_invalidates(self, clock):
        svc = service(clock)
        _, secret = svc.register_app("weatherApp")
        token = svc.mint_token("weatherApp", secret)
        del svc.apps["weatherApp"]
        with pytest.raises(Unauthorized):
            svc.verify_token(token)

    def test_cross_service_with_shared_secret(self, clock):
        a = service(clock)
        b = service(clock)
        reg, secret = a.register_app("weatherApp")
        b.import_registration(reg)
        token = a.mint_token("weatherApp", secret)
        assert b.verify_token(token).appid == "weatherApp"
        different = TokenService("another-secret", clock, apps=b.apps)
        with pytest.raises(Unauthorized):
            different.verify_token(token)

    def test_garbage_inputs(self, clock):
        svc = service(clock)
        for junk in (None, "", "a.b", "a.b.c.d", "..", "a.b.!!!", b"x.y.z"):
            with pytest.raises(Unauthorized):
                svc.verify_token(junk)


ALPHABET = string.ascii_letters + string.digits + "-_."


def mutate(rng, token: str) -> str:
    segs = token.split(".")
    op = rng.randrange(6)
    if op == 0:  # replace one character with a different one
        i = rng.randrange(len(token))
        repl = rng.choice([c for c in ALPHABET if c != token[i]])
        return token[:i] + repl + token[i + 1:]
    if op == 1:  # delete a character
        i = rng.randrange(len(token))
        return token[:i] + token[i + 1:]
    if op == 2:  # insert a character
        i = rng.randrange(len(token) + 1)
        return token[:i] + rng.choice(ALPHABET) + token[i:]
    if op == 3:  # swap two segments
        i, j = rng.sample(range(3), 2)
        segs[i], segs[j] = segs[j], segs[i]
        return ".".join(segs)
    if op == 4:  # drop a segment
        del segs[rng.randrange(3)]
        return ".".join(segs)
    return token + rng.choice(ALPHABET)  # trailing junk


class TestMutations:
    def test_any_mutation_is_rejected(self, clock):
        svc = service(clock)
        _, secret = svc.register_app("weatherApp")
        token = svc.mint_token("weatherApp", secret)
        rng = random.Random(20260815)
        rejected = 0
        for _ in range(2000):
            bad = mutate(rng, token)
            if bad == token:
                continue
            with pytest.raises(Unauthorized):
                svc.verify_token(bad)
            rejected += 1
        assert rejected > 1900
