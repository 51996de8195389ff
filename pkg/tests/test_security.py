import random

import pytest

from iotmp.errors import AlreadyKnown, NotOwner, NotPending, UnknownMT
from iotmp.security import (
    APPROVED,
    PENDING,
    REVOKED,
    UNKNOWN,
    SecurityModule,
    SecurityProfile,
    profile_allows,
)


def module():
    return SecurityModule()


class TestAdmission:
    def test_unknown_until_admitted(self):
        sm = module()
        assert sm.admission_state("a1") == UNKNOWN
        sm.admit_agent("a1")
        assert sm.admission_state("a1") == PENDING
        assert not sm.is_approved("a1")

    def test_approve_then_revoke(self):
        sm = module()
        sm.admit_agent("a1")
        sm.approve_agent("a1", "admin")
        assert sm.is_approved("a1")
        sm.revoke_agent("a1", "admin")
        assert sm.admission_state("a1") == REVOKED

    def test_revoke_while_pending(self):
        sm = module()
        sm.admit_agent("a1")
        sm.revoke_agent("a1", "admin")
        assert sm.admission_state("a1") == REVOKED

    def test_illegal_transitions(self):
        sm = module()
        with pytest.raises(NotPending):
            sm.approve_agent("ghost", "admin")
        sm.admit_agent("a1")
        sm.approve_agent("a1", "admin")
        with pytest.raises(NotPending):
            sm.approve_agent("a1", "admin")
        sm.revoke_agent("a1", "admin")
        with pytest.raises(NotPending):
            sm.approve_agent("a1", "admin")
        with pytest.raises(NotPending):
            sm.revoke_agent("a1", "admin")

    def test_admit_twice(self):
        sm = module()
        sm.admit_agent("a1")
        with pytest.raises(AlreadyKnown):
            sm.admit_agent("a1")

    def test_pending_listing_sorted(self):
        sm = module()
        for agentid in ("z9", "a1", "m5"):
            sm.admit_agent(agentid)
        sm.approve_agent("m5", "admin")
        assert [a.agentid for a in sm.pending_agents()] == ["a1", "z9"]

    def test_approval_stamps_admin_and_time(self, clock):
        sm = SecurityModule(clock=clock)
        sm.admit_agent("a1")
        clock.advance(5)
        adm = sm.approve_agent("a1", "alice")
        assert adm.approved_by == "alice"
        assert adm.approved_at == clock.now()


# every (secure_only, channel_secure, in_list) combination; expected is the
# conjunction (not secure_only or channel_secure) and in_list
TRUTH_TABLE = [
    (False, False, False, False),
    (False, False, True, True),
    (False, True, False, False),
    (False, True, True, True),
    (True, False, False, False),
    (True, False, True, False),
    (True, True, False, False),
    (True, True, True, True),
]


class TestCheckPolicy:
    @pytest.mark.parametrize("secure_only,channel_secure,in_list,expected", TRUTH_TABLE)
    def test_truth_table(self, secure_only, channel_secure, in_list, expected):
        sm = module()
        entities = {"app1"} if in_list else set()
        sm.create_profile("mt1", authorized=entities, secure_only=secure_only)
        assert sm.check_policy("app1", "mt1", channel_secure) is expected

    def test_channel_checked_before_list(self):
        profile = SecurityProfile("mt1", frozenset(), secure_only=True)
        allowed, reason = profile_allows(profile, "app1", channel_secure=False)
        assert not allowed
        assert reason == "channel"
        allowed, reason = profile_allows(profile, "app1", channel_secure=True)
        assert not allowed
        assert reason == "list"

    def test_unknown_mt(self):
        with pytest.raises(UnknownMT):
            module().check_policy("app1", "nope", True)

    def test_monotonic_in_list_and_flag(self):
        # widening the entity list or relaxing secure_only never turns an
        # allowed request into a denied one
        rng = random.Random(4242)
        pool = [f"app{i}" for i in range(6)]
        for _ in range(300):
            entities = frozenset(rng.sample(pool, rng.randrange(len(pool))))
            secure_only = rng.random() < 0.5
            requester = rng.choice(pool)
            channel = rng.random() < 0.5
            base = SecurityProfile("mt1", entities, secure_only)
            wider = SecurityProfile("mt1", entities | {rng.choice(pool)}, secure_only)
            relaxed = SecurityProfile("mt1", entities, False)
            before = profile_allows(base, requester, channel)[0]
            assert not before or profile_allows(wider, requester, channel)[0]
            assert not before or profile_allows(relaxed, requester, channel)[0]


class TestProfileEdits:
    def test_owner_can_edit(self):
        sm = module()
        sm.create_profile("mt1", owner="alice")
        sm.edit_profile("mt1", "add_entity", "app1", actor="alice")
        assert sm.check_policy("app1", "mt1", False)
        sm.edit_profile("mt1", "remove_entity", "app1", actor="alice")
        assert not sm.check_policy("app1", "mt1", False)

    def test_non_owner_rejected(self):
        sm = module()
        sm.create_profile("mt1", owner="alice")
        with pytest.raises(NotOwner):
            sm.edit_profile("mt1", "add_entity", "app1", actor="mallory")

    def test_admin_override(self):
        sm = module()
        sm.create_profile("mt1", owner="alice")
        sm.edit_profile("mt1", "set_secure_only", True, actor="root", is_admin=True)
        assert sm.get_profile("mt1").secure_only

    def test_unknown_change(self):
        sm = module()
        sm.create_profile("mt1")
        with pytest.raises(ValueError):
            sm.edit_profile("mt1", "frobnicate", 1, actor="admin", is_admin=True)

    def test_roundtrip_json(self):
        profile = SecurityProfile("mt1", frozenset({"b", "a"}), True, "alice")
        assert SecurityProfile.from_json(profile.to_json()) == profile
