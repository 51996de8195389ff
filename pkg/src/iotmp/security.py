"""Agent admission control and the per-MT disclosure gate.

Two jobs: (1) unknown remote agents are refused until an administrator
approves them; (2) every application read of MT data passes the
``check_policy`` gate, which consults the MT's security profile: the
secure-channel-only flag first, then the authorized-entity list. A True
outcome still does not disclose location data by itself; the privacy
layer has the final word there.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

from iotmp.errors import AlreadyKnown, NotOwner, NotPending, UnknownMT

logger = logging.getLogger(__name__)

UNKNOWN = "unknown"
PENDING = "pending"
APPROVED = "approved"
REVOKED = "revoked"

_TRANSITIONS = {
    UNKNOWN: {PENDING},
    PENDING: {APPROVED, REVOKED},
    APPROVED: {REVOKED},
    REVOKED: set(),
}


@dataclass(frozen=True)
class AgentAdmission:
    agentid: str
    state: str = PENDING
    approved_by: str | None = None
    approved_at: float | None = None

    def to_json(self) -> dict:
        return {
            "agentid": self.agentid,
            "state": self.state,
            "approved_by": self.approved_by,
            "approved_at": self.approved_at,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AgentAdmission":
        return cls(obj["agentid"], obj["state"], obj.get("approved_by"), obj.get("approved_at"))


@dataclass(frozen=True)
class SecurityProfile:
    mtid: str
    authorized_entities: frozenset = field(default_factory=frozenset)
    secure_only: bool = False
    owner: str = "admin"

    def to_json(self) -> dict:
        return {
            "mtid": self.mtid,
            "authorized_entities": sorted(self.authorized_entities),
            "secure_only": self.secure_only,
            "owner": self.owner,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SecurityProfile":
        return cls(
            obj["mtid"],
            frozenset(obj.get("authorized_entities", ())),
            bool(obj.get("secure_only", False)),
            obj.get("owner", "admin"),
        )


def profile_allows(profile: SecurityProfile, requester: str, channel_secure: bool) -> tuple[bool, str]:
    """Pure gate decision: (allowed, reason).

    The channel condition is evaluated before the entity list, matching the
    decision-point order used everywhere else (audit logs stay comparable);
    the conjunction itself is order-independent.
    """
    if profile.secure_only and not channel_secure:
        return False, "channel"
    if requester not in profile.authorized_entities:
        return False, "list"
    return True, "ok"


class SecurityModule:
    """Admissions plus profile storage and the CheckPolicy gate.

    ``admissions`` and ``profiles`` are plain dicts, normally the manager
    store's tables; edits replace whole entries so concurrent readers see
    either the old or the new profile, never a partial one.
    """

    def __init__(self, admissions: dict | None = None, profiles: dict | None = None,
                 clock=None, on_change=None):
        self.admissions = admissions if admissions is not None else {}
        self.profiles = profiles if profiles is not None else {}
        self._clock = clock
        self._on_change = on_change or (lambda: None)

    # -- agent admission ---------------------------------------------------

    def admission_state(self, agentid: str) -> str:
        adm = self.admissions.get(agentid)
        return adm.state if adm else UNKNOWN

    def is_approved(self, agentid: str) -> bool:
        return self.admission_state(agentid) == APPROVED

    def admit_agent(self, agentid: str) -> AgentAdmission:
        if agentid in self.admissions:
            raise AlreadyKnown(agentid)
        adm = AgentAdmission(agentid, PENDING)
        self.admissions[agentid] = adm
        self._on_change()
        return adm

    def approve_agent(self, agentid: str, admin: str) -> AgentAdmission:
        return self._transition(agentid, APPROVED, admin)

    def revoke_agent(self, agentid: str, admin: str) -> AgentAdmission:
        return self._transition(agentid, REVOKED, admin)

    def _transition(self, agentid: str, state: str, admin: str) -> AgentAdmission:
        adm = self.admissions.get(agentid)
        current = adm.state if adm else UNKNOWN
        if state not in _TRANSITIONS[current]:
            raise NotPending(f"{agentid}: {current} -> {state} not allowed")
        now = self._clock.now() if self._clock else None
        adm = AgentAdmission(agentid, state, approved_by=admin, approved_at=now)
        self.admissions[agentid] = adm
        self._on_change()
        logger.info("agent %s %s by %s", agentid, state, admin)
        return adm

    def pending_agents(self) -> list[AgentAdmission]:
        return sorted((a for a in self.admissions.values() if a.state == PENDING),
                      key=lambda a: a.agentid)

    # -- profiles and the gate ----------------------------------------------

    def create_profile(self, mtid: str, owner: str = "admin",
                       authorized=(), secure_only: bool = False) -> SecurityProfile:
        profile = SecurityProfile(mtid, frozenset(authorized), secure_only, owner)
        self.profiles.setdefault(mtid, profile)
        self._on_change()
        return self.profiles[mtid]

    def get_profile(self, mtid: str) -> SecurityProfile:
        profile = self.profiles.get(mtid)
        if profile is None:
            raise UnknownMT(mtid)
        return profile

    def put_profile(self, profile: SecurityProfile) -> None:
        self.profiles[profile.mtid] = profile
        self._on_change()

    def check_policy(self, requester: str, mtid: str, channel_secure: bool) -> bool:
        allowed, reason = self.check_policy_explain(requester, mtid, channel_secure)
        return allowed

    def check_policy_explain(self, requester: str, mtid: str, channel_secure: bool) -> tuple[bool, str]:
        profile = self.get_profile(mtid)
        allowed, reason = profile_allows(profile, requester, channel_secure)
        if not allowed:
            logger.info("check_policy denied mtid=%s requester=%s at decision point %s",
                        mtid, requester, reason)
        return allowed, reason

    def edit_profile(self, mtid: str, change: str, value, actor: str,
                     is_admin: bool = False) -> SecurityProfile:
        profile = self.get_profile(mtid)
        if not is_admin and actor != profile.owner:
            raise NotOwner(f"{actor} does not own {mtid}")
        if change == "add_entity":
            profile = replace(profile, authorized_entities=profile.authorized_entities | {value})
        elif change == "remove_entity":
            profile = replace(profile, authorized_entities=profile.authorized_entities - {value})
        elif change == "set_secure_only":
            profile = replace(profile, secure_only=bool(value))
        elif change == "set_owner":
            profile = replace(profile, owner=str(value))
        else:
            raise ValueError(f"unknown profile change {change!r}")
        self.profiles[mtid] = profile
        self._on_change()
        return profile
