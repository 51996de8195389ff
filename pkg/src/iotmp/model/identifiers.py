"""Identifier rules shared by MTIDs, AgentIDs, AppIDs and ManagerIDs."""

import re

from iotmp.errors import InvalidIdentifier

_IDENT_RE = re.compile(r"^[A-Za-z0-9_-]{1,64}$")


def validate_identifier(value: str, what: str = "identifier") -> str:
    """Return ``value`` if it is a legal identifier, else raise.

    Identifiers are nonempty, at most 64 characters, drawn from
    ``[A-Za-z0-9_-]``. They are treated as opaque beyond that.
    """
    if not isinstance(value, str) or not _IDENT_RE.match(value):
        raise InvalidIdentifier(f"bad {what}: {value!r}")
    return value


def is_identifier(value) -> bool:
    return isinstance(value, str) and bool(_IDENT_RE.match(value))
